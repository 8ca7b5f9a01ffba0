#pragma once

#include "flrboot/bootstrap.hpp"
#include "flrboot/dgp.hpp"
#include "flrboot/errors.hpp"
#include "flrboot/flrm.hpp"
#include "flrboot/harness.hpp"
#include "flrboot/hilbert.hpp"
#include "flrboot/hypothesis.hpp"
#include "flrboot/io.hpp"
#include "flrboot/parallel.hpp"
#include "flrboot/rng.hpp"
