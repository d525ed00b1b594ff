#pragma once

#include "clipgeom/conformity.hpp"
#include "clipgeom/contrastive_lab.hpp"
#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"
#include "clipgeom/interpolation.hpp"
#include "clipgeom/moment_stats.hpp"
#include "clipgeom/parallel.hpp"
#include "clipgeom/random.hpp"
#include "clipgeom/separability_classifier.hpp"
#include "clipgeom/serialize.hpp"
#include "clipgeom/synthetic_lab.hpp"
#include "clipgeom/whitening.hpp"
