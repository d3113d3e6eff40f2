#pragma once

// Umbrella header. The HTTP transport (refalign/http_transport.hpp) is
// deliberately left out; include it where a real network client is needed.

#include "refalign/corpus.hpp"
#include "refalign/dependency_graph.hpp"
#include "refalign/errors.hpp"
#include "refalign/featalign.hpp"
#include "refalign/feature_io.hpp"
#include "refalign/llm.hpp"
#include "refalign/mask.hpp"
#include "refalign/metrics.hpp"
#include "refalign/query.hpp"
#include "refalign/rng.hpp"
#include "refalign/scene_graph.hpp"
#include "refalign/structal.hpp"
#include "refalign/training.hpp"
#include "refalign/version.hpp"
