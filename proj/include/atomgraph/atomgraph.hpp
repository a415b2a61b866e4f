#pragma once

// Umbrella header for the whole library.

#include "atomgraph/cfg.hpp"
#include "atomgraph/config.hpp"
#include "atomgraph/dataset.hpp"
#include "atomgraph/embedding.hpp"
#include "atomgraph/error.hpp"
#include "atomgraph/evm.hpp"
#include "atomgraph/fusion.hpp"
#include "atomgraph/gcn.hpp"
#include "atomgraph/metrics.hpp"
#include "atomgraph/pipeline.hpp"
#include "atomgraph/rng.hpp"
#include "atomgraph/synthetic.hpp"
