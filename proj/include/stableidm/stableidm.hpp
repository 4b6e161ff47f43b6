#pragma once

#include "stableidm/config.hpp"
#include "stableidm/dfa/dfa.hpp"
#include "stableidm/encoder/encoder.hpp"
#include "stableidm/encoder/fmap.hpp"
#include "stableidm/errors.hpp"
#include "stableidm/evalbench/benchmark.hpp"
#include "stableidm/evalbench/data.hpp"
#include "stableidm/evalbench/index.hpp"
#include "stableidm/evalbench/metrics.hpp"
#include "stableidm/evalbench/report.hpp"
#include "stableidm/imaging.hpp"
#include "stableidm/masking/mask.hpp"
#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/ops.hpp"
#include "stableidm/numcore/optim.hpp"
#include "stableidm/numcore/tape.hpp"
#include "stableidm/numcore/tensor.hpp"
#include "stableidm/pipeline/config.hpp"
#include "stableidm/pipeline/model.hpp"
#include "stableidm/pipeline/norm.hpp"
#include "stableidm/pipeline/serialize.hpp"
#include "stableidm/pipeline/train.hpp"
#include "stableidm/synth/dataset.hpp"
#include "stableidm/synth/world.hpp"
#include "stableidm/tdr/fusion.hpp"
#include "stableidm/tdr/regressor.hpp"
