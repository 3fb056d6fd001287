#pragma once

#include "iast/benchmark_io.hpp"
#include "iast/config.hpp"
#include "iast/dataset_io.hpp"
#include "iast/error.hpp"
#include "iast/flat_config.hpp"
#include "iast/losses.hpp"
#include "iast/manifest.hpp"
#include "iast/metrics.hpp"
#include "iast/seg_model.hpp"
#include "iast/selector.hpp"
#include "iast/sweep.hpp"
#include "iast/synth_data.hpp"
#include "iast/tensor.hpp"
#include "iast/tensor_io.hpp"
#include "iast/trainer.hpp"
