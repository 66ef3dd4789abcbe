#pragma once

#include "wlm/checkpoint.hpp"
#include "wlm/error.hpp"
#include "wlm/eval.hpp"
#include "wlm/formats.hpp"
#include "wlm/hash.hpp"
#include "wlm/kernels.hpp"
#include "wlm/model.hpp"
#include "wlm/ops.hpp"
#include "wlm/optim.hpp"
#include "wlm/repr.hpp"
#include "wlm/rng.hpp"
#include "wlm/tensor.hpp"
#include "wlm/tokenizer.hpp"
#include "wlm/training.hpp"
#include "wlm/version.hpp"
