#pragma once

#include "slimgan/errors.hpp"
#include "slimgan/tensor.hpp"
#include "slimgan/ops.hpp"
#include "slimgan/grad_check.hpp"
#include "slimgan/slim.hpp"
#include "slimgan/models.hpp"
#include "slimgan/losses.hpp"
#include "slimgan/optim.hpp"
#include "slimgan/data.hpp"
#include "slimgan/checkpoint.hpp"
#include "slimgan/config.hpp"
#include "slimgan/training.hpp"
#include "slimgan/metrics.hpp"
#include "slimgan/evaluation.hpp"
#include "slimgan/ablation.hpp"
