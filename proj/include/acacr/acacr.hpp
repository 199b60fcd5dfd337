#pragma once

#include "acacr/attention/attention.hpp"
#include "acacr/attention/similarity.hpp"
#include "acacr/core/error.hpp"
#include "acacr/core/rng.hpp"
#include "acacr/data/dataset.hpp"
#include "acacr/data/png.hpp"
#include "acacr/data/synth.hpp"
#include "acacr/metrics/metrics.hpp"
#include "acacr/network/network.hpp"
#include "acacr/tensor/grad_check.hpp"
#include "acacr/tensor/init.hpp"
#include "acacr/tensor/kernels.hpp"
#include "acacr/tensor/ops.hpp"
#include "acacr/tensor/serialize.hpp"
#include "acacr/tensor/tape.hpp"
#include "acacr/tensor/tensor.hpp"
#include "acacr/trainer/checkpoint.hpp"
#include "acacr/trainer/config.hpp"
#include "acacr/trainer/optim.hpp"
#include "acacr/trainer/train.hpp"
