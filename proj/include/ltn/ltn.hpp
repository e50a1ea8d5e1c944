// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ltn/cells.hpp"
#include "ltn/classifier.hpp"
#include "ltn/config.hpp"
#include "ltn/data.hpp"
#include "ltn/evaluation.hpp"
#include "ltn/encoders.hpp"
#include "ltn/gradcheck.hpp"
#include "ltn/latent.hpp"
#include "ltn/metrics.hpp"
#include "ltn/model.hpp"
#include "ltn/optim.hpp"
#include "ltn/random.hpp"
#include "ltn/scene.hpp"
#include "ltn/svg.hpp"
#include "ltn/tensor.hpp"
#include "ltn/training.hpp"
