#pragma once

#include "nur/common.hpp"
#include "nur/tensor.hpp"
#include "nur/autodiff.hpp"
#include "nur/optim.hpp"
#include "nur/config.hpp"
#include "nur/events.hpp"
#include "nur/masks.hpp"
#include "nur/model.hpp"
#include "nur/losses.hpp"
#include "nur/train.hpp"
#include "nur/hnsw.hpp"
#include "nur/world.hpp"
#include "nur/eval.hpp"
