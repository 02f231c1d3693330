#pragma once

#include "collagan/adam.hpp"
#include "collagan/checkpoint.hpp"
#include "collagan/data_pipeline.hpp"
#include "collagan/errors.hpp"
#include "collagan/evaluation.hpp"
#include "collagan/image_io.hpp"
#include "collagan/losses.hpp"
#include "collagan/masks.hpp"
#include "collagan/model.hpp"
#include "collagan/nn.hpp"
#include "collagan/rng.hpp"
#include "collagan/synthetic.hpp"
#include "collagan/tasks.hpp"
#include "collagan/tensor.hpp"
#include "collagan/training.hpp"
