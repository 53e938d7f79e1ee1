#pragma once

#include "sfmu/baselines.hpp"
#include "sfmu/data.hpp"
#include "sfmu/errors.hpp"
#include "sfmu/estimator.hpp"
#include "sfmu/evaluation.hpp"
#include "sfmu/linalg.hpp"
#include "sfmu/losses.hpp"
#include "sfmu/mixed_linear.hpp"
#include "sfmu/pipeline.hpp"
#include "sfmu/synthetic.hpp"
#include "sfmu/trainer.hpp"
#include "sfmu/unlearner.hpp"
