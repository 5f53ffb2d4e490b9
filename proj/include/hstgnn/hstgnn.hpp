#pragma once

#include "hstgnn/autodiff.hpp"
#include "hstgnn/baselines.hpp"
#include "hstgnn/checkpoint.hpp"
#include "hstgnn/data.hpp"
#include "hstgnn/model.hpp"
#include "hstgnn/models.hpp"
#include "hstgnn/nn.hpp"
#include "hstgnn/report.hpp"
#include "hstgnn/simulator.hpp"
#include "hstgnn/tensor.hpp"
#include "hstgnn/train.hpp"
