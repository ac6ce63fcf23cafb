#pragma once

#include "hseg/data.hpp"
#include "hseg/dcn.hpp"
#include "hseg/gradcheck.hpp"
#include "hseg/gradcheck_suite.hpp"
#include "hseg/image_io.hpp"
#include "hseg/loss_metrics.hpp"
#include "hseg/mixconv.hpp"
#include "hseg/network.hpp"
#include "hseg/ops.hpp"
#include "hseg/tensor.hpp"
#include "hseg/train.hpp"
