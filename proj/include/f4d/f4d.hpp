#pragma once

#include "f4d/version.hpp"
#include "f4d/tensor.hpp"
#include "f4d/tensor_io.hpp"
#include "f4d/conv.hpp"
#include "f4d/autodiff.hpp"
#include "f4d/gradcheck.hpp"
#include "f4d/complexity.hpp"
#include "f4d/nn.hpp"
#include "f4d/attention.hpp"
#include "f4d/f4d_block.hpp"
#include "f4d/backbone.hpp"
#include "f4d/sampling.hpp"
#include "f4d/synthetic.hpp"
#include "f4d/train.hpp"
#include "f4d/checkpoint.hpp"
#include "f4d/report.hpp"
#include "f4d/verify.hpp"
