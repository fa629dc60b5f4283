#pragma once

#include "sharpen_focus/autodiff/backward.hpp"
#include "sharpen_focus/autodiff/kernels.hpp"
#include "sharpen_focus/autodiff/ops.hpp"
#include "sharpen_focus/autodiff/tape.hpp"
#include "sharpen_focus/autodiff/tensor.hpp"
