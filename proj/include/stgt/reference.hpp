#pragma once

#include "stgt/tensor.hpp"

namespace stgt::ref {

// Single-threaded naive kernels. These stay deliberately close to the
// textbook formulas; the test suites compare the parallel kernels in
// tensor.hpp against them, and the benchmark times both.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr);
Tensor masked_apply(const Tensor& w, const Tensor& m);
Tensor colsum(const Tensor& a);
Tensor propagate(const Tensor& p, const Tensor& x, bool transpose_p = false);

} // namespace stgt::ref
