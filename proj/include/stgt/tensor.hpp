#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "stgt/error.hpp"

namespace stgt {

/// Dense row-major tensor of 64-bit reals. Shape is a list of dimension
/// sizes; data length always equals the product of the dimensions.
///
/// Kernels below may parallelize over the leading axis; every output
/// element is reduced serially in a fixed order, so results do not depend
/// on the number of threads.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor identity(std::size_t n);
    /// 2-D tensor from row literals: {{1,2},{3,4}}
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Same data, new shape (element count must match).
    Tensor reshaped(std::vector<std::size_t> new_shape) const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

enum class EwOp { add, sub, mul, sigmoid, tanh, relu };

/// Standard matrix product of a [m x k] and b [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b for a [k x m], b [k x n] -> [m x n] (gradient contractions).
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T for a [m x k], b [n x k] -> [m x n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Pointwise op. Binary ops accept b of the same shape, or b whose shape
/// equals a's shape with the leading axis dropped (broadcast over rows).
Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& a);
Tensor tanh_of(const Tensor& a);
Tensor relu(const Tensor& a);

/// Hadamard product with a binary mask; positions with mask 0 come out
/// as exactly +0.0. Mask entries must be 0 or 1.
Tensor masked_apply(const Tensor& w, const Tensor& m);

/// Column sums of a [r x c] matrix -> [c].
Tensor colsum(const Tensor& a);

Tensor transpose(const Tensor& a);

/// Per-window graph mixing: y[b] = p * x[b] for p [n x n] and
/// x [batch x n x d]. transpose_p multiplies by p^T instead (backward).
Tensor propagate(const Tensor& p, const Tensor& x, bool transpose_p = false);

/// Gradients produced by one layer's backward pass: one tensor per
/// parameter (same shapes as the parameters) plus the input gradient.
struct LayerGrads {
    std::vector<Tensor> params;
    Tensor input;
};

namespace detail {
double stable_sigmoid(double x);
}

} // namespace stgt
