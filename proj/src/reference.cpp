#include "stgt/reference.hpp"

#include <cmath>

namespace stgt::ref {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("ref::matmul: incompatible shapes " + a.shape_str() + " and " +
                         b.shape_str());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += a(i, kk) * b(kk, j);
            }
            c(i, j) = acc;
        }
    }
    return c;
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b) {
    Tensor out(a.shape());
    const std::size_t n = a.size();
    std::size_t stride = n;
    if (b != nullptr && !a.same_shape(*b)) stride = b->size();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i];
        switch (op) {
        case EwOp::add: out[i] = x + (*b)[i % stride]; break;
        case EwOp::sub: out[i] = x - (*b)[i % stride]; break;
        case EwOp::mul: out[i] = x * (*b)[i % stride]; break;
        case EwOp::sigmoid: out[i] = 1.0 / (1.0 + std::exp(-x)); break;
        case EwOp::tanh: out[i] = std::tanh(x); break;
        case EwOp::relu: out[i] = x > 0.0 ? x : 0.0; break;
        }
    }
    return out;
}

Tensor masked_apply(const Tensor& w, const Tensor& m) {
    Tensor out(w.shape());
    for (std::size_t i = 0; i < w.size(); ++i) {
        out[i] = m[i] == 0.0 ? 0.0 : w[i];
    }
    return out;
}

Tensor colsum(const Tensor& a) {
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out({c});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j] += a(i, j);
    }
    return out;
}

Tensor propagate(const Tensor& p, const Tensor& x, bool transpose_p) {
    const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
    Tensor y({batch, n, d});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double w = transpose_p ? p(j, i) : p(i, j);
                for (std::size_t k = 0; k < d; ++k) {
                    y(b, i, k) += w * x(b, j, k);
                }
            }
        }
    }
    return y;
}

} // namespace stgt::ref
