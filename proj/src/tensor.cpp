#include "stgt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "parallel.hpp"

namespace stgt {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be >= 1");
        n *= d;
    }
    return n;
}

[[noreturn]] void throw_shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                     b.shape_str());
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_str() + " does not match data length " +
                         std::to_string(data_.size()));
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = value;
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("from_rows: ragged row lengths");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_product(new_shape) != size()) {
        throw ShapeError("reshape: element count mismatch, " + shape_str());
    }
    return Tensor(std::move(new_shape), data_);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

namespace detail {
// Branch-free form of the usual sign split: -|x| is -x for x >= 0 and x
// otherwise, so e matches the two-sided version bit for bit, and with
// f in {0, 1} the blend f*e + (1-f) is exactly e or exactly 1. A ternary
// here compiles to a branch that mispredicts on sign-mixed activations.
double stable_sigmoid(double x) {
    const double e = std::exp(-std::fabs(x));
    const double f = static_cast<double>(std::signbit(x));
    return (f * e + (1.0 - f)) / (1.0 + e);
}
} // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw_shape_mismatch("matmul", a, b);
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
#pragma omp parallel for schedule(static) if (parallel_worth(m * k * n, 16384))
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = pc + i * n;
        const double* arow = pa + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw_shape_mismatch("matmul_tn", a, b);
    }
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
#pragma omp parallel for schedule(static) if (parallel_worth(m * k * n, 16384))
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = pc + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[kk * m + i];
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw_shape_mismatch("matmul_nt", a, b);
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
#pragma omp parallel for schedule(static) if (parallel_worth(m * k * n, 16384))
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = pc + i * n;
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = pb + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += arow[kk] * brow[kk];
            }
            crow[j] = acc;
        }
    }
    return c;
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b) {
    const bool binary = (op == EwOp::add || op == EwOp::sub || op == EwOp::mul);
    if (binary != (b != nullptr)) {
        throw ValueError("elementwise: operand count does not match the operator");
    }
    const std::size_t n = a.size();
    Tensor out(a.shape());

    if (!binary) {
        const double* pa = a.data();
        double* po = out.data();
        switch (op) {
        case EwOp::sigmoid:
#pragma omp parallel for schedule(static) if (parallel_worth(n, 8192))
            for (std::size_t i = 0; i < n; ++i) po[i] = detail::stable_sigmoid(pa[i]);
            break;
        case EwOp::tanh:
#pragma omp parallel for schedule(static) if (parallel_worth(n, 8192))
            for (std::size_t i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
            break;
        case EwOp::relu:
#pragma omp parallel for schedule(static) if (parallel_worth(n, 8192))
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
            break;
        default:
            break;
        }
        return out;
    }

    // Binary: same shape, or b equal to a's shape minus the leading axis.
    std::size_t reps = 1;
    if (!a.same_shape(*b)) {
        const auto& as = a.shape();
        const auto& bs = b->shape();
        const bool broadcast = as.size() == bs.size() + 1 &&
                               std::equal(bs.begin(), bs.end(), as.begin() + 1);
        if (!broadcast) throw_shape_mismatch("elementwise", a, *b);
        reps = a.dim(0);
    }
    const std::size_t stride = n / reps;
    const double* pa = a.data();
    const double* pb = b->data();
    double* po = out.data();
#pragma omp parallel for schedule(static) if (parallel_worth(n, 8192))
    for (std::size_t i = 0; i < n; ++i) {
        const double bv = pb[stride == n ? i : i % stride];
        switch (op) {
        case EwOp::add: po[i] = pa[i] + bv; break;
        case EwOp::sub: po[i] = pa[i] - bv; break;
        case EwOp::mul: po[i] = pa[i] * bv; break;
        default: break;
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add, a, &b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub, a, &b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul, a, &b); }
Tensor sigmoid(const Tensor& a) { return elementwise(EwOp::sigmoid, a); }
Tensor tanh_of(const Tensor& a) { return elementwise(EwOp::tanh, a); }
Tensor relu(const Tensor& a) { return elementwise(EwOp::relu, a); }

Tensor masked_apply(const Tensor& w, const Tensor& m) {
    if (!w.same_shape(m)) throw_shape_mismatch("masked_apply", w, m);
    const std::size_t n = w.size();
    Tensor out(w.shape());
    const double* pw = w.data();
    const double* pm = m.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double mv = pm[i];
        if (mv == 1.0) {
            po[i] = pw[i];
        } else if (mv == 0.0) {
            po[i] = 0.0;
        } else {
            throw ValueError("masked_apply: mask entry " + std::to_string(mv) +
                             " at index " + std::to_string(i) + " is not 0 or 1");
        }
    }
    return out;
}

Tensor colsum(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("colsum: expected rank-2, got " + a.shape_str());
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out({c});
    const double* pa = a.data();
    double* po = out.data();
    // Each output element sums column entries in row order either way, so the
    // two loop structures produce identical bits; the streaming walk is far
    // cheaper when single-threaded, the per-column walk splits cleanly when not.
    if (parallel_worth(r * c, 16384)) {
#pragma omp parallel for schedule(static)
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < r; ++i) acc += pa[i * c + j];
            po[j] = acc;
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) po[j] = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            const double* row = pa + i * c;
            for (std::size_t j = 0; j < c; ++j) po[j] += row[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + a.shape_str());
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
    }
    return out;
}

Tensor propagate(const Tensor& p, const Tensor& x, bool transpose_p) {
    if (p.rank() != 2 || p.dim(0) != p.dim(1) || x.rank() != 3 || x.dim(1) != p.dim(0)) {
        throw_shape_mismatch("propagate", p, x);
    }
    const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
    Tensor y({batch, n, d});
    const double* pp = p.data();
    const double* px = x.data();
    double* py = y.data();
#pragma omp parallel for schedule(static) if (parallel_worth(batch * n * n * d, 16384))
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xb = px + b * n * d;
        double* yb = py + b * n * d;
        for (std::size_t i = 0; i < n; ++i) {
            double* yrow = yb + i * d;
            for (std::size_t j = 0; j < n; ++j) {
                const double w = transpose_p ? pp[j * n + i] : pp[i * n + j];
                if (w == 0.0) continue;
                const double* xrow = xb + j * d;
                for (std::size_t k = 0; k < d; ++k) yrow[k] += w * xrow[k];
            }
        }
    }
    return y;
}

} // namespace stgt
