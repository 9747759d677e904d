#include "stgt/metrics.hpp"

#include <cmath>

#include "stgt/error.hpp"

namespace stgt {

namespace {
constexpr double kMapeFloorMph = 1.0;
}

void ErrorAccum::add_value(double pred, double target) {
    const double err = std::abs(pred - target);
    abs_sum += err;
    sq_sum += err * err;
    ++count;
    if (std::abs(target) >= kMapeFloorMph) {
        ape_sum += err / std::abs(target);
        ++ape_count;
    }
}

void ErrorAccum::add(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw ShapeError("metrics: " + pred.shape_str() + " vs " + target.shape_str());
    const double* pp = pred.data();
    const double* pt = target.data();
    for (std::size_t i = 0; i < pred.size(); ++i) add_value(pp[i], pt[i]);
}

double ErrorAccum::mae() const {
    if (count == 0) throw ValueError("metrics over an empty set");
    return abs_sum / static_cast<double>(count);
}

double ErrorAccum::rmse() const {
    if (count == 0) throw ValueError("metrics over an empty set");
    return std::sqrt(sq_sum / static_cast<double>(count));
}

double ErrorAccum::mape() const {
    if (ape_count == 0) throw ValueError("mape: every target is below the 1 mph floor");
    return 100.0 * ape_sum / static_cast<double>(ape_count);
}

ErrorStats error_stats(const Tensor& pred, const Tensor& target) {
    ErrorAccum acc;
    acc.add(pred, target);
    return {acc.mae(), acc.rmse(), acc.mape(), acc.count};
}

std::vector<ErrorStats> per_step_stats(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw ShapeError("metrics: " + pred.shape_str() + " vs " + target.shape_str());
    if (pred.rank() != 3) throw ShapeError("per-step metrics want [S x N x T], got " +
                                           pred.shape_str());
    const std::size_t s = pred.dim(0), n = pred.dim(1), t = pred.dim(2);
    std::vector<ErrorAccum> acc(t);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < t; ++k)
                acc[k].add_value(pred(i, j, k), target(i, j, k));
    std::vector<ErrorStats> out;
    out.reserve(t);
    for (const ErrorAccum& a : acc) out.push_back({a.mae(), a.rmse(), a.mape(), a.count});
    return out;
}

} // namespace stgt
