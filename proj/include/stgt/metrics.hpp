#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stgt/tensor.hpp"

namespace stgt {

/// Streaming error accumulator over (prediction, target) pairs in mph.
/// MAPE skips targets below 1 mph so stopped traffic cannot blow it up.
struct ErrorAccum {
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double ape_sum = 0.0; // |err| / |target|, accumulated
    std::size_t count = 0;
    std::size_t ape_count = 0;

    void add(const Tensor& pred, const Tensor& target);
    void add_value(double pred, double target);

    double mae() const;
    double rmse() const;
    double mape() const; // percent
};

struct ErrorStats {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
    std::size_t count = 0;
};

ErrorStats error_stats(const Tensor& pred, const Tensor& target);

/// Per-horizon-step breakdown of [S x N x T] prediction vs target.
std::vector<ErrorStats> per_step_stats(const Tensor& pred, const Tensor& target);

} // namespace stgt
