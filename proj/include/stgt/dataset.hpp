#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stgt/graph.hpp"
#include "stgt/tensor.hpp"

namespace stgt {

/// Multivariate speed series, one column per station in graph order.
/// Missing observations are NaN until clean_series removes them.
struct SpeedSeries {
    std::vector<std::string> node_ids;
    int step_minutes = 5;
    std::vector<std::int64_t> timestamps; // epoch seconds, strictly increasing
    Tensor values;                        // [steps x stations], mph

    std::size_t steps() const { return timestamps.size(); }
    std::size_t stations() const { return node_ids.size(); }
};

/// Sliding windows over the series: inputs stack the F most recent speeds
/// per node (the per-node embedding), targets hold the next T_out speeds.
struct WindowedBatch {
    Tensor inputs;  // [S x N x F]
    Tensor targets; // [S x N x T_out]
    std::vector<std::int64_t> anchors; // anchor timestamp per window
    std::vector<std::string> node_ids;
    int step_minutes = 5;

    std::size_t count() const { return anchors.size(); }
    std::size_t nodes() const { return inputs.dim(1); }
    std::size_t history() const { return inputs.dim(2); }
    std::size_t horizon() const { return targets.dim(2); }
};

struct SplitBatches {
    WindowedBatch train;
    WindowedBatch val;
    WindowedBatch test;
};

/// Per-node z-score statistics, fitted on the training split only.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    /// z-score along the node axis of an [S x N x K] tensor.
    Tensor normalize(const Tensor& t) const;
    /// inverse transform, back to mph
    Tensor denormalize(const Tensor& t) const;
};

std::int64_t parse_timestamp(const std::string& iso);      // YYYY-MM-DDTHH:MM:SS
std::string format_timestamp(std::int64_t epoch_seconds);

/// speeds.csv: header `timestamp,<station ids...>`, empty cell = missing.
/// Columns are reordered to the graph's node order.
SpeedSeries load_series(const std::string& path, const SensorGraph& graph);

/// Two-pass cleaning: first drop whole days where more than
/// `day_threshold` of the stations have missing data, then drop stations
/// that still have missing data on any remaining day.
SpeedSeries clean_series(const SpeedSeries& raw, double day_threshold = 0.5);

WindowedBatch make_windows(const SpeedSeries& series, std::size_t history,
                           std::size_t horizon, std::size_t stride = 1);

/// Contiguous-in-time split; ratios must be nonnegative and sum to 1.
SplitBatches split(const WindowedBatch& batch, double train_ratio, double val_ratio,
                   double test_ratio);

Normalizer fit_normalizer(const WindowedBatch& train);

void write_speeds_csv(const SpeedSeries& series, const std::string& path);

} // namespace stgt
