#pragma once

#include <cstdint>
#include <string>

#include "stgt/dataset.hpp"
#include "stgt/graph.hpp"

namespace stgt {

enum class Topology { line, grid, ring };
Topology parse_topology(const std::string& name);
std::string to_string(Topology t);

/// Distribution shifts for transfer experiments: `seasonal` deepens the
/// daily congestion wave, `demand` flattens it and compresses its cycle.
enum class SynthShift { none, seasonal, demand };
SynthShift parse_shift(const std::string& name);
std::string to_string(SynthShift s);

struct SynthConfig {
    Topology topology = Topology::line;
    std::size_t nodes = 20;
    std::size_t days = 6;
    int step_minutes = 5;
    double free_flow_mph = 65.0;
    double amplitude_mph = 25.0;
    double period_minutes = 1440.0; // one congestion cycle per day
    double hop_lag_minutes = 10.0;  // wave delay per hop away from node 0
    double noise_mph = 2.0;
    double missing_rate = 0.0; // chance a cell is written as a hole
    std::uint64_t seed = 1;
    SynthShift shift = SynthShift::none;
    std::string start_date = "2024-03-04";
};

struct SynthResult {
    StationTable stations;
    SegmentTable segments;
    SpeedSeries series; // columns in build_graph order for these stations
};

/// Congestion wave over a small sensor network: each node's speed follows
/// a sinusoid delayed by its hop distance from node 0, plus gaussian
/// noise, clamped to stay drivable.
SynthResult generate_synth(const SynthConfig& cfg);

/// writes stations.csv, segments.csv, speeds.csv into `dir`
void write_synth_csv(const SynthResult& result, const std::string& dir);

} // namespace stgt
