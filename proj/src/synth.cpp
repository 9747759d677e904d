#include "stgt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <vector>

#include "stgt/error.hpp"
#include "stgt/rng.hpp"

namespace stgt {

Topology parse_topology(const std::string& name) {
    if (name == "line") return Topology::line;
    if (name == "grid") return Topology::grid;
    if (name == "ring") return Topology::ring;
    throw ConfigError("unknown topology '" + name + "' (want line, grid, or ring)");
}

std::string to_string(Topology t) {
    switch (t) {
    case Topology::line: return "line";
    case Topology::grid: return "grid";
    default: return "ring";
    }
}

SynthShift parse_shift(const std::string& name) {
    if (name == "none") return SynthShift::none;
    if (name == "seasonal") return SynthShift::seasonal;
    if (name == "demand") return SynthShift::demand;
    throw ConfigError("unknown shift '" + name + "' (want none, seasonal, or demand)");
}

std::string to_string(SynthShift s) {
    switch (s) {
    case SynthShift::none: return "none";
    case SynthShift::seasonal: return "seasonal";
    default: return "demand";
    }
}

namespace {

std::string station_id(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04zu", i);
    return buf;
}

// hop distance of every node from node 0, along the generated edges
std::vector<std::size_t> hop_counts(const SynthConfig& cfg, std::size_t rows,
                                    std::size_t cols) {
    std::vector<std::size_t> hops(cfg.nodes, 0);
    for (std::size_t i = 0; i < cfg.nodes; ++i) {
        switch (cfg.topology) {
        case Topology::line: hops[i] = i; break;
        case Topology::ring: hops[i] = std::min(i, cfg.nodes - i); break;
        case Topology::grid: hops[i] = i / cols + i % cols; break;
        }
    }
    (void)rows;
    return hops;
}

} // namespace

SynthResult generate_synth(const SynthConfig& cfg) {
    if (cfg.nodes < 1 || cfg.nodes > 9999) throw ConfigError("nodes must be in [1, 9999]");
    if (cfg.topology == Topology::ring && cfg.nodes < 3)
        throw ConfigError("a ring needs at least 3 nodes");
    if (cfg.days < 1) throw ConfigError("days must be positive");
    if (cfg.step_minutes < 1 || 1440 % cfg.step_minutes != 0)
        throw ConfigError("step_minutes must divide a day");
    if (!(cfg.period_minutes > 0.0)) throw ConfigError("period_minutes must be positive");
    if (!(cfg.free_flow_mph > 0.0) || cfg.amplitude_mph < 0.0 || cfg.noise_mph < 0.0)
        throw ConfigError("speeds must be positive, amplitude and noise nonnegative");
    if (!(cfg.missing_rate >= 0.0 && cfg.missing_rate < 1.0))
        throw ConfigError("missing_rate must be in [0, 1)");

    // grid: widest rectangle that tiles the node count exactly
    std::size_t rows = static_cast<std::size_t>(std::sqrt(static_cast<double>(cfg.nodes)));
    while (rows > 1 && cfg.nodes % rows != 0) --rows;
    const std::size_t cols = cfg.nodes / std::max<std::size_t>(rows, 1);

    SynthResult out;
    for (std::size_t i = 0; i < cfg.nodes; ++i) {
        double lat = 37.0, lon = -122.0;
        switch (cfg.topology) {
        case Topology::line: lat += 0.01 * static_cast<double>(i); break;
        case Topology::grid:
            lat += 0.01 * static_cast<double>(i / cols);
            lon += 0.01 * static_cast<double>(i % cols);
            break;
        case Topology::ring: {
            const double ang =
                2.0 * M_PI * static_cast<double>(i) / static_cast<double>(cfg.nodes);
            lat += 0.01 * std::cos(ang);
            lon += 0.01 * std::sin(ang);
            break;
        }
        }
        out.stations.rows.push_back({station_id(i), lat, lon});
    }

    auto link = [&](std::size_t a, std::size_t b) {
        out.segments.rows.push_back({station_id(a), station_id(b), 1.0});
        out.segments.rows.push_back({station_id(b), station_id(a), 1.0});
    };
    switch (cfg.topology) {
    case Topology::line:
        for (std::size_t i = 0; i + 1 < cfg.nodes; ++i) link(i, i + 1);
        break;
    case Topology::ring:
        for (std::size_t i = 0; i < cfg.nodes; ++i) link(i, (i + 1) % cfg.nodes);
        break;
    case Topology::grid:
        for (std::size_t i = 0; i < cfg.nodes; ++i) {
            if (i % cols + 1 < cols) link(i, i + 1);
            if (i / cols + 1 < rows) link(i, i + cols);
        }
        break;
    }

    const auto hops = hop_counts(cfg, rows, cols);
    double amplitude = cfg.amplitude_mph;
    double period = cfg.period_minutes;
    if (cfg.shift == SynthShift::seasonal) amplitude *= 1.5;
    if (cfg.shift == SynthShift::demand) {
        // A constant wave offset is invisible to a sliding-window forecaster
        // (shifted windows are the same trajectory at other anchors), so the
        // demand shift compresses the cycle: the congestion timing drifts
        // further from the base pattern as the day progresses.
        amplitude *= 0.5;
        period /= 6.0;
    }

    const std::size_t steps_per_day = 1440 / static_cast<std::size_t>(cfg.step_minutes);
    const std::size_t steps = steps_per_day * cfg.days;
    const std::int64_t start = parse_timestamp(cfg.start_date + "T00:00:00");

    SpeedSeries& series = out.series;
    series.step_minutes = cfg.step_minutes;
    for (const Station& s : out.stations.rows) series.node_ids.push_back(s.id);
    std::sort(series.node_ids.begin(), series.node_ids.end()); // graph order
    series.timestamps.resize(steps);
    series.values = Tensor({steps, cfg.nodes});

    // zero-padded ids sort numerically, so column j is node j
    Rng rng(cfg.seed);
    const double lo = 1.0;
    const double hi = cfg.free_flow_mph + 3.0 * cfg.noise_mph;
    for (std::size_t t = 0; t < steps; ++t) {
        series.timestamps[t] = start + static_cast<std::int64_t>(t) * cfg.step_minutes * 60;
        const double minutes = static_cast<double>(t * static_cast<std::size_t>(cfg.step_minutes));
        for (std::size_t j = 0; j < cfg.nodes; ++j) {
            const double phase =
                minutes - cfg.hop_lag_minutes * static_cast<double>(hops[j]);
            const double wave = 0.5 * (1.0 + std::sin(2.0 * M_PI * phase / period));
            double v = cfg.free_flow_mph - amplitude * wave;
            if (cfg.noise_mph > 0.0) v += rng.normal(0.0, cfg.noise_mph);
            v = std::clamp(v, lo, hi);
            if (cfg.missing_rate > 0.0 && rng.uniform() < cfg.missing_rate)
                v = std::numeric_limits<double>::quiet_NaN();
            series.values(t, j) = v;
        }
    }
    return out;
}

void write_synth_csv(const SynthResult& result, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_stations_csv(result.stations, dir + "/stations.csv");
    write_segments_csv(result.segments, dir + "/segments.csv");
    write_speeds_csv(result.series, dir + "/speeds.csv");
}

} // namespace stgt
