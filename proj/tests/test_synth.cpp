#include <cmath>
#include <cstddef>

#include "doctest.h"
#include "stgt/synth.hpp"
#include "testutil.hpp"

using stgt::SynthConfig;
using stgt::SynthResult;
using stgt::Tensor;
using testutil::bitwise_equal;

namespace {

SynthConfig quiet_config() {
    SynthConfig cfg;
    cfg.nodes = 5;
    cfg.days = 1;
    cfg.noise_mph = 0.0;
    return cfg;
}

} // namespace

TEST_SUITE("synth") {

TEST_CASE("name parsing round trips and rejects junk") {
    CHECK(stgt::parse_topology("line") == stgt::Topology::line);
    CHECK(stgt::parse_topology("grid") == stgt::Topology::grid);
    CHECK(stgt::parse_topology("ring") == stgt::Topology::ring);
    CHECK(stgt::to_string(stgt::Topology::grid) == "grid");
    CHECK_THROWS_AS(stgt::parse_topology("star"), stgt::ConfigError);

    CHECK(stgt::parse_shift("none") == stgt::SynthShift::none);
    CHECK(stgt::to_string(stgt::parse_shift("seasonal")) == "seasonal");
    CHECK(stgt::to_string(stgt::parse_shift("demand")) == "demand");
    CHECK_THROWS_AS(stgt::parse_shift("winter"), stgt::ConfigError);
}

TEST_CASE("config validation") {
    SynthConfig cfg = quiet_config();
    cfg.nodes = 0;
    CHECK_THROWS_AS(stgt::generate_synth(cfg), stgt::ConfigError);
    cfg = quiet_config();
    cfg.topology = stgt::Topology::ring;
    cfg.nodes = 2;
    CHECK_THROWS_AS(stgt::generate_synth(cfg), stgt::ConfigError);
    cfg = quiet_config();
    cfg.days = 0;
    CHECK_THROWS_AS(stgt::generate_synth(cfg), stgt::ConfigError);
    cfg = quiet_config();
    cfg.step_minutes = 7; // does not divide 1440
    CHECK_THROWS_AS(stgt::generate_synth(cfg), stgt::ConfigError);
    cfg = quiet_config();
    cfg.missing_rate = 1.0;
    CHECK_THROWS_AS(stgt::generate_synth(cfg), stgt::ConfigError);
    cfg = quiet_config();
    cfg.period_minutes = 0.0;
    CHECK_THROWS_AS(stgt::generate_synth(cfg), stgt::ConfigError);
}

TEST_CASE("station ids are zero padded so csv order equals graph order") {
    const SynthResult r = stgt::generate_synth(quiet_config());
    REQUIRE(r.stations.rows.size() == 5);
    CHECK(r.stations.rows[0].id == "s0000");
    CHECK(r.stations.rows[4].id == "s0004");
    REQUIRE(r.series.node_ids.size() == 5);
    for (std::size_t j = 0; j < 5; ++j)
        CHECK(r.series.node_ids[j] == r.stations.rows[j].id);
    // one simulated day at five-minute resolution
    CHECK(r.series.steps() == 288);
    CHECK(r.series.timestamps[1] - r.series.timestamps[0] == 300);
    CHECK(stgt::format_timestamp(r.series.timestamps[0]) == "2024-03-04T00:00:00");
}

TEST_CASE("line topology chains consecutive stations both ways") {
    const SynthResult r = stgt::generate_synth(quiet_config());
    CHECK(r.segments.rows.size() == 8); // 4 links, both directions
    CHECK(r.segments.rows[0].from == "s0000");
    CHECK(r.segments.rows[0].to == "s0001");
    CHECK(r.segments.rows[1].from == "s0001");
    CHECK(r.segments.rows[1].to == "s0000");
    for (const stgt::Segment& s : r.segments.rows) CHECK(s.distance_km == 1.0);

    SynthConfig ring = quiet_config();
    ring.topology = stgt::Topology::ring;
    ring.nodes = 6;
    CHECK(stgt::generate_synth(ring).segments.rows.size() == 12);

    SynthConfig grid = quiet_config();
    grid.topology = stgt::Topology::grid;
    grid.nodes = 6; // tiles as 2 x 3
    // horizontal: 2 rows x 2 links, vertical: 3 cols x 1 link, both ways
    CHECK(stgt::generate_synth(grid).segments.rows.size() == 14);
}

TEST_CASE("identical seeds reproduce the corpus bit for bit") {
    SynthConfig cfg = quiet_config();
    cfg.noise_mph = 2.0;
    cfg.missing_rate = 0.1;
    cfg.seed = 77;
    const SynthResult a = stgt::generate_synth(cfg);
    const SynthResult b = stgt::generate_synth(cfg);
    CHECK(bitwise_equal(a.series.values, b.series.values));
    CHECK(a.series.timestamps == b.series.timestamps);

    cfg.seed = 78;
    const SynthResult c = stgt::generate_synth(cfg);
    CHECK_FALSE(bitwise_equal(a.series.values, c.series.values));
}

TEST_CASE("without noise the wave repeats down the line with the hop lag") {
    // hop_lag 10 min at 5-min steps: node j echoes node 0 two steps later per hop
    const SynthConfig cfg = quiet_config();
    const SynthResult r = stgt::generate_synth(cfg);
    const Tensor& v = r.series.values;
    for (std::size_t j = 1; j < 5; ++j) {
        const std::size_t delay = 2 * j;
        for (std::size_t t = delay; t < r.series.steps(); t += 7)
            CHECK(v(t, j) == v(t - delay, 0));
    }

    // the full swing of the congestion wave is visible on node 0
    double lo = 1e9, hi = -1e9;
    for (std::size_t t = 0; t < r.series.steps(); ++t) {
        lo = std::min(lo, v(t, 0));
        hi = std::max(hi, v(t, 0));
    }
    CHECK(hi == doctest::Approx(65.0));
    CHECK(lo == doctest::Approx(40.0)); // free flow minus amplitude
}

TEST_CASE("shifts rescale the wave and compress the demand cycle") {
    SynthConfig cfg = quiet_config();
    cfg.nodes = 1;
    cfg.topology = stgt::Topology::line;

    auto swing = [](const SynthResult& r) {
        double lo = 1e9, hi = -1e9;
        for (std::size_t t = 0; t < r.series.steps(); ++t) {
            lo = std::min(lo, r.series.values(t, 0));
            hi = std::max(hi, r.series.values(t, 0));
        }
        return hi - lo;
    };
    const SynthResult base = stgt::generate_synth(cfg);
    cfg.shift = stgt::SynthShift::seasonal;
    const SynthResult seasonal = stgt::generate_synth(cfg);
    cfg.shift = stgt::SynthShift::demand;
    const SynthResult demand = stgt::generate_synth(cfg);

    CHECK(swing(base) == doctest::Approx(25.0));
    CHECK(swing(seasonal) == doctest::Approx(37.5)); // amplitude x 1.5
    CHECK(swing(demand) == doctest::Approx(12.5));   // amplitude x 0.5

    // demand compresses the cycle to a sixth: the shifted wave repeats every
    // 240 minutes = 48 steps (to sin rounding), while the base wave does not
    const std::size_t cycle = 48;
    double demand_gap = 0.0, base_gap = 0.0;
    for (std::size_t t = 0; t + cycle < base.series.steps(); ++t) {
        demand_gap = std::max(demand_gap, std::abs(demand.series.values(t, 0) -
                                                   demand.series.values(t + cycle, 0)));
        base_gap = std::max(base_gap, std::abs(base.series.values(t, 0) -
                                               base.series.values(t + cycle, 0)));
    }
    CHECK(demand_gap < 1e-9);
    CHECK(base_gap > 1.0);
}

TEST_CASE("speeds stay clamped into the drivable band") {
    SynthConfig cfg = quiet_config();
    cfg.amplitude_mph = 200.0; // wave tries to go deeply negative
    const SynthResult r = stgt::generate_synth(cfg);
    double lo = 1e9;
    for (std::size_t t = 0; t < r.series.steps(); ++t)
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(r.series.values(t, j) >= 1.0);
            CHECK(r.series.values(t, j) <= 65.0);
            lo = std::min(lo, r.series.values(t, j));
        }
    CHECK(lo == 1.0); // the clamp actually engaged
}

TEST_CASE("missing rate leaves roughly that fraction of holes") {
    SynthConfig cfg = quiet_config();
    cfg.missing_rate = 0.3;
    cfg.seed = 5;
    const SynthResult r = stgt::generate_synth(cfg);
    std::size_t holes = 0;
    for (std::size_t i = 0; i < r.series.values.size(); ++i)
        holes += std::isnan(r.series.values[i]);
    const double frac = static_cast<double>(holes) /
                        static_cast<double>(r.series.values.size());
    CHECK(frac > 0.25);
    CHECK(frac < 0.35);
}

TEST_CASE("written corpus loads back into the same series") {
    testutil::TempDir dir;
    SynthConfig cfg = quiet_config();
    cfg.noise_mph = 3.0;
    cfg.missing_rate = 0.05;
    const SynthResult r = stgt::generate_synth(cfg);
    stgt::write_synth_csv(r, dir.path());

    const stgt::StationTable st = stgt::load_stations_csv(dir.file("stations.csv"));
    const stgt::SegmentTable sg = stgt::load_segments_csv(dir.file("segments.csv"));
    REQUIRE(st.rows.size() == r.stations.rows.size());
    REQUIRE(sg.rows.size() == r.segments.rows.size());
    const stgt::SensorGraph g = stgt::build_graph(st, sg, 0.1);
    const stgt::SpeedSeries loaded = stgt::load_series(dir.file("speeds.csv"), g);

    REQUIRE(loaded.steps() == r.series.steps());
    CHECK(loaded.timestamps == r.series.timestamps);
    CHECK(loaded.node_ids == r.series.node_ids);
    for (std::size_t i = 0; i < loaded.values.size(); ++i) {
        if (std::isnan(r.series.values[i]))
            CHECK(std::isnan(loaded.values[i]));
        else
            CHECK(loaded.values[i] == r.series.values[i]);
    }
}

} // TEST_SUITE
