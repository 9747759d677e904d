#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "stgt/dataset.hpp"
#include "stgt/model.hpp"
#include "stgt/sparse.hpp"
#include "testutil.hpp"

using stgt::ParamRef;
using stgt::SparseConfig;
using stgt::SparseState;
using stgt::Tensor;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

// standalone parameter list with owned storage
struct FakeParams {
    std::vector<Tensor> values;
    std::vector<Tensor> grads;
    std::vector<ParamRef> refs;

    void add(const std::string& name, Tensor value, bool maskable = true) {
        values.push_back(std::move(value));
        grads.emplace_back(values.back().shape());
        refs.push_back({name, nullptr, nullptr, maskable});
        // vectors may reallocate; repair every pointer
        for (std::size_t i = 0; i < refs.size(); ++i) {
            refs[i].value = &values[i];
            refs[i].grad = &grads[i];
        }
    }
};

std::size_t count_ones(const Tensor& mask) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) n += mask[i] == 1.0;
    return n;
}

} // namespace

TEST_SUITE("sparse") {

TEST_CASE("erk allocation splits the weight budget by layer shape") {
    FakeParams fp;
    fp.add("small", Tensor({10, 10}));
    fp.add("big", Tensor({10, 1000}));
    const SparseState state(fp.refs, {0.9, 0.5, 1000}, 1);

    // densities proportional to (rows + cols) / (rows * cols):
    // eps = 1010 / (0.2 * 100 + 0.101 * 10000) = 1010 / 1030
    REQUIRE(state.layers().size() == 2);
    CHECK(state.layers()[0].active == 20);  // round(1010/1030 * 20)
    CHECK(state.layers()[1].active == 990); // round(1010/1030 * 1010)
    CHECK(state.active_weights() == 1010);
    CHECK(state.total_maskable() == 10100);
    CHECK(state.actual_sparsity() == doctest::Approx(0.9));
    CHECK(state.layers()[0].density == doctest::Approx(0.2));
    CHECK(state.layers()[1].density == doctest::Approx(0.099));
    // the small layer ends up denser: that is the point of the scheme
    CHECK(state.layers()[0].density > state.layers()[1].density);

    CHECK(count_ones(state.mask_for(0)) == 20);
    CHECK(count_ones(state.mask_for(1)) == 990);
}

TEST_CASE("erk clips layers at fully dense and redistributes the rest") {
    FakeParams fp;
    fp.add("tiny", Tensor({2, 2}));
    fp.add("wide", Tensor({100, 100}));
    const SparseState state(fp.refs, {0.5, 0.5, 1000}, 3);

    // tiny layer wants density > 1, so it is pinned dense and the wide
    // layer absorbs the remaining budget: 5002 - 4 = 4998 active
    CHECK(state.layers()[0].active == 4);
    CHECK(bitwise_equal(state.mask_for(0), Tensor::full({2, 2}, 1.0)));
    CHECK(state.layers()[1].active == 4998);
    CHECK(state.active_weights() == 5002);
}

TEST_CASE("sparsity that would empty a layer is rejected") {
    FakeParams fp;
    fp.add("w", Tensor({10, 10}));
    CHECK_THROWS_AS(SparseState(fp.refs, {0.996, 0.5, 1000}, 1), stgt::ValueError);
    CHECK_THROWS_AS(SparseState(fp.refs, {1.0, 0.5, 1000}, 1), stgt::ConfigError);
    CHECK_THROWS_AS(SparseState(fp.refs, {-0.1, 0.5, 1000}, 1), stgt::ConfigError);
    CHECK_THROWS_AS(SparseState(fp.refs, {0.5, 1.5, 1000}, 1), stgt::ConfigError);

    FakeParams none;
    none.add("bias", Tensor({4, 4}), /*maskable=*/false);
    CHECK_THROWS_AS(SparseState(none.refs, {0.5, 0.5, 1000}, 1), stgt::ValueError);

    FakeParams vec;
    vec.add("v", Tensor({4}), /*maskable=*/true);
    CHECK_THROWS_AS(SparseState(vec.refs, {0.5, 0.5, 1000}, 1), stgt::ValueError);
}

TEST_CASE("mask layout is a deterministic function of the seed") {
    FakeParams fp;
    fp.add("w", Tensor({12, 12}));
    const SparseState a(fp.refs, {0.7, 0.5, 100}, 42);
    const SparseState b(fp.refs, {0.7, 0.5, 100}, 42);
    const SparseState c(fp.refs, {0.7, 0.5, 100}, 43);
    CHECK(bitwise_equal(a.mask_for(0), b.mask_for(0)));
    CHECK_FALSE(bitwise_equal(a.mask_for(0), c.mask_for(0)));
    for (std::size_t i = 0; i < a.mask_for(0).size(); ++i) {
        const double v = a.mask_for(0)[i];
        CHECK((v == 0.0 || v == 1.0));
    }
}

TEST_CASE("apply zeroes the pruned weights exactly") {
    FakeParams fp;
    stgt::Rng rng(5);
    fp.add("w", random_tensor({8, 8}, rng));
    const SparseState state(fp.refs, {0.5, 0.5, 100}, 9);
    state.apply(fp.refs);
    const Tensor& mask = state.mask_for(0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0) {
            CHECK(fp.values[0][i] == 0.0);
            CHECK_FALSE(std::signbit(fp.values[0][i]));
        } else {
            CHECK(fp.values[0][i] != 0.0);
        }
    }
    // only maskable parameters get a mask pointer
    fp.add("bias", Tensor({8}), false);
    const auto ptrs = state.mask_pointers(fp.refs);
    CHECK(ptrs[0] == &state.mask_for(0));
    CHECK(ptrs[1] == nullptr);
    CHECK_THROWS_AS(state.mask_for(1), stgt::ValueError);
}

TEST_CASE("drop and grow agrees with a full-sort oracle") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        FakeParams fp;
        stgt::Rng rng(seed);
        fp.add("w", random_tensor({8, 8}, rng));
        SparseState state(fp.refs, {0.5, 0.5, 1}, seed + 100);
        state.apply(fp.refs);
        fp.grads[0] = random_tensor({8, 8}, rng);

        const Tensor before = state.mask_for(0);
        const Tensor w_before = fp.values[0];
        const std::size_t active = count_ones(before);
        REQUIRE(active == 32);

        // warm the optimizer so velocity buffers exist, then recycle
        stgt::SgdMomentum opt(0.01, 0.9);
        opt.step(fp.refs, state.mask_pointers(fp.refs));
        const Tensor w_stepped = fp.values[0];
        const std::size_t moved = state.drop_and_grow(fp.refs, opt);
        CHECK(moved == 16); // round(0.5 * 32)

        // oracle: full sorts with the same tie-breaking
        std::vector<std::size_t> act, inact;
        for (std::size_t i = 0; i < 64; ++i)
            (before[i] == 1.0 ? act : inact).push_back(i);
        const double* pw = w_stepped.data();
        std::sort(act.begin(), act.end(), [pw](std::size_t a, std::size_t b) {
            return std::abs(pw[a]) < std::abs(pw[b]) ||
                   (std::abs(pw[a]) == std::abs(pw[b]) && a < b);
        });
        const double* pg = fp.grads[0].data();
        std::sort(inact.begin(), inact.end(), [pg](std::size_t a, std::size_t b) {
            return std::abs(pg[a]) > std::abs(pg[b]) ||
                   (std::abs(pg[a]) == std::abs(pg[b]) && a < b);
        });
        Tensor want = before;
        std::set<std::size_t> dropped, grown;
        for (std::size_t k = 0; k < 16; ++k) {
            want[act[k]] = 0.0;
            want[inact[k]] = 1.0;
            dropped.insert(act[k]);
            grown.insert(inact[k]);
        }
        CHECK(bitwise_equal(state.mask_for(0), want));
        CHECK(count_ones(state.mask_for(0)) == 32); // cardinality conserved
        CHECK(state.active_weights() == 32);

        for (std::size_t j : dropped) {
            CHECK(fp.values[0][j] == 0.0);
            CHECK((*opt.velocity(0))[j] == 0.0);
        }
        for (std::size_t j : grown) {
            CHECK(fp.values[0][j] == 0.0); // grown weights restart at zero
            CHECK((*opt.velocity(0))[j] == 0.0);
        }
        // candidates came from the pre-event mask, so no index is in both sets
        for (std::size_t j : grown) CHECK(dropped.count(j) == 0);
        // surviving active weights kept their values
        for (std::size_t j = 0; j < 64; ++j) {
            if (before[j] == 1.0 && dropped.count(j) == 0)
                CHECK(fp.values[0][j] == w_stepped[j]);
        }
    }
}

TEST_CASE("all-zero gradients grow the lowest inactive indices") {
    FakeParams fp;
    stgt::Rng rng(2);
    fp.add("w", random_tensor({4, 4}, rng));
    SparseState state(fp.refs, {0.5, 0.5, 1}, 7);
    state.apply(fp.refs);
    // grads stay zero
    stgt::SgdMomentum opt(0.01, 0.9);
    opt.step(fp.refs, state.mask_pointers(fp.refs));

    const Tensor before = state.mask_for(0);
    std::vector<std::size_t> inact;
    for (std::size_t i = 0; i < 16; ++i)
        if (before[i] == 0.0) inact.push_back(i); // already ascending
    state.drop_and_grow(fp.refs, opt);
    const Tensor& after = state.mask_for(0);
    // round(0.5 * 8) = 4 grown, and they are the 4 smallest inactive indices
    for (std::size_t k = 0; k < 4; ++k) CHECK(after[inact[k]] == 1.0);
    for (std::size_t k = 4; k < inact.size(); ++k) CHECK(after[inact[k]] == 0.0);
}

TEST_CASE("masks survive a name round trip") {
    FakeParams fp;
    fp.add("a", Tensor({4, 4}));
    fp.add("b", Tensor({4, 8}));
    SparseState src(fp.refs, {0.5, 0.5, 10}, 11);
    const auto by_name = src.masks_by_name();
    REQUIRE(by_name.size() == 2);

    SparseState dst(fp.refs, {0.5, 0.5, 10}, 99); // different layout at first
    dst.load_masks(by_name, fp.refs);
    CHECK(bitwise_equal(dst.mask_for(0), src.mask_for(0)));
    CHECK(bitwise_equal(dst.mask_for(1), src.mask_for(1)));
    CHECK(dst.active_weights() == src.active_weights());

    std::map<std::string, Tensor> missing = by_name;
    missing.erase("a");
    CHECK_THROWS_AS(dst.load_masks(missing, fp.refs), stgt::ValueError);

    std::map<std::string, Tensor> renamed;
    renamed.emplace("a", by_name.at("a"));
    renamed.emplace("zz", by_name.at("b"));
    CHECK_THROWS_AS(dst.load_masks(renamed, fp.refs), stgt::ValueError);

    std::map<std::string, Tensor> bad = by_name;
    bad.at("a")[0] = 0.5;
    CHECK_THROWS_AS(dst.load_masks(bad, fp.refs), stgt::ValueError);

    std::map<std::string, Tensor> misshaped = by_name;
    misshaped.at("a") = Tensor({4, 5});
    CHECK_THROWS_AS(dst.load_masks(misshaped, fp.refs), stgt::ShapeError);
}

// ---------------------------------------------------------------------------
// training loop

namespace {

stgt::SplitBatches toy_data(std::size_t nodes, std::size_t history, std::size_t horizon) {
    stgt::SpeedSeries s;
    s.step_minutes = 5;
    for (std::size_t j = 0; j < nodes; ++j) s.node_ids.push_back("n" + std::to_string(j));
    const std::int64_t start = stgt::parse_timestamp("2024-03-04T00:00:00");
    const std::size_t steps = 80;
    s.timestamps.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) s.timestamps[t] = start + 300 * static_cast<std::int64_t>(t);
    s.values = Tensor({steps, nodes});
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < nodes; ++j)
            s.values(t, j) = 55.0 + 8.0 * std::sin(0.3 * static_cast<double>(t) +
                                                    static_cast<double>(j));
    const auto windows = stgt::make_windows(s, history, horizon);
    return stgt::split(windows, 0.6, 0.2, 0.2);
}

stgt::SensorGraph toy_graph(std::size_t nodes) {
    stgt::StationTable st;
    stgt::SegmentTable sg;
    for (std::size_t j = 0; j < nodes; ++j) st.rows.push_back({"n" + std::to_string(j), 0.0, 0.0});
    for (std::size_t j = 0; j + 1 < nodes; ++j) {
        sg.rows.push_back({"n" + std::to_string(j), "n" + std::to_string(j + 1), 1.0});
        sg.rows.push_back({"n" + std::to_string(j + 1), "n" + std::to_string(j), 1.0});
    }
    return stgt::build_graph(st, sg, 0.1);
}

} // namespace

TEST_CASE("training runs, logs every epoch, and fires events on schedule") {
    const auto g = toy_graph(4);
    const auto data = toy_data(4, 6, 2);
    const auto norm = stgt::fit_normalizer(data.train);

    stgt::ModelConfig mc;
    mc.history = 6;
    mc.horizon = 2;
    mc.spatial_dim = 4;
    mc.hidden = 6;
    mc.lstm_layers = 2;
    stgt::StgtModel model(g, stgt::NormScheme::sym, mc);

    stgt::TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.lr = 1e-2;
    tc.seed = 3;
    tc.sparse = {0.5, 0.3, 5};

    std::size_t steps_seen = 0, events_seen = 0;
    stgt::TrainHooks hooks;
    hooks.after_step = [&](std::size_t, SparseState* sp) {
        ++steps_seen;
        REQUIRE(sp != nullptr);
    };
    hooks.after_event = [&](std::size_t it, std::size_t, SparseState*) {
        ++events_seen;
        CHECK(it % 5 == 0);
    };
    const stgt::TrainResult res = stgt::train(model, data, norm, tc, &hooks);

    const std::size_t batches_per_epoch =
        (data.train.count() + tc.batch_size - 1) / tc.batch_size;
    CHECK(res.iterations == 4 * batches_per_epoch);
    CHECK(steps_seen == res.iterations);
    CHECK(res.events == res.iterations / 5);
    CHECK(events_seen == res.events);
    REQUIRE(res.history.size() == 4);
    REQUIRE(res.sparse != nullptr);
    for (const stgt::EpochRow& row : res.history) {
        CHECK(std::isfinite(row.train_loss));
        CHECK(std::isfinite(row.val_loss));
        CHECK(row.sparsity == doctest::Approx(res.sparse->actual_sparsity()));
        CHECK(row.active_weights == res.sparse->active_weights());
    }
}

TEST_CASE("training is reproducible and sparsity zero leaves no sparse state") {
    const auto g = toy_graph(3);
    const auto data = toy_data(3, 4, 2);
    const auto norm = stgt::fit_normalizer(data.train);

    stgt::ModelConfig mc;
    mc.history = 4;
    mc.horizon = 2;
    mc.spatial_dim = 4;
    mc.hidden = 5;
    stgt::TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    tc.lr = 5e-3;
    tc.seed = 7;

    stgt::StgtModel m1(g, stgt::NormScheme::sym, mc);
    const auto r1 = stgt::train(m1, data, norm, tc);
    stgt::StgtModel m2(g, stgt::NormScheme::sym, mc);
    const auto r2 = stgt::train(m2, data, norm, tc);

    CHECK(r1.sparse == nullptr);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
    }
    // and the fitted parameters agree bit for bit
    auto p1 = m1.params(), p2 = m2.params();
    for (std::size_t i = 0; i < p1.size(); ++i)
        CHECK(bitwise_equal(*p1[i].value, *p2[i].value));

    // learning actually happened on this easy series
    CHECK(r1.history.back().train_loss < r1.history.front().train_loss);
}

TEST_CASE("train validates its configuration") {
    const auto g = toy_graph(3);
    const auto data = toy_data(3, 4, 2);
    const auto norm = stgt::fit_normalizer(data.train);
    stgt::ModelConfig mc;
    mc.history = 4;
    mc.horizon = 2;
    mc.spatial_dim = 4;
    mc.hidden = 5;
    stgt::StgtModel model(g, stgt::NormScheme::sym, mc);

    stgt::TrainConfig tc;
    tc.epochs = 0;
    CHECK_THROWS_AS(stgt::train(model, data, norm, tc), stgt::ConfigError);
    tc = {};
    tc.lr = 0.0;
    CHECK_THROWS_AS(stgt::train(model, data, norm, tc), stgt::ConfigError);
    tc = {};
    tc.momentum = 1.0;
    CHECK_THROWS_AS(stgt::train(model, data, norm, tc), stgt::ConfigError);

    stgt::ModelConfig wrong = mc;
    wrong.history = 5;
    stgt::StgtModel mismatched(g, stgt::NormScheme::sym, wrong);
    tc = {};
    CHECK_THROWS_AS(stgt::train(mismatched, data, norm, tc), stgt::ShapeError);
}

TEST_CASE("history csv carries one row per epoch") {
    testutil::TempDir dir;
    std::vector<stgt::EpochRow> hist(2);
    hist[0] = {1, 0.5, 0.6, 3.0, 4.0, 5.5, 0.9, 123};
    hist[1] = {2, 0.25, 0.3, 2.0, 3.0, 4.5, 0.9, 123};
    const std::string path = dir.file("history.csv");
    stgt::write_history_csv(hist, path);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,train_loss,val_loss,val_mae,val_rmse,val_mape,sparsity,active_weights");
    std::getline(in, line);
    CHECK(line.substr(0, 2) == "1,");
    CHECK(line.find(",123") != std::string::npos);
    std::getline(in, line);
    CHECK(line.substr(0, 2) == "2,");
    CHECK_FALSE(std::getline(in, line));
}

} // TEST_SUITE
