#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "stgt/flops.hpp"
#include "stgt/pipeline.hpp"
#include "stgt/synth.hpp"
#include "testutil.hpp"

using stgt::RunConfig;
using testutil::TempDir;

namespace {

// small line corpus that trains in well under a second
void make_corpus(const std::string& dir, std::size_t nodes, std::uint64_t seed,
                 stgt::SynthShift shift = stgt::SynthShift::none) {
    stgt::SynthConfig cfg;
    cfg.nodes = nodes;
    cfg.days = 2;
    cfg.noise_mph = 1.0;
    cfg.seed = seed;
    cfg.shift = shift;
    stgt::write_synth_csv(stgt::generate_synth(cfg), dir);
}

RunConfig tiny_run(const std::string& data_dir) {
    RunConfig cfg;
    cfg.data_dir = data_dir;
    cfg.history = 4;
    cfg.horizon = 2;
    cfg.spatial_dim = 4;
    cfg.heads = 2;
    cfg.hidden = 8;
    cfg.lstm_layers = 2;
    cfg.epochs = 2;
    cfg.batch_size = 64;
    cfg.lr = 1e-2;
    cfg.seed = 11;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config files round trip every field bit for bit") {
    TempDir dir;
    RunConfig cfg;
    cfg.data_dir = "some/corpus";
    cfg.omega = 1.0 / 3.0; // needs all 17 digits
    cfg.norm_scheme = "row";
    cfg.day_threshold = 0.1 + 0.2;
    cfg.history = 7;
    cfg.spatial = "gat";
    cfg.lr = 3e-4;
    cfg.sparsity = 0.975;
    cfg.seed = 123456789012345ULL;
    cfg.shuffle = false;

    const std::string path = dir.file("config.txt");
    stgt::write_run_config(cfg, path);
    const RunConfig back = stgt::load_run_config(path);
    CHECK(stgt::config_items(back) == stgt::config_items(cfg));
    CHECK(back.omega == cfg.omega);
    CHECK(back.day_threshold == cfg.day_threshold);
    CHECK(back.spatial == "gat");
    CHECK(back.shuffle == false);
}

TEST_CASE("config parsing accepts comments and rejects junk") {
    TempDir dir;
    const std::string path = dir.file("config.txt");
    {
        std::ofstream out(path);
        out << "# resolved run\n\n  lr = 0.5\nmode=gat\n";
    }
    const RunConfig cfg = stgt::load_run_config(path);
    CHECK(cfg.lr == 0.5);
    CHECK(cfg.spatial == "gat");
    CHECK(cfg.hidden == 128); // untouched default

    {
        std::ofstream out(path);
        out << "no equals sign here\n";
    }
    CHECK_THROWS_AS(stgt::load_run_config(path), stgt::ConfigError);

    RunConfig c;
    CHECK_THROWS_AS(stgt::apply_config_entry(c, "unknown_key", "1"), stgt::ConfigError);
    CHECK_THROWS_AS(stgt::apply_config_entry(c, "epochs", "ten"), stgt::ConfigError);
    CHECK_THROWS_AS(stgt::apply_config_entry(c, "lr", "fast"), stgt::ConfigError);
    CHECK_THROWS_AS(stgt::apply_config_entry(c, "shuffle", "maybe"), stgt::ConfigError);
    CHECK_THROWS_AS(stgt::load_run_config(dir.file("absent.txt")), stgt::IoError);
}

TEST_CASE("pipeline data loading wires corpus, graph, and splits together") {
    TempDir dir;
    make_corpus(dir.path(), 5, 21);
    RunConfig cfg = tiny_run(dir.path());
    const stgt::LoadedData d = stgt::load_pipeline_data(cfg);
    CHECK(d.graph->node_count() == 5);
    CHECK(d.series.node_ids == d.graph->node_ids());
    CHECK(d.norm.mean.size() == 5);
    // two day-long segments of 288 steps: 2 * (288 - 6 + 1) windows, split 8/1/1
    CHECK(d.splits.train.count() == 452);
    CHECK(d.splits.val.count() == 56);
    CHECK(d.splits.test.count() == 58);

    cfg.data_dir = "";
    CHECK_THROWS_AS(stgt::load_pipeline_data(cfg), stgt::ConfigError);
}

TEST_CASE("a station that never reports is dropped and the graph rebuilt") {
    TempDir dir;
    stgt::SynthConfig sc;
    sc.nodes = 5;
    sc.days = 2;
    sc.noise_mph = 0.0;
    stgt::SynthResult r = stgt::generate_synth(sc);
    // station s0002 goes dark for the whole record
    for (std::size_t t = 0; t < r.series.steps(); ++t)
        r.series.values(t, 2) = std::numeric_limits<double>::quiet_NaN();
    stgt::write_synth_csv(r, dir.path());

    const RunConfig cfg = tiny_run(dir.path());
    const stgt::LoadedData d = stgt::load_pipeline_data(cfg);
    CHECK(d.graph->node_count() == 4);
    const std::vector<std::string> want = {"s0000", "s0001", "s0003", "s0004"};
    CHECK(d.graph->node_ids() == want);
    // the line broke at the dropped station: only 0-1 and 3-4 remain linked
    CHECK(d.graph->edges().size() == 4);
    CHECK(d.stations.rows.size() == 4);
}

TEST_CASE("split evaluation does not depend on the batch size") {
    TempDir dir;
    make_corpus(dir.path(), 4, 31);
    RunConfig cfg = tiny_run(dir.path());
    const stgt::LoadedData d = stgt::load_pipeline_data(cfg);
    stgt::StgtModel model(*d.graph, stgt::NormScheme::sym, cfg.model_config());
    model.init_params(5);

    const stgt::ErrorStats a = stgt::evaluate_split(model, d.norm, d.splits.val, 7);
    const stgt::ErrorStats b = stgt::evaluate_split(model, d.norm, d.splits.val, 1000);
    CHECK(a.mae == b.mae);
    CHECK(a.rmse == b.rmse);
    CHECK(a.mape == b.mape);
    CHECK(a.count == b.count);
    CHECK(a.count == d.splits.val.count() * 4 * 2);
    CHECK_THROWS_AS(stgt::evaluate_split(model, d.norm, d.splits.val, 0),
                    stgt::ConfigError);
}

TEST_CASE("training run leaves a complete, reproducible run directory") {
    TempDir corpus;
    make_corpus(corpus.path(), 4, 41);
    TempDir out1, out2;
    RunConfig cfg = tiny_run(corpus.path());
    cfg.sparsity = 0.4;
    cfg.update_interval = 5;

    std::ostringstream log1, log2;
    const stgt::TrainOutcome oc = stgt::run_train(cfg, out1.path(), log1);
    CHECK(oc.iterations == 2 * 8); // 452 windows in batches of 64, twice
    CHECK(oc.events == oc.iterations / 5);
    CHECK(std::isfinite(oc.test.mae));
    CHECK(oc.test.count > 0);

    for (const char* name : {"config.txt", "history.csv", "checkpoint.json",
                             "flops-report.json", "summary.json"})
        CHECK(std::filesystem::exists(out1.file(name)));

    nlohmann::json summary;
    std::ifstream(out1.file("summary.json")) >> summary;
    CHECK(summary.at("test_mae").get<double>() == oc.test.mae);
    CHECK(summary.at("sparsity").get<double>() == 0.4);
    CHECK(summary.at("iterations").get<std::size_t>() == oc.iterations);
    CHECK(summary.at("mode").get<std::string>() == "gcn");

    // the resolved config reloads to the exact run configuration
    const RunConfig back = stgt::load_run_config(out1.file("config.txt"));
    CHECK(stgt::config_items(back) == stgt::config_items(cfg));

    // a rerun reproduces the loss history byte for byte
    stgt::run_train(cfg, out2.path(), log2);
    CHECK(slurp(out2.file("history.csv")) == slurp(out1.file("history.csv")));
    CHECK(slurp(out2.file("checkpoint.json")) == slurp(out1.file("checkpoint.json")));
}

TEST_CASE("evaluation reads a checkpoint back and reports per step") {
    TempDir corpus;
    make_corpus(corpus.path(), 4, 51);
    TempDir run, evaldir;
    RunConfig cfg = tiny_run(corpus.path());
    std::ostringstream log;
    stgt::run_train(cfg, run.path(), log);

    // deliberately wrong geometry: the checkpoint's own geometry wins
    RunConfig ecfg = cfg;
    ecfg.history = 99;
    ecfg.horizon = 99;
    const stgt::ErrorStats st =
        stgt::run_eval(run.file("checkpoint.json"), ecfg, evaldir.path(), log);
    CHECK(std::isfinite(st.mae));
    CHECK(st.mae > 0.0);
    CHECK(std::filesystem::exists(evaldir.file("eval-report.json")));

    nlohmann::json j;
    std::ifstream(evaldir.file("eval-report.json")) >> j;
    CHECK(j.at("mae").get<double>() == st.mae);
    CHECK(j.at("per_step").size() == 2);
    CHECK(j.at("per_step")[1].at("minutes").get<int>() == 10);

    const std::string csv = slurp(evaldir.file("eval-report.csv"));
    CHECK(csv.rfind("step,minutes,mae,rmse,mape\n", 0) == 0);
    CHECK(csv.find("\nall,,") != std::string::npos);

    // a corpus with different stations is refused
    TempDir other;
    make_corpus(other.path(), 5, 51);
    RunConfig wrong = tiny_run(other.path());
    TempDir sink;
    CHECK_THROWS_AS(
        stgt::run_eval(run.file("checkpoint.json"), wrong, sink.path(), log),
        stgt::ValueError);
}

TEST_CASE("multi-period evaluation writes one row per corpus") {
    TempDir base, shifted, run, out;
    make_corpus(base.path(), 4, 61);
    make_corpus(shifted.path(), 4, 61, stgt::SynthShift::demand);
    RunConfig cfg = tiny_run(base.path());
    std::ostringstream log;
    stgt::run_train(cfg, run.path(), log);

    const auto rows = stgt::run_eval_multi(run.file("checkpoint.json"), cfg,
                                           {base.path(), shifted.path()}, out.path(), log);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].period == std::filesystem::path(base.path()).filename().string());
    CHECK(rows[1].period == std::filesystem::path(shifted.path()).filename().string());
    CHECK(std::isfinite(rows[0].mae));
    CHECK(std::isfinite(rows[1].mae));
    CHECK(std::filesystem::exists(out.file("transfer-report.csv")));
    const std::string csv = slurp(out.file("transfer-report.csv"));
    CHECK(csv.rfind("period,mae,rmse,mape\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    CHECK_THROWS_AS(stgt::run_eval_multi(run.file("checkpoint.json"), cfg, {},
                                         out.path(), log),
                    stgt::ConfigError);
}

TEST_CASE("sweep prepends the dense baseline and tabulates the cost model") {
    TempDir corpus, out;
    make_corpus(corpus.path(), 4, 71);
    RunConfig cfg = tiny_run(corpus.path());
    cfg.epochs = 1;
    cfg.update_interval = 10;

    std::ostringstream log;
    const auto rows = stgt::run_sweep(cfg, {0.5}, out.path(), 1, log);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].sparsity == 0.0);
    CHECK(rows[0].flops_ratio == 1.0);
    CHECK(rows[1].sparsity == 0.5);
    CHECK(rows[1].flops_ratio == doctest::Approx(stgt::flops_ratio(0.5, 10.0)));
    CHECK(rows[1].mode == "gcn");
    CHECK(rows[1].horizon == 2);
    CHECK(std::filesystem::exists(out.file("sweep.csv")));
    CHECK(std::filesystem::exists(out.path() + "/d0/summary.json"));
    CHECK(std::filesystem::exists(out.path() + "/d0.5/summary.json"));
    const std::string csv = slurp(out.file("sweep.csv"));
    CHECK(csv.rfind("sparsity,mode,horizon,mae,rmse,mape,flops_ratio\n", 0) == 0);

    CHECK_THROWS_AS(stgt::run_sweep(cfg, {1.5}, out.path(), 1, log), stgt::ConfigError);
    // parallel mode refuses to run blind
    CHECK_THROWS_AS(stgt::run_sweep(cfg, {0.5}, out.path(), 2, log), stgt::ConfigError);
}

TEST_CASE("parallel sweep forks workers through the cli binary") {
    const char* exe = std::getenv("STGT_BIN");
    if (exe == nullptr || !std::filesystem::exists(exe)) {
        MESSAGE("STGT_BIN not set; skipping the fork path");
        return;
    }
    TempDir corpus, out;
    make_corpus(corpus.path(), 4, 81);
    RunConfig cfg = tiny_run(corpus.path());
    cfg.epochs = 1;

    std::ostringstream log;
    const auto rows = stgt::run_sweep(cfg, {0.25}, out.path(), 2, log, exe);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].sparsity == 0.0);
    CHECK(rows[1].sparsity == 0.25);
    CHECK(std::isfinite(rows[1].mae));
    CHECK(std::filesystem::exists(out.path() + "/d0.25/train.log"));

    // the worker reproduces exactly what an in-process run produces
    TempDir serial;
    const auto srows = stgt::run_sweep(cfg, {0.25}, serial.path(), 1, log);
    CHECK(slurp(serial.path() + "/d0.25/history.csv") ==
          slurp(out.path() + "/d0.25/history.csv"));
}

TEST_CASE("flops report runs off the corpus geometry alone") {
    TempDir corpus;
    make_corpus(corpus.path(), 4, 91);
    RunConfig cfg = tiny_run(corpus.path());
    cfg.sparsity = 0.9;
    cfg.update_interval = 1000;
    const std::string path = corpus.file("flops.json");
    std::ostringstream log;
    stgt::run_flops(cfg, path, log);

    nlohmann::json j;
    std::ifstream(path) >> j;
    CHECK(testutil::rel_err(j.at("training_ratio").get<double>(), 301.2 / 3003.0) < 1e-12);
    CHECK(j.at("sparse_forward").get<double>() ==
          doctest::Approx(0.1 * j.at("dense_forward").get<double>()));
    CHECK(log.str().find("training_ratio") != std::string::npos);
}

} // TEST_SUITE
