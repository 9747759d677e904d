#include "stgt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

#include "stgt/csv.hpp"
#include "stgt/error.hpp"
#include "stgt/flops.hpp"

namespace stgt {

namespace {

std::string format_double(double v) {
    // shortest decimal form that parses back to the same bits
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + s + "' is not a nonnegative integer");
    }
}

bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": '" + s + "' is not a boolean");
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

} // namespace

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.spatial = parse_spatial_kind(spatial);
    m.history = history;
    m.horizon = horizon;
    m.spatial_dim = spatial_dim;
    m.heads = heads;
    m.hidden = hidden;
    m.lstm_layers = lstm_layers;
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.lr = lr;
    t.momentum = momentum;
    t.sparse.sparsity = sparsity;
    t.sparse.death_rate = death_rate;
    t.sparse.update_interval = update_interval;
    t.seed = seed;
    t.shuffle = shuffle;
    return t;
}

std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> out;
    auto num = [&](const char* k, double v) { out.emplace_back(k, format_double(v)); };
    auto uns = [&](const char* k, std::uint64_t v) { out.emplace_back(k, std::to_string(v)); };
    out.emplace_back("data_dir", c.data_dir);
    num("omega", c.omega);
    out.emplace_back("norm_scheme", c.norm_scheme);
    num("day_threshold", c.day_threshold);
    uns("history", c.history);
    uns("horizon", c.horizon);
    uns("stride", c.stride);
    num("train_ratio", c.train_ratio);
    num("val_ratio", c.val_ratio);
    num("test_ratio", c.test_ratio);
    out.emplace_back("mode", c.spatial);
    uns("spatial_dim", c.spatial_dim);
    uns("heads", c.heads);
    uns("hidden", c.hidden);
    uns("lstm_layers", c.lstm_layers);
    uns("epochs", c.epochs);
    uns("batch_size", c.batch_size);
    num("lr", c.lr);
    num("momentum", c.momentum);
    num("sparsity", c.sparsity);
    num("death_rate", c.death_rate);
    uns("update_interval", c.update_interval);
    uns("seed", c.seed);
    out.emplace_back("shuffle", c.shuffle ? "true" : "false");
    return out;
}

void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
    auto dbl = [&]() -> double {
        try {
            return csv::parse_double(value, "config " + key);
        } catch (const Error&) {
            throw ConfigError(key + ": '" + value + "' is not a number");
        }
    };
    if (key == "data_dir") c.data_dir = value;
    else if (key == "omega") c.omega = dbl();
    else if (key == "norm_scheme") c.norm_scheme = value;
    else if (key == "day_threshold") c.day_threshold = dbl();
    else if (key == "history") c.history = parse_u64(value, key);
    else if (key == "horizon") c.horizon = parse_u64(value, key);
    else if (key == "stride") c.stride = parse_u64(value, key);
    else if (key == "train_ratio") c.train_ratio = dbl();
    else if (key == "val_ratio") c.val_ratio = dbl();
    else if (key == "test_ratio") c.test_ratio = dbl();
    else if (key == "mode") c.spatial = value;
    else if (key == "spatial_dim") c.spatial_dim = parse_u64(value, key);
    else if (key == "heads") c.heads = parse_u64(value, key);
    else if (key == "hidden") c.hidden = parse_u64(value, key);
    else if (key == "lstm_layers") c.lstm_layers = parse_u64(value, key);
    else if (key == "epochs") c.epochs = parse_u64(value, key);
    else if (key == "batch_size") c.batch_size = parse_u64(value, key);
    else if (key == "lr") c.lr = dbl();
    else if (key == "momentum") c.momentum = dbl();
    else if (key == "sparsity") c.sparsity = dbl();
    else if (key == "death_rate") c.death_rate = dbl();
    else if (key == "update_interval") c.update_interval = parse_u64(value, key);
    else if (key == "seed") c.seed = parse_u64(value, key);
    else if (key == "shuffle") c.shuffle = parse_bool(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
}

void write_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& [k, v] : config_items(cfg)) out << k << " = " << v << '\n';
    if (!out.good()) throw IoError("write failed: " + path);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": want key = value");
        apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

// ---------------------------------------------------------------------------

LoadedData load_pipeline_data(const RunConfig& cfg) {
    if (cfg.data_dir.empty()) throw ConfigError("data_dir is not set");
    LoadedData d;
    d.stations = load_stations_csv(cfg.data_dir + "/stations.csv");
    d.segments = load_segments_csv(cfg.data_dir + "/segments.csv");
    d.graph = std::make_unique<SensorGraph>(build_graph(d.stations, d.segments, cfg.omega));
    SpeedSeries raw = load_series(cfg.data_dir + "/speeds.csv", *d.graph);
    d.series = clean_series(raw, cfg.day_threshold);

    if (d.series.node_ids != d.graph->node_ids()) {
        // cleaning dropped stations: rebuild the graph on the survivors
        StationTable st;
        for (const Station& s : d.stations.rows)
            if (std::find(d.series.node_ids.begin(), d.series.node_ids.end(), s.id) !=
                d.series.node_ids.end())
                st.rows.push_back(s);
        SegmentTable sg;
        for (const Segment& s : d.segments.rows) {
            const bool keep =
                std::find(d.series.node_ids.begin(), d.series.node_ids.end(), s.from) !=
                    d.series.node_ids.end() &&
                std::find(d.series.node_ids.begin(), d.series.node_ids.end(), s.to) !=
                    d.series.node_ids.end();
            if (keep) sg.rows.push_back(s);
        }
        d.stations = std::move(st);
        d.segments = std::move(sg);
        d.graph = std::make_unique<SensorGraph>(build_graph(d.stations, d.segments, cfg.omega));
    }

    WindowedBatch windows = make_windows(d.series, cfg.history, cfg.horizon, cfg.stride);
    d.splits = split(windows, cfg.train_ratio, cfg.val_ratio, cfg.test_ratio);
    d.norm = fit_normalizer(d.splits.train);
    return d;
}

ErrorStats evaluate_split(StgtModel& model, const Normalizer& norm,
                          const WindowedBatch& batch, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    const Tensor inputs = norm.normalize(batch.inputs);
    ErrorAccum acc;
    const std::size_t s = batch.count();
    const std::size_t row_in = batch.nodes() * batch.history();
    const std::size_t row_out = batch.nodes() * batch.horizon();
    for (std::size_t start = 0; start < s; start += batch_size) {
        const std::size_t bsz = std::min(batch_size, s - start);
        Tensor bx({bsz, batch.nodes(), batch.history()});
        std::copy_n(inputs.data() + start * row_in, bsz * row_in, bx.data());
        Tensor pred = norm.denormalize(model.forward(bx));
        Tensor truth({bsz, batch.nodes(), batch.horizon()});
        std::copy_n(batch.targets.data() + start * row_out, bsz * row_out, truth.data());
        acc.add(pred, truth);
    }
    return {acc.mae(), acc.rmse(), acc.mape(), acc.count};
}

namespace {

std::size_t propagation_nnz(const SensorGraph& graph, NormScheme scheme) {
    const Tensor p = normalize_adjacency(graph, scheme);
    std::size_t nnz = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] != 0.0) ++nnz;
    return nnz;
}

void write_summary(const std::string& path, const RunConfig& cfg, const TrainOutcome& oc) {
    nlohmann::json j;
    j["mode"] = cfg.spatial;
    j["horizon"] = cfg.horizon;
    j["sparsity"] = cfg.sparsity;
    j["update_interval"] = cfg.update_interval;
    j["test_mae"] = oc.test.mae;
    j["test_rmse"] = oc.test.rmse;
    j["test_mape"] = oc.test.mape;
    j["test_count"] = oc.test.count;
    j["iterations"] = oc.iterations;
    j["events"] = oc.events;
    j["seconds"] = oc.seconds;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
}

} // namespace

TrainOutcome run_train(const RunConfig& cfg, const std::string& out_dir,
                       std::ostream& log) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    LoadedData data = load_pipeline_data(cfg);
    const NormScheme scheme = parse_norm_scheme(cfg.norm_scheme);
    log << "stations=" << data.graph->node_count() << " windows train/val/test="
        << data.splits.train.count() << "/" << data.splits.val.count() << "/"
        << data.splits.test.count() << "\n";

    StgtModel model(*data.graph, scheme, cfg.model_config());
    TrainHooks hooks;
    const std::size_t epochs = cfg.epochs;
    hooks.after_epoch = [&log, epochs](const EpochRow& r) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "epoch %zu/%zu train_loss=%.6f val_loss=%.6f val_mae=%.3f "
                      "val_mape=%.2f%% active=%zu",
                      r.epoch, epochs, r.train_loss, r.val_loss, r.val_mae, r.val_mape,
                      r.active_weights);
        log << buf << std::endl;
    };

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res = train(model, data.splits, data.norm, cfg.train_config(), &hooks);
    const auto t1 = std::chrono::steady_clock::now();

    TrainOutcome oc;
    oc.test = evaluate_split(model, data.norm, data.splits.test, cfg.batch_size);
    oc.iterations = res.iterations;
    oc.events = res.events;
    oc.seconds = std::chrono::duration<double>(t1 - t0).count();
    log << "test mae=" << oc.test.mae << " rmse=" << oc.test.rmse
        << " mape=" << oc.test.mape << "% (" << oc.seconds << "s)\n";

    write_run_config(cfg, out_dir + "/config.txt");
    write_history_csv(res.history, out_dir + "/history.csv");
    const auto masks =
        res.sparse ? res.sparse->masks_by_name() : std::map<std::string, Tensor>{};
    save_checkpoint(out_dir + "/checkpoint.json", model, *data.graph, scheme, data.norm,
                    cfg.sparsity, masks);
    write_flops_report(out_dir + "/flops-report.json",
                       model_flops(cfg.model_config(), data.graph->node_count(),
                                   propagation_nnz(*data.graph, scheme)),
                       cfg.sparsity, static_cast<double>(cfg.update_interval));
    write_summary(out_dir + "/summary.json", cfg, oc);
    return oc;
}

ErrorStats run_eval(const std::string& checkpoint_path, const RunConfig& cfg,
                    const std::string& out_dir, std::ostream& log) {
    namespace fs = std::filesystem;
    Checkpoint ck = load_checkpoint(checkpoint_path);

    RunConfig ecfg = cfg;
    ecfg.history = ck.config.history;
    ecfg.horizon = ck.config.horizon;
    ecfg.omega = ck.graph->omega();
    ecfg.norm_scheme = to_string(ck.scheme);
    LoadedData data = load_pipeline_data(ecfg);
    if (data.graph->node_ids() != ck.graph->node_ids())
        throw ValueError("corpus stations do not match the checkpoint");

    // the checkpoint's normalizer travels with the model; the target data
    // stays in mph
    const WindowedBatch& test = data.splits.test;
    const Tensor inputs = ck.normalizer.normalize(test.inputs);
    const std::size_t s = test.count();
    Tensor pred_all({s, test.nodes(), test.horizon()});
    const std::size_t row_in = test.nodes() * test.history();
    const std::size_t row_out = test.nodes() * test.horizon();
    for (std::size_t start = 0; start < s; start += cfg.batch_size) {
        const std::size_t bsz = std::min(cfg.batch_size, s - start);
        Tensor bx({bsz, test.nodes(), test.history()});
        std::copy_n(inputs.data() + start * row_in, bsz * row_in, bx.data());
        Tensor pred = ck.normalizer.denormalize(ck.model->forward(bx));
        std::copy_n(pred.data(), bsz * row_out, pred_all.data() + start * row_out);
    }

    const ErrorStats all = error_stats(pred_all, test.targets);
    const std::vector<ErrorStats> steps = per_step_stats(pred_all, test.targets);
    log << "eval mae=" << all.mae << " rmse=" << all.rmse << " mape=" << all.mape
        << "% over " << s << " windows\n";

    fs::create_directories(out_dir);
    nlohmann::json j;
    j["checkpoint"] = checkpoint_path;
    j["data_dir"] = cfg.data_dir;
    j["windows"] = s;
    j["mae"] = all.mae;
    j["rmse"] = all.rmse;
    j["mape"] = all.mape;
    nlohmann::json jsteps = nlohmann::json::array();
    for (std::size_t k = 0; k < steps.size(); ++k)
        jsteps.push_back({{"step", k + 1},
                          {"minutes", (k + 1) * static_cast<std::size_t>(test.step_minutes)},
                          {"mae", steps[k].mae},
                          {"rmse", steps[k].rmse},
                          {"mape", steps[k].mape}});
    j["per_step"] = std::move(jsteps);
    {
        std::ofstream out(out_dir + "/eval-report.json");
        if (!out) throw IoError("cannot write " + out_dir + "/eval-report.json");
        out << j.dump(2) << '\n';
    }
    {
        std::ofstream out(out_dir + "/eval-report.csv");
        if (!out) throw IoError("cannot write " + out_dir + "/eval-report.csv");
        out << "step,minutes,mae,rmse,mape\n";
        char buf[160];
        for (std::size_t k = 0; k < steps.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.6f\n", k + 1,
                          (k + 1) * static_cast<std::size_t>(test.step_minutes),
                          steps[k].mae, steps[k].rmse, steps[k].mape);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, "all,,%.6f,%.6f,%.6f\n", all.mae, all.rmse,
                      all.mape);
        out << buf;
    }
    return all;
}

std::vector<PeriodRow> run_eval_multi(const std::string& checkpoint_path,
                                      const RunConfig& cfg,
                                      const std::vector<std::string>& data_dirs,
                                      const std::string& out_dir, std::ostream& log) {
    namespace fs = std::filesystem;
    if (data_dirs.empty()) throw ConfigError("no datasets to evaluate");
    fs::create_directories(out_dir);
    std::vector<PeriodRow> rows;
    for (const std::string& dir : data_dirs) {
        RunConfig rc = cfg;
        rc.data_dir = dir;
        std::string period = fs::path(dir).filename().string();
        if (period.empty()) period = "period" + std::to_string(rows.size());
        log << "[eval] " << period << "\n";
        const ErrorStats st = run_eval(checkpoint_path, rc, out_dir + "/" + period, log);
        rows.push_back({period, st.mae, st.rmse, st.mape});
    }
    std::ofstream out(out_dir + "/transfer-report.csv");
    if (!out) throw IoError("cannot write " + out_dir + "/transfer-report.csv");
    out << "period,mae,rmse,mape\n";
    char buf[160];
    for (const PeriodRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", r.period.c_str(), r.mae,
                      r.rmse, r.mape);
        out << buf;
    }
    return rows;
}

// ---------------------------------------------------------------------------
// sweep

namespace {

std::string sparsity_dir(double d) { return "d" + format_double(d); }

SweepRow read_summary_row(const std::string& dir, double d, const RunConfig& cfg) {
    std::ifstream in(dir + "/summary.json");
    if (!in) throw IoError("worker left no summary in " + dir);
    nlohmann::json j;
    in >> j;
    SweepRow row;
    row.sparsity = d;
    row.mode = cfg.spatial;
    row.horizon = cfg.horizon;
    row.mae = j.at("test_mae").get<double>();
    row.rmse = j.at("test_rmse").get<double>();
    row.mape = j.at("test_mape").get<double>();
    row.flops_ratio = flops_ratio(d, static_cast<double>(cfg.update_interval));
    return row;
}

void spawn_worker(const std::string& exe, const std::string& config_path,
                  const std::string& run_dir, std::vector<pid_t>& pids) {
    std::fflush(nullptr); // keep buffered output out of the child
    const pid_t pid = fork();
    if (pid < 0) throw Error("fork failed");
    if (pid == 0) {
        std::string log_path = run_dir + "/train.log";
        if (FILE* f = std::freopen(log_path.c_str(), "w", stdout)) (void)f;
        if (FILE* f = std::freopen(log_path.c_str(), "a", stderr)) (void)f;
        execl(exe.c_str(), exe.c_str(), "train", "--config", config_path.c_str(),
              "--out", run_dir.c_str(), static_cast<char*>(nullptr));
        std::perror("exec");
        _exit(127);
    }
    pids.push_back(pid);
}

void wait_all(std::vector<pid_t>& pids) {
    for (pid_t pid : pids) {
        int status = 0;
        if (waitpid(pid, &status, 0) < 0) throw Error("waitpid failed");
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            throw Error("sweep worker " + std::to_string(pid) + " failed");
    }
    pids.clear();
}

} // namespace

std::vector<SweepRow> run_sweep(const RunConfig& cfg, const std::vector<double>& sparsities,
                                const std::string& out_dir, std::size_t jobs,
                                std::ostream& log, const std::string& exe) {
    namespace fs = std::filesystem;
    std::vector<double> grid = sparsities;
    if (std::find(grid.begin(), grid.end(), 0.0) == grid.end())
        grid.insert(grid.begin(), 0.0); // dense baseline anchors the comparison
    for (double d : grid)
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("sweep sparsity must be in [0, 1)");
    fs::create_directories(out_dir);

    std::vector<SweepRow> rows;
    if (jobs <= 1) {
        for (double d : grid) {
            RunConfig rc = cfg;
            rc.sparsity = d;
            const std::string dir = out_dir + "/" + sparsity_dir(d);
            log << "[sweep] sparsity " << format_double(d) << "\n";
            run_train(rc, dir, log);
            rows.push_back(read_summary_row(dir, d, cfg));
        }
    } else {
        if (exe.empty())
            throw ConfigError("a parallel sweep needs the path of the train binary");
        std::vector<pid_t> pids;
        for (double d : grid) {
            RunConfig rc = cfg;
            rc.sparsity = d;
            const std::string dir = out_dir + "/" + sparsity_dir(d);
            fs::create_directories(dir);
            const std::string cpath = dir + "/config-in.txt";
            write_run_config(rc, cpath);
            log << "[sweep] sparsity " << format_double(d) << " (worker)\n";
            spawn_worker(exe, cpath, dir, pids);
            if (pids.size() >= jobs) wait_all(pids);
        }
        wait_all(pids);
        for (double d : grid)
            rows.push_back(read_summary_row(out_dir + "/" + sparsity_dir(d), d, cfg));
    }
    write_sweep_csv(rows, out_dir + "/sweep.csv");
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "sparsity,mode,horizon,mae,rmse,mape,flops_ratio\n";
    char buf[200];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f,%.6f\n",
                      format_double(r.sparsity).c_str(), r.mode.c_str(), r.horizon, r.mae,
                      r.rmse, r.mape, r.flops_ratio);
        out << buf;
    }
    if (!out.good()) throw IoError("write failed: " + path);
}

void run_flops(const RunConfig& cfg, const std::string& out_path, std::ostream& log) {
    if (cfg.data_dir.empty()) throw ConfigError("data_dir is not set");
    const StationTable stations = load_stations_csv(cfg.data_dir + "/stations.csv");
    const SegmentTable segments = load_segments_csv(cfg.data_dir + "/segments.csv");
    const SensorGraph graph = build_graph(stations, segments, cfg.omega);
    const FlopsModel fm =
        model_flops(cfg.model_config(), graph.node_count(),
                    propagation_nnz(graph, parse_norm_scheme(cfg.norm_scheme)));
    write_flops_report(out_path, fm, cfg.sparsity,
                       static_cast<double>(cfg.update_interval));
    log << "dense_forward=" << fm.dense_total() << " macs, sparse_forward="
        << sparse_flops(fm.dense_total(), cfg.sparsity) << " macs, training_ratio="
        << flops_ratio(cfg.sparsity, static_cast<double>(cfg.update_interval)) << "\n";
}

} // namespace stgt
