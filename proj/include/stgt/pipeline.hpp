#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "stgt/dataset.hpp"
#include "stgt/graph.hpp"
#include "stgt/metrics.hpp"
#include "stgt/model.hpp"
#include "stgt/sparse.hpp"

namespace stgt {

/// Everything one training or evaluation run needs, as flat key=value
/// pairs so a run directory can reproduce itself from its config dump.
struct RunConfig {
    // data
    std::string data_dir;
    double omega = 0.1;
    std::string norm_scheme = "sym";
    double day_threshold = 0.5;
    std::size_t history = 12;
    std::size_t horizon = 9;
    std::size_t stride = 1;
    double train_ratio = 0.8;
    double val_ratio = 0.1;
    double test_ratio = 0.1;
    // model
    std::string spatial = "gcn";
    std::size_t spatial_dim = 64;
    std::size_t heads = 4;
    std::size_t hidden = 128;
    std::size_t lstm_layers = 2;
    // training
    std::size_t epochs = 200;
    std::size_t batch_size = 242;
    double lr = 1e-3;
    double momentum = 0.9;
    double sparsity = 0.0;
    double death_rate = 0.5;
    std::size_t update_interval = 1000;
    std::uint64_t seed = 1;
    bool shuffle = true;

    ModelConfig model_config() const;
    TrainConfig train_config() const;
};

/// stable listing used by the config dump and its round-trip test
std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg);
void write_run_config(const RunConfig& cfg, const std::string& path);
RunConfig load_run_config(const std::string& path);
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

struct LoadedData {
    StationTable stations;
    SegmentTable segments;
    std::unique_ptr<SensorGraph> graph;
    SpeedSeries series; // cleaned, gapless
    SplitBatches splits;
    Normalizer norm;
};

/// stations/segments/speeds from cfg.data_dir, cleaned and windowed; if
/// cleaning drops stations the graph is rebuilt on the survivors
LoadedData load_pipeline_data(const RunConfig& cfg);

ErrorStats evaluate_split(StgtModel& model, const Normalizer& norm,
                          const WindowedBatch& batch, std::size_t batch_size);

struct TrainOutcome {
    ErrorStats test;
    std::size_t iterations = 0;
    std::size_t events = 0;
    double seconds = 0.0;
};

/// Full run: train, write history.csv, checkpoint.json, flops-report.json,
/// summary.json, and the resolved config.txt into out_dir.
TrainOutcome run_train(const RunConfig& cfg, const std::string& out_dir,
                       std::ostream& log);

/// Evaluate a checkpoint on the test split of another corpus; writes
/// eval-report.json and eval-report.csv into out_dir.
ErrorStats run_eval(const std::string& checkpoint_path, const RunConfig& cfg,
                    const std::string& out_dir, std::ostream& log);

struct PeriodRow {
    std::string period;
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
};

/// Zero-shot comparison across several corpora (time periods): one report
/// per corpus under out_dir plus a combined transfer-report.csv.
std::vector<PeriodRow> run_eval_multi(const std::string& checkpoint_path,
                                      const RunConfig& cfg,
                                      const std::vector<std::string>& data_dirs,
                                      const std::string& out_dir, std::ostream& log);

struct SweepRow {
    double sparsity = 0.0;
    std::string mode;
    std::size_t horizon = 0;
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
    double flops_ratio = 0.0;
};

/// One training run per sparsity value (a dense baseline is prepended when
/// missing). jobs > 1 forks workers that exec `exe train` one run each, so
/// `exe` must point at the cli binary; jobs <= 1 runs in process.
std::vector<SweepRow> run_sweep(const RunConfig& cfg, const std::vector<double>& sparsities,
                                const std::string& out_dir, std::size_t jobs,
                                std::ostream& log, const std::string& exe = "");

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

/// flops-report.json for the configured model on the configured corpus
void run_flops(const RunConfig& cfg, const std::string& out_path, std::ostream& log);

} // namespace stgt
