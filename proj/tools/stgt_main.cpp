#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stgt/error.hpp"
#include "stgt/pipeline.hpp"
#include "stgt/synth.hpp"

namespace {

std::string stamped_dir(const char* kind) {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "runs/%s-%04d%02d%02d-%02d%02d%02d", kind,
                  tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min,
                  tm.tm_sec);
    return buf;
}

std::string self_exe(const char* argv0) {
    std::error_code ec;
    auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
    return ec ? std::string(argv0) : p.string();
}

// flag names double as config-file keys, so they mirror RunConfig exactly
void merge_config_file(CLI::App& sub, const std::string& path, stgt::RunConfig& cfg) {
    if (path.empty()) return;
    const stgt::RunConfig file_cfg = stgt::load_run_config(path);
    for (const auto& [key, value] : stgt::config_items(file_cfg)) {
        const CLI::Option* opt = sub.get_option_no_throw("--" + key);
        if (opt == nullptr || opt->count() == 0) stgt::apply_config_entry(cfg, key, value);
    }
}

void add_data_options(CLI::App& app, stgt::RunConfig& cfg) {
    app.add_option("--data_dir", cfg.data_dir,
                   "directory with stations.csv, segments.csv, speeds.csv");
    app.add_option("--omega", cfg.omega, "distance decay of edge weights");
    app.add_option("--norm_scheme", cfg.norm_scheme, "adjacency normalization: sym or row");
    app.add_option("--day_threshold", cfg.day_threshold,
                   "drop a day when more than this fraction of stations has holes");
    app.add_option("--history", cfg.history, "input steps per window");
    app.add_option("--horizon", cfg.horizon, "predicted steps per window");
    app.add_option("--stride", cfg.stride, "window stride in steps");
    app.add_option("--train_ratio", cfg.train_ratio, "training share of windows");
    app.add_option("--val_ratio", cfg.val_ratio, "validation share of windows");
    app.add_option("--test_ratio", cfg.test_ratio, "test share of windows");
}

void add_model_options(CLI::App& app, stgt::RunConfig& cfg) {
    app.add_option("--mode", cfg.spatial, "graph block: gcn or gat");
    app.add_option("--spatial_dim", cfg.spatial_dim, "graph block output width");
    app.add_option("--heads", cfg.heads, "attention heads (gat)");
    app.add_option("--hidden", cfg.hidden, "lstm state width");
    app.add_option("--lstm_layers", cfg.lstm_layers, "stacked lstm layers");
}

void add_train_options(CLI::App& app, stgt::RunConfig& cfg) {
    app.add_option("--epochs", cfg.epochs, "training epochs");
    app.add_option("--batch_size", cfg.batch_size, "windows per batch");
    app.add_option("--lr", cfg.lr, "learning rate");
    app.add_option("--momentum", cfg.momentum, "sgd momentum");
    app.add_option("--sparsity", cfg.sparsity, "fraction of prunable weights held at zero");
    app.add_option("--death_rate", cfg.death_rate,
                   "fraction of active weights recycled per event");
    app.add_option("--update_interval", cfg.update_interval,
                   "iterations between drop-and-grow events, 0 disables them");
    app.add_option("--seed", cfg.seed, "seed for init, masks, and shuffling");
    app.add_option("--shuffle", cfg.shuffle, "shuffle training windows each epoch");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse spatio-temporal traffic speed forecaster"};
    app.require_subcommand(1);

    // synth ----------------------------------------------------------------
    stgt::SynthConfig synth_cfg;
    std::string synth_out;
    std::string synth_topology = "line", synth_shift = "none";
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic sensor corpus");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--topology", synth_topology, "line, grid, or ring");
    synth->add_option("--nodes", synth_cfg.nodes, "station count");
    synth->add_option("--days", synth_cfg.days, "days of data");
    synth->add_option("--step_minutes", synth_cfg.step_minutes, "sampling interval");
    synth->add_option("--free_flow", synth_cfg.free_flow_mph, "uncongested speed, mph");
    synth->add_option("--amplitude", synth_cfg.amplitude_mph, "congestion dip, mph");
    synth->add_option("--period_minutes", synth_cfg.period_minutes, "congestion cycle");
    synth->add_option("--hop_lag_minutes", synth_cfg.hop_lag_minutes,
                      "wave delay per hop from node 0");
    synth->add_option("--noise", synth_cfg.noise_mph, "gaussian noise, mph");
    synth->add_option("--missing_rate", synth_cfg.missing_rate,
                      "chance a cell is written as a hole");
    synth->add_option("--seed", synth_cfg.seed, "rng seed");
    synth->add_option("--shift", synth_shift, "none, seasonal, or demand");
    synth->add_option("--start_date", synth_cfg.start_date, "first day, YYYY-MM-DD");

    // train ----------------------------------------------------------------
    stgt::RunConfig train_cfg;
    std::string train_out, train_config;
    CLI::App* train = app.add_subcommand("train", "train a forecaster");
    train->add_option("--config", train_config, "key = value config file");
    add_data_options(*train, train_cfg);
    add_model_options(*train, train_cfg);
    add_train_options(*train, train_cfg);
    train->add_option("--out", train_out, "run directory (default runs/<stamp>)");

    // eval -----------------------------------------------------------------
    stgt::RunConfig eval_cfg;
    std::string eval_out, eval_checkpoint;
    std::vector<std::string> eval_dirs;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one or more corpora");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint.json path")->required();
    eval->add_option("--data_dir", eval_dirs, "corpus directory; repeat to compare periods")
        ->required();
    eval->add_option("--day_threshold", eval_cfg.day_threshold,
                     "drop a day when more than this fraction of stations has holes");
    eval->add_option("--stride", eval_cfg.stride, "window start spacing in steps");
    eval->add_option("--batch_size", eval_cfg.batch_size, "windows per forward pass");
    eval->add_option("--out", eval_out, "report directory (default runs/<stamp>)");

    // sweep ----------------------------------------------------------------
    stgt::RunConfig sweep_cfg;
    std::string sweep_out, sweep_config;
    std::vector<double> sweep_sparsities;
    std::size_t sweep_jobs = 1;
    CLI::App* sweep = app.add_subcommand("sweep", "train across a sparsity grid");
    sweep->add_option("--config", sweep_config, "key = value config file");
    add_data_options(*sweep, sweep_cfg);
    add_model_options(*sweep, sweep_cfg);
    add_train_options(*sweep, sweep_cfg);
    sweep->add_option("--sparsities", sweep_sparsities, "sparsity grid")
        ->required()
        ->delimiter(',');
    sweep->add_option("--jobs", sweep_jobs, "parallel worker processes");
    sweep->add_option("--out", sweep_out, "sweep directory (default runs/<stamp>)");

    // flops ----------------------------------------------------------------
    stgt::RunConfig flops_cfg;
    std::string flops_out, flops_config;
    CLI::App* flops = app.add_subcommand("flops", "write the compute accounting report");
    flops->add_option("--config", flops_config, "key = value config file");
    add_data_options(*flops, flops_cfg);
    add_model_options(*flops, flops_cfg);
    add_train_options(*flops, flops_cfg);
    flops->add_option("--out", flops_out, "report path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            synth_cfg.topology = stgt::parse_topology(synth_topology);
            synth_cfg.shift = stgt::parse_shift(synth_shift);
            stgt::SynthResult result = stgt::generate_synth(synth_cfg);
            stgt::write_synth_csv(result, synth_out);
            std::cout << "wrote " << result.series.stations() << " stations, "
                      << result.series.steps() << " steps to " << synth_out << "\n";
        } else if (*train) {
            merge_config_file(*train, train_config, train_cfg);
            if (train_out.empty()) train_out = stamped_dir("train");
            stgt::run_train(train_cfg, train_out, std::cout);
            std::cout << "run directory: " << train_out << "\n";
        } else if (*eval) {
            if (eval_out.empty()) eval_out = stamped_dir("eval");
            if (eval_dirs.size() == 1) {
                eval_cfg.data_dir = eval_dirs.front();
                stgt::run_eval(eval_checkpoint, eval_cfg, eval_out, std::cout);
            } else {
                stgt::run_eval_multi(eval_checkpoint, eval_cfg, eval_dirs, eval_out, std::cout);
            }
            std::cout << "report directory: " << eval_out << "\n";
        } else if (*sweep) {
            merge_config_file(*sweep, sweep_config, sweep_cfg);
            if (sweep_out.empty()) sweep_out = stamped_dir("sweep");
            stgt::run_sweep(sweep_cfg, sweep_sparsities, sweep_out, sweep_jobs, std::cout,
                            self_exe(argv[0]));
            std::cout << "sweep directory: " << sweep_out << "\n";
        } else if (*flops) {
            merge_config_file(*flops, flops_config, flops_cfg);
            stgt::run_flops(flops_cfg, flops_out, std::cout);
            std::cout << "report: " << flops_out << "\n";
        }
    } catch (const stgt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const stgt::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const stgt::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 1;
    } catch (const stgt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
