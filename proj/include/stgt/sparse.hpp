#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stgt/dataset.hpp"
#include "stgt/model.hpp"
#include "stgt/tensor.hpp"

namespace stgt {

struct SparseConfig {
    double sparsity = 0.0;              // fraction of maskable weights held at zero
    double death_rate = 0.5;            // fraction of active weights recycled per event
    std::size_t update_interval = 1000; // batch iterations between events; 0 = never
};

/// Per-layer binary masks over the rank-2 weight matrices, initialised by
/// scaled Erdos-Renyi-kernel densities and evolved by drop-and-grow
/// events. Mask cardinality per layer is fixed after initialisation.
class SparseState {
public:
    SparseState(const std::vector<ParamRef>& params, const SparseConfig& cfg,
                std::uint64_t seed);

    /// zero the weights the mask holds inactive (exact zeros, not tiny values)
    void apply(const std::vector<ParamRef>& params) const;

    /// aligned with the param list; null for unmasked parameters
    std::vector<const Tensor*> mask_pointers(const std::vector<ParamRef>& params) const;

    /// One event: per layer, drop the smallest-magnitude active weights and
    /// regrow the same number of inactive positions with the largest dense
    /// gradient magnitude. Dropped and grown weights become exact zeros and
    /// their velocity is discarded. Returns how many positions moved.
    std::size_t drop_and_grow(const std::vector<ParamRef>& params, SgdMomentum& opt);

    std::size_t active_weights() const;
    std::size_t total_maskable() const;
    double actual_sparsity() const;
    const SparseConfig& config() const { return cfg_; }

    struct LayerInfo {
        std::string name;
        std::size_t param_index;
        std::size_t size;
        std::size_t active;
        double density;
    };
    const std::vector<LayerInfo>& layers() const { return info_; }
    const Tensor& mask_for(std::size_t param_index) const;
    std::map<std::string, Tensor> masks_by_name() const;

    /// restore masks from a checkpoint; layer names and shapes must match
    void load_masks(const std::map<std::string, Tensor>& masks,
                    const std::vector<ParamRef>& params);

private:
    SparseConfig cfg_;
    std::vector<LayerInfo> info_;
    std::vector<Tensor> masks_; // aligned with info_
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 242;
    double lr = 1e-3;
    double momentum = 0.9;
    SparseConfig sparse;   // sparsity 0 trains dense, no masks at all
    std::uint64_t seed = 1;
    bool shuffle = true;
};

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0.0; // mse on z-scored speeds
    double val_loss = 0.0;
    double val_mae = 0.0;  // mph
    double val_rmse = 0.0; // mph
    double val_mape = 0.0; // percent
    double sparsity = 0.0; // fraction of maskable weights currently zero
    std::size_t active_weights = 0;
};

/// Observation points for tests and instrumentation; any may be empty.
/// `sparse` is null on dense runs.
struct TrainHooks {
    std::function<void(std::size_t iteration, SparseState* sparse)> after_step;
    std::function<void(std::size_t iteration, std::size_t moved, SparseState* sparse)>
        after_event;
    std::function<void(const EpochRow&)> after_epoch;
};

struct TrainResult {
    std::vector<EpochRow> history;
    std::size_t iterations = 0;
    std::size_t events = 0;
    std::size_t moved_total = 0;
    std::unique_ptr<SparseState> sparse; // null when trained dense
};

/// Full training loop: initialises the model from cfg.seed, z-scores both
/// splits with `norm`, runs mini-batch SGD with optional drop-and-grow
/// events every cfg.sparse.update_interval iterations, and evaluates on
/// the validation split after every epoch.
TrainResult train(StgtModel& model, const SplitBatches& data, const Normalizer& norm,
                  const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

void write_history_csv(const std::vector<EpochRow>& history, const std::string& path);

} // namespace stgt
