#include "stgt/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "stgt/error.hpp"
#include "stgt/metrics.hpp"
#include "stgt/rng.hpp"

namespace stgt {

namespace {

// keeps the mask, shuffle, and parameter-init streams independent
constexpr std::uint64_t kMaskSeedSalt = 0x6d61736b2d73616cULL;
constexpr std::uint64_t kShuffleSeedSalt = 0x73687566666c652dULL;

void check_sparse_config(const SparseConfig& cfg) {
    if (!(cfg.sparsity >= 0.0 && cfg.sparsity < 1.0))
        throw ConfigError("sparsity must be in [0, 1)");
    if (!(cfg.death_rate >= 0.0 && cfg.death_rate <= 1.0))
        throw ConfigError("death_rate must be in [0, 1]");
}

} // namespace

SparseState::SparseState(const std::vector<ParamRef>& params, const SparseConfig& cfg,
                         std::uint64_t seed)
    : cfg_(cfg) {
    check_sparse_config(cfg_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].maskable) continue;
        if (params[i].value->rank() != 2)
            throw ValueError("maskable parameter " + params[i].name + " is not a matrix");
        info_.push_back({params[i].name, i, params[i].value->size(), 0, 0.0});
    }
    if (info_.empty()) throw ValueError("model has no maskable parameters");

    // Erdos-Renyi-kernel allocation: per-layer density proportional to
    // (rows + cols) / (rows * cols), scaled to hit the global sparsity and
    // clipped at fully dense layer by layer.
    const std::size_t layer_count = info_.size();
    std::vector<double> raw(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        const Tensor& w = *params[info_[l].param_index].value;
        raw[l] = static_cast<double>(w.dim(0) + w.dim(1)) /
                 static_cast<double>(w.dim(0) * w.dim(1));
    }
    std::size_t total = 0;
    for (const LayerInfo& e : info_) total += e.size;
    const double target_active = (1.0 - cfg_.sparsity) * static_cast<double>(total);

    std::vector<char> clipped(layer_count, 0);
    double eps = 0.0;
    for (;;) {
        double clipped_size = 0.0, divisor = 0.0;
        for (std::size_t l = 0; l < layer_count; ++l) {
            if (clipped[l])
                clipped_size += static_cast<double>(info_[l].size);
            else
                divisor += raw[l] * static_cast<double>(info_[l].size);
        }
        if (divisor == 0.0) break; // every layer is dense
        eps = (target_active - clipped_size) / divisor;
        bool grew = false;
        for (std::size_t l = 0; l < layer_count; ++l) {
            if (!clipped[l] && eps * raw[l] >= 1.0) {
                clipped[l] = 1;
                grew = true;
            }
        }
        if (!grew) break;
    }

    Rng rng(seed);
    masks_.reserve(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        LayerInfo& e = info_[l];
        std::size_t active =
            clipped[l] ? e.size
                       : static_cast<std::size_t>(std::llround(
                             eps * raw[l] * static_cast<double>(e.size)));
        if (active > e.size) active = e.size;
        if (active < 1)
            throw ValueError("sparsity " + std::to_string(cfg_.sparsity) +
                             " leaves layer " + e.name + " without active weights");
        const Tensor& w = *params[e.param_index].value;
        Tensor mask(w.shape());
        if (active == e.size) {
            mask = Tensor::full(w.shape(), 1.0);
        } else {
            for (std::size_t idx : rng.sample_without_replacement(e.size, active))
                mask[idx] = 1.0;
        }
        e.active = active;
        e.density = static_cast<double>(active) / static_cast<double>(e.size);
        masks_.push_back(std::move(mask));
    }
}

void SparseState::apply(const std::vector<ParamRef>& params) const {
    for (std::size_t l = 0; l < info_.size(); ++l) {
        Tensor& w = *params[info_[l].param_index].value;
        w = masked_apply(w, masks_[l]);
    }
}

std::vector<const Tensor*> SparseState::mask_pointers(
    const std::vector<ParamRef>& params) const {
    std::vector<const Tensor*> out(params.size(), nullptr);
    for (std::size_t l = 0; l < info_.size(); ++l) out[info_[l].param_index] = &masks_[l];
    return out;
}

std::size_t SparseState::drop_and_grow(const std::vector<ParamRef>& params,
                                       SgdMomentum& opt) {
    std::size_t moved_total = 0;
    for (std::size_t l = 0; l < info_.size(); ++l) {
        LayerInfo& e = info_[l];
        Tensor& mask = masks_[l];
        Tensor& w = *params[e.param_index].value;
        const Tensor& g = *params[e.param_index].grad;
        const std::size_t inactive = e.size - e.active;
        const std::size_t want =
            static_cast<std::size_t>(std::llround(cfg_.death_rate * static_cast<double>(e.active)));
        const std::size_t n_move = std::min(want, inactive);
        if (n_move == 0) continue;

        std::vector<std::size_t> active_idx, inactive_idx;
        active_idx.reserve(e.active);
        inactive_idx.reserve(inactive);
        for (std::size_t j = 0; j < e.size; ++j)
            (mask[j] != 0.0 ? active_idx : inactive_idx).push_back(j);

        // ties break toward the lower flat index on both sides
        const double* pw = w.data();
        std::nth_element(active_idx.begin(),
                         active_idx.begin() + static_cast<std::ptrdiff_t>(n_move - 1),
                         active_idx.end(), [pw](std::size_t a, std::size_t b) {
                             const double ma = std::abs(pw[a]), mb = std::abs(pw[b]);
                             return ma < mb || (ma == mb && a < b);
                         });
        const double* pg = g.data();
        std::nth_element(inactive_idx.begin(),
                         inactive_idx.begin() + static_cast<std::ptrdiff_t>(n_move - 1),
                         inactive_idx.end(), [pg](std::size_t a, std::size_t b) {
                             const double ma = std::abs(pg[a]), mb = std::abs(pg[b]);
                             return ma > mb || (ma == mb && a < b);
                         });

        std::vector<std::size_t> touched;
        touched.reserve(2 * n_move);
        for (std::size_t k = 0; k < n_move; ++k) {
            const std::size_t dj = active_idx[k];
            mask[dj] = 0.0;
            w[dj] = 0.0;
            touched.push_back(dj);
        }
        for (std::size_t k = 0; k < n_move; ++k) {
            const std::size_t gj = inactive_idx[k];
            mask[gj] = 1.0;
            w[gj] = 0.0; // grown weights start from zero
            touched.push_back(gj);
        }
        opt.reset_velocity(e.param_index, touched);
        moved_total += n_move;
    }
    return moved_total;
}

std::size_t SparseState::active_weights() const {
    std::size_t n = 0;
    for (const LayerInfo& e : info_) n += e.active;
    return n;
}

std::size_t SparseState::total_maskable() const {
    std::size_t n = 0;
    for (const LayerInfo& e : info_) n += e.size;
    return n;
}

double SparseState::actual_sparsity() const {
    return 1.0 -
           static_cast<double>(active_weights()) / static_cast<double>(total_maskable());
}

const Tensor& SparseState::mask_for(std::size_t param_index) const {
    for (std::size_t l = 0; l < info_.size(); ++l)
        if (info_[l].param_index == param_index) return masks_[l];
    throw ValueError("parameter " + std::to_string(param_index) + " carries no mask");
}

std::map<std::string, Tensor> SparseState::masks_by_name() const {
    std::map<std::string, Tensor> out;
    for (std::size_t l = 0; l < info_.size(); ++l) out.emplace(info_[l].name, masks_[l]);
    return out;
}

void SparseState::load_masks(const std::map<std::string, Tensor>& masks,
                             const std::vector<ParamRef>& params) {
    if (masks.size() != info_.size())
        throw ValueError("checkpoint holds " + std::to_string(masks.size()) +
                         " masks, model wants " + std::to_string(info_.size()));
    for (std::size_t l = 0; l < info_.size(); ++l) {
        const auto it = masks.find(info_[l].name);
        if (it == masks.end()) throw ValueError("no mask for layer " + info_[l].name);
        const Tensor& m = it->second;
        if (!m.same_shape(*params[info_[l].param_index].value))
            throw ShapeError("mask for " + info_[l].name + " has shape " + m.shape_str());
        std::size_t active = 0;
        for (std::size_t j = 0; j < m.size(); ++j) {
            if (m[j] == 1.0)
                ++active;
            else if (m[j] != 0.0)
                throw ValueError("mask for " + info_[l].name + " is not binary");
        }
        masks_[l] = m;
        info_[l].active = active;
        info_[l].density =
            static_cast<double>(active) / static_cast<double>(info_[l].size);
    }
}

// ---------------------------------------------------------------------------
// training loop

namespace {

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& order,
                   std::size_t start, std::size_t count) {
    const std::size_t row = src.size() / src.dim(0);
    std::vector<std::size_t> shape = src.shape();
    shape[0] = count;
    Tensor out(shape);
    for (std::size_t i = 0; i < count; ++i)
        std::memcpy(out.data() + i * row, src.data() + order[start + i] * row,
                    row * sizeof(double));
    return out;
}

Tensor slice_rows(const Tensor& src, std::size_t start, std::size_t count) {
    const std::size_t row = src.size() / src.dim(0);
    std::vector<std::size_t> shape = src.shape();
    shape[0] = count;
    Tensor out(shape);
    std::memcpy(out.data(), src.data() + start * row, count * row * sizeof(double));
    return out;
}

} // namespace

TrainResult train(StgtModel& model, const SplitBatches& data, const Normalizer& norm,
                  const TrainConfig& cfg, const TrainHooks* hooks) {
    if (cfg.epochs == 0) throw ConfigError("epochs must be positive");
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
        throw ConfigError("momentum must be in [0, 1)");
    check_sparse_config(cfg.sparse);
    if (data.train.nodes() != model.nodes() || data.val.nodes() != model.nodes())
        throw ShapeError("data covers " + std::to_string(data.train.nodes()) +
                         " stations, model wants " + std::to_string(model.nodes()));
    if (data.train.history() != model.config().history ||
        data.train.horizon() != model.config().horizon)
        throw ShapeError("window geometry does not match the model");

    model.init_params(cfg.seed);
    auto params = model.params();
    std::size_t total_maskable = 0;
    for (const ParamRef& p : params)
        if (p.maskable) total_maskable += p.value->size();

    TrainResult res;
    std::vector<const Tensor*> mask_ptrs(params.size(), nullptr);
    if (cfg.sparse.sparsity > 0.0) {
        res.sparse = std::make_unique<SparseState>(params, cfg.sparse,
                                                   cfg.seed ^ kMaskSeedSalt);
        res.sparse->apply(params);
        mask_ptrs = res.sparse->mask_pointers(params);
    }
    SgdMomentum opt(cfg.lr, cfg.momentum);
    Rng shuffle_rng(cfg.seed ^ kShuffleSeedSalt);

    const Tensor train_x = norm.normalize(data.train.inputs);
    const Tensor train_y = norm.normalize(data.train.targets);
    const Tensor val_x = norm.normalize(data.val.inputs);
    const Tensor val_y = norm.normalize(data.val.targets);

    const std::size_t n_train = data.train.count();
    const std::size_t n_val = data.val.count();
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::size_t> val_order(n_val);
    std::iota(val_order.begin(), val_order.end(), std::size_t{0});

    std::size_t iteration = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.shuffle) shuffle_rng.shuffle(order);
        double sse = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, n_train - start);
            Tensor bx = gather_rows(train_x, order, start, bsz);
            Tensor by = gather_rows(train_y, order, start, bsz);
            Tensor pred = model.forward(bx);
            const double loss = mse_loss(pred, by);
            sse += loss * static_cast<double>(pred.size());
            seen += pred.size();
            model.zero_grads();
            model.backward(mse_loss_grad(pred, by));
            opt.step(params, mask_ptrs);
            ++iteration;
            if (hooks && hooks->after_step) hooks->after_step(iteration, res.sparse.get());
            if (res.sparse && cfg.sparse.update_interval > 0 &&
                iteration % cfg.sparse.update_interval == 0) {
                const std::size_t moved = res.sparse->drop_and_grow(params, opt);
                ++res.events;
                res.moved_total += moved;
                if (hooks && hooks->after_event)
                    hooks->after_event(iteration, moved, res.sparse.get());
            }
        }

        double vsse = 0.0;
        std::size_t vseen = 0;
        ErrorAccum acc;
        for (std::size_t start = 0; start < n_val; start += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, n_val - start);
            Tensor bx = slice_rows(val_x, start, bsz);
            Tensor by = slice_rows(val_y, start, bsz);
            Tensor pred = model.forward(bx);
            vsse += mse_loss(pred, by) * static_cast<double>(pred.size());
            vseen += pred.size();
            acc.add(norm.denormalize(pred), slice_rows(data.val.targets, start, bsz));
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = sse / static_cast<double>(seen);
        row.val_loss = vsse / static_cast<double>(vseen);
        row.val_mae = acc.mae();
        row.val_rmse = acc.rmse();
        row.val_mape = acc.mape();
        row.sparsity = res.sparse ? res.sparse->actual_sparsity() : 0.0;
        row.active_weights = res.sparse ? res.sparse->active_weights() : total_maskable;
        res.history.push_back(row);
        if (hooks && hooks->after_epoch) hooks->after_epoch(row);
    }
    res.iterations = iteration;
    return res;
}

void write_history_csv(const std::vector<EpochRow>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,train_loss,val_loss,val_mae,val_rmse,val_mape,sparsity,active_weights\n";
    char buf[256];
    for (const EpochRow& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.10e,%.10e,%.6f,%.6f,%.6f,%.6f,%zu\n",
                      r.epoch, r.train_loss, r.val_loss, r.val_mae, r.val_rmse,
                      r.val_mape, r.sparsity, r.active_weights);
        out << buf;
    }
    if (!out.good()) throw IoError("write failed: " + path);
}

} // namespace stgt
