#include "stgt/model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "stgt/error.hpp"
#include "parallel.hpp"

namespace stgt {

SpatialKind parse_spatial_kind(const std::string& name) {
    if (name == "gcn") return SpatialKind::gcn;
    if (name == "gat") return SpatialKind::gat;
    throw ConfigError("unknown spatial block '" + name + "' (want gcn or gat)");
}

std::string to_string(SpatialKind kind) {
    return kind == SpatialKind::gcn ? "gcn" : "gat";
}

namespace {

std::unique_ptr<SpatialLayer> make_spatial(const SensorGraph& graph, NormScheme scheme,
                                           const ModelConfig& cfg) {
    Tensor p_hat = normalize_adjacency(graph, scheme);
    if (cfg.spatial == SpatialKind::gcn)
        return std::make_unique<GcnLayer>(std::move(p_hat), 1, cfg.spatial_dim);
    if (cfg.spatial_dim % cfg.heads != 0)
        throw ConfigError("spatial_dim " + std::to_string(cfg.spatial_dim) +
                          " is not divisible by " + std::to_string(cfg.heads) + " heads");
    return std::make_unique<GatLayer>(p_hat, 1, cfg.heads, cfg.spatial_dim / cfg.heads);
}

} // namespace

StgtModel::StgtModel(const SensorGraph& graph, NormScheme scheme, ModelConfig cfg)
    : cfg_(cfg),
      nodes_(graph.node_count()),
      spatial_(make_spatial(graph, scheme, cfg)),
      lstm_(cfg.spatial_dim, cfg.hidden, cfg.lstm_layers),
      head_(cfg.hidden, cfg.horizon) {
    if (cfg_.history == 0 || cfg_.horizon == 0)
        throw ConfigError("history and horizon must be positive");
}

Tensor StgtModel::forward(const Tensor& inputs) {
    if (inputs.rank() != 3 || inputs.dim(1) != nodes_ || inputs.dim(2) != cfg_.history)
        throw ShapeError("model: want [B x " + std::to_string(nodes_) + " x " +
                         std::to_string(cfg_.history) + "], got " + inputs.shape_str());
    const std::size_t batch = inputs.dim(0);
    last_batch_ = batch;
    spatial_->clear_cache();

    std::vector<Tensor> seq(cfg_.history);
    Tensor slice({batch, nodes_, 1});
    for (std::size_t t = 0; t < cfg_.history; ++t) {
        double* ps = slice.data();
        const double* pin = inputs.data();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < nodes_; ++j)
                ps[b * nodes_ + j] = pin[(b * nodes_ + j) * cfg_.history + t];
        seq[t] =
            spatial_->forward(slice).reshaped({batch * nodes_, spatial_->out_dim()});
    }
    Tensor hidden = lstm_.forward(seq);
    return head_.forward(hidden).reshaped({batch, nodes_, cfg_.horizon});
}

void StgtModel::backward(const Tensor& dpred) {
    const std::size_t batch = last_batch_;
    if (batch == 0) throw ValueError("model backward without a forward");
    if (dpred.size() != batch * nodes_ * cfg_.horizon)
        throw ShapeError("model backward: got " + dpred.shape_str());
    Tensor dh = head_.backward(dpred.reshaped({batch * nodes_, cfg_.horizon}));
    std::vector<Tensor> dseq = lstm_.backward(dh);
    for (std::size_t t = cfg_.history; t-- > 0;)
        spatial_->backward(dseq[t]); // input gradients are not needed
}

std::vector<ParamRef> StgtModel::params() {
    std::vector<ParamRef> out;
    spatial_->collect("graph", out);
    lstm_.collect("lstm", out);
    head_.collect("head", out);
    return out;
}

void StgtModel::zero_grads() {
    for (ParamRef& p : params()) *p.grad = Tensor::zeros(p.grad->shape());
}

void StgtModel::init_params(std::uint64_t seed) {
    Rng rng(seed);
    spatial_->init(rng);
    lstm_.init(rng);
    head_.init(rng);
}

double mse_loss(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw ShapeError("loss: " + pred.shape_str() + " vs " + target.shape_str());
    const double* pp = pred.data();
    const double* pt = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pp[i] - pt[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

Tensor mse_loss_grad(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw ShapeError("loss: " + pred.shape_str() + " vs " + target.shape_str());
    Tensor out(pred.shape());
    const double scale = 2.0 / static_cast<double>(pred.size());
    const double* pp = pred.data();
    const double* pt = target.data();
    double* po = out.data();
    for (std::size_t i = 0; i < pred.size(); ++i) po[i] = scale * (pp[i] - pt[i]);
    return out;
}

void SgdMomentum::step(const std::vector<ParamRef>& params) {
    step(params, std::vector<const Tensor*>(params.size(), nullptr));
}

void SgdMomentum::step(const std::vector<ParamRef>& params,
                       const std::vector<const Tensor*>& masks) {
    if (masks.size() != params.size())
        throw ValueError("mask list does not match the parameter list");
    if (velocity_.empty())
        for (const ParamRef& p : params) velocity_.emplace_back(Tensor::zeros(p.value->shape()));
    if (velocity_.size() != params.size())
        throw ValueError("optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* pv = velocity_[i].data();
        double* pw = params[i].value->data();
        const double* pg = params[i].grad->data();
        const std::size_t n = params[i].value->size();
        if (velocity_[i].size() != n) throw ShapeError("velocity shape drifted");
        const Tensor* mask = masks[i];
        if (mask && mask->size() != n)
            throw ShapeError("mask shape does not match parameter " + params[i].name);
        const double* pm = mask ? mask->data() : nullptr;
#pragma omp parallel for schedule(static) if (parallel_worth(n, 8192))
        for (std::size_t j = 0; j < n; ++j) {
            if (pm && pm[j] == 0.0) continue;
            pv[j] = momentum_ * pv[j] + pg[j];
            pw[j] -= lr_ * pv[j];
        }
    }
}

void SgdMomentum::reset_velocity(std::size_t param_index,
                                 const std::vector<std::size_t>& where) {
    if (param_index >= velocity_.size()) return; // nothing accumulated yet
    double* pv = velocity_[param_index].data();
    for (std::size_t j : where) pv[j] = 0.0;
}

Tensor* SgdMomentum::velocity(std::size_t param_index) {
    return param_index < velocity_.size() ? &velocity_[param_index] : nullptr;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape();
    j["data"] = std::vector<double>(t.data(), t.data() + t.size());
    return j;
}

Tensor tensor_from_json(const json& j, const std::string& name) {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    const auto data = j.at("data").get<std::vector<double>>();
    Tensor t(shape, data); // throws on mismatch
    (void)name;
    return t;
}

} // namespace

void save_checkpoint(const std::string& path, StgtModel& model, const SensorGraph& graph,
                     NormScheme scheme, const Normalizer& normalizer, double sparsity,
                     const std::map<std::string, Tensor>& masks) {
    json j;
    j["format"] = "stgt-checkpoint-v1";
    const ModelConfig& cfg = model.config();
    j["spatial"] = to_string(cfg.spatial);
    j["history"] = cfg.history;
    j["horizon"] = cfg.horizon;
    j["spatial_dim"] = cfg.spatial_dim;
    j["heads"] = cfg.heads;
    j["hidden"] = cfg.hidden;
    j["lstm_layers"] = cfg.lstm_layers;
    j["norm_scheme"] = to_string(scheme);
    j["omega"] = graph.omega();
    j["node_ids"] = graph.node_ids();
    json edges = json::array();
    for (const Edge& e : graph.edges())
        edges.push_back(json::array({e.from, e.to, e.distance_km}));
    j["edges"] = std::move(edges);
    j["normalizer"] = {{"mean", normalizer.mean}, {"stddev", normalizer.stddev}};
    j["sparsity"] = sparsity;
    json params = json::object();
    for (const ParamRef& p : model.params()) params[p.name] = tensor_to_json(*p.value);
    j["params"] = std::move(params);
    json jmasks = json::object();
    for (const auto& [name, mask] : masks) jmasks[name] = tensor_to_json(mask);
    j["masks"] = std::move(jmasks);

    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump() << '\n';
    if (!out.good()) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "stgt-checkpoint-v1")
            throw IoError(path + ": unknown checkpoint format");

        Checkpoint ck;
        ck.config.spatial = parse_spatial_kind(j.at("spatial").get<std::string>());
        ck.config.history = j.at("history").get<std::size_t>();
        ck.config.horizon = j.at("horizon").get<std::size_t>();
        ck.config.spatial_dim = j.at("spatial_dim").get<std::size_t>();
        ck.config.heads = j.at("heads").get<std::size_t>();
        ck.config.hidden = j.at("hidden").get<std::size_t>();
        ck.config.lstm_layers = j.at("lstm_layers").get<std::size_t>();
        ck.scheme = parse_norm_scheme(j.at("norm_scheme").get<std::string>());

        std::vector<Edge> edges;
        for (const json& je : j.at("edges"))
            edges.push_back({je.at(0).get<std::size_t>(), je.at(1).get<std::size_t>(),
                             je.at(2).get<double>()});
        ck.graph = std::make_unique<SensorGraph>(
            j.at("node_ids").get<std::vector<std::string>>(), edges,
            j.at("omega").get<double>());

        ck.normalizer.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
        ck.normalizer.stddev = j.at("normalizer").at("stddev").get<std::vector<double>>();
        if (ck.normalizer.mean.size() != ck.graph->node_count() ||
            ck.normalizer.stddev.size() != ck.graph->node_count())
            throw IoError(path + ": normalizer does not cover every station");
        ck.sparsity = j.at("sparsity").get<double>();

        ck.model = std::make_unique<StgtModel>(*ck.graph, ck.scheme, ck.config);
        const json& jp = j.at("params");
        std::size_t seen = 0;
        for (const ParamRef& p : ck.model->params()) {
            if (!jp.contains(p.name)) throw IoError(path + ": missing parameter " + p.name);
            Tensor t = tensor_from_json(jp.at(p.name), p.name);
            if (!t.same_shape(*p.value))
                throw IoError(path + ": parameter " + p.name + " has shape " +
                              t.shape_str() + ", model wants " + p.value->shape_str());
            *p.value = std::move(t);
            ++seen;
        }
        if (seen != jp.size()) throw IoError(path + ": checkpoint has extra parameters");
        for (const auto& [name, jm] : j.at("masks").items())
            ck.masks.emplace(name, tensor_from_json(jm, name));
        return ck;
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

} // namespace stgt
