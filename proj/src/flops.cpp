#include "stgt/flops.hpp"

#include <fstream>

#include "json.hpp"

#include "stgt/error.hpp"

namespace stgt {

void FlopsModel::add_term(const std::string& name, double macs, double count,
                          bool extended) {
    if (macs < 0.0 || count < 0.0) throw ValueError("flops terms cannot be negative");
    terms_.push_back({name, macs, count, extended});
}

void FlopsModel::add_fc(const std::string& name, std::size_t in, std::size_t out,
                        double count, bool extended) {
    add_term(name, static_cast<double>(in) * static_cast<double>(out), count, extended);
}

void FlopsModel::add_conv(const std::string& name, std::size_t lh, std::size_t lw,
                          std::size_t cin, std::size_t cout, std::size_t k, double count,
                          bool extended) {
    add_term(name,
             static_cast<double>(lh) * static_cast<double>(lw) * static_cast<double>(cin) *
                 static_cast<double>(cout) * static_cast<double>(k) *
                 static_cast<double>(k),
             count, extended);
}

double FlopsModel::dense_total() const {
    double acc = 0.0;
    for (const FlopsTerm& t : terms_)
        if (!t.extended) acc += t.total();
    return acc;
}

double FlopsModel::extended_total() const {
    double acc = 0.0;
    for (const FlopsTerm& t : terms_)
        if (t.extended) acc += t.total();
    return acc;
}

double sparse_flops(double dense, double sparsity) {
    if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ValueError("sparsity must be in [0, 1)");
    return dense * (1.0 - sparsity);
}

double amortized_training_flops(double dense, double sparsity, double update_interval) {
    if (update_interval < 0.0) throw ValueError("update_interval cannot be negative");
    const double fs = sparse_flops(dense, sparsity);
    return (3.0 * fs * update_interval + 2.0 * fs + dense) / (update_interval + 1.0);
}

double dense_training_flops(double dense) { return 3.0 * dense; }

double flops_ratio(double sparsity, double update_interval) {
    if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ValueError("sparsity must be in [0, 1)");
    if (update_interval < 0.0) throw ValueError("update_interval cannot be negative");
    const double dt = update_interval;
    return (3.0 * dt - 3.0 * sparsity * dt - 2.0 * sparsity + 3.0) / (3.0 * (dt + 1.0));
}

FlopsModel model_flops(const ModelConfig& cfg, std::size_t nodes,
                       std::size_t propagation_nnz) {
    const double n = static_cast<double>(nodes);
    const double f = static_cast<double>(cfg.history);
    FlopsModel m;
    if (cfg.spatial == SpatialKind::gcn) {
        m.add_term("graph.propagate", static_cast<double>(propagation_nnz), f, true);
        m.add_fc("graph.weight", 1, cfg.spatial_dim, n * f);
    } else {
        const std::size_t head_dim = cfg.spatial_dim / cfg.heads;
        const double heads = static_cast<double>(cfg.heads);
        m.add_fc("graph.project", 1, head_dim, n * f * heads);
        // per-edge attention score and the weighted aggregation
        m.add_fc("graph.score", 2 * head_dim, 1,
                 static_cast<double>(propagation_nnz) * f * heads, true);
        m.add_term("graph.aggregate", static_cast<double>(head_dim),
                   static_cast<double>(propagation_nnz) * f * heads, true);
    }
    std::size_t in_dim = cfg.spatial_dim;
    for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
        const std::string name = "lstm.layer" + std::to_string(l);
        m.add_fc(name + ".w_input", in_dim, 4 * cfg.hidden, n * f);
        m.add_fc(name + ".w_hidden", cfg.hidden, 4 * cfg.hidden, n * f);
        in_dim = cfg.hidden;
    }
    m.add_fc("head.weight", cfg.hidden, cfg.horizon, n);
    return m;
}

void write_flops_report(const std::string& path, const FlopsModel& model, double sparsity,
                        double update_interval) {
    nlohmann::json j;
    nlohmann::json terms = nlohmann::json::array();
    for (const FlopsTerm& t : model.terms())
        terms.push_back({{"name", t.name},
                         {"macs", t.macs},
                         {"count", t.count},
                         {"extended", t.extended},
                         {"total", t.total()}});
    j["terms"] = std::move(terms);
    const double fd = model.dense_total();
    j["dense_forward"] = fd;
    j["extended_forward"] = model.extended_total();
    j["sparsity"] = sparsity;
    j["update_interval"] = update_interval;
    j["sparse_forward"] = sparse_flops(fd, sparsity);
    j["dense_training_step"] = dense_training_flops(fd);
    j["amortized_training_step"] = amortized_training_flops(fd, sparsity, update_interval);
    j["training_ratio"] = flops_ratio(sparsity, update_interval);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out.good()) throw IoError("write failed: " + path);
}

} // namespace stgt
