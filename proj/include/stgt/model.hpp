#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stgt/dataset.hpp"
#include "stgt/graph.hpp"
#include "stgt/layers.hpp"
#include "stgt/tensor.hpp"

namespace stgt {

enum class SpatialKind { gcn, gat };

SpatialKind parse_spatial_kind(const std::string& name);
std::string to_string(SpatialKind kind);

struct ModelConfig {
    SpatialKind spatial = SpatialKind::gcn;
    std::size_t history = 12;     // input steps per window
    std::size_t horizon = 9;      // predicted steps
    std::size_t spatial_dim = 64; // per-node embedding width out of the graph block
    std::size_t heads = 4;        // attention heads (gat); must divide spatial_dim
    std::size_t hidden = 128;     // lstm state width
    std::size_t lstm_layers = 2;
};

/// Forecaster: a per-time-step graph block feeds a shared LSTM stack whose
/// final state drives an affine multi-horizon head. Inputs and outputs are
/// z-scored speeds shaped [B x N x history] and [B x N x horizon].
class StgtModel {
public:
    StgtModel(const SensorGraph& graph, NormScheme scheme, ModelConfig cfg);

    Tensor forward(const Tensor& inputs);
    /// dpred: gradient of the loss wrt the forward output; accumulates
    /// parameter gradients. Must follow the matching forward.
    void backward(const Tensor& dpred);

    /// Stable enumeration: graph block, then lstm layers, then head.
    std::vector<ParamRef> params();
    void zero_grads();
    void init_params(std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::size_t nodes() const { return nodes_; }

private:
    ModelConfig cfg_;
    std::size_t nodes_;
    std::unique_ptr<SpatialLayer> spatial_;
    LstmStack lstm_;
    FcLayer head_;
    std::size_t last_batch_ = 0;
};

double mse_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss_grad(const Tensor& pred, const Tensor& target);

/// Heavy-ball SGD; velocity buffers are lazily sized on the first step.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(const std::vector<ParamRef>& params);
    /// masks[i] may be null (dense update); a nonzero mask entry lets the
    /// weight move, a zero entry freezes weight and velocity alike
    void step(const std::vector<ParamRef>& params, const std::vector<const Tensor*>& masks);
    void reset_velocity(std::size_t param_index, const std::vector<std::size_t>& where);
    Tensor* velocity(std::size_t param_index);
    double lr() const { return lr_; }

private:
    double lr_;
    double momentum_;
    std::vector<Tensor> velocity_;
};

struct Checkpoint {
    ModelConfig config;
    NormScheme scheme = NormScheme::sym;
    std::unique_ptr<SensorGraph> graph;
    Normalizer normalizer;
    double sparsity = 0.0;
    std::map<std::string, Tensor> masks; // empty when trained dense
    std::unique_ptr<StgtModel> model;
};

void save_checkpoint(const std::string& path, StgtModel& model, const SensorGraph& graph,
                     NormScheme scheme, const Normalizer& normalizer, double sparsity,
                     const std::map<std::string, Tensor>& masks);

Checkpoint load_checkpoint(const std::string& path);

} // namespace stgt
