#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "stgt/rng.hpp"
#include "stgt/tensor.hpp"

namespace stgt {

/// Non-owning handle to one parameter tensor and its gradient buffer.
/// `maskable` marks the rank-2 weight matrices the sparsifier may prune;
/// biases and attention vectors always stay dense.
struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
    bool maskable;
};

void glorot_init(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Spatial block applied to one time slice [B x N x F_in] at a time.
/// forward() pushes a cache entry, backward() pops one, so a sequence of
/// F forwards must be mirrored by F backwards in reverse order.
class SpatialLayer {
public:
    virtual ~SpatialLayer() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& dout) = 0;
    virtual void collect(const std::string& prefix, std::vector<ParamRef>& out) = 0;
    virtual std::size_t out_dim() const = 0;
    virtual void init(Rng& rng) = 0;
    virtual void clear_cache() = 0;
};

/// Graph convolution: relu(P x W + b) with a fixed propagation matrix P.
class GcnLayer : public SpatialLayer {
public:
    GcnLayer(Tensor propagation, std::size_t in_dim, std::size_t out_dim);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dout) override;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) override;
    std::size_t out_dim() const override { return weight_.dim(1); }
    void init(Rng& rng) override;
    void clear_cache() override { cache_.clear(); }

private:
    struct Cache {
        Tensor propagated; // [B*N x F_in]
        Tensor output;     // [B*N x C], relu gate comes from the sign
    };
    Tensor propagation_; // [N x N]
    Tensor weight_, weight_grad_;
    Tensor bias_, bias_grad_;
    std::vector<Cache> cache_;
};

/// Multi-head graph attention over each node's in-neighbors plus itself.
/// Scores use a split attention vector (a_src for the receiving node,
/// a_dst for the sender) with leaky-relu, per-neighborhood softmax, and
/// an elu on the concatenated head outputs.
class GatLayer : public SpatialLayer {
public:
    /// `connectivity` only contributes its nonzero pattern: entry (i, j)
    /// nonzero means node j feeds node i.
    GatLayer(const Tensor& connectivity, std::size_t in_dim, std::size_t heads,
             std::size_t head_dim);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dout) override;
    void collect(const std::string& prefix, std::vector<ParamRef>& out) override;
    std::size_t out_dim() const override { return heads_ * head_dim_; }
    void init(Rng& rng) override;
    void clear_cache() override { cache_.clear(); }

    std::size_t heads() const { return heads_; }

private:
    struct HeadCache {
        Tensor projected; // [B*N x C_h]
        Tensor src_score; // [B*N x 1]  a_src . u_i
        Tensor dst_score; // [B*N x 1]  a_dst . u_j
        std::vector<double> alpha; // attention, aligned to the CSR edges, per window
    };
    struct Cache {
        Tensor input; // [B*N x F_in]
        Tensor preact; // [B*N x C], before the elu
        std::vector<HeadCache> heads;
    };

    std::size_t nodes_;
    std::size_t in_dim_;
    std::size_t heads_;
    std::size_t head_dim_;
    // CSR over receivers: senders of node i are neighbor_[offset_[i]..offset_[i+1])
    std::vector<std::size_t> offset_;
    std::vector<std::size_t> neighbor_;
    std::vector<Tensor> weight_, weight_grad_;   // per head [F_in x C_h]
    std::vector<Tensor> att_src_, att_src_grad_; // per head [C_h]
    std::vector<Tensor> att_dst_, att_dst_grad_;
    Tensor bias_, bias_grad_; // [heads*C_h]
    std::vector<Cache> cache_;
};

/// Stack of LSTM layers run over a fixed-length sequence; exposes the
/// final hidden state of the top layer. Gate order inside the packed
/// weights is input, forget, cell, output.
class LstmStack {
public:
    LstmStack(std::size_t in_dim, std::size_t hidden, std::size_t layers = 2);

    /// seq: F tensors of shape [R x in_dim]; returns [R x hidden]
    Tensor forward(const std::vector<Tensor>& seq);
    /// dlast: [R x hidden]; returns gradients for every sequence element
    std::vector<Tensor> backward(const Tensor& dlast);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void init(Rng& rng);
    std::size_t hidden() const { return hidden_; }

private:
    struct StepCache {
        Tensor input;  // [R x D_l]
        Tensor gates;  // [R x 4H], post-activation
        Tensor cell;   // [R x H]
        Tensor hidden; // [R x H]
    };
    struct LayerParams {
        Tensor w_input, w_input_grad;   // [D_l x 4H]
        Tensor w_hidden, w_hidden_grad; // [H x 4H]
        Tensor bias, bias_grad;         // [4H]
    };

    std::size_t in_dim_;
    std::size_t hidden_;
    std::vector<LayerParams> layers_;
    std::vector<std::vector<StepCache>> cache_; // [layer][step]
};

/// Plain affine head, no activation.
class FcLayer {
public:
    FcLayer(std::size_t in_dim, std::size_t out_dim);

    Tensor forward(const Tensor& x);          // [R x I] -> [R x O]
    Tensor backward(const Tensor& dout);      // [R x O] -> [R x I]
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void init(Rng& rng);

private:
    Tensor weight_, weight_grad_;
    Tensor bias_, bias_grad_;
    Tensor input_cache_;
};

} // namespace stgt
