#include "stgt/layers.hpp"

#include <cmath>
#include <cstring>

#include "stgt/error.hpp"
#include "parallel.hpp"

namespace stgt {

namespace {

constexpr double kLeakySlope = 0.2;

void check_slice(const Tensor& x, std::size_t in_dim, const char* who) {
    if (x.rank() != 3 || x.dim(2) != in_dim)
        throw ShapeError(std::string(who) + ": want [B x N x " + std::to_string(in_dim) +
                         "], got " + x.shape_str());
}

} // namespace

void glorot_init(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    double* p = w.data();
    for (std::size_t i = 0; i < w.size(); ++i) p[i] = rng.uniform(-limit, limit);
}

// ---------------------------------------------------------------------------
// graph convolution

GcnLayer::GcnLayer(Tensor propagation, std::size_t in_dim, std::size_t out_dim)
    : propagation_(std::move(propagation)),
      weight_({in_dim, out_dim}),
      weight_grad_({in_dim, out_dim}),
      bias_({out_dim}),
      bias_grad_({out_dim}) {
    if (propagation_.rank() != 2 || propagation_.dim(0) != propagation_.dim(1))
        throw ShapeError("propagation matrix must be square, got " +
                         propagation_.shape_str());
}

Tensor GcnLayer::forward(const Tensor& x) {
    check_slice(x, weight_.dim(0), "gcn");
    if (x.dim(1) != propagation_.dim(0))
        throw ShapeError("gcn: node count " + std::to_string(x.dim(1)) +
                         " does not match propagation " + propagation_.shape_str());
    const std::size_t batch = x.dim(0), n = x.dim(1);
    const std::size_t rows = batch * n, c = weight_.dim(1);

    Tensor prop = propagate(propagation_, x).reshaped({rows, weight_.dim(0)});
    Tensor z = matmul(prop, weight_);
    Tensor h({rows, c});
    const double* pz = z.data();
    const double* pb = bias_.data();
    double* ph = h.data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows * c, 4096))
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            const double v = pz[r * c + j] + pb[j];
            ph[r * c + j] = v > 0.0 ? v : 0.0;
        }
    }
    cache_.push_back({std::move(prop), h});
    return h.reshaped({batch, n, c});
}

Tensor GcnLayer::backward(const Tensor& dout) {
    if (cache_.empty()) throw ValueError("gcn backward without a matching forward");
    Cache cached = std::move(cache_.back());
    cache_.pop_back();
    const std::size_t rows = cached.output.dim(0), c = cached.output.dim(1);
    if (dout.size() != rows * c)
        throw ShapeError("gcn backward: got " + dout.shape_str());
    const std::size_t n = propagation_.dim(0);
    const std::size_t batch = rows / n;

    Tensor dz({rows, c});
    const double* pd = dout.data();
    const double* ph = cached.output.data();
    double* pz = dz.data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows * c, 4096))
    for (std::size_t i = 0; i < rows * c; ++i) pz[i] = ph[i] > 0.0 ? pd[i] : 0.0;

    weight_grad_ = add(weight_grad_, matmul_tn(cached.propagated, dz));
    bias_grad_ = add(bias_grad_, colsum(dz));
    Tensor dprop = matmul_nt(dz, weight_).reshaped({batch, n, weight_.dim(0)});
    return propagate(propagation_, dprop, /*transpose_p=*/true);
}

void GcnLayer::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight_, &weight_grad_, true});
    out.push_back({prefix + ".bias", &bias_, &bias_grad_, false});
}

void GcnLayer::init(Rng& rng) {
    glorot_init(weight_, weight_.dim(0), weight_.dim(1), rng);
    bias_ = Tensor::zeros(bias_.shape());
}

// ---------------------------------------------------------------------------
// graph attention

GatLayer::GatLayer(const Tensor& connectivity, std::size_t in_dim, std::size_t heads,
                   std::size_t head_dim)
    : nodes_(connectivity.dim(0)),
      in_dim_(in_dim),
      heads_(heads),
      head_dim_(head_dim),
      bias_({heads * head_dim}),
      bias_grad_({heads * head_dim}) {
    if (connectivity.rank() != 2 || connectivity.dim(0) != connectivity.dim(1))
        throw ShapeError("connectivity must be square, got " + connectivity.shape_str());
    if (heads_ == 0 || head_dim_ == 0) throw ValueError("gat needs heads > 0, head_dim > 0");

    offset_.assign(nodes_ + 1, 0);
    for (std::size_t i = 0; i < nodes_; ++i) {
        for (std::size_t j = 0; j < nodes_; ++j) {
            if (connectivity(i, j) != 0.0 || j == i) neighbor_.push_back(j);
        }
        offset_[i + 1] = neighbor_.size();
    }

    for (std::size_t k = 0; k < heads_; ++k) {
        weight_.emplace_back(std::vector<std::size_t>{in_dim_, head_dim_});
        weight_grad_.emplace_back(std::vector<std::size_t>{in_dim_, head_dim_});
        att_src_.emplace_back(std::vector<std::size_t>{head_dim_});
        att_src_grad_.emplace_back(std::vector<std::size_t>{head_dim_});
        att_dst_.emplace_back(std::vector<std::size_t>{head_dim_});
        att_dst_grad_.emplace_back(std::vector<std::size_t>{head_dim_});
    }
}

Tensor GatLayer::forward(const Tensor& x) {
    check_slice(x, in_dim_, "gat");
    if (x.dim(1) != nodes_)
        throw ShapeError("gat: node count " + std::to_string(x.dim(1)) +
                         " does not match connectivity of " + std::to_string(nodes_));
    const std::size_t batch = x.dim(0);
    const std::size_t rows = batch * nodes_;
    const std::size_t c = heads_ * head_dim_;
    const std::size_t nnz = neighbor_.size();

    Cache cache;
    cache.input = x.reshaped({rows, in_dim_});
    cache.preact = Tensor({rows, c});
    cache.heads.resize(heads_);
    double* pz = cache.preact.data();

    for (std::size_t k = 0; k < heads_; ++k) {
        HeadCache& hc = cache.heads[k];
        hc.projected = matmul(cache.input, weight_[k]);
        hc.src_score = Tensor({rows});
        hc.dst_score = Tensor({rows});
        hc.alpha.assign(batch * nnz, 0.0);
        const double* pu = hc.projected.data();
        const double* pas = att_src_[k].data();
        const double* pad = att_dst_[k].data();
        double* ps = hc.src_score.data();
        double* pr = hc.dst_score.data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows, 256))
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0, d = 0.0;
            for (std::size_t t = 0; t < head_dim_; ++t) {
                s += pas[t] * pu[r * head_dim_ + t];
                d += pad[t] * pu[r * head_dim_ + t];
            }
            ps[r] = s;
            pr[r] = d;
        }

#pragma omp parallel for schedule(static) if (parallel_worth(batch, 1))
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t row0 = b * nodes_;
            double* palpha = hc.alpha.data() + b * nnz;
            for (std::size_t i = 0; i < nodes_; ++i) {
                const std::size_t lo = offset_[i], hi = offset_[i + 1];
                double emax = -1e300;
                for (std::size_t e = lo; e < hi; ++e) {
                    const double pre = ps[row0 + i] + pr[row0 + neighbor_[e]];
                    const double act = pre > 0.0 ? pre : kLeakySlope * pre;
                    palpha[e] = act;
                    if (act > emax) emax = act;
                }
                double denom = 0.0;
                for (std::size_t e = lo; e < hi; ++e) {
                    palpha[e] = std::exp(palpha[e] - emax);
                    denom += palpha[e];
                }
                double* zrow = pz + (row0 + i) * c + k * head_dim_;
                for (std::size_t t = 0; t < head_dim_; ++t) zrow[t] = 0.0;
                for (std::size_t e = lo; e < hi; ++e) {
                    palpha[e] /= denom;
                    const double* urow = pu + (row0 + neighbor_[e]) * head_dim_;
                    for (std::size_t t = 0; t < head_dim_; ++t)
                        zrow[t] += palpha[e] * urow[t];
                }
            }
        }
    }

    const double* pb = bias_.data();
    Tensor out({rows, c});
    double* po = out.data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows * c, 4096))
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            const double v = pz[r * c + j] + pb[j];
            pz[r * c + j] = v; // keep the biased preactivation for the elu gate
            po[r * c + j] = v > 0.0 ? v : std::expm1(v);
        }
    }
    cache_.push_back(std::move(cache));
    return out.reshaped({batch, nodes_, c});
}

Tensor GatLayer::backward(const Tensor& dout) {
    if (cache_.empty()) throw ValueError("gat backward without a matching forward");
    Cache cached = std::move(cache_.back());
    cache_.pop_back();
    const std::size_t rows = cached.preact.dim(0);
    const std::size_t c = heads_ * head_dim_;
    const std::size_t batch = rows / nodes_;
    const std::size_t nnz = neighbor_.size();
    if (dout.size() != rows * c)
        throw ShapeError("gat backward: got " + dout.shape_str());

    Tensor dz({rows, c});
    {
        const double* pd = dout.data();
        const double* pz = cached.preact.data();
        double* pdz = dz.data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows * c, 4096))
        for (std::size_t i = 0; i < rows * c; ++i)
            pdz[i] = pz[i] > 0.0 ? pd[i] : pd[i] * std::exp(pz[i]);
    }
    bias_grad_ = add(bias_grad_, colsum(dz));

    Tensor dx({rows, in_dim_});
    for (std::size_t k = 0; k < heads_; ++k) {
        const HeadCache& hc = cached.heads[k];
        const double* pu = hc.projected.data();
        const double* ps = hc.src_score.data();
        const double* pr = hc.dst_score.data();
        const double* pdz = dz.data();
        Tensor du({rows, head_dim_});
        Tensor ds({rows, 1});
        Tensor dr({rows, 1});
        double* pdu = du.data();
        double* pds = ds.data();
        double* pdr = dr.data();

#pragma omp parallel for schedule(static) if (parallel_worth(batch, 1))
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t row0 = b * nodes_;
            const double* palpha = hc.alpha.data() + b * nnz;
            for (std::size_t i = 0; i < nodes_; ++i) {
                const std::size_t lo = offset_[i], hi = offset_[i + 1];
                const double* dzi = pdz + (row0 + i) * c + k * head_dim_;
                // dalpha_e = dz_i . u_j ; also the aggregation path into du_j
                double dot = 0.0;
                double dalpha_buf[64];
                double* dalpha = dalpha_buf;
                std::vector<double> dalpha_heap;
                if (hi - lo > 64) {
                    dalpha_heap.resize(hi - lo);
                    dalpha = dalpha_heap.data();
                }
                for (std::size_t e = lo; e < hi; ++e) {
                    const std::size_t j = row0 + neighbor_[e];
                    const double* urow = pu + j * head_dim_;
                    double g = 0.0;
                    for (std::size_t t = 0; t < head_dim_; ++t) {
                        g += dzi[t] * urow[t];
                        pdu[j * head_dim_ + t] += palpha[e] * dzi[t];
                    }
                    dalpha[e - lo] = g;
                    dot += palpha[e] * g;
                }
                double dsi = 0.0;
                for (std::size_t e = lo; e < hi; ++e) {
                    const double de = palpha[e] * (dalpha[e - lo] - dot);
                    const double pre = ps[row0 + i] + pr[row0 + neighbor_[e]];
                    const double dpre = pre > 0.0 ? de : kLeakySlope * de;
                    dsi += dpre;
                    pdr[row0 + neighbor_[e]] += dpre;
                }
                pds[row0 + i] += dsi;
            }
        }

        const double* pas = att_src_[k].data();
        const double* pad = att_dst_[k].data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows, 256))
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t t = 0; t < head_dim_; ++t)
                pdu[r * head_dim_ + t] += pds[r] * pas[t] + pdr[r] * pad[t];
        }

        weight_grad_[k] = add(weight_grad_[k], matmul_tn(cached.input, du));
        att_src_grad_[k] =
            add(att_src_grad_[k], matmul_tn(hc.projected, ds).reshaped({head_dim_}));
        att_dst_grad_[k] =
            add(att_dst_grad_[k], matmul_tn(hc.projected, dr).reshaped({head_dim_}));
        dx = add(dx, matmul_nt(du, weight_[k]));
    }
    return dx.reshaped({batch, nodes_, in_dim_});
}

void GatLayer::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    for (std::size_t k = 0; k < heads_; ++k) {
        const std::string head = prefix + ".head" + std::to_string(k);
        out.push_back({head + ".weight", &weight_[k], &weight_grad_[k], true});
        out.push_back({head + ".att_src", &att_src_[k], &att_src_grad_[k], false});
        out.push_back({head + ".att_dst", &att_dst_[k], &att_dst_grad_[k], false});
    }
    out.push_back({prefix + ".bias", &bias_, &bias_grad_, false});
}

void GatLayer::init(Rng& rng) {
    for (std::size_t k = 0; k < heads_; ++k) {
        glorot_init(weight_[k], in_dim_, head_dim_, rng);
        glorot_init(att_src_[k], head_dim_, 1, rng);
        glorot_init(att_dst_[k], head_dim_, 1, rng);
    }
    bias_ = Tensor::zeros(bias_.shape());
}

// ---------------------------------------------------------------------------
// lstm stack

LstmStack::LstmStack(std::size_t in_dim, std::size_t hidden, std::size_t layers)
    : in_dim_(in_dim), hidden_(hidden) {
    if (layers == 0 || hidden == 0 || in_dim == 0)
        throw ValueError("lstm needs positive dims and at least one layer");
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t d = l == 0 ? in_dim_ : hidden_;
        layers_.push_back({Tensor({d, 4 * hidden_}), Tensor({d, 4 * hidden_}),
                           Tensor({hidden_, 4 * hidden_}), Tensor({hidden_, 4 * hidden_}),
                           Tensor({4 * hidden_}), Tensor({4 * hidden_})});
    }
}

Tensor LstmStack::forward(const std::vector<Tensor>& seq) {
    if (seq.empty()) throw ValueError("lstm needs at least one step");
    const std::size_t rows = seq.front().dim(0);
    const std::size_t steps = seq.size();
    const std::size_t h = hidden_;
    for (const Tensor& x : seq) {
        if (x.rank() != 2 || x.dim(0) != rows || x.dim(1) != in_dim_)
            throw ShapeError("lstm: want [R x " + std::to_string(in_dim_) + "], got " +
                             x.shape_str());
    }

    cache_.assign(layers_.size(), {});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        cache_[l].resize(steps);
        const LayerParams& lp = layers_[l];
        for (std::size_t t = 0; t < steps; ++t) {
            const Tensor& x =
                l == 0 ? seq[t] : cache_[l - 1][t].hidden;
            StepCache& sc = cache_[l][t];
            if (l == 0) sc.input = x;
            Tensor zx = matmul(x, lp.w_input);
            Tensor zh; // skipped at t = 0, the initial hidden state is zero
            if (t > 0) zh = matmul(cache_[l][t - 1].hidden, lp.w_hidden);
            sc.gates = Tensor({rows, 4 * h});
            sc.cell = Tensor({rows, h});
            sc.hidden = Tensor({rows, h});
            const double* pzx = zx.data();
            const double* pzh = t > 0 ? zh.data() : nullptr;
            const double* pb = lp.bias.data();
            const double* pcprev = t > 0 ? cache_[l][t - 1].cell.data() : nullptr;
            double* pg = sc.gates.data();
            double* pc = sc.cell.data();
            double* ph = sc.hidden.data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows * h, 2048))
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t z0 = r * 4 * h;
                for (std::size_t j = 0; j < 4 * h; ++j) {
                    double z = pzx[z0 + j] + pb[j];
                    if (pzh) z += pzh[z0 + j];
                    // gate order: input, forget, cell, output
                    pg[z0 + j] = j < 2 * h || j >= 3 * h ? detail::stable_sigmoid(z)
                                                         : std::tanh(z);
                }
                for (std::size_t j = 0; j < h; ++j) {
                    const double gi = pg[z0 + j];
                    const double gf = pg[z0 + h + j];
                    const double gg = pg[z0 + 2 * h + j];
                    const double go = pg[z0 + 3 * h + j];
                    const double cprev = pcprev ? pcprev[r * h + j] : 0.0;
                    const double cnew = gf * cprev + gi * gg;
                    pc[r * h + j] = cnew;
                    ph[r * h + j] = go * std::tanh(cnew);
                }
            }
        }
    }
    return cache_.back().back().hidden;
}

std::vector<Tensor> LstmStack::backward(const Tensor& dlast) {
    if (cache_.empty() || cache_.front().empty())
        throw ValueError("lstm backward without a forward");
    const std::size_t steps = cache_.front().size();
    const std::size_t rows = cache_.front().front().hidden.dim(0);
    const std::size_t h = hidden_;
    if (dlast.rank() != 2 || dlast.dim(0) != rows || dlast.dim(1) != h)
        throw ShapeError("lstm backward: got " + dlast.shape_str());

    std::vector<Tensor> dh_ext; // per step, for the layer being processed
    std::vector<Tensor> dx_seq(steps);
    for (std::size_t li = layers_.size(); li-- > 0;) {
        LayerParams& lp = layers_[li];
        const std::size_t d = lp.w_input.dim(0);
        Tensor dh_rec = Tensor::zeros({rows, h});
        Tensor dc = Tensor::zeros({rows, h});
        for (std::size_t t = steps; t-- > 0;) {
            const StepCache& sc = cache_[li][t];
            Tensor dz({rows, 4 * h});
            Tensor dc_prev({rows, h});
            {
                const double* pdh_ext =
                    li + 1 == layers_.size()
                        ? (t + 1 == steps ? dlast.data() : nullptr)
                        : dh_ext[t].data();
                const double* pdh_rec = dh_rec.data();
                const double* pg = sc.gates.data();
                const double* pc = sc.cell.data();
                const double* pcprev = t > 0 ? cache_[li][t - 1].cell.data() : nullptr;
                double* pdz = dz.data();
                double* pdc = dc.data();
                double* pdcp = dc_prev.data();
#pragma omp parallel for schedule(static) if (parallel_worth(rows * h, 2048))
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t z0 = r * 4 * h;
                    for (std::size_t j = 0; j < h; ++j) {
                        const double gi = pg[z0 + j];
                        const double gf = pg[z0 + h + j];
                        const double gg = pg[z0 + 2 * h + j];
                        const double go = pg[z0 + 3 * h + j];
                        const double tc = std::tanh(pc[r * h + j]);
                        double dh = pdh_rec[r * h + j];
                        if (pdh_ext) dh += pdh_ext[r * h + j];
                        const double dcell = pdc[r * h + j] + dh * go * (1.0 - tc * tc);
                        const double cprev = pcprev ? pcprev[r * h + j] : 0.0;
                        pdz[z0 + j] = dcell * gg * gi * (1.0 - gi);
                        pdz[z0 + h + j] = dcell * cprev * gf * (1.0 - gf);
                        pdz[z0 + 2 * h + j] = dcell * gi * (1.0 - gg * gg);
                        pdz[z0 + 3 * h + j] = dh * tc * go * (1.0 - go);
                        pdcp[r * h + j] = dcell * gf;
                    }
                }
            }
            const Tensor& x_t = li == 0 ? sc.input : cache_[li - 1][t].hidden;
            lp.w_input_grad = add(lp.w_input_grad, matmul_tn(x_t, dz));
            if (t > 0)
                lp.w_hidden_grad =
                    add(lp.w_hidden_grad, matmul_tn(cache_[li][t - 1].hidden, dz));
            lp.bias_grad = add(lp.bias_grad, colsum(dz));
            dx_seq[t] = matmul_nt(dz, lp.w_input);
            if (dx_seq[t].dim(1) != d) throw ShapeError("lstm backward dim bug");
            dh_rec = matmul_nt(dz, lp.w_hidden);
            dc = std::move(dc_prev);
        }
        if (li > 0) { // feeds the layer below
            dh_ext = std::move(dx_seq);
            dx_seq.assign(steps, Tensor());
        }
    }
    return dx_seq;
}

void LstmStack::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string name = prefix + ".layer" + std::to_string(l);
        out.push_back({name + ".w_input", &layers_[l].w_input, &layers_[l].w_input_grad, true});
        out.push_back(
            {name + ".w_hidden", &layers_[l].w_hidden, &layers_[l].w_hidden_grad, true});
        out.push_back({name + ".bias", &layers_[l].bias, &layers_[l].bias_grad, false});
    }
}

void LstmStack::init(Rng& rng) {
    for (LayerParams& lp : layers_) {
        glorot_init(lp.w_input, lp.w_input.dim(0), lp.w_input.dim(1), rng);
        glorot_init(lp.w_hidden, lp.w_hidden.dim(0), lp.w_hidden.dim(1), rng);
        lp.bias = Tensor::zeros(lp.bias.shape());
    }
}

// ---------------------------------------------------------------------------
// affine head

FcLayer::FcLayer(std::size_t in_dim, std::size_t out_dim)
    : weight_({in_dim, out_dim}),
      weight_grad_({in_dim, out_dim}),
      bias_({out_dim}),
      bias_grad_({out_dim}) {}

Tensor FcLayer::forward(const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != weight_.dim(0))
        throw ShapeError("fc: want [R x " + std::to_string(weight_.dim(0)) + "], got " +
                         x.shape_str());
    input_cache_ = x;
    return add(matmul(x, weight_), bias_);
}

Tensor FcLayer::backward(const Tensor& dout) {
    if (input_cache_.size() == 0) throw ValueError("fc backward without a forward");
    weight_grad_ = add(weight_grad_, matmul_tn(input_cache_, dout));
    bias_grad_ = add(bias_grad_, colsum(dout));
    return matmul_nt(dout, weight_);
}

void FcLayer::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight_, &weight_grad_, true});
    out.push_back({prefix + ".bias", &bias_, &bias_grad_, false});
}

void FcLayer::init(Rng& rng) {
    glorot_init(weight_, weight_.dim(0), weight_.dim(1), rng);
    bias_ = Tensor::zeros(bias_.shape());
}

} // namespace stgt
