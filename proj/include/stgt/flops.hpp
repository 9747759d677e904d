#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stgt/model.hpp"

namespace stgt {

/// One counted unit of compute, measured in multiply-accumulates per
/// evaluation. `count` is how many evaluations one forward pass performs.
/// Extended terms (fixed graph propagation, attention scoring) are
/// reported but excluded from the prunable dense total.
struct FlopsTerm {
    std::string name;
    double macs = 0.0;
    double count = 1.0;
    bool extended = false;

    double total() const { return macs * count; }
};

class FlopsModel {
public:
    void add_term(const std::string& name, double macs, double count, bool extended);
    /// fully connected: in * out multiply-accumulates
    void add_fc(const std::string& name, std::size_t in, std::size_t out,
                double count = 1.0, bool extended = false);
    /// 2d convolution: lh * lw * cin * cout * k^2
    void add_conv(const std::string& name, std::size_t lh, std::size_t lw,
                  std::size_t cin, std::size_t cout, std::size_t k, double count = 1.0,
                  bool extended = false);

    const std::vector<FlopsTerm>& terms() const { return terms_; }
    double dense_total() const;    // prunable macs per forward pass
    double extended_total() const; // fixed-structure macs per forward pass

private:
    std::vector<FlopsTerm> terms_;
};

double sparse_flops(double dense, double sparsity); // dense * (1 - sparsity)

/// Average cost of one training iteration: every iteration runs a sparse
/// forward and backward, and one in `update_interval + 1` swaps the sparse
/// backward for a dense one to score regrowth candidates.
double amortized_training_flops(double dense, double sparsity, double update_interval);

double dense_training_flops(double dense); // forward plus two backward passes

/// amortized sparse cost over the dense training cost; depends only on the
/// sparsity and the event interval
double flops_ratio(double sparsity, double update_interval);

/// Compute model for this architecture, per window. `propagation_nnz` is
/// the nonzero count of the normalized adjacency (used by the gcn
/// propagation term and the gat neighborhood terms).
FlopsModel model_flops(const ModelConfig& cfg, std::size_t nodes,
                       std::size_t propagation_nnz);

void write_flops_report(const std::string& path, const FlopsModel& model,
                        double sparsity, double update_interval);

} // namespace stgt
