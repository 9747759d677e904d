// Times the parallel kernels against the single-threaded reference ones and
// checks that both produce identical bits. Run with OMP_NUM_THREADS set to
// compare thread counts; sizes roughly match one training batch.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "stgt/reference.hpp"
#include "stgt/rng.hpp"
#include "stgt/tensor.hpp"

namespace {

stgt::Tensor random_tensor(std::vector<std::size_t> shape, stgt::Rng& rng) {
    stgt::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

double max_abs_diff(const stgt::Tensor& a, const stgt::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

// Median-of-runs wall time in milliseconds.
double time_ms(const std::function<stgt::Tensor()>& fn, int runs) {
    double best = 1e300;
    for (int r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        stgt::Tensor out = fn();
        const auto t1 = std::chrono::steady_clock::now();
        // keep the result observable so the call is not optimized away
        volatile double sink = out.size() ? out[0] : 0.0;
        (void)sink;
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void report(const std::string& name, const std::function<stgt::Tensor()>& par,
            const std::function<stgt::Tensor()>& ser, int runs) {
    const stgt::Tensor a = par();
    const stgt::Tensor b = ser();
    const double diff = max_abs_diff(a, b);
    const double tp = time_ms(par, runs);
    const double ts = time_ms(ser, runs);
    std::printf("%-14s parallel %8.3f ms   serial %8.3f ms   speedup %5.2fx   max|diff| %g\n",
                name.c_str(), tp, ts, ts / tp, diff);
}

} // namespace

int main() {
    stgt::Rng rng(7);

    const std::size_t m = 512, k = 256, n = 512;
    const stgt::Tensor a = random_tensor({m, k}, rng);
    const stgt::Tensor b = random_tensor({k, n}, rng);

    const std::size_t batch = 64, nodes = 200, dim = 32;
    const stgt::Tensor p = random_tensor({nodes, nodes}, rng);
    const stgt::Tensor x = random_tensor({batch, nodes, dim}, rng);

    const stgt::Tensor big = random_tensor({2048, 1024}, rng);
    const stgt::Tensor big2 = random_tensor({2048, 1024}, rng);

    report("matmul", [&] { return stgt::matmul(a, b); },
           [&] { return stgt::ref::matmul(a, b); }, 5);
    report("propagate", [&] { return stgt::propagate(p, x); },
           [&] { return stgt::ref::propagate(p, x); }, 5);
    report("elementwise", [&] { return stgt::sigmoid(big); },
           [&] { return stgt::ref::elementwise(stgt::EwOp::sigmoid, big); }, 5);
    report("masked_apply",
           [&] {
               return stgt::masked_apply(big, stgt::Tensor::full({2048, 1024}, 1.0));
           },
           [&] {
               return stgt::ref::masked_apply(big, stgt::Tensor::full({2048, 1024}, 1.0));
           },
           5);
    report("colsum", [&] { return stgt::colsum(big2); },
           [&] { return stgt::ref::colsum(big2); }, 5);
    return 0;
}
