#pragma once

// Shared oracles for the unit and acceptance suites: a direct-loop
// convolution and a central finite-difference gradient checker.

#include "derain/frame.hpp"
#include "derain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace derain::test_support {

template <typename T>
ag::BasicTensor<T> random_tensor(const ag::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = false)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> data(ag::shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return ag::BasicTensor<T>(shape, std::move(data), requires_grad);
}

/// Values spaced at least `gap` apart (after a random shuffle), so that
/// max-pool winners and ReLU signs cannot flip under a small perturbation.
inline ag::TensorD separated_tensor(const ag::Shape& shape, std::mt19937_64& rng, double gap = 0.05,
                                    bool requires_grad = true)
{
    const auto n = ag::shape_numel(shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = (static_cast<double>(i) - n / 2.0 + 0.5) * gap;
    std::shuffle(data.begin(), data.end(), rng);
    return ag::TensorD(shape, std::move(data), requires_grad);
}

/// Direct 7-loop convolution with zero padding.
inline std::vector<double> naive_conv2d(const std::vector<double>& in, std::size_t N, std::size_t Cin,
                                        std::size_t H, std::size_t W, const std::vector<double>& w,
                                        std::size_t Cout, std::size_t kh, std::size_t kw,
                                        const std::vector<double>& bias, std::size_t stride,
                                        std::size_t pad, std::size_t& Ho, std::size_t& Wo)
{
    Ho = (H + 2 * pad - kh) / stride + 1;
    Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(N * Cout * Ho * Wo, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double acc = bias[co];
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky)
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                                acc += in[((n * Cin + ci) * H + iy) * W + ix] *
                                       w[((co * Cin + ci) * kh + ky) * kw + kx];
                            }
                    out[((n * Cout + co) * Ho + oy) * Wo + ox] = acc;
                }
    return out;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Location and values of the worst element, for diagnostics.
    std::size_t worst_leaf = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares analytic gradients of the scalar `loss(leaves)` against central
/// differences for every element of every leaf. The relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradCheckResult gradient_check(const std::function<ag::TensorD()>& loss,
                                      std::vector<ag::TensorD> leaves, double h = 1e-3,
                                      double floor = 1e-6)
{
    for (auto& leaf : leaves) leaf.zero_grad();
    loss().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves) {
        if (leaf.has_grad()) {
            analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
        } else {
            analytic.emplace_back(leaf.numel(), 0.0);
        }
    }

    GradCheckResult result;
    ag::NoGradGuard no_grad;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        auto data = leaves[l].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = loss().item();
            data[i] = saved - h;
            const double down = loss().item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[l][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            const double err = std::abs(a - numeric) / denom;
            if (err > result.max_rel_error) {
                result = {err, result.checked, l, i, a, numeric};
            }
            ++result.checked;
        }
    }
    return result;
}

/// sum(x * r) for a fixed random r: a scalar that weights every output element.
inline ag::TensorD project(const ag::TensorD& x, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return ag::sum(ag::mul(x, random_tensor<double>(x.shape(), rng, 0.5, 1.5)));
}

inline Frame random_frame(FrameShape shape, std::uint64_t seed, Provenance p = Provenance::clean)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> px(shape.size());
    for (auto& v : px) v = dist(rng);
    return Frame(shape, std::move(px), p);
}

} // namespace derain::test_support
