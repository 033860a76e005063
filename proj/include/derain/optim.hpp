#pragma once

#include "derain/tensor.hpp"
#include "derain/weights.hpp"

#include <span>
#include <string>
#include <vector>

namespace derain {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamOptions& opts, long step);

/// Adam over a fixed parameter list; moment buffers persist across steps.
template <typename T>
class Adam {
public:
    Adam(std::vector<ag::BasicTensor<T>> params, AdamOptions opts);
    /// Parameters keep their names for error messages.
    Adam(const ModelWeights<T>& weights, AdamOptions opts);

    /// Applies one update using each parameter's current gradient.
    /// Throws if any parameter has no gradient.
    void step();
    void zero_grad();

    long steps() const { return t_; }
    const AdamOptions& options() const { return opts_; }

private:
    std::vector<ag::BasicTensor<T>> params_;
    std::vector<std::string> names_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    AdamOptions opts_;
    long t_ = 0;
};

} // namespace derain
