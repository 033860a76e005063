#include "derain/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace derain {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamOptions& opts, long step)
{
    if (step < 1) throw std::invalid_argument("adam step index must be >= 1");
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw std::invalid_argument("adam buffers must match parameter size");
    }
    const T b1 = static_cast<T>(opts.beta1);
    const T b2 = static_cast<T>(opts.beta2);
    const T lr = static_cast<T>(opts.lr);
    const T eps = static_cast<T>(opts.eps);
    const T c1 = T(1) - static_cast<T>(std::pow(opts.beta1, static_cast<double>(step)));
    const T c2 = T(1) - static_cast<T>(std::pow(opts.beta2, static_cast<double>(step)));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
        const T mhat = m[i] / c1;
        const T vhat = v[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template <typename T>
Adam<T>::Adam(std::vector<ag::BasicTensor<T>> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), T(0));
        v_.emplace_back(p.numel(), T(0));
        names_.push_back("#" + std::to_string(names_.size()));
    }
}

template <typename T>
Adam<T>::Adam(const ModelWeights<T>& weights, AdamOptions opts) : Adam(weights.tensors(), opts)
{
    names_.clear();
    for (const auto& e : weights) names_.push_back(e.name);
}

template <typename T>
void Adam<T>::step()
{
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) {
            throw std::logic_error("adam: parameter '" + names_[i] + "' " +
                                   ag::shape_str(params_[i].shape()) + " has no gradient");
        }
    }
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        adam_update<T>(params_[i].mutable_data(), params_[i].grad(), m_[i], v_[i], opts_, t_);
    }
}

template <typename T>
void Adam<T>::zero_grad()
{
    for (auto& p : params_) p.zero_grad();
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                 std::span<float>, const AdamOptions&, long);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                  std::span<double>, const AdamOptions&, long);
template class Adam<float>;
template class Adam<double>;

} // namespace derain
