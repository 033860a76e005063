#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace derain::ag {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Raised for any operand shape that an operation cannot accept.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thread-local switch for graph recording. When disabled, operations
/// produce plain tensors even if their inputs require gradients.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::optional<std::vector<T>> grad;
    bool requires_grad = false;
    bool consumed = false;

    // Empty for leaves. Parents are the saved inputs kept alive until backward.
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const std::vector<T>& out_grad)> backward_fn;

    bool is_leaf() const { return !backward_fn && parents.empty(); }
    std::vector<T>& grad_buffer();
};

} // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A BasicTensor is a cheap handle; copies share the underlying node. Every
/// operation whose inputs require gradients records its inputs and a backward
/// closure on the output node. The set of nodes reachable from a scalar loss
/// is the graph that `backward()` walks once, in reverse topological order,
/// after which the graph is released and marked consumed.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor();
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    // Writing through this on a tensor that is an input of a live graph
    // invalidates the saved values of that graph.
    std::span<T> mutable_data() { return node_->data; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    BasicTensor& set_requires_grad(bool on);

    bool has_grad() const { return node_->grad.has_value(); }
    std::span<const T> grad() const;
    void zero_grad() { node_->grad.reset(); }

    bool is_leaf() const { return node_->is_leaf(); }

    /// Fresh leaf holding a copy of the data and no gradient history.
    BasicTensor detach() const;

    /// Back-propagates from this scalar through the recorded graph.
    /// Gradients accumulate into every reachable tensor that requires them.
    void backward() const;

    // Internal: used by the op implementations.
    const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
    static BasicTensor from_node(std::shared_ptr<detail::Node<T>> node);

private:
    std::shared_ptr<detail::Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// ---------------------------------------------------------------------------
// Operations. Image tensors use N x C x H x W layout.

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride = 1,
                      std::size_t padding = 0);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
// log(p / (1 - p)) with p clamped to [eps, 1 - eps]; zero gradient where clamped.
template <typename T> BasicTensor<T> logit(const BasicTensor<T>& p, T eps);

template <typename T> BasicTensor<T> max_pool2d(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scalar_mul(const BasicTensor<T>& x, T factor);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

} // namespace derain::ag
