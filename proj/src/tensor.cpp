#include "derain/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace derain::ag {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool on) { grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

namespace detail {

template <typename T>
std::vector<T>& Node<T>::grad_buffer()
{
    if (!grad) grad.emplace(data.size(), T(0));
    return *grad;
}

} // namespace detail

template <typename T>
BasicTensor<T>::BasicTensor() : BasicTensor(Shape{1}, std::vector<T>{T(0)})
{
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>())
{
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements but data has " +
                         std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad)
{
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad)
{
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const
{
    if (axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
    }
    return node_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const
{
    if (numel() != 1) {
        throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    }
    return node_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on)
{
    if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = on;
    if (!on) node_->grad.reset();
    return *this;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const
{
    if (!node_->grad) throw std::logic_error("tensor has no gradient");
    return *node_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const
{
    return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(std::shared_ptr<detail::Node<T>> node)
{
    BasicTensor t;
    t.node_ = std::move(node);
    return t;
}

template <typename T>
void BasicTensor<T>::backward() const
{
    using NodeT = detail::Node<T>;
    if (numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (node_->consumed) {
        throw std::logic_error("graph already consumed by a previous backward pass");
    }
    if (!node_->requires_grad) {
        throw std::logic_error("loss does not depend on any tensor that requires grad");
    }

    // Iterative post-order DFS: every node lands after all of its parents.
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* parent = node->parents[next++].get();
            if (parent->consumed) {
                throw std::logic_error("graph already consumed by a previous backward pass");
            }
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (node->backward_fn) node->backward_fn(node->grad_buffer());
    }

    for (NodeT* node : order) {
        if (node->is_leaf()) continue;
        node->backward_fn = nullptr;
        node->parents.clear();
        node->consumed = true;
    }
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;

} // namespace derain::ag
