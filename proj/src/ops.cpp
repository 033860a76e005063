#include "derain/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace derain::ag {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using BackwardFn = std::function<void(const std::vector<T>&)>;

// Builds the output tensor; history is attached only if some input needs it.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs,
                           BackwardFn<T> backward)
{
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    const bool track = GradMode::enabled() && std::any_of(inputs.begin(), inputs.end(),
                                   [](const NodePtr<T>& n) { return n->requires_grad; });
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(inputs);
        node->backward_fn = std::move(backward);
    }
    return BasicTensor<T>::from_node(std::move(node));
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <typename T>
void require_image(const char* op, const BasicTensor<T>& x)
{
    if (x.rank() != 4) {
        throw ShapeError(std::string(op) + ": expected N x C x H x W tensor, got " +
                         shape_str(x.shape()));
    }
}

// Elementwise unary op with derivative expressed through the input value.
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const BasicTensor<T>& x, Fwd fwd, Deriv deriv)
{
    const auto in = x.data();
    std::vector<T> out(in.size());
    std::transform(in.begin(), in.end(), out.begin(), fwd);
    auto xn = x.node();
    return make_result<T>(x.shape(), std::move(out), {xn},
                          [xn, deriv](const std::vector<T>& g) {
                              auto& gx = xn->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  gx[i] += g[i] * deriv(xn->data[i]);
                              }
                          });
}

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, kh, kw, stride, pad, hout, wout;
    std::size_t patch() const { return cin * kh * kw; }
    std::size_t pixels() const { return hout * wout; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols)
{
    const std::size_t p = g.pixels();
    for (std::size_t c = 0; c < g.cin; ++c) {
        const T* plane = img + c * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * g.wout;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wout, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                                      ? T(0)
                                      : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img)
{
    const std::size_t p = g.pixels();
    for (std::size_t c = 0; c < g.cin; ++c) {
        T* plane = img + c * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.hout; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    const T* src = row + oy * g.wout;
                    for (std::size_t ox = 0; ox < g.wout; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding)
{
    require_image("conv2d", input);
    if (weight.rank() != 4) {
        throw ShapeError("conv2d: weight must be Cout x Cin x kh x kw, got " +
                         shape_str(weight.shape()));
    }
    if (input.dim(1) != weight.dim(1)) {
        throw ShapeError("conv2d: input " + shape_str(input.shape()) +
                         " channel count does not match weight " + shape_str(weight.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");

    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                   weight.dim(2), weight.dim(3), stride, padding, 0, 0};
    if (g.kh % 2 == 0 || g.kw % 2 == 0) {
        throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(weight.shape()));
    }
    if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
        throw ShapeError("conv2d: padded input " + shape_str(input.shape()) +
                         " is smaller than kernel " + shape_str(weight.shape()));
    }
    if ((g.h + 2 * padding - g.kh) % stride != 0 || (g.w + 2 * padding - g.kw) % stride != 0) {
        throw ShapeError("conv2d: stride " + std::to_string(stride) +
                         " does not tile padded input " + shape_str(input.shape()) + " exactly");
    }
    g.hout = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wout = (g.w + 2 * padding - g.kw) / stride + 1;

    const std::size_t in_img = g.cin * g.h * g.w;
    const std::size_t out_img = g.cout * g.pixels();
    std::vector<T> out(g.n * out_img);
    std::vector<T> cols(g.patch() * g.pixels());

    Eigen::Map<const RowMat<T>> wmat(weight.data().data(), g.cout, g.patch());
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data().data(), g.cout);
    for (std::size_t b = 0; b < g.n; ++b) {
        im2col(input.data().data() + b * in_img, g, cols.data());
        Eigen::Map<const RowMat<T>> cmat(cols.data(), g.patch(), g.pixels());
        Eigen::Map<RowMat<T>> omat(out.data() + b * out_img, g.cout, g.pixels());
        omat.noalias() = wmat * cmat;
        omat.colwise() += bvec;
    }

    auto xn = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    return make_result<T>(
        Shape{g.n, g.cout, g.hout, g.wout}, std::move(out), {xn, wn, bn},
        [xn, wn, bn, g, in_img, out_img](const std::vector<T>& grad) {
            std::vector<T> cols(g.patch() * g.pixels());
            Eigen::Map<const RowMat<T>> wmat(wn->data.data(), g.cout, g.patch());
            for (std::size_t b = 0; b < g.n; ++b) {
                Eigen::Map<const RowMat<T>> gout(grad.data() + b * out_img, g.cout, g.pixels());
                if (wn->requires_grad) {
                    im2col(xn->data.data() + b * in_img, g, cols.data());
                    Eigen::Map<const RowMat<T>> cmat(cols.data(), g.patch(), g.pixels());
                    Eigen::Map<RowMat<T>> gw(wn->grad_buffer().data(), g.cout, g.patch());
                    gw.noalias() += gout * cmat.transpose();
                }
                if (bn->requires_grad) {
                    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(bn->grad_buffer().data(),
                                                                        g.cout);
                    gb += gout.rowwise().sum();
                }
                if (xn->requires_grad) {
                    Eigen::Map<RowMat<T>> dcols(cols.data(), g.patch(), g.pixels());
                    dcols.noalias() = wmat.transpose() * gout;
                    col2im_add(cols.data(), g, xn->grad_buffer().data() + b * in_img);
                }
            }
        });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x)
{
    return unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope)
{
    return unary(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
static T stable_sigmoid(T v)
{
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x)
{
    return unary(
        x, [](T v) { return stable_sigmoid(v); },
        [](T v) {
            const T s = stable_sigmoid(v);
            return s * (T(1) - s);
        });
}

template <typename T>
BasicTensor<T> logit(const BasicTensor<T>& p, T eps)
{
    if (!(eps > T(0) && eps < T(0.5))) throw std::invalid_argument("logit: eps must be in (0, 0.5)");
    return unary(
        p,
        [eps](T v) {
            const T q = std::clamp(v, eps, T(1) - eps);
            return std::log(q / (T(1) - q));
        },
        [eps](T v) { return (v > eps && v < T(1) - eps) ? T(1) / (v * (T(1) - v)) : T(0); });
}

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x)
{
    require_image("max_pool2d", x);
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("max_pool2d: spatial extents must be even, got " + shape_str(x.shape()));
    }
    const std::size_t ho = h / 2, wo = w / 2;
    const auto in = x.data();
    std::vector<T> out(n * c * ho * wo);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t p = 0; p < n * c; ++p) {
        const std::size_t ibase = p * h * w;
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t xo = 0; xo < wo; ++xo) {
                std::size_t best = ibase + (2 * y) * w + 2 * xo;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = ibase + (2 * y + dy) * w + 2 * xo + dx;
                        if (in[idx] > in[best]) best = idx;
                    }
                }
                const std::size_t o = (p * ho + y) * wo + xo;
                out[o] = in[best];
                argmax[o] = best;
            }
        }
    }
    auto xn = x.node();
    return make_result<T>(Shape{n, c, ho, wo}, std::move(out), {xn},
                          [xn, argmax = std::move(argmax)](const std::vector<T>& g) {
                              auto& gx = xn->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                          });
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x)
{
    require_image("upsample_nearest2x", x);
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = 2 * h, wo = 2 * w;
    const auto in = x.data();
    std::vector<T> out(n * c * ho * wo);
    for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t y = 0; y < ho; ++y) {
            const T* src = in.data() + p * h * w + (y / 2) * w;
            T* dst = out.data() + (p * ho + y) * wo;
            for (std::size_t xo = 0; xo < wo; ++xo) dst[xo] = src[xo / 2];
        }
    }
    auto xn = x.node();
    return make_result<T>(Shape{n, c, ho, wo}, std::move(out), {xn},
                          [xn, n, c, h, w](const std::vector<T>& g) {
                              auto& gx = xn->grad_buffer();
                              const std::size_t ho = 2 * h, wo = 2 * w;
                              for (std::size_t p = 0; p < n * c; ++p) {
                                  for (std::size_t y = 0; y < ho; ++y) {
                                      T* dst = gx.data() + p * h * w + (y / 2) * w;
                                      const T* src = g.data() + (p * ho + y) * wo;
                                      for (std::size_t xo = 0; xo < wo; ++xo) dst[xo / 2] += src[xo];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts)
{
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    for (const auto& p : parts) require_image("concat_channels", p);
    const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    std::size_t ctotal = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw ShapeError("concat_channels: shape mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
        ctotal += p.dim(1);
    }
    const std::size_t plane = h * w;
    std::vector<T> out(n * ctotal * plane);
    std::vector<NodePtr<T>> nodes;
    std::vector<std::size_t> offsets;
    std::size_t coff = 0;
    for (const auto& p : parts) {
        const std::size_t block = p.dim(1) * plane;
        for (std::size_t b = 0; b < n; ++b) {
            std::copy_n(p.data().data() + b * block, block,
                        out.data() + (b * ctotal + coff) * plane);
        }
        nodes.push_back(p.node());
        offsets.push_back(coff);
        coff += p.dim(1);
    }
    auto inputs = nodes;
    return make_result<T>(
        Shape{n, ctotal, h, w}, std::move(out), std::move(inputs),
        [nodes, offsets, n, ctotal, plane](const std::vector<T>& g) {
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (!nodes[i]->requires_grad) continue;
                auto& gx = nodes[i]->grad_buffer();
                const std::size_t c = nodes[i]->shape[1];
                const std::size_t block = c * plane;
                for (std::size_t b = 0; b < n; ++b) {
                    const T* src = g.data() + (b * ctotal + offsets[i]) * plane;
                    T* dst = gx.data() + b * block;
                    for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
                }
            }
        });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    require_same_shape("add", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](const std::vector<T>& g) {
        for (auto* n : {an.get(), bn.get()}) {
            if (!n->requires_grad) continue;
            auto& gx = n->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
    });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    require_same_shape("sub", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](const std::vector<T>& g) {
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    require_same_shape("mul", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](const std::vector<T>& g) {
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
        }
    });
}

template <typename T>
BasicTensor<T> scalar_mul(const BasicTensor<T>& x, T factor)
{
    return unary(x, [factor](T v) { return factor * v; }, [factor](T) { return factor; });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x)
{
    T total = T(0);
    for (T v : x.data()) total += v;
    auto xn = x.node();
    return make_result<T>(Shape{1}, {total}, {xn}, [xn](const std::vector<T>& g) {
        auto& gx = xn->grad_buffer();
        for (auto& v : gx) v += g[0];
    });
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    require_same_shape("mse", a, b);
    const std::size_t n = a.numel();
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a.data()[i] - b.data()[i];
        total += d * d;
    }
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>(Shape{1}, {total / static_cast<T>(n)}, {an, bn},
                          [an, bn, n](const std::vector<T>& g) {
                              const T scale = T(2) * g[0] / static_cast<T>(n);
                              if (an->requires_grad) {
                                  auto& ga = an->grad_buffer();
                                  for (std::size_t i = 0; i < n; ++i)
                                      ga[i] += scale * (an->data[i] - bn->data[i]);
                              }
                              if (bn->requires_grad) {
                                  auto& gb = bn->grad_buffer();
                                  for (std::size_t i = 0; i < n; ++i)
                                      gb[i] -= scale * (an->data[i] - bn->data[i]);
                              }
                          });
}

#define DERAIN_INSTANTIATE_OPS(T)                                                              \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                   const BasicTensor<T>&, std::size_t, std::size_t);           \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                        \
    template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                               \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                     \
    template BasicTensor<T> logit(const BasicTensor<T>&, T);                                    \
    template BasicTensor<T> max_pool2d(const BasicTensor<T>&);                                  \
    template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                          \
    template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> scalar_mul(const BasicTensor<T>&, T);                               \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                         \
    template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);

DERAIN_INSTANTIATE_OPS(float)
DERAIN_INSTANTIATE_OPS(double)

#undef DERAIN_INSTANTIATE_OPS

} // namespace derain::ag
