#include "derain/models.hpp"
#include "derain/random.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace derain {

namespace {

template <typename T>
void require_divisible(const char* who, const ag::BasicTensor<T>& x)
{
    if (x.rank() != 4) {
        throw ag::ShapeError(std::string(who) + ": expected N x C x H x W input, got " +
                             ag::shape_str(x.shape()));
    }
    if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
        throw std::invalid_argument(std::string(who) + ": spatial extents " +
                                    std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                                    " must both be divisible by 4");
    }
}

std::string conv_name(const char* part, std::size_t level, int idx)
{
    return std::string(part) + std::to_string(level) + ".conv" + std::to_string(idx);
}

} // namespace

template <typename T>
UNet<T>::UNet(std::string prefix, std::size_t in_channels, std::size_t out_channels,
              std::size_t base_channels, std::size_t depth, std::uint64_t seed)
    : prefix_(std::move(prefix)), in_(in_channels), out_(out_channels), base_(base_channels),
      depth_(depth)
{
    if (depth_ < 1) throw std::invalid_argument("UNet depth must be >= 1");
    if (base_ < 1) throw std::invalid_argument("UNet base channels must be >= 1");
    std::uint64_t layer = 0;
    auto width = [this](std::size_t level) { return base_ << level; };
    for (std::size_t l = 0; l < depth_; ++l) {
        const std::size_t cin = l == 0 ? in_ : width(l - 1);
        add_conv(conv_name("enc", l, 0), cin, width(l), 3, 1.0, derive_seed(seed, layer++));
        add_conv(conv_name("enc", l, 1), width(l), width(l), 3, 1.0, derive_seed(seed, layer++));
    }
    for (std::size_t l = depth_ - 1; l-- > 0;) {
        add_conv(conv_name("dec", l, 0), width(l + 1) + width(l), width(l), 3, 1.0,
                 derive_seed(seed, layer++));
        add_conv(conv_name("dec", l, 1), width(l), width(l), 3, 1.0, derive_seed(seed, layer++));
    }
    // Small output layer: the network starts close to passing `base` through.
    add_conv("out", width(0), out_, 1, 0.1, derive_seed(seed, layer++));
}

template <typename T>
void UNet<T>::add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                       double scale, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    const double fan_in = static_cast<double>(cin * k * k);
    const double stddev = scale * std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
    std::normal_distribution<double> gauss(0.0, stddev);
    std::vector<T> w(cout * cin * k * k);
    for (auto& v : w) v = static_cast<T>(gauss(rng));
    weights_.add(prefix_ + name + ".weight", ag::BasicTensor<T>({cout, cin, k, k}, std::move(w), true));
    weights_.add(prefix_ + name + ".bias", ag::BasicTensor<T>::zeros({cout}, true));
}

template <typename T>
ag::BasicTensor<T> UNet<T>::conv(const std::string& name, const ag::BasicTensor<T>& x) const
{
    const auto& w = weights_.at(prefix_ + name + ".weight");
    const auto& b = weights_.at(prefix_ + name + ".bias");
    return ag::conv2d(x, w, b, 1, w.dim(2) / 2);
}

template <typename T>
ag::BasicTensor<T> UNet<T>::forward(const ag::BasicTensor<T>& x,
                                    const ag::BasicTensor<T>& base) const
{
    if (x.rank() != 4 || x.dim(1) != in_) {
        throw ag::ShapeError("UNet " + prefix_ + ": expected " + std::to_string(in_) +
                             " input channels, got " + ag::shape_str(x.shape()));
    }
    const T slope = static_cast<T>(kLeakySlope);
    auto act = [slope](const ag::BasicTensor<T>& t) { return ag::leaky_relu(t, slope); };

    std::vector<ag::BasicTensor<T>> skips;
    ag::BasicTensor<T> h = x;
    for (std::size_t l = 0; l < depth_; ++l) {
        if (l > 0) h = ag::max_pool2d(h);
        h = act(conv(conv_name("enc", l, 0), h));
        h = act(conv(conv_name("enc", l, 1), h));
        skips.push_back(h);
    }
    for (std::size_t l = depth_ - 1; l-- > 0;) {
        h = ag::concat_channels<T>({ag::upsample_nearest2x(h), skips[l]});
        h = act(conv(conv_name("dec", l, 0), h));
        h = act(conv(conv_name("dec", l, 1), h));
    }
    const auto delta = conv("out", h);
    return ag::sigmoid(ag::add(ag::logit(base, static_cast<T>(kLogitEps)), delta));
}

template <typename T>
SpatialDenoiser<T>::SpatialDenoiser(std::size_t channels, std::size_t base_channels,
                                    std::uint64_t seed)
    : channels_(channels), net_("", channels, channels, base_channels, kDepth, seed)
{
}

template <typename T>
ag::BasicTensor<T> SpatialDenoiser<T>::forward(const ag::BasicTensor<T>& x) const
{
    require_divisible("spatial denoiser", x);
    return net_.forward(x, x);
}

template <typename T>
void SpatialDenoiser<T>::set_trainable(bool on)
{
    for (auto& e : net_.weights()) e.tensor.set_requires_grad(on);
}

template <typename T>
TemporalDenoiser<T>::TemporalDenoiser(std::size_t channels, std::size_t base_channels,
                                      std::uint64_t seed)
    : channels_(channels),
      block1_("block1.", 3 * channels, channels, base_channels, kBlockDepth, derive_seed(seed, 1)),
      block2_("block2.", 3 * channels, channels, base_channels, kBlockDepth, derive_seed(seed, 2))
{
}

template <typename T>
ag::BasicTensor<T> TemporalDenoiser<T>::forward(std::span<const ag::BasicTensor<T>> window) const
{
    if (window.size() != kWindow) {
        throw std::invalid_argument("temporal denoiser needs exactly 5 frames, got " +
                                    std::to_string(window.size()));
    }
    for (const auto& f : window) {
        require_divisible("temporal denoiser", f);
        if (f.shape() != window[0].shape()) {
            throw ag::ShapeError("temporal denoiser: window frames differ in shape " +
                                 ag::shape_str(window[0].shape()) + " vs " +
                                 ag::shape_str(f.shape()));
        }
    }
    std::vector<ag::BasicTensor<T>> mid;
    for (std::size_t i = 0; i < 3; ++i) {
        mid.push_back(block1_.forward(
            ag::concat_channels<T>({window[i], window[i + 1], window[i + 2]}), window[i + 1]));
    }
    return block2_.forward(ag::concat_channels<T>(mid), mid[1]);
}

template <typename T>
ModelWeights<T> TemporalDenoiser<T>::weights() const
{
    ModelWeights<T> all;
    for (const auto& e : block1_.weights()) all.add(e.name, e.tensor);
    for (const auto& e : block2_.weights()) all.add(e.name, e.tensor);
    return all;
}

template <typename T>
void TemporalDenoiser<T>::set_trainable(bool on)
{
    for (auto& e : block1_.weights()) e.tensor.set_requires_grad(on);
    for (auto& e : block2_.weights()) e.tensor.set_requires_grad(on);
}

template <typename T>
void TemporalDenoiser<T>::assign_from(const ModelWeights<T>& src)
{
    block1_.weights().assign_from(src);
    block2_.weights().assign_from(src);
}

template class UNet<float>;
template class UNet<double>;
template class SpatialDenoiser<float>;
template class SpatialDenoiser<double>;
template class TemporalDenoiser<float>;
template class TemporalDenoiser<double>;

Frame spatial_forward(const SpatialDenoiser<float>& net, const Frame& frame)
{
    ag::NoGradGuard no_grad;
    const auto out = net.forward(frames_to_tensor<float>(std::span<const Frame>(&frame, 1)));
    return tensor_to_frame(out, 0, Provenance::model);
}

Frame temporal_forward(const TemporalDenoiser<float>& net, std::span<const Frame> window)
{
    if (window.size() != TemporalDenoiser<float>::kWindow) {
        throw std::invalid_argument("temporal denoiser needs exactly 5 frames, got " +
                                    std::to_string(window.size()));
    }
    ag::NoGradGuard no_grad;
    std::vector<ag::Tensor> tensors;
    for (const auto& f : window) tensors.push_back(frames_to_tensor<float>(std::span<const Frame>(&f, 1)));
    return tensor_to_frame(net.forward(tensors), 0, Provenance::model);
}

FrameSequence derain_sequence(const SpatialDenoiser<float>& spatial,
                              const TemporalDenoiser<float>* temporal, const FrameSequence& seq,
                              DerainMode mode, DerainStats* stats)
{
    if (seq.empty()) throw std::invalid_argument("derain_sequence: empty sequence");
    if (mode == DerainMode::full && temporal == nullptr) {
        throw std::invalid_argument("derain_sequence: full mode needs a temporal denoiser");
    }
    std::vector<Frame> stage1;
    stage1.reserve(seq.size());
    for (const auto& f : seq) {
        stage1.push_back(spatial_forward(spatial, f));
        if (stats) ++stats->spatial_calls;
    }
    if (mode == DerainMode::spatial_only) return FrameSequence(std::move(stage1), seq.source(), seq.fps());

    const auto last = static_cast<long>(seq.size()) - 1;
    std::vector<Frame> out;
    out.reserve(seq.size());
    for (long n = 0; n <= last; ++n) {
        std::vector<Frame> window;
        for (long k = -2; k <= 2; ++k) window.push_back(stage1[std::clamp(n + k, 0L, last)]);
        out.push_back(temporal_forward(*temporal, window));
        if (stats) ++stats->temporal_calls;
    }
    return FrameSequence(std::move(out), seq.source(), seq.fps());
}

namespace {

void add_meta(Weights& out, const std::string& prefix, const std::string& key, float value)
{
    out.add(prefix + "meta." + key, ag::Tensor::scalar(value));
}

std::size_t read_meta(const Weights& w, const std::string& prefix, const std::string& key)
{
    const std::string name = prefix + "meta." + key;
    if (!w.contains(name)) throw std::runtime_error("weights file lacks " + name);
    return static_cast<std::size_t>(std::lround(w.at(name).item()));
}

} // namespace

void export_model(Weights& out, const SpatialDenoiser<float>& net)
{
    add_meta(out, "spatial.", "channels", static_cast<float>(net.channels()));
    add_meta(out, "spatial.", "base_channels", static_cast<float>(net.base_channels()));
    add_meta(out, "spatial.", "depth", static_cast<float>(SpatialDenoiser<float>::kDepth));
    for (const auto& e : net.weights()) out.add("spatial." + e.name, e.tensor.detach());
}

void export_model(Weights& out, const TemporalDenoiser<float>& net)
{
    add_meta(out, "temporal.", "channels", static_cast<float>(net.channels()));
    add_meta(out, "temporal.", "base_channels", static_cast<float>(net.base_channels()));
    add_meta(out, "temporal.", "depth", static_cast<float>(TemporalDenoiser<float>::kBlockDepth));
    for (const auto& e : net.weights()) out.add("temporal." + e.name, e.tensor.detach());
}

bool has_spatial(const Weights& w) { return w.contains("spatial.meta.channels"); }
bool has_temporal(const Weights& w) { return w.contains("temporal.meta.channels"); }

SpatialDenoiser<float> import_spatial(const Weights& w)
{
    if (read_meta(w, "spatial.", "depth") != SpatialDenoiser<float>::kDepth) {
        throw std::runtime_error("spatial weights have unsupported depth");
    }
    SpatialDenoiser<float> net(read_meta(w, "spatial.", "channels"),
                               read_meta(w, "spatial.", "base_channels"));
    net.weights().assign_from(w, "spatial.");
    return net;
}

TemporalDenoiser<float> import_temporal(const Weights& w)
{
    if (read_meta(w, "temporal.", "depth") != TemporalDenoiser<float>::kBlockDepth) {
        throw std::runtime_error("temporal weights have unsupported depth");
    }
    TemporalDenoiser<float> net(read_meta(w, "temporal.", "channels"),
                                read_meta(w, "temporal.", "base_channels"));
    Weights stripped;
    for (const auto& e : w) {
        if (e.name.rfind("temporal.", 0) == 0) stripped.add(e.name.substr(9), e.tensor);
    }
    net.assign_from(stripped);
    return net;
}

} // namespace derain
