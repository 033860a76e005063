#pragma once

#include "derain/frame.hpp"
#include "derain/tensor.hpp"
#include "derain/weights.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace derain {

inline constexpr double kLeakySlope = 0.1;
// Inputs are clamped to [eps, 1 - eps] before the logit skip connection.
inline constexpr double kLogitEps = 1e-3;

/// Encoder/decoder convolutional network with skip connections, max-pool
/// downsampling and nearest-neighbour upsampling. The output is
/// sigmoid(logit(base) + delta(x)), so it always lies in (0, 1) and equals
/// `base` when the last layer emits zero.
template <typename T>
class UNet {
public:
    UNet(std::string prefix, std::size_t in_channels, std::size_t out_channels,
         std::size_t base_channels, std::size_t depth, std::uint64_t seed);

    ag::BasicTensor<T> forward(const ag::BasicTensor<T>& x, const ag::BasicTensor<T>& base) const;

    std::size_t depth() const { return depth_; }
    std::size_t base_channels() const { return base_; }
    ModelWeights<T>& weights() { return weights_; }
    const ModelWeights<T>& weights() const { return weights_; }

private:
    void add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                  double scale, std::uint64_t seed);
    ag::BasicTensor<T> conv(const std::string& name, const ag::BasicTensor<T>& x) const;

    std::string prefix_;
    std::size_t in_;
    std::size_t out_;
    std::size_t base_;
    std::size_t depth_;
    ModelWeights<T> weights_;
};

/// Per-frame denoiser: a 3-scale UNet mapping one frame to one frame.
template <typename T>
class SpatialDenoiser {
public:
    static constexpr std::size_t kDepth = 3;

    explicit SpatialDenoiser(std::size_t channels, std::size_t base_channels = 16,
                             std::uint64_t seed = 0);

    /// x: N x C x H x W with H, W divisible by 4.
    ag::BasicTensor<T> forward(const ag::BasicTensor<T>& x) const;

    std::size_t channels() const { return channels_; }
    std::size_t base_channels() const { return net_.base_channels(); }
    ModelWeights<T>& weights() { return net_.weights(); }
    const ModelWeights<T>& weights() const { return net_.weights(); }
    void set_trainable(bool on);

private:
    std::size_t channels_;
    UNet<T> net_;
};

/// Two-block cascade over a 5-frame window. Block 1 (shared weights) sees
/// the triplets (f1 f2 f3), (f2 f3 f4), (f3 f4 f5); block 2 fuses the three
/// intermediate frames into the estimate of f3.
template <typename T>
class TemporalDenoiser {
public:
    static constexpr std::size_t kBlockDepth = 2;
    static constexpr std::size_t kWindow = 5;

    explicit TemporalDenoiser(std::size_t channels, std::size_t base_channels = 16,
                              std::uint64_t seed = 0);

    /// window: exactly 5 tensors, each N x C x H x W with H, W divisible by 4.
    ag::BasicTensor<T> forward(std::span<const ag::BasicTensor<T>> window) const;

    std::size_t channels() const { return channels_; }
    std::size_t base_channels() const { return block1_.base_channels(); }
    /// Both blocks' tensors, prefixed "block1." and "block2.".
    ModelWeights<T> weights() const;
    void set_trainable(bool on);
    void assign_from(const ModelWeights<T>& src);

private:
    std::size_t channels_;
    UNet<T> block1_;
    UNet<T> block2_;
};

// Frame-level entry points (32-bit inference).

Frame spatial_forward(const SpatialDenoiser<float>& net, const Frame& frame);
Frame temporal_forward(const TemporalDenoiser<float>& net, std::span<const Frame> window);

enum class DerainMode { spatial_only, full };

struct DerainStats {
    std::size_t spatial_calls = 0;
    std::size_t temporal_calls = 0;
};

/// Runs the spatial stage once per frame, then (in full mode) the temporal
/// stage on each 5-frame window of spatial outputs, replicating edge frames
/// at the boundaries. Output length equals input length.
FrameSequence derain_sequence(const SpatialDenoiser<float>& spatial,
                              const TemporalDenoiser<float>* temporal, const FrameSequence& seq,
                              DerainMode mode = DerainMode::full, DerainStats* stats = nullptr);

// Weight files hold "spatial." and "temporal." tensors plus hyperparameters
// as named scalars under "<prefix>meta.".
void export_model(Weights& out, const SpatialDenoiser<float>& net);
void export_model(Weights& out, const TemporalDenoiser<float>& net);
bool has_spatial(const Weights& w);
bool has_temporal(const Weights& w);
SpatialDenoiser<float> import_spatial(const Weights& w);
TemporalDenoiser<float> import_temporal(const Weights& w);

} // namespace derain
