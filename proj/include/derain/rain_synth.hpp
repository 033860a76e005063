#pragma once

#include "derain/frame.hpp"

#include <cstdint>
#include <vector>

namespace derain {

/// Streak counts are specified per reference area of 256 x 256 pixels and
/// scaled by the frame area, so a 256 x 256 frame draws exactly
/// Normal(density_mean, density_std) streaks.
inline constexpr double kRainReferenceArea = 256.0 * 256.0;

struct RainParams {
    double density_mean = 300.0;
    double density_std = 10.0;
    int streak_length_px = 11;
    int streak_width_px = 1;
    double angle_deg = 10.0;        // rotation from vertical
    double streak_intensity = 0.35; // additive brightness
    double mist_sigma_px = 1.5;
    double mist_alpha = 0.2;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument naming the first violated range.
    void validate() const;

    bool operator==(const RainParams&) const = default;
};

/// One oriented line segment of rain, in pixel coordinates (pixel centers on integers).
struct Streak {
    double cx = 0.0;
    double cy = 0.0;
    double length = 1.0;
    double width = 1.0;
    double angle_deg = 0.0;
    double amplitude = 0.0;
};

/// Additive, nonnegative rain intensities (the layer added to the clean
/// background), plus the realized number of streaks.
struct RainLayer {
    FrameShape shape;
    std::vector<float> values; // H x W x C, interleaved like Frame
    std::size_t streak_count = 0;

    explicit RainLayer(FrameShape s) : shape(s), values(s.size(), 0.0f) {}

    float at(std::size_t y, std::size_t x, std::size_t c = 0) const
    {
        return values[(y * shape.width + x) * shape.channels + c];
    }
    float& at(std::size_t y, std::size_t x, std::size_t c = 0)
    {
        return values[(y * shape.width + x) * shape.channels + c];
    }
};

/// Expected streak count for a frame of the given size.
double expected_streak_count(const RainParams& params, const FrameShape& shape);

/// Anti-aliased stamp: each pixel gains amplitude * coverage, where coverage
/// falls off linearly with distance from the segment.
void stamp_streak(RainLayer& layer, const Streak& streak);

/// Draws the streak count, positions and per-streak amplitudes from a stream
/// seeded by (params.seed, frame_index) and stamps them into a fresh layer.
RainLayer synthesize_rain_layer(const FrameShape& shape, const RainParams& params,
                                std::uint64_t frame_index);

/// clamp(clean + layer) blended with its Gaussian blur (mist), clamped to [0, 1].
Frame apply_rain(const Frame& clean, const RainLayer& layer, const RainParams& params);

/// Rains every frame independently using the frame index as stream selector.
FrameSequence corrupt_sequence(const FrameSequence& seq, const RainParams& params);

/// Normalized 1-D Gaussian taps of radius ceil(3 sigma); {1} for sigma == 0.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with clamp-to-edge borders; sigma == 0 is identity.
Frame gaussian_blur(const Frame& img, double sigma);

} // namespace derain
