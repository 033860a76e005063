#include "derain/rain_synth.hpp"
#include "derain/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace derain {

void RainParams::validate() const
{
    auto fail = [](const std::string& what) { throw std::invalid_argument("RainParams: " + what); };
    if (!(density_mean >= 0.0) || !std::isfinite(density_mean)) fail("density_mean must be >= 0");
    if (!(density_std >= 0.0) || !std::isfinite(density_std)) fail("density_std must be >= 0");
    if (streak_length_px < 1) fail("streak_length_px must be >= 1");
    if (streak_width_px < 1) fail("streak_width_px must be >= 1");
    if (!(angle_deg >= -45.0 && angle_deg <= 45.0)) fail("angle_deg must lie in [-45, 45]");
    if (!(streak_intensity > 0.0 && streak_intensity <= 1.0)) {
        fail("streak_intensity must lie in (0, 1]");
    }
    if (!(mist_sigma_px >= 0.0) || !std::isfinite(mist_sigma_px)) fail("mist_sigma_px must be >= 0");
    if (!(mist_alpha >= 0.0 && mist_alpha <= 1.0)) fail("mist_alpha must lie in [0, 1]");
}

double expected_streak_count(const RainParams& params, const FrameShape& shape)
{
    return params.density_mean * static_cast<double>(shape.height * shape.width) /
           kRainReferenceArea;
}

void stamp_streak(RainLayer& layer, const Streak& s)
{
    const double theta = s.angle_deg * std::numbers::pi / 180.0;
    const double dx = std::sin(theta), dy = std::cos(theta);
    const double half = std::max(0.0, (s.length - 1.0) / 2.0);
    const double x0 = s.cx - dx * half, y0 = s.cy - dy * half;
    const double x1 = s.cx + dx * half, y1 = s.cy + dy * half;
    const double reach = (s.width + 1.0) / 2.0;

    const auto H = static_cast<long>(layer.shape.height);
    const auto W = static_cast<long>(layer.shape.width);
    const long xa = std::max(0L, static_cast<long>(std::floor(std::min(x0, x1) - reach)));
    const long xb = std::min(W - 1, static_cast<long>(std::ceil(std::max(x0, x1) + reach)));
    const long ya = std::max(0L, static_cast<long>(std::floor(std::min(y0, y1) - reach)));
    const long yb = std::min(H - 1, static_cast<long>(std::ceil(std::max(y0, y1) + reach)));
    const double seg_len2 = (x1 - x0) * (x1 - x0) + (y1 - y0) * (y1 - y0);

    for (long y = ya; y <= yb; ++y) {
        for (long x = xa; x <= xb; ++x) {
            double t = 0.0;
            if (seg_len2 > 0.0) {
                t = ((x - x0) * (x1 - x0) + (y - y0) * (y1 - y0)) / seg_len2;
                t = std::clamp(t, 0.0, 1.0);
            }
            const double px = x0 + t * (x1 - x0) - x;
            const double py = y0 + t * (y1 - y0) - y;
            const double coverage = std::clamp(reach - std::sqrt(px * px + py * py), 0.0, 1.0);
            if (coverage <= 0.0) continue;
            const auto add = static_cast<float>(s.amplitude * coverage);
            for (std::size_t c = 0; c < layer.shape.channels; ++c) {
                layer.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) += add;
            }
        }
    }
}

RainLayer synthesize_rain_layer(const FrameShape& shape, const RainParams& params,
                                std::uint64_t frame_index)
{
    params.validate();
    if (shape.height < static_cast<std::size_t>(params.streak_length_px) ||
        shape.width < static_cast<std::size_t>(params.streak_length_px)) {
        throw std::invalid_argument("frame " + to_string(shape) + " is smaller than streak length " +
                                    std::to_string(params.streak_length_px));
    }

    RainLayer layer(shape);
    std::mt19937_64 rng(derive_seed(params.seed, frame_index));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double area_scale = static_cast<double>(shape.height * shape.width) / kRainReferenceArea;
    const double draw = area_scale * (params.density_mean + params.density_std * gauss(rng));
    const auto count = static_cast<std::size_t>(std::llround(std::max(0.0, draw)));

    for (std::size_t i = 0; i < count; ++i) {
        Streak s;
        s.cx = unit(rng) * static_cast<double>(shape.width) - 0.5;
        s.cy = unit(rng) * static_cast<double>(shape.height) - 0.5;
        s.length = params.streak_length_px;
        s.width = params.streak_width_px;
        s.angle_deg = params.angle_deg;
        s.amplitude = params.streak_intensity * std::clamp(1.0 + 0.2 * gauss(rng), 0.2, 1.8);
        stamp_streak(layer, s);
    }
    layer.streak_count = count;
    return layer;
}

Frame apply_rain(const Frame& clean, const RainLayer& layer, const RainParams& params)
{
    params.validate();
    if (clean.shape() != layer.shape) {
        throw std::invalid_argument("apply_rain: frame " + to_string(clean.shape()) +
                                    " does not match rain layer " + to_string(layer.shape));
    }
    Frame composite(clean.shape(), 0.0f, Provenance::rainy);
    auto out = composite.mutable_pixels();
    const auto bg = clean.pixels();
    const auto& rain = layer.values;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(bg[i] + rain[i], 0.0f, 1.0f);

    if (params.mist_alpha > 0.0) {
        const Frame blurred = gaussian_blur(composite, params.mist_sigma_px);
        const auto a = static_cast<float>(params.mist_alpha);
        const auto bl = blurred.pixels();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = std::clamp((1.0f - a) * out[i] + a * bl[i], 0.0f, 1.0f);
        }
    }
    return composite;
}

FrameSequence corrupt_sequence(const FrameSequence& seq, const RainParams& params)
{
    if (seq.empty()) throw std::invalid_argument("corrupt_sequence: empty sequence");
    std::vector<Frame> out;
    out.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        out.push_back(apply_rain(seq[i], synthesize_rain_layer(seq[i].shape(), params, i), params));
    }
    return FrameSequence(std::move(out), seq.source(), seq.fps());
}

std::vector<double> gaussian_kernel(double sigma)
{
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be >= 0");
    if (sigma == 0.0) return {1.0};
    const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        total += k[i + radius];
    }
    for (auto& v : k) v /= total;
    return k;
}

Frame gaussian_blur(const Frame& img, double sigma)
{
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1) return img;
    const auto radius = static_cast<long>(k.size() / 2);
    const auto H = static_cast<long>(img.height());
    const auto W = static_cast<long>(img.width());
    const std::size_t C = img.channels();

    std::vector<double> tmp(img.size());
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    const long xs = std::clamp(x + i, 0L, W - 1);
                    acc += k[i + radius] * img.at(y, xs, c);
                }
                tmp[(y * W + x) * C + c] = acc;
            }
        }
    }
    Frame out(img.shape(), 0.0f, img.provenance());
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    const long ys = std::clamp(y + i, 0L, H - 1);
                    acc += k[i + radius] * tmp[(ys * W + x) * C + c];
                }
                out.at(y, x, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return out;
}

} // namespace derain
