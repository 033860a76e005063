#include "derain/metrics.hpp"
#include "derain/rain_synth.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace derain;
using derain::test_support::random_frame;

namespace {

RainParams no_mist(RainParams p = {})
{
    p.mist_alpha = 0.0;
    return p;
}

Frame constant_frame(FrameShape shape, float v) { return Frame(shape, v); }

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<float> a, std::vector<float> b)
{
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const float v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == v) ++i;
        while (j < b.size() && b[j] == v) ++j;
        d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
    }
    return d;
}

} // namespace

TEST(RainParams, RejectsOutOfRangeValues)
{
    auto bad = [](auto mutate) {
        RainParams p;
        mutate(p);
        return p;
    };
    EXPECT_NO_THROW(RainParams{}.validate());
    EXPECT_THROW(bad([](RainParams& p) { p.density_mean = -1; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.density_std = -0.1; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.streak_length_px = 0; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.streak_width_px = 0; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.angle_deg = 46; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.streak_intensity = 0; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.streak_intensity = 1.01; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.mist_sigma_px = -1; }).validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RainParams& p) { p.mist_alpha = 1.5; }).validate(), std::invalid_argument);
}

TEST(RainLayer, ZeroDensityGivesEmptyLayer)
{
    RainParams p;
    p.density_mean = 0;
    p.density_std = 0;
    const auto layer = synthesize_rain_layer({64, 64, 3}, p, 0);
    EXPECT_EQ(layer.streak_count, 0u);
    EXPECT_TRUE(std::all_of(layer.values.begin(), layer.values.end(), [](float v) { return v == 0.0f; }));
}

TEST(RainLayer, DeterministicPerSeedAndFrame)
{
    RainParams p;
    p.seed = 1234;
    const auto a = synthesize_rain_layer({64, 48, 3}, p, 7);
    const auto b = synthesize_rain_layer({64, 48, 3}, p, 7);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.streak_count, b.streak_count);
}

TEST(RainLayer, FrameIndicesSelectIndependentStreams)
{
    RainParams p;
    p.seed = 5;
    EXPECT_NE(synthesize_rain_layer({64, 64, 1}, p, 0).values,
              synthesize_rain_layer({64, 64, 1}, p, 1).values);
}

TEST(RainLayer, NonnegativeAndSparse)
{
    RainParams p;
    for (std::uint64_t s = 0; s < 10; ++s) {
        p.seed = s;
        const auto layer = synthesize_rain_layer({64, 64, 1}, p, s);
        EXPECT_TRUE(std::all_of(layer.values.begin(), layer.values.end(), [](float v) { return v >= 0.0f; }));
        const auto nonzero = std::count_if(layer.values.begin(), layer.values.end(), [](float v) { return v > 0.0f; });
        EXPECT_LT(static_cast<double>(nonzero) / layer.values.size(), 0.5);
        EXPECT_GT(nonzero, 0);
    }
}

TEST(RainLayer, StreakCountMatchesRequestedMomentsAtReferenceSize)
{
    RainParams p;
    p.density_mean = 300;
    p.density_std = 10;
    std::vector<double> counts;
    for (std::uint64_t s = 0; s < 100; ++s) {
        p.seed = 1000 + s;
        counts.push_back(static_cast<double>(synthesize_rain_layer({256, 256, 1}, p, s).streak_count));
    }
    const double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / counts.size();
    double var = 0.0;
    for (double c : counts) var += (c - mean) * (c - mean);
    const double sd = std::sqrt(var / (counts.size() - 1));
    EXPECT_NEAR(mean, 300.0, 5.0);
    EXPECT_NEAR(sd, 10.0, 3.0);
}

TEST(RainLayer, StreakCountScalesWithFrameArea)
{
    RainParams p;
    p.density_std = 0;
    EXPECT_EQ(synthesize_rain_layer({256, 256, 1}, p, 0).streak_count, 300u);
    EXPECT_EQ(synthesize_rain_layer({128, 128, 1}, p, 0).streak_count, 75u);
    EXPECT_DOUBLE_EQ(expected_streak_count(p, {64, 64, 1}), 18.75);
}

TEST(RainLayer, RejectsFramesShorterThanStreak)
{
    RainParams p;
    p.streak_length_px = 11;
    EXPECT_THROW(synthesize_rain_layer({10, 64, 1}, p, 0), std::invalid_argument);
    EXPECT_THROW(synthesize_rain_layer({64, 10, 1}, p, 0), std::invalid_argument);
    EXPECT_NO_THROW(synthesize_rain_layer({11, 11, 1}, p, 0));
}

TEST(RainLayer, IndependentSeedsGiveSamePixelDistribution)
{
    RainParams a, b;
    a.seed = 11;
    b.seed = 12;
    std::vector<float> pa, pb;
    for (std::uint64_t f = 0; f < 2; ++f) {
        const auto la = synthesize_rain_layer({256, 256, 1}, a, f);
        const auto lb = synthesize_rain_layer({256, 256, 1}, b, f);
        pa.insert(pa.end(), la.values.begin(), la.values.end());
        pb.insert(pb.end(), lb.values.begin(), lb.values.end());
    }
    ASSERT_GE(pa.size(), 100000u);
    EXPECT_LT(ks_statistic(pa, pb), 0.05);
    EXPECT_NE(pa, pb);
}

TEST(StampStreak, VerticalStreakCoversOnlyItsColumn)
{
    RainLayer layer({21, 21, 1});
    stamp_streak(layer, Streak{10.0, 10.0, 5.0, 1.0, 0.0, 0.3});
    for (std::size_t y = 0; y < 21; ++y) {
        for (std::size_t x = 0; x < 21; ++x) {
            const bool on = x == 10 && y >= 8 && y <= 12;
            EXPECT_FLOAT_EQ(layer.at(y, x), on ? 0.3f : 0.0f) << y << "," << x;
        }
    }
}

TEST(StampStreak, RotationTiltsTheSegment)
{
    RainLayer upright({31, 31, 1}), tilted({31, 31, 1});
    stamp_streak(upright, Streak{15, 15, 21, 1, 0.0, 1.0});
    stamp_streak(tilted, Streak{15, 15, 21, 1, 30.0, 1.0});
    // The tilted streak's top end moves sideways by about 10 * sin(30deg) = 5 px.
    EXPECT_FLOAT_EQ(upright.at(5, 15), 1.0f);
    EXPECT_LT(tilted.at(5, 15), 0.5f);
    EXPECT_GT(tilted.at(6, 10) + tilted.at(6, 11) + tilted.at(5, 10), 0.5f);
}

TEST(ApplyRain, ZeroLayerWithoutMistIsIdentity)
{
    const auto clean = random_frame({16, 16, 3}, 3);
    const auto out = apply_rain(clean, RainLayer(clean.shape()), no_mist());
    EXPECT_EQ(out, clean);
    EXPECT_EQ(out.provenance(), Provenance::rainy);
}

TEST(ApplyRain, WhiteFrameSaturates)
{
    RainParams p = no_mist();
    p.density_mean = 800;
    const auto white = constant_frame({32, 32, 3}, 1.0f);
    const auto out = apply_rain(white, synthesize_rain_layer(white.shape(), p, 0), p);
    for (float v : out.pixels()) EXPECT_EQ(v, 1.0f);
}

TEST(ApplyRain, SingleStreakAddsItsIntensity)
{
    const auto grey = constant_frame({21, 21, 1}, 0.5f);
    RainLayer layer(grey.shape());
    stamp_streak(layer, Streak{10.0, 10.0, 7.0, 1.0, 0.0, 0.3});
    const auto out = apply_rain(grey, layer, no_mist());
    for (std::size_t y = 0; y < 21; ++y)
        for (std::size_t x = 0; x < 21; ++x)
            EXPECT_FLOAT_EQ(out.at(y, x), (x == 10 && y >= 7 && y <= 13) ? 0.8f : 0.5f);
}

TEST(ApplyRain, AdditiveWithoutMist)
{
    RainParams p = no_mist();
    p.seed = 9;
    const auto clean = random_frame({32, 32, 3}, 8);
    const auto layer = synthesize_rain_layer(clean.shape(), p, 0);
    const auto out = apply_rain(clean, layer, p);
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_FLOAT_EQ(out.pixels()[i] - clean.pixels()[i],
                        std::min(1.0f, clean.pixels()[i] + layer.values[i]) - clean.pixels()[i]);
    }
}

TEST(ApplyRain, MistBlendsWithBlur)
{
    RainParams p;
    p.mist_alpha = 0.5;
    p.mist_sigma_px = 1.0;
    const auto clean = random_frame({16, 16, 1}, 4);
    const RainLayer empty(clean.shape());
    const auto out = apply_rain(clean, empty, p);
    const auto blurred = gaussian_blur(clean, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_NEAR(out.pixels()[i], 0.5f * clean.pixels()[i] + 0.5f * blurred.pixels()[i], 1e-6);
    }
}

TEST(ApplyRain, RejectsShapeMismatch)
{
    const auto clean = random_frame({16, 16, 1}, 1);
    EXPECT_THROW(apply_rain(clean, RainLayer({16, 16, 3}), RainParams{}), std::invalid_argument);
}

TEST(CorruptSequence, DensityZeroWithoutMistIsIdentity)
{
    std::vector<Frame> frames(5, constant_frame({16, 16, 3}, 0.25f));
    const FrameSequence seq(frames);
    RainParams p = no_mist();
    p.density_mean = 0;
    p.density_std = 0;
    const auto out = corrupt_sequence(seq, p);
    ASSERT_EQ(out.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(out[i], seq[i]);
}

TEST(CorruptSequence, HigherDensityLowersPsnr)
{
    std::vector<Frame> frames;
    for (std::uint64_t i = 0; i < 10; ++i) frames.push_back(random_frame({64, 64, 3}, 100 + i));
    for (auto& f : frames)
        for (auto& v : f.mutable_pixels()) v *= 0.6f; // leave headroom for the additive rain
    const FrameSequence seq(frames);

    RainParams light, heavy;
    light.density_mean = 300;
    light.density_std = 10;
    heavy.density_mean = 500;
    heavy.density_std = 20;
    light.seed = heavy.seed = 77;
    const auto a = evaluate_sequences(corrupt_sequence(seq, light), seq);
    const auto b = evaluate_sequences(corrupt_sequence(seq, heavy), seq);
    EXPECT_LT(b.mean_psnr_db, a.mean_psnr_db);
}

TEST(CorruptSequence, MeanBrightnessNondecreasingInDensity)
{
    const auto clean = constant_frame({64, 64, 1}, 0.3f);
    double previous = -1.0;
    for (double density : {0.0, 100.0, 300.0, 500.0, 800.0, 1200.0}) {
        double total = 0.0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            RainParams p;
            p.density_mean = density;
            p.density_std = density / 30.0;
            p.seed = s;
            const auto out = apply_rain(clean, synthesize_rain_layer(clean.shape(), p, 0), p);
            total += std::accumulate(out.pixels().begin(), out.pixels().end(), 0.0) / out.size();
        }
        EXPECT_GE(total / 20.0, previous) << "density " << density;
        previous = total / 20.0;
    }
}

TEST(GaussianBlur, ZeroSigmaIsIdentity)
{
    const auto img = random_frame({9, 7, 3}, 2);
    EXPECT_EQ(gaussian_blur(img, 0.0), img);
}

TEST(GaussianBlur, PreservesConstantImages)
{
    const auto img = constant_frame({12, 12, 3}, 0.42f);
    for (double sigma : {0.5, 1.5, 4.0}) {
        const auto out = gaussian_blur(img, sigma);
        for (float v : out.pixels()) EXPECT_NEAR(v, 0.42f, 1e-6);
    }
}

TEST(GaussianBlur, ImpulseResponsePeakMatchesKernel)
{
    Frame img({33, 33, 1}, 0.0f);
    img.at(16, 16) = 1.0f;
    const auto out = gaussian_blur(img, 2.0);
    // Independent discrete kernel: radius ceil(3 sigma) = 6, normalized taps.
    double total = 0.0;
    for (int i = -6; i <= 6; ++i) total += std::exp(-i * i / 8.0);
    const double center_tap = 1.0 / total;
    EXPECT_NEAR(out.at(16, 16), center_tap * center_tap, 1e-7);
    // Separable: an off-axis value is the product of two taps.
    EXPECT_NEAR(out.at(18, 15), std::exp(-4 / 8.0) * std::exp(-1 / 8.0) / (total * total), 1e-7);
}

TEST(GaussianBlur, KernelShape)
{
    const auto k = gaussian_kernel(1.5);
    EXPECT_EQ(k.size(), 11u);
    EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
    EXPECT_EQ(gaussian_kernel(0.0), std::vector<double>{1.0});
    EXPECT_THROW(gaussian_kernel(-1.0), std::invalid_argument);
}
