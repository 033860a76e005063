#pragma once

#include "derain/frame.hpp"

#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace derain {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// PSNR in dB over values already expressed on the 0..peak scale.
/// Identical inputs give kInfinitePsnr.
double psnr_values(std::span<const double> f, std::span<const double> g, double peak = 255.0);

/// PSNR between unit-interval frames, scaled by `peak` before the MSE.
/// MSE is averaged over all pixels and channels.
double psnr(const Frame& f, const Frame& g, double peak = 255.0);

/// Which reading of the SSIM contrast-structure numerator to use.
enum class SsimForm {
    covariance,     // 2 * cov(x, y), the standard definition
    std_product,    // 2 * sigma_x * sigma_y, as sometimes printed
};

struct SsimOptions {
    double peak = 255.0;
    double k1 = 0.01;
    double k2 = 0.03;
    int window = 11;
    double window_sigma = 1.5;
    SsimForm form = SsimForm::covariance;
};

/// Mean SSIM over all valid 11 x 11 Gaussian-weighted windows and channels.
double ssim(const Frame& x, const Frame& y, const SsimOptions& opts = {});

/// SSIM from whole-frame statistics, averaged over channels.
double ssim_global(const Frame& x, const Frame& y, const SsimOptions& opts = {});

struct FrameMetrics {
    double psnr_db = 0.0; // kInfinitePsnr when the frames are identical
    double ssim = 0.0;
};

struct MetricReport {
    std::vector<FrameMetrics> frames;
    /// Mean PSNR over finite frames; NaN when every frame is infinite.
    double mean_psnr_db = 0.0;
    std::size_t infinite_psnr_count = 0;
    double mean_ssim = 0.0;
};

MetricReport evaluate_sequences(const FrameSequence& pred, const FrameSequence& ref,
                                const SsimOptions& opts = {});

/// Pools several reports (e.g. one per validation sequence) frame by frame.
MetricReport merge_reports(const std::vector<MetricReport>& reports);

/// CSV with header `frame_idx,psnr_db,ssim`; infinite PSNR is written as `inf`.
void write_metric_csv(const std::filesystem::path& path, const MetricReport& report);
void write_metric_json(const std::filesystem::path& path, const MetricReport& report);

} // namespace derain
