#pragma once

#include "derain/frame.hpp"
#include "derain/models.hpp"
#include "derain/optim.hpp"
#include "derain/rain_synth.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace derain {

/// Largest accepted Poisson peak; beyond it the corruption is negligible and
/// the temporal stage degenerates to learning the identity.
inline constexpr double kMaxPoissonPeak = 1e6;

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    std::size_t patch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    RainParams source_rain{300.0, 10.0};
    RainParams target_rain{500.0, 20.0};
    double poisson_peak = 30.0;
    double val_fraction = 0.25;
    std::size_t base_channels = 16;
    // Random crops drawn per training frame (stage 1) or window (stage 2) each epoch.
    std::size_t patches_per_frame = 4;

    void validate() const;
    AdamOptions adam() const { return {lr, beta1, beta2, eps}; }
};

struct EpochRecord {
    std::string stage;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_psnr = 0.0;
    double val_ssim = 0.0;
    double wall_time_s = 0.0;
};

/// Bookkeeping of every place a training run touched clean pixels.
struct PurityAudit {
    std::size_t loss_frames_checked = 0;
    std::size_t clean_frames_on_loss_path = 0;
    std::size_t clean_reads_rain_synth = 0;
    std::size_t clean_reads_metrics = 0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    PurityAudit audit;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

/// Thrown when a loss turns NaN/Inf; the message names the stage, epoch and batch.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown if a clean frame reaches a loss computation.
class PurityViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Packs frames for a loss computation, refusing clean pixels.
ag::Tensor loss_tensor(std::span<const Frame> frames, PurityAudit& audit);

/// Called after each epoch with the record just appended.
template <typename Model>
using EpochCallback = std::function<void(const EpochRecord&, const Model&)>;

template <typename Model>
struct TrainResult {
    Model model;
    TrainReport report;
};

/// Stage 1: minimizes mse(phi(source-rain frame), target-rain frame) where
/// both rain draws use independent seeds over the same clean crop.
TrainResult<SpatialDenoiser<float>>
train_spatial(const std::vector<FrameSequence>& data, const TrainConfig& cfg,
              const EpochCallback<SpatialDenoiser<float>>& on_epoch = {});

/// Stage 2: targets are phi(rainy frames); inputs are their Poisson-corrupted
/// copies. `spatial` is used for inference only and never receives gradients.
TrainResult<TemporalDenoiser<float>>
train_temporal(const std::vector<FrameSequence>& data, const SpatialDenoiser<float>& spatial,
               const TrainConfig& cfg,
               const EpochCallback<TemporalDenoiser<float>>& on_epoch = {});

/// Each pixel x becomes Poisson(x * peak) / peak, clamped to [0, 1].
Frame poisson_corrupt(const Frame& frame, double peak, std::uint64_t seed);

void write_report_csv(const std::filesystem::path& path, const TrainReport& report);
void write_report_json(const std::filesystem::path& path, const TrainReport& report);

} // namespace derain
