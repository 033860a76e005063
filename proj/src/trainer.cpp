#include "derain/trainer.hpp"

#include "derain/dataset_io.hpp"
#include "derain/metrics.hpp"
#include "derain/random.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace derain {

void TrainConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw std::invalid_argument("TrainConfig: " + msg); };
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (patch_size < 4 || patch_size % 4 != 0) {
        fail("patch_size must be a positive multiple of 4, got " + std::to_string(patch_size));
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be > 0");
    if (!(poisson_peak > 0.0)) fail("poisson_peak must be > 0");
    if (poisson_peak > kMaxPoissonPeak) {
        fail("poisson_peak above 1e6 makes the corruption vanish and lets the temporal "
             "stage learn the identity");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in (0, 1)");
    if (base_channels < 1) fail("base_channels must be >= 1");
    if (patches_per_frame < 1) fail("patches_per_frame must be >= 1");
    source_rain.validate();
    target_rain.validate();
}

ag::Tensor loss_tensor(std::span<const Frame> frames, PurityAudit& audit)
{
    for (const auto& f : frames) {
        ++audit.loss_frames_checked;
        if (f.provenance() == Provenance::clean) {
            ++audit.clean_frames_on_loss_path;
            throw PurityViolation("clean frame reached a loss computation");
        }
    }
    return frames_to_tensor<float>(frames);
}

Frame poisson_corrupt(const Frame& frame, double peak, std::uint64_t seed)
{
    if (!(peak > 0.0) || !std::isfinite(peak)) {
        throw std::invalid_argument("poisson_corrupt: peak must be a finite value > 0");
    }
    std::mt19937_64 rng(seed);
    std::vector<float> out(frame.size());
    const auto in = frame.pixels();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double lambda = static_cast<double>(in[i]) * peak;
        if (lambda <= 0.0) {
            out[i] = 0.0f;
            continue;
        }
        std::poisson_distribution<long> dist(lambda);
        out[i] = static_cast<float>(std::clamp(static_cast<double>(dist(rng)) / peak, 0.0, 1.0));
    }
    return Frame(frame.shape(), std::move(out), Provenance::corrupted);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_dataset(const std::vector<FrameSequence>& data, const TrainConfig& cfg,
                   std::size_t min_frames)
{
    if (data.empty()) throw std::invalid_argument("training data is empty");
    const auto shape = data.front().shape();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& seq = data[i];
        if (seq.empty()) throw std::invalid_argument("training sequence " + std::to_string(i) + " is empty");
        if (seq.shape().channels != shape.channels) {
            throw std::invalid_argument("training sequences disagree on channel count");
        }
        if (seq.shape().height < cfg.patch_size || seq.shape().width < cfg.patch_size) {
            throw std::invalid_argument("sequence " + std::to_string(i) + " (" +
                                        to_string(seq.shape()) + ") is smaller than patch size " +
                                        std::to_string(cfg.patch_size));
        }
        if (seq.size() < min_frames) {
            throw std::invalid_argument("sequence " + std::to_string(i) + " has " +
                                        std::to_string(seq.size()) + " frames, need at least " +
                                        std::to_string(min_frames));
        }
    }
}

// Rain copies of the held-out clean sequences, fixed for the whole run.
std::vector<FrameSequence> rain_validation(const std::vector<FrameSequence>& val,
                                           const TrainConfig& cfg, PurityAudit& audit)
{
    std::vector<FrameSequence> out;
    for (std::size_t i = 0; i < val.size(); ++i) {
        RainParams p = cfg.source_rain;
        p.seed = derive_seed(derive_seed(cfg.seed, "validation"), i);
        audit.clean_reads_rain_synth += val[i].size();
        out.push_back(corrupt_sequence(val[i], p));
    }
    return out;
}

void validate_epoch(const SpatialDenoiser<float>& spatial, const TemporalDenoiser<float>* temporal,
                    const std::vector<FrameSequence>& clean, const std::vector<FrameSequence>& rainy,
                    PurityAudit& audit, EpochRecord& rec)
{
    if (clean.empty()) {
        rec.val_psnr = std::numeric_limits<double>::quiet_NaN();
        rec.val_ssim = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    const auto mode = temporal ? DerainMode::full : DerainMode::spatial_only;
    std::vector<MetricReport> reports;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const auto pred = derain_sequence(spatial, temporal, rainy[i], mode);
        audit.clean_reads_metrics += clean[i].size();
        reports.push_back(evaluate_sequences(pred, clean[i]));
    }
    const auto merged = merge_reports(reports);
    rec.val_psnr = merged.mean_psnr_db;
    rec.val_ssim = merged.mean_ssim;
}

void check_loss(double loss, const char* stage, std::size_t epoch, std::size_t batch)
{
    if (!std::isfinite(loss) || loss < 0.0) {
        std::ostringstream os;
        os << stage << " training diverged: loss " << loss << " at epoch " << epoch << ", batch "
           << batch;
        throw TrainingDiverged(os.str());
    }
}

template <typename Model>
void finish_epoch(TrainReport& report, EpochRecord rec, const Model& model,
                  const EpochCallback<Model>& on_epoch)
{
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(report.epochs.back(), model);
}

struct Sample {
    std::size_t seq;
    std::size_t frame;
};

} // namespace

TrainResult<SpatialDenoiser<float>>
train_spatial(const std::vector<FrameSequence>& data, const TrainConfig& cfg,
              const EpochCallback<SpatialDenoiser<float>>& on_epoch)
{
    cfg.validate();
    check_dataset(data, cfg, 1);

    const auto parts = split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));
    const auto channels = data.front().shape().channels;
    TrainResult<SpatialDenoiser<float>> result{
        SpatialDenoiser<float>(channels, cfg.base_channels, derive_seed(cfg.seed, "init.spatial")),
        {}};
    auto& net = result.model;
    auto& report = result.report;
    report.train_indices = parts.train_indices;
    report.val_indices = parts.val_indices;

    net.set_trainable(true);
    Adam<float> opt(net.weights(), cfg.adam());
    const auto val_rainy = rain_validation(parts.val, cfg, report.audit);

    std::vector<Sample> samples;
    for (std::size_t s = 0; s < parts.train.size(); ++s) {
        for (std::size_t f = 0; f < parts.train[s].size(); ++f) {
            for (std::size_t k = 0; k < cfg.patches_per_frame; ++k) samples.push_back({s, f});
        }
    }

    const auto stream = derive_seed(cfg.seed, "train.spatial");
    const auto P = cfg.patch_size;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = Clock::now();
        std::mt19937_64 rng(derive_seed(stream, epoch));
        std::shuffle(samples.begin(), samples.end(), rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < samples.size(); b0 += cfg.batch_size) {
            const auto b1 = std::min(samples.size(), b0 + cfg.batch_size);
            std::vector<Frame> sources, targets;
            for (std::size_t i = b0; i < b1; ++i) {
                const auto& clean_frame = parts.train[samples[i].seq][samples[i].frame];
                const auto y = std::uniform_int_distribution<std::size_t>(0, clean_frame.height() - P)(rng);
                const auto x = std::uniform_int_distribution<std::size_t>(0, clean_frame.width() - P)(rng);
                const auto sample_seed = rng();
                const Frame clean = clean_frame.crop(y, x, P, P);

                // Two independent rain draws over the same clean content.
                RainParams src = cfg.source_rain;
                RainParams tgt = cfg.target_rain;
                src.seed = derive_seed(sample_seed, "source");
                tgt.seed = derive_seed(sample_seed, "target");
                report.audit.clean_reads_rain_synth += 2;
                sources.push_back(apply_rain(clean, synthesize_rain_layer(clean.shape(), src, samples[i].frame), src));
                targets.push_back(apply_rain(clean, synthesize_rain_layer(clean.shape(), tgt, samples[i].frame), tgt));
            }
            const auto input = loss_tensor(sources, report.audit);
            const auto target = loss_tensor(targets, report.audit);

            const auto loss = ag::mse(net.forward(input), target);
            const double value = loss.item();
            check_loss(value, "spatial", epoch, batches + 1);
            loss.backward();
            opt.step();
            opt.zero_grad();
            loss_sum += value;
            ++batches;
        }

        EpochRecord rec{"spatial", epoch, loss_sum / static_cast<double>(batches), 0.0, 0.0, 0.0};
        validate_epoch(net, nullptr, parts.val, val_rainy, report.audit, rec);
        rec.wall_time_s = seconds_since(start);
        finish_epoch(report, rec, net, on_epoch);
    }
    net.set_trainable(false);
    return result;
}

TrainResult<TemporalDenoiser<float>>
train_temporal(const std::vector<FrameSequence>& data, const SpatialDenoiser<float>& spatial,
               const TrainConfig& cfg, const EpochCallback<TemporalDenoiser<float>>& on_epoch)
{
    cfg.validate();
    check_dataset(data, cfg, kWindowLength);
    const auto channels = data.front().shape().channels;
    if (spatial.channels() != channels) {
        throw std::invalid_argument("spatial denoiser expects " + std::to_string(spatial.channels()) +
                                    " channels but data has " + std::to_string(channels));
    }

    const auto parts = split(data, cfg.val_fraction, derive_seed(cfg.seed, "split"));
    TrainResult<TemporalDenoiser<float>> result{
        TemporalDenoiser<float>(channels, cfg.base_channels, derive_seed(cfg.seed, "init.temporal")),
        {}};
    auto& net = result.model;
    auto& report = result.report;
    report.train_indices = parts.train_indices;
    report.val_indices = parts.val_indices;

    net.set_trainable(true);
    const auto params = net.weights();
    Adam<float> opt(params, cfg.adam());
    const auto val_rainy = rain_validation(parts.val, cfg, report.audit);

    // Interior windows only: replicated boundary frames appear at inference time.
    std::vector<Sample> windows;
    for (std::size_t s = 0; s < parts.train.size(); ++s) {
        for (std::size_t c = kWindowRadius; c + kWindowRadius < parts.train[s].size(); ++c) {
            for (std::size_t k = 0; k < cfg.patches_per_frame; ++k) windows.push_back({s, c});
        }
    }

    const auto stream = derive_seed(cfg.seed, "train.temporal");
    const auto P = cfg.patch_size;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto epoch_seed = derive_seed(stream, epoch);

        // Stage-1 estimates of freshly rained training frames; phi is inference-only.
        std::vector<std::vector<Frame>> estimates(parts.train.size());
        for (std::size_t s = 0; s < parts.train.size(); ++s) {
            RainParams p = cfg.source_rain;
            p.seed = derive_seed(derive_seed(epoch_seed, "rain"), s);
            report.audit.clean_reads_rain_synth += parts.train[s].size();
            const auto rainy = corrupt_sequence(parts.train[s], p);
            for (const auto& f : rainy) estimates[s].push_back(spatial_forward(spatial, f));
        }

        std::mt19937_64 rng(epoch_seed);
        std::shuffle(windows.begin(), windows.end(), rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < windows.size(); b0 += cfg.batch_size) {
            const auto b1 = std::min(windows.size(), b0 + cfg.batch_size);
            std::vector<std::vector<Frame>> inputs(kWindowLength);
            std::vector<Frame> targets;
            for (std::size_t i = b0; i < b1; ++i) {
                const auto& est = estimates[windows[i].seq];
                const auto c = windows[i].frame;
                const auto y = std::uniform_int_distribution<std::size_t>(0, est[c].height() - P)(rng);
                const auto x = std::uniform_int_distribution<std::size_t>(0, est[c].width() - P)(rng);
                const auto sample_seed = rng();
                for (std::size_t k = 0; k < kWindowLength; ++k) {
                    const Frame crop = est[c + k - kWindowRadius].crop(y, x, P, P);
                    inputs[k].push_back(poisson_corrupt(crop, cfg.poisson_peak, derive_seed(sample_seed, k)));
                }
                targets.push_back(est[c].crop(y, x, P, P));
            }
            std::vector<ag::Tensor> window;
            for (const auto& frames : inputs) window.push_back(loss_tensor(frames, report.audit));
            const auto target = loss_tensor(targets, report.audit);

            const auto loss = ag::mse(net.forward(window), target);
            const double value = loss.item();
            check_loss(value, "temporal", epoch, batches + 1);
            loss.backward();
            opt.step();
            opt.zero_grad();
            loss_sum += value;
            ++batches;
        }

        EpochRecord rec{"temporal", epoch, loss_sum / static_cast<double>(batches), 0.0, 0.0, 0.0};
        validate_epoch(spatial, &net, parts.val, val_rainy, report.audit, rec);
        rec.wall_time_s = seconds_since(start);
        finish_epoch(report, rec, net, on_epoch);
    }
    net.set_trainable(false);
    return result;
}

void write_report_csv(const std::filesystem::path& path, const TrainReport& report)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "stage,epoch,train_loss,val_psnr,val_ssim,wall_time_s\n";
    char line[256];
    for (const auto& r : report.epochs) {
        std::snprintf(line, sizeof line, "%s,%zu,%.8f,%.6f,%.6f,%.3f\n", r.stage.c_str(), r.epoch,
                      r.train_loss, r.val_psnr, r.val_ssim, r.wall_time_s);
        out << line;
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_report_json(const std::filesystem::path& path, const TrainReport& report)
{
    nlohmann::ordered_json j;
    auto finite_or_null = [](double v) -> nlohmann::ordered_json {
        return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
    };
    j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& r : report.epochs) {
        j["epochs"].push_back({{"stage", r.stage},
                               {"epoch", r.epoch},
                               {"train_loss", r.train_loss},
                               {"val_psnr", finite_or_null(r.val_psnr)},
                               {"val_ssim", finite_or_null(r.val_ssim)},
                               {"wall_time_s", r.wall_time_s}});
    }
    if (!report.epochs.empty()) {
        const auto& last = report.epochs.back();
        j["final"] = {{"stage", last.stage},
                      {"epoch", last.epoch},
                      {"train_loss", last.train_loss},
                      {"val_psnr", finite_or_null(last.val_psnr)},
                      {"val_ssim", finite_or_null(last.val_ssim)}};
    }
    j["train_indices"] = report.train_indices;
    j["val_indices"] = report.val_indices;
    j["purity"] = {{"loss_frames_checked", report.audit.loss_frames_checked},
                   {"clean_frames_on_loss_path", report.audit.clean_frames_on_loss_path},
                   {"clean_reads_rain_synth", report.audit.clean_reads_rain_synth},
                   {"clean_reads_metrics", report.audit.clean_reads_metrics}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

} // namespace derain
