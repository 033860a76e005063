#pragma once

#include "derain/dataset_io.hpp"
#include "derain/metrics.hpp"
#include "derain/models.hpp"
#include "derain/rain_synth.hpp"
#include "derain/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace derain {

using Json = nlohmann::ordered_json;

/// Malformed, incomplete or contradictory experiment configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Procedurally generated clean sequences, used when no dataset directories are given.
struct SyntheticDataConfig {
    std::size_t sequences = 4;
    SyntheticSceneOptions scene;
};

struct EvalDensity {
    double mean = 300.0;
    double std = 10.0;
};

/// Everything an experiment needs. One root seed feeds the named substreams
/// "data", "synth", "train" and "eval"; the trainer derives "split" from "train".
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "run";
    std::vector<std::filesystem::path> clean_dirs; // one directory per sequence
    std::string pattern;                           // frame file pattern, empty = default
    SyntheticDataConfig synthetic;                 // used when clean_dirs is empty
    RainParams synth_rain;                         // rain used by `synth`
    std::vector<EvalDensity> eval_densities{{300.0, 10.0}, {500.0, 20.0}, {800.0, 30.0}};
    TrainConfig train;

    /// Checks nested invariants and that referenced directories exist.
    void validate() const;
    /// TrainConfig with its seed derived from the root seed.
    TrainConfig resolved_train() const;
};

Json rain_params_to_json(const RainParams& p);
/// Missing keys keep their defaults from `base`; unknown keys are rejected.
RainParams rain_params_from_json(const Json& j, RainParams base = {});

Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Clean sequences named by the config (dataset directories or synthetic scenes).
std::vector<FrameSequence> load_clean_data(const ExperimentConfig& cfg);

enum class TrainStage { spatial, temporal, both };

/// Writes rain-corrupted copies of the clean sequences plus manifest.json.
void cmd_synth(const ExperimentConfig& cfg);
/// Trains the requested stages. Temporal-only training reads the spatial
/// network from `spatial_weights`, or from <out>/weights.drlw when omitted.
void cmd_train(const ExperimentConfig& cfg, TrainStage stage,
               const std::optional<std::filesystem::path>& spatial_weights = std::nullopt);
void cmd_derain(const std::filesystem::path& weights, const std::filesystem::path& input,
                const std::filesystem::path& out, DerainMode mode);
/// Writes metrics.csv and metrics.json comparing two frame directories.
MetricReport cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& ref,
                      const std::filesystem::path& out);
/// Trains both stages once, then evaluates the held-out sequences at every
/// eval density with and without the temporal stage. Writes table.csv.
void cmd_table(const ExperimentConfig& cfg);

inline constexpr const char* kTableHeader =
    "density,without_stage2_psnr,without_stage2_ssim,with_stage2_psnr,with_stage2_ssim";

/// Command-line entry point. Returns the process exit status; failures print
/// one JSON error line on stderr and leave error.json in the output directory.
int run_cli(int argc, char** argv);

} // namespace derain
