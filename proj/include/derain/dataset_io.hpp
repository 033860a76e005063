#pragma once

#include "derain/frame.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace derain {

// Binary PNM (P5 grayscale / P6 RGB). Maxval 255 maps by /255, maxval 65535 by /65535.
Frame read_pnm(const std::filesystem::path& path);
// Always maxval 255; channel count selects P5 or P6.
void write_pnm(const std::filesystem::path& path, const Frame& frame);

/// round(x * 255), halves away from zero.
std::uint8_t quantize_8bit(float x);

inline constexpr const char* kDefaultFramePattern = "frame_%06d.ppm";

/// Loads every file in `dir` matching a printf-style zero-padded pattern such
/// as "frame_%06d.ppm", ordered by index. An empty pattern tries the .ppm then
/// the .pgm form of the default. Gaps in numbering and shape changes are
/// rejected, naming the offending file.
FrameSequence load_sequence(const std::filesystem::path& dir, const std::string& pattern = {});

/// Writes frames as frame_%06d.ppm (RGB) or frame_%06d.pgm (grayscale) from index 0.
void save_sequence(const FrameSequence& seq, const std::filesystem::path& dir,
                   const std::string& pattern = {});

/// Spatially aligned crop of 5 consecutive frames centred on `center`.
struct PatchWindow {
    std::size_t center = 0;
    std::size_t y = 0;
    std::size_t x = 0;
    std::vector<Frame> frames;
};

inline constexpr std::size_t kWindowRadius = 2;
inline constexpr std::size_t kWindowLength = 2 * kWindowRadius + 1;

/// One window per interior center (stepping by `stride` frames) at a random
/// valid spatial offset. Deterministic under `seed`.
std::vector<PatchWindow> extract_patches(const FrameSequence& seq, std::size_t patch_size,
                                         std::size_t stride, std::uint64_t seed);

struct DatasetSplit {
    std::vector<FrameSequence> train;
    std::vector<FrameSequence> val;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

/// Sequence-granular, deterministic split. With two or more sequences both
/// sides are nonempty; a single sequence goes entirely to training.
DatasetSplit split(const std::vector<FrameSequence>& data, double val_fraction,
                   std::uint64_t seed);

/// Parameters of the procedural clean scenes used for desk-scale experiments.
struct SyntheticSceneOptions {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 3;
    std::size_t frames = 20;
    std::size_t objects = 4;
    double max_speed_px = 1.0;
};

/// Smooth gradient background with soft-edged objects drifting at constant
/// velocity. Deterministic under `seed`.
FrameSequence make_synthetic_sequence(const SyntheticSceneOptions& opts, std::uint64_t seed);

} // namespace derain
