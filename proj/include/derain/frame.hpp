#pragma once

#include "derain/tensor.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace derain {

/// Where a frame's pixels came from. The trainer refuses to put `clean`
/// pixels on a loss path.
enum class Provenance { clean, rainy, model, corrupted };

const char* to_string(Provenance p);

struct FrameShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    std::size_t size() const { return height * width * channels; }
    bool operator==(const FrameShape&) const = default;
};

std::string to_string(const FrameShape& s);

/// H x W x C image with unit-interval float intensities, channel-interleaved.
class Frame {
public:
    Frame() = default;
    Frame(FrameShape shape, float fill = 0.0f, Provenance provenance = Provenance::clean);
    /// Rejects values outside [0, 1] and non-finite values.
    Frame(FrameShape shape, std::vector<float> pixels, Provenance provenance = Provenance::clean);

    const FrameShape& shape() const { return shape_; }
    std::size_t height() const { return shape_.height; }
    std::size_t width() const { return shape_.width; }
    std::size_t channels() const { return shape_.channels; }
    std::size_t size() const { return pixels_.size(); }

    std::span<const float> pixels() const { return pixels_; }
    std::span<float> mutable_pixels() { return pixels_; }

    float at(std::size_t y, std::size_t x, std::size_t c = 0) const
    {
        return pixels_[(y * shape_.width + x) * shape_.channels + c];
    }
    float& at(std::size_t y, std::size_t x, std::size_t c = 0)
    {
        return pixels_[(y * shape_.width + x) * shape_.channels + c];
    }

    Provenance provenance() const { return provenance_; }
    void set_provenance(Provenance p) { provenance_ = p; }

    /// Copy of the region [y, y+h) x [x, x+w); provenance is preserved.
    Frame crop(std::size_t y, std::size_t x, std::size_t h, std::size_t w) const;

    bool operator==(const Frame& other) const
    {
        return shape_ == other.shape_ && pixels_ == other.pixels_;
    }

private:
    FrameShape shape_;
    std::vector<float> pixels_;
    Provenance provenance_ = Provenance::clean;
};

/// Ordered, shape-uniform, nonempty list of frames.
class FrameSequence {
public:
    FrameSequence() = default;
    FrameSequence(std::vector<Frame> frames, std::string source = {},
                  std::optional<double> fps = std::nullopt);

    std::size_t size() const { return frames_.size(); }
    bool empty() const { return frames_.empty(); }
    const Frame& operator[](std::size_t i) const { return frames_[i]; }
    Frame& operator[](std::size_t i) { return frames_[i]; }
    const FrameShape& shape() const;

    auto begin() const { return frames_.begin(); }
    auto end() const { return frames_.end(); }
    const std::vector<Frame>& frames() const { return frames_; }

    const std::string& source() const { return source_; }
    void set_source(std::string s) { source_ = std::move(s); }
    std::optional<double> fps() const { return fps_; }

private:
    std::vector<Frame> frames_;
    std::string source_;
    std::optional<double> fps_;
};

/// Packs same-shape frames into an N x C x H x W tensor.
template <typename T>
ag::BasicTensor<T> frames_to_tensor(std::span<const Frame> frames);

/// Extracts item `index` of an N x C x H x W tensor, clamping into [0, 1].
template <typename T>
Frame tensor_to_frame(const ag::BasicTensor<T>& tensor, std::size_t index,
                      Provenance provenance = Provenance::model);

} // namespace derain
