#include "derain/frame.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace derain {

const char* to_string(Provenance p)
{
    switch (p) {
    case Provenance::clean: return "clean";
    case Provenance::rainy: return "rainy";
    case Provenance::model: return "model";
    case Provenance::corrupted: return "corrupted";
    }
    return "unknown";
}

std::string to_string(const FrameShape& s)
{
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
           std::to_string(s.channels);
}

static void check_shape(const FrameShape& shape)
{
    if (shape.height == 0 || shape.width == 0) {
        throw std::invalid_argument("frame extents must be >= 1, got " + to_string(shape));
    }
    if (shape.channels != 1 && shape.channels != 3) {
        throw std::invalid_argument("frame must have 1 or 3 channels, got " + to_string(shape));
    }
}

Frame::Frame(FrameShape shape, float fill, Provenance provenance)
    : shape_(shape), provenance_(provenance)
{
    check_shape(shape_);
    if (!(fill >= 0.0f && fill <= 1.0f)) throw std::invalid_argument("frame fill outside [0, 1]");
    pixels_.assign(shape_.size(), fill);
}

Frame::Frame(FrameShape shape, std::vector<float> pixels, Provenance provenance)
    : shape_(shape), pixels_(std::move(pixels)), provenance_(provenance)
{
    check_shape(shape_);
    if (pixels_.size() != shape_.size()) {
        throw std::invalid_argument("frame " + to_string(shape_) + " expects " +
                                    std::to_string(shape_.size()) + " values, got " +
                                    std::to_string(pixels_.size()));
    }
    for (float v : pixels_) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw std::invalid_argument("frame intensity " + std::to_string(v) +
                                        " outside [0, 1]");
        }
    }
}

Frame Frame::crop(std::size_t y, std::size_t x, std::size_t h, std::size_t w) const
{
    if (y + h > height() || x + w > width() || h == 0 || w == 0) {
        throw std::out_of_range("crop region exceeds frame " + to_string(shape_));
    }
    Frame out({h, w, channels()}, 0.0f, provenance_);
    const std::size_t row = w * channels();
    for (std::size_t r = 0; r < h; ++r) {
        const float* src = pixels_.data() + ((y + r) * width() + x) * channels();
        std::copy_n(src, row, out.pixels_.data() + r * row);
    }
    return out;
}

FrameSequence::FrameSequence(std::vector<Frame> frames, std::string source,
                             std::optional<double> fps)
    : frames_(std::move(frames)), source_(std::move(source)), fps_(fps)
{
    if (frames_.empty()) throw std::invalid_argument("frame sequence must not be empty");
    for (std::size_t i = 1; i < frames_.size(); ++i) {
        if (frames_[i].shape() != frames_[0].shape()) {
            throw std::invalid_argument("frame " + std::to_string(i) + " has shape " +
                                        to_string(frames_[i].shape()) + ", expected " +
                                        to_string(frames_[0].shape()));
        }
    }
}

const FrameShape& FrameSequence::shape() const
{
    if (frames_.empty()) throw std::logic_error("empty frame sequence has no shape");
    return frames_[0].shape();
}

template <typename T>
ag::BasicTensor<T> frames_to_tensor(std::span<const Frame> frames)
{
    if (frames.empty()) throw std::invalid_argument("frames_to_tensor: no frames");
    const FrameShape s = frames[0].shape();
    const std::size_t plane = s.height * s.width;
    std::vector<T> data(frames.size() * s.size());
    for (std::size_t n = 0; n < frames.size(); ++n) {
        if (frames[n].shape() != s) {
            throw ag::ShapeError("frames_to_tensor: frame " + std::to_string(n) + " has shape " +
                                 to_string(frames[n].shape()) + ", expected " + to_string(s));
        }
        const auto px = frames[n].pixels();
        T* dst = data.data() + n * s.size();
        for (std::size_t i = 0; i < plane; ++i) {
            for (std::size_t c = 0; c < s.channels; ++c) {
                dst[c * plane + i] = static_cast<T>(px[i * s.channels + c]);
            }
        }
    }
    return ag::BasicTensor<T>({frames.size(), s.channels, s.height, s.width}, std::move(data));
}

template <typename T>
Frame tensor_to_frame(const ag::BasicTensor<T>& tensor, std::size_t index, Provenance provenance)
{
    if (tensor.rank() != 4 || index >= tensor.dim(0)) {
        throw ag::ShapeError("tensor_to_frame: cannot take item " + std::to_string(index) +
                             " of " + ag::shape_str(tensor.shape()));
    }
    const FrameShape s{tensor.dim(2), tensor.dim(3), tensor.dim(1)};
    const std::size_t plane = s.height * s.width;
    std::vector<float> px(s.size());
    const T* src = tensor.data().data() + index * s.size();
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const auto v = static_cast<float>(src[c * plane + i]);
            if (!std::isfinite(v)) throw std::runtime_error("tensor_to_frame: non-finite value");
            px[i * s.channels + c] = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return Frame(s, std::move(px), provenance);
}

template ag::BasicTensor<float> frames_to_tensor<float>(std::span<const Frame>);
template ag::BasicTensor<double> frames_to_tensor<double>(std::span<const Frame>);
template Frame tensor_to_frame<float>(const ag::BasicTensor<float>&, std::size_t, Provenance);
template Frame tensor_to_frame<double>(const ag::BasicTensor<double>&, std::size_t, Provenance);

} // namespace derain
