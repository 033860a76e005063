#pragma once

#include "derain/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace derain {

/// Named, ordered collection of tensors belonging to one network.
template <typename T>
class ModelWeights {
public:
    struct Entry {
        std::string name;
        ag::BasicTensor<T> tensor;
    };

    /// Registers a tensor; names must be unique.
    ag::BasicTensor<T>& add(std::string name, ag::BasicTensor<T> tensor);

    bool contains(std::string_view name) const;
    const ag::BasicTensor<T>& at(std::string_view name) const;
    ag::BasicTensor<T>& at(std::string_view name);

    std::size_t size() const { return entries_.size(); }
    std::size_t parameter_count() const;
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<ag::BasicTensor<T>> tensors() const;

    /// Copies values from `other` for every name in this collection.
    /// Missing names and shape mismatches are rejected.
    void assign_from(const ModelWeights& other, std::string_view prefix = {});

private:
    std::vector<Entry> entries_;
};

using Weights = ModelWeights<float>;

// Weights file: "DRLW" | u16 version | u32 count | records of
// (u16 name length, UTF-8 name, u8 rank, u32 extents..., f32 little-endian data).
inline constexpr char kWeightsMagic[4] = {'D', 'R', 'L', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

void write_weights(std::ostream& out, const Weights& weights);
Weights read_weights(std::istream& in);
void save_weights(const std::filesystem::path& path, const Weights& weights);
Weights load_weights(const std::filesystem::path& path);

} // namespace derain
