#include "derain/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <utility>

namespace derain {

template <typename T>
ag::BasicTensor<T>& ModelWeights<T>::add(std::string name, ag::BasicTensor<T> tensor)
{
    if (contains(name)) throw std::invalid_argument("duplicate weight name '" + name + "'");
    entries_.push_back({std::move(name), std::move(tensor)});
    return entries_.back().tensor;
}

template <typename T>
bool ModelWeights<T>::contains(std::string_view name) const
{
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.name == name; });
}

template <typename T>
const ag::BasicTensor<T>& ModelWeights<T>::at(std::string_view name) const
{
    for (const auto& e : entries_) {
        if (e.name == name) return e.tensor;
    }
    throw std::out_of_range("no weight named '" + std::string(name) + "'");
}

template <typename T>
ag::BasicTensor<T>& ModelWeights<T>::at(std::string_view name)
{
    return const_cast<ag::BasicTensor<T>&>(std::as_const(*this).at(name));
}

template <typename T>
std::size_t ModelWeights<T>::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
std::vector<ag::BasicTensor<T>> ModelWeights<T>::tensors() const
{
    std::vector<ag::BasicTensor<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.tensor);
    return out;
}

template <typename T>
void ModelWeights<T>::assign_from(const ModelWeights& other, std::string_view prefix)
{
    for (auto& e : entries_) {
        const std::string key = std::string(prefix) + e.name;
        if (!other.contains(key)) throw std::runtime_error("weights missing tensor '" + key + "'");
        const auto& src = other.at(key);
        if (src.shape() != e.tensor.shape()) {
            throw ag::ShapeError("weights tensor '" + key + "' has shape " +
                                 ag::shape_str(src.shape()) + ", expected " +
                                 ag::shape_str(e.tensor.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), e.tensor.mutable_data().begin());
    }
}

template class ModelWeights<float>;
template class ModelWeights<double>;

namespace {

template <typename U>
void put_le(std::ostream& out, U value)
{
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in)
{
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw std::runtime_error("weights file truncated");
    }
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= std::uint64_t(bytes[i]) << (8 * i);
    return static_cast<U>(value);
}

} // namespace

void write_weights(std::ostream& out, const Weights& weights)
{
    out.write(kWeightsMagic, 4);
    put_le<std::uint16_t>(out, kWeightsVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(weights.size()));
    for (const auto& e : weights) {
        if (e.name.size() > 0xFFFF) throw std::invalid_argument("weight name too long: " + e.name);
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        const auto& shape = e.tensor.shape();
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
        for (auto extent : shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
        for (float v : e.tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) throw std::runtime_error("failed writing weights");
}

Weights read_weights(std::istream& in)
{
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0) {
        throw std::runtime_error("not a weights file (bad magic)");
    }
    const auto version = get_le<std::uint16_t>(in);
    if (version != kWeightsVersion) {
        throw std::runtime_error("unsupported weights format version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(in);
    Weights weights;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get_le<std::uint16_t>(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::runtime_error("weights file truncated");
        const auto rank = get_le<std::uint8_t>(in);
        ag::Shape shape(rank);
        for (auto& extent : shape) extent = get_le<std::uint32_t>(in);
        std::vector<float> data(ag::shape_numel(shape));
        for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
        if (rank == 0) shape = {1};
        weights.add(std::move(name), ag::Tensor(std::move(shape), std::move(data)));
    }
    return weights;
}

void save_weights(const std::filesystem::path& path, const Weights& weights)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_weights(out, weights);
}

Weights load_weights(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open weights file " + path.string());
    return read_weights(in);
}

} // namespace derain
