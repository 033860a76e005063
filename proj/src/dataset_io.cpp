#include "derain/dataset_io.hpp"
#include "derain/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <regex>
#include <stdexcept>

namespace fs = std::filesystem;

namespace derain {

namespace {

void skip_space_and_comments(std::istream& in)
{
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

std::size_t read_header_int(std::istream& in, const fs::path& path)
{
    skip_space_and_comments(in);
    long long v = -1;
    if (!(in >> v) || v <= 0) throw std::runtime_error(path.string() + ": malformed PNM header");
    return static_cast<std::size_t>(v);
}

struct FramePattern {
    std::regex regex;
    std::string prefix;
    std::string suffix;
    int width = 0;

    std::string format(std::size_t index) const
    {
        std::string digits = std::to_string(index);
        if (static_cast<int>(digits.size()) < width) {
            digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
        }
        return prefix + digits + suffix;
    }
};

std::string regex_escape(const std::string& s)
{
    static const std::string special = R"(\^$.|?*+()[]{})";
    std::string out;
    for (char c : s) {
        if (special.find(c) != std::string::npos) out += '\\';
        out += c;
    }
    return out;
}

FramePattern parse_pattern(const std::string& pattern)
{
    static const std::regex spec(R"(%(0?)(\d*)d)");
    std::smatch m;
    if (!std::regex_search(pattern, m, spec)) {
        throw std::invalid_argument("frame pattern '" + pattern + "' has no %d field");
    }
    FramePattern p;
    p.prefix = m.prefix().str();
    p.suffix = m.suffix().str();
    p.width = m[2].length() ? std::stoi(m[2].str()) : 0;
    const std::string digits = p.width > 0 && m[1].length()
                                   ? "(\\d{" + std::to_string(p.width) + "})"
                                   : std::string("(\\d+)");
    p.regex = std::regex(regex_escape(p.prefix) + digits + regex_escape(p.suffix));
    return p;
}

std::map<std::size_t, fs::path> match_files(const fs::path& dir, const FramePattern& p)
{
    std::map<std::size_t, fs::path> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::smatch m;
        if (std::regex_match(name, m, p.regex)) {
            found.emplace(std::stoull(m[1].str()), entry.path());
        }
    }
    return found;
}

std::string default_pattern(std::size_t channels)
{
    return channels == 1 ? "frame_%06d.pgm" : kDefaultFramePattern;
}

} // namespace

std::uint8_t quantize_8bit(float x)
{
    const long v = std::lround(static_cast<double>(x) * 255.0);
    return static_cast<std::uint8_t>(std::clamp<long>(v, 0, 255));
}

Frame read_pnm(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[2];
    if (!in.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
        throw std::runtime_error(path.string() + ": not a binary PGM/PPM (P5/P6) file");
    }
    const std::size_t channels = magic[1] == '6' ? 3 : 1;
    const std::size_t width = read_header_int(in, path);
    const std::size_t height = read_header_int(in, path);
    const std::size_t maxval = read_header_int(in, path);
    if (maxval > 65535) throw std::runtime_error(path.string() + ": maxval out of range");
    in.get(); // single whitespace byte before the raster

    const std::size_t count = width * height * channels;
    const std::size_t bytes_per = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(count * bytes_per);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw std::runtime_error(path.string() + ": truncated raster");
    }
    std::vector<float> px(count);
    const double scale = bytes_per == 1 ? 255.0 : 65535.0;
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned v = bytes_per == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
        px[i] = static_cast<float>(std::min(1.0, v / scale));
    }
    return Frame({height, width, channels}, std::move(px));
}

void write_pnm(const fs::path& path, const Frame& frame)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << (frame.channels() == 3 ? "P6" : "P5") << '\n'
        << frame.width() << ' ' << frame.height() << '\n'
        << 255 << '\n';
    std::vector<unsigned char> raw(frame.size());
    std::transform(frame.pixels().begin(), frame.pixels().end(), raw.begin(), quantize_8bit);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

FrameSequence load_sequence(const fs::path& dir, const std::string& pattern)
{
    if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
    std::map<std::size_t, fs::path> files;
    if (pattern.empty()) {
        files = match_files(dir, parse_pattern(default_pattern(3)));
        if (files.empty()) files = match_files(dir, parse_pattern(default_pattern(1)));
    } else {
        files = match_files(dir, parse_pattern(pattern));
    }
    if (files.empty()) {
        throw std::runtime_error(dir.string() + ": no frames match pattern '" +
                                 (pattern.empty() ? std::string(kDefaultFramePattern) : pattern) +
                                 "'");
    }

    std::vector<Frame> frames;
    const std::size_t first = files.begin()->first;
    fs::path first_path;
    for (const auto& [index, path] : files) {
        if (index != first + frames.size()) {
            throw std::runtime_error(dir.string() + ": gap in frame numbering before " +
                                     path.filename().string());
        }
        Frame f = read_pnm(path);
        if (!frames.empty() && f.shape() != frames.front().shape()) {
            throw std::runtime_error(path.filename().string() + " has shape " +
                                     to_string(f.shape()) + ", expected " +
                                     to_string(frames.front().shape()) + " from " +
                                     first_path.filename().string());
        }
        if (frames.empty()) first_path = path;
        frames.push_back(std::move(f));
    }
    return FrameSequence(std::move(frames), dir.string());
}

void save_sequence(const FrameSequence& seq, const fs::path& dir, const std::string& pattern)
{
    if (seq.empty()) throw std::invalid_argument("cannot save an empty sequence");
    fs::create_directories(dir);
    const FramePattern p = parse_pattern(pattern.empty() ? default_pattern(seq.shape().channels)
                                                         : pattern);
    for (std::size_t i = 0; i < seq.size(); ++i) write_pnm(dir / p.format(i), seq[i]);
}

std::vector<PatchWindow> extract_patches(const FrameSequence& seq, std::size_t patch_size,
                                         std::size_t stride, std::uint64_t seed)
{
    const FrameShape s = seq.shape();
    if (patch_size == 0 || patch_size % 4 != 0) {
        throw std::invalid_argument("patch size must be a positive multiple of 4, got " +
                                    std::to_string(patch_size));
    }
    if (patch_size > s.height || patch_size > s.width) {
        throw std::invalid_argument("patch size " + std::to_string(patch_size) +
                                    " exceeds frame " + to_string(s));
    }
    if (stride == 0) throw std::invalid_argument("window stride must be positive");

    std::vector<PatchWindow> windows;
    if (seq.size() < kWindowLength) return windows;
    for (std::size_t c = kWindowRadius; c + kWindowRadius < seq.size(); c += stride) {
        std::mt19937_64 rng(derive_seed(seed, c));
        PatchWindow w;
        w.center = c;
        w.y = static_cast<std::size_t>(rng() % (s.height - patch_size + 1));
        w.x = static_cast<std::size_t>(rng() % (s.width - patch_size + 1));
        for (std::size_t k = c - kWindowRadius; k <= c + kWindowRadius; ++k) {
            w.frames.push_back(seq[k].crop(w.y, w.x, patch_size, patch_size));
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

DatasetSplit split(const std::vector<FrameSequence>& data, double val_fraction,
                   std::uint64_t seed)
{
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("val_fraction must lie in (0, 1)");
    }
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    std::size_t n_val = 0;
    if (n >= 2) {
        n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
        n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    }
    DatasetSplit out;
    out.val_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(out.val_indices.begin(), out.val_indices.end());
    std::sort(out.train_indices.begin(), out.train_indices.end());
    for (auto i : out.train_indices) out.train.push_back(data[i]);
    for (auto i : out.val_indices) out.val.push_back(data[i]);
    return out;
}

FrameSequence make_synthetic_sequence(const SyntheticSceneOptions& opts, std::uint64_t seed)
{
    if (opts.frames == 0) throw std::invalid_argument("synthetic sequence needs >= 1 frame");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t C = opts.channels;
    const double H = static_cast<double>(opts.height);
    const double W = static_cast<double>(opts.width);

    struct Blob {
        double cx, cy, rx, ry, vx, vy;
        double color[3];
    };
    double base[3], tilt[3];
    for (std::size_t c = 0; c < 3; ++c) {
        base[c] = 0.25 + 0.3 * unit(rng);
        tilt[c] = 0.2 * (unit(rng) - 0.5);
    }
    const double dir = 2.0 * std::numbers::pi * unit(rng);
    const double wave_freq = 2.0 * std::numbers::pi * (1.0 + 2.0 * unit(rng)) / std::max(H, W);
    const double wave_phase = 2.0 * std::numbers::pi * unit(rng);

    std::vector<Blob> blobs(opts.objects);
    const double rmin = 0.08 * std::min(H, W), rmax = 0.22 * std::min(H, W);
    for (auto& b : blobs) {
        b.cx = W * unit(rng);
        b.cy = H * unit(rng);
        b.rx = rmin + (rmax - rmin) * unit(rng);
        b.ry = rmin + (rmax - rmin) * unit(rng);
        const double speed = opts.max_speed_px * unit(rng);
        const double heading = 2.0 * std::numbers::pi * unit(rng);
        b.vx = speed * std::cos(heading);
        b.vy = speed * std::sin(heading);
        for (double& c : b.color) c = 0.1 + 0.65 * unit(rng);
    }

    std::vector<Frame> frames;
    for (std::size_t t = 0; t < opts.frames; ++t) {
        Frame f({opts.height, opts.width, C});
        for (std::size_t y = 0; y < opts.height; ++y) {
            for (std::size_t x = 0; x < opts.width; ++x) {
                const double u = (std::cos(dir) * (x - W / 2) + std::sin(dir) * (y - H / 2)) /
                                 std::max(H, W);
                const double wave =
                    0.05 * std::sin(wave_freq * (x * std::sin(dir) - y * std::cos(dir)) + wave_phase);
                double px[3];
                for (std::size_t c = 0; c < 3; ++c) px[c] = base[c] + tilt[c] * u + wave;
                for (const auto& b : blobs) {
                    const double dx = (x - (b.cx + b.vx * t)) / b.rx;
                    const double dy = (y - (b.cy + b.vy * t)) / b.ry;
                    // Soft edge roughly 1.5 px wide.
                    const double r = std::sqrt(dx * dx + dy * dy);
                    const double edge = 1.5 / std::min(b.rx, b.ry);
                    const double a = std::clamp((1.0 - r) / edge + 0.5, 0.0, 1.0);
                    const double alpha = a * a * (3.0 - 2.0 * a);
                    for (std::size_t c = 0; c < 3; ++c) px[c] = (1 - alpha) * px[c] + alpha * b.color[c];
                }
                if (C == 1) {
                    f.at(y, x, 0) = static_cast<float>(
                        std::clamp((px[0] + px[1] + px[2]) / 3.0, 0.0, 1.0));
                } else {
                    for (std::size_t c = 0; c < 3; ++c) {
                        f.at(y, x, c) = static_cast<float>(std::clamp(px[c], 0.0, 1.0));
                    }
                }
            }
        }
        frames.push_back(std::move(f));
    }
    return FrameSequence(std::move(frames), "synthetic:" + std::to_string(seed));
}

} // namespace derain
