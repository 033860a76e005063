#include "derain/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace derain {

namespace {

void require_same_shape(const char* what, const Frame& a, const Frame& b)
{
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

// One channel of a frame, scaled to 0..peak, as a dense H x W plane.
std::vector<double> channel_plane(const Frame& f, std::size_t c, double peak)
{
    std::vector<double> out(f.height() * f.width());
    const auto px = f.pixels();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = peak * px[i * f.channels() + c];
    return out;
}

double ssim_formula(double mx, double my, double vx, double vy, double cxy, const SsimOptions& o)
{
    const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak);
    const double c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
    const double cross = o.form == SsimForm::covariance
                             ? cxy
                             : std::sqrt(std::max(vx, 0.0)) * std::sqrt(std::max(vy, 0.0));
    return ((2.0 * mx * my + c1) * (2.0 * cross + c2)) /
           ((mx * mx + my * my + c1) * (vx + vy + c2));
}

// Valid-mode separable filtering of an H x W plane with a 1-D kernel.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& k)
{
    const std::size_t n = k.size();
    const std::size_t wo = w - n + 1, ho = h - n + 1;
    std::vector<double> rows(h * wo);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += k[i] * plane[y * w + x + i];
            rows[y * wo + x] = acc;
        }
    }
    std::vector<double> out(ho * wo);
    for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += k[i] * rows[(y + i) * wo + x];
            out[y * wo + x] = acc;
        }
    }
    return out;
}

std::vector<double> window_kernel(const SsimOptions& o)
{
    if (o.window < 1 || o.window % 2 == 0) throw std::invalid_argument("SSIM window must be odd");
    const int r = o.window / 2;
    std::vector<double> k(o.window);
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-(i * i) / (2.0 * o.window_sigma * o.window_sigma));
        total += k[i + r];
    }
    for (auto& v : k) v /= total;
    return k;
}

std::string format_double(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

double psnr_values(std::span<const double> f, std::span<const double> g, double peak)
{
    if (f.size() != g.size() || f.empty()) {
        throw std::invalid_argument("psnr: inputs must be nonempty and of equal size");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double d = f[i] - g[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(f.size());
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Frame& f, const Frame& g, double peak)
{
    require_same_shape("psnr", f, g);
    std::vector<double> a(f.size()), b(g.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = peak * f.pixels()[i];
        b[i] = peak * g.pixels()[i];
    }
    return psnr_values(a, b, peak);
}

double ssim(const Frame& x, const Frame& y, const SsimOptions& opts)
{
    require_same_shape("ssim", x, y);
    const auto n = static_cast<std::size_t>(opts.window);
    if (x.height() < n || x.width() < n) {
        throw std::invalid_argument("ssim: frame " + to_string(x.shape()) +
                                    " is smaller than the " + std::to_string(n) + "x" +
                                    std::to_string(n) + " window");
    }
    const auto k = window_kernel(opts);
    const std::size_t h = x.height(), w = x.width();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < x.channels(); ++c) {
        const auto px = channel_plane(x, c, opts.peak);
        const auto py = channel_plane(y, c, opts.peak);
        std::vector<double> xx(px.size()), yy(px.size()), xy(px.size());
        for (std::size_t i = 0; i < px.size(); ++i) {
            xx[i] = px[i] * px[i];
            yy[i] = py[i] * py[i];
            xy[i] = px[i] * py[i];
        }
        const auto mx = filter_valid(px, h, w, k);
        const auto my = filter_valid(py, h, w, k);
        const auto sxx = filter_valid(xx, h, w, k);
        const auto syy = filter_valid(yy, h, w, k);
        const auto sxy = filter_valid(xy, h, w, k);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cxy = sxy[i] - mx[i] * my[i];
            total += ssim_formula(mx[i], my[i], vx, vy, cxy, opts);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

double ssim_global(const Frame& x, const Frame& y, const SsimOptions& opts)
{
    require_same_shape("ssim_global", x, y);
    double total = 0.0;
    for (std::size_t c = 0; c < x.channels(); ++c) {
        const auto px = channel_plane(x, c, opts.peak);
        const auto py = channel_plane(y, c, opts.peak);
        const double n = static_cast<double>(px.size());
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < px.size(); ++i) {
            mx += px[i];
            my += py[i];
        }
        mx /= n;
        my /= n;
        double vx = 0.0, vy = 0.0, cxy = 0.0;
        for (std::size_t i = 0; i < px.size(); ++i) {
            vx += (px[i] - mx) * (px[i] - mx);
            vy += (py[i] - my) * (py[i] - my);
            cxy += (px[i] - mx) * (py[i] - my);
        }
        total += ssim_formula(mx, my, vx / n, vy / n, cxy / n, opts);
    }
    return total / static_cast<double>(x.channels());
}

MetricReport evaluate_sequences(const FrameSequence& pred, const FrameSequence& ref,
                                const SsimOptions& opts)
{
    if (pred.size() != ref.size()) {
        throw std::invalid_argument("evaluate_sequences: length mismatch " +
                                    std::to_string(pred.size()) + " vs " +
                                    std::to_string(ref.size()));
    }
    MetricReport report;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        report.frames.push_back({psnr(pred[i], ref[i], opts.peak), ssim(pred[i], ref[i], opts)});
    }
    return merge_reports({report});
}

MetricReport merge_reports(const std::vector<MetricReport>& reports)
{
    MetricReport out;
    for (const auto& r : reports) out.frames.insert(out.frames.end(), r.frames.begin(), r.frames.end());
    double psnr_sum = 0.0, ssim_sum = 0.0;
    std::size_t finite = 0;
    for (const auto& f : out.frames) {
        if (std::isinf(f.psnr_db)) {
            ++out.infinite_psnr_count;
        } else {
            psnr_sum += f.psnr_db;
            ++finite;
        }
        ssim_sum += f.ssim;
    }
    out.mean_psnr_db = finite ? psnr_sum / static_cast<double>(finite)
                              : std::numeric_limits<double>::quiet_NaN();
    out.mean_ssim = out.frames.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : ssim_sum / static_cast<double>(out.frames.size());
    return out;
}

void write_metric_csv(const std::filesystem::path& path, const MetricReport& report)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "frame_idx,psnr_db,ssim\n";
    for (std::size_t i = 0; i < report.frames.size(); ++i) {
        out << i << ',' << format_double(report.frames[i].psnr_db) << ','
            << format_double(report.frames[i].ssim) << '\n';
    }
}

void write_metric_json(const std::filesystem::path& path, const MetricReport& report)
{
    nlohmann::ordered_json j;
    j["frames"] = report.frames.size();
    j["mean_psnr_db"] = std::isnan(report.mean_psnr_db) ? nlohmann::ordered_json(nullptr)
                                                        : nlohmann::ordered_json(report.mean_psnr_db);
    j["infinite_psnr_count"] = report.infinite_psnr_count;
    j["mean_ssim"] = report.mean_ssim;
    j["channel_handling"] = "mean over channels";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

} // namespace derain
