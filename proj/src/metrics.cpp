#include "gradiseg/metrics.hpp"

#include "gradiseg/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>

namespace gradiseg {

namespace {

constexpr int kClasses = 256;
using Counts = std::array<std::int64_t, kClasses>;

void check_same(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size()) {
        throw ValidationError("mask size mismatch");
    }
}

// 1 where the (2 band + 1)^2 window around a pixel reaches the image exterior
// or a pixel of another class, i.e. the pixel lies on its own class's inner
// boundary band.
std::vector<std::uint8_t> inner_band(const Mask& m, int band) {
    const int w = m.width;
    const int h = m.height;
    std::vector<std::uint8_t> out(m.data.size(), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint8_t c = m.at(x, y);
            if (x < band || y < band || x + band >= w || y + band >= h) {
                out[static_cast<std::size_t>(y) * w + x] = 1;
                continue;
            }
            bool edge = false;
            for (int dy = -band; dy <= band && !edge; ++dy) {
                for (int dx = -band; dx <= band; ++dx) {
                    if (m.at(x + dx, y + dy) != c) {
                        edge = true;
                        break;
                    }
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = edge ? 1 : 0;
        }
    }
    return out;
}

struct Tally {
    Counts inter{}, uni{}, present{};
    Counts b_inter{}, b_uni{};
};

void tally(const Mask& pred, const Mask& gt, int band, Tally& t) {
    check_same(pred, gt);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const int g = gt.data[i];
        const int p = pred.data[i];
        ++t.present[g];
        if (g == p) {
            ++t.inter[g];
            ++t.uni[g];
        } else {
            ++t.uni[g];
            ++t.uni[p];
        }
    }
    if (band <= 0) return;
    const auto bg = inner_band(gt, band);
    const auto bp = inner_band(pred, band);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const int g = gt.data[i];
        const int p = pred.data[i];
        // B_gt(c) holds pixel i iff gt=c and bg[i]; same for pred.
        if (g == p) {
            if (bg[i] && bp[i]) ++t.b_inter[g];
            if (bg[i] || bp[i]) ++t.b_uni[g];
        } else {
            if (bg[i]) ++t.b_uni[g];
            if (bp[i]) ++t.b_uni[p];
        }
    }
}

double ratio(std::int64_t a, std::int64_t b) {
    return b == 0 ? 1.0 : static_cast<double>(a) / static_cast<double>(b);
}

}  // namespace

double miou(const Mask& pred, const Mask& gt) {
    Tally t;
    tally(pred, gt, 0, t);
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c < kClasses; ++c) {
        if (t.present[c] == 0) continue;
        sum += ratio(t.inter[c], t.uni[c]);
        ++n;
    }
    if (n == 0) {
        // No foreground in gt: perfect only when pred agrees.
        return std::all_of(pred.data.begin(), pred.data.end(), [](auto v) { return v == 0; })
                   ? 1.0
                   : 0.0;
    }
    return sum / n;
}

double mbiou(const Mask& pred, const Mask& gt, int band_px) {
    if (band_px < 1) throw ValidationError("band_px must be >= 1");
    Tally t;
    tally(pred, gt, band_px, t);
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c < kClasses; ++c) {
        if (t.present[c] == 0) continue;
        sum += ratio(t.b_inter[c], t.b_uni[c]);
        ++n;
    }
    if (n == 0) {
        return std::all_of(pred.data.begin(), pred.data.end(), [](auto v) { return v == 0; })
                   ? 1.0
                   : 0.0;
    }
    return sum / n;
}

int default_band(int width, int height) {
    const double diag = std::hypot(static_cast<double>(width), static_cast<double>(height));
    return std::max(1, static_cast<int>(std::lround(0.02 * diag)));
}

double psnr(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size()) {
        throw ValidationError("image size mismatch");
    }
    if (a.data.empty()) throw ValidationError("empty image");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    nlohmann::json iou = nlohmann::json::object();
    nlohmann::json biou = nlohmann::json::object();
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [c, v] : class_iou) iou[std::to_string(c)] = v;
    for (const auto& [c, v] : class_biou) biou[std::to_string(c)] = v;
    for (const auto& [c, v] : pixel_counts) counts[std::to_string(c)] = v;
    j["miou"] = miou;
    j["mbiou"] = mbiou;
    j["band_px"] = band_px;
    j["class_iou"] = iou;
    j["class_biou"] = biou;
    j["pixel_counts"] = counts;
    j["view_psnr"] = view_psnr;
    j["mean_psnr"] = mean_psnr;
    return j.dump(2);
}

EvalReport evaluate(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                    const std::vector<Image>& rendered, const std::vector<Image>& reference,
                    int band_px) {
    if (pred.size() != gt.size()) throw ValidationError("prediction/ground-truth count mismatch");
    if (rendered.size() != reference.size()) throw ValidationError("rendered/reference count mismatch");
    if (band_px < 1) throw ValidationError("band_px must be >= 1");
    EvalReport report;
    report.band_px = band_px;
    Tally t;
    for (std::size_t v = 0; v < gt.size(); ++v) tally(pred[v], gt[v], band_px, t);
    double s = 0.0, sb = 0.0;
    int n = 0;
    for (int c = 0; c < kClasses; ++c) {
        if (t.present[c] == 0) continue;
        report.pixel_counts[c] = t.present[c];
        if (c == 0) continue;
        const double iou = ratio(t.inter[c], t.uni[c]);
        const double biou = ratio(t.b_inter[c], t.b_uni[c]);
        report.class_iou[c] = iou;
        report.class_biou[c] = biou;
        s += iou;
        sb += biou;
        ++n;
    }
    report.miou = n ? s / n : 1.0;
    report.mbiou = n ? sb / n : 1.0;
    double ps = 0.0;
    for (std::size_t v = 0; v < rendered.size(); ++v) {
        report.view_psnr.push_back(psnr(rendered[v], reference[v]));
        ps += report.view_psnr.back();
    }
    report.mean_psnr = rendered.empty() ? 0.0 : ps / static_cast<double>(rendered.size());
    return report;
}

}  // namespace gradiseg
