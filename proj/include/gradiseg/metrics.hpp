#pragma once

#include "gradiseg/image.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gradiseg {

inline constexpr double kPsnrCap = 99.0;

/// Mean IoU over classes present in gt, background 0 excluded. 1.0 when gt
/// has no foreground class and pred has none either.
double miou(const Mask& pred, const Mask& gt);

/// Boundary IoU averaged the same way. The boundary band of a class region
/// X is every pixel of X within band_px (Chebyshev) of a pixel outside X,
/// with the image exterior counting as outside.
double mbiou(const Mask& pred, const Mask& gt, int band_px);

/// max(1, round(0.02 * image diagonal)).
int default_band(int width, int height);

/// 10 log10(1 / MSE) over all channels; identical images report kPsnrCap.
double psnr(const Image& a, const Image& b);

struct EvalReport {
    std::map<int, double> class_iou;
    std::map<int, double> class_biou;
    double miou = 0.0;
    double mbiou = 0.0;
    std::vector<double> view_psnr;
    double mean_psnr = 0.0;
    std::map<int, std::int64_t> pixel_counts;  // gt pixels per class
    int band_px = 1;

    std::string to_json() const;
};

/// Scores one or more (prediction, ground truth) pairs. IoUs are computed on
/// the pooled pixel counts of all views.
EvalReport evaluate(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                    const std::vector<Image>& rendered, const std::vector<Image>& reference,
                    int band_px);

}  // namespace gradiseg
