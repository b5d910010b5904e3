#pragma once

#include <string>
#include <vector>

#include "sspl/tensor.hpp"

namespace sspl {

/// Localization scores over a sample set: per-sample cIoU, the success-ratio
/// curve over the 21-point threshold grid, success at 0.5, and trapezoidal AUC.
struct EvalReport {
    std::vector<float> per_sample_ciou;
    std::vector<float> thresholds;   // 0.00, 0.05, ..., 1.00
    std::vector<float> success_curve; // fraction with cIoU >= tau
    float ciou_at_half = 0;
    float auc = 0;
};

/// mask(i,j) = 1 iff M(i,j) >= 0.5; M is the minmax-scaled localization map.
std::vector<uint8_t> binarize_map(const Tensor<float>& map);

/// |mask and gt| / (|gt| + |mask and not-gt|); equals IoU for binary masks.
float per_sample_ciou(const std::vector<uint8_t>& mask, const std::vector<uint8_t>& gt_mask);

/// Fraction of samples whose cIoU reaches tau.
float success_ratio(const std::vector<float>& cious, float tau);

/// Builds the full report (curve, success@0.5, trapezoidal AUC) from cIoUs.
EvalReport build_report(std::vector<float> cious);

/// Plain-text comma-separated table: one (tau, success) row per grid point,
/// then trailing rows for ciou_at_half and auc.
std::string report_to_csv(const EvalReport& report);

} // namespace sspl
