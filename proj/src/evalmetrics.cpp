#include "sspl/evalmetrics.hpp"

#include <cstdio>

#include "sspl/errors.hpp"

namespace sspl {

std::vector<uint8_t> binarize_map(const Tensor<float>& map) {
    std::vector<uint8_t> m(static_cast<size_t>(map.size()));
    for (int64_t i = 0; i < map.size(); ++i) m[static_cast<size_t>(i)] = map.data()[i] >= 0.5f;
    return m;
}

float per_sample_ciou(const std::vector<uint8_t>& mask, const std::vector<uint8_t>& gt_mask) {
    if (mask.size() != gt_mask.size()) throw DimError("per_sample_ciou: shape mismatch");
    int64_t gt = 0, inter = 0, spill = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        gt += gt_mask[i];
        if (mask[i] && gt_mask[i]) ++inter;
        if (mask[i] && !gt_mask[i]) ++spill;
    }
    if (gt == 0) throw UsageError("per_sample_ciou: empty ground-truth mask");
    return static_cast<float>(inter) / static_cast<float>(gt + spill);
}

float success_ratio(const std::vector<float>& cious, float tau) {
    if (cious.empty()) throw UsageError("success_ratio: empty sample list");
    int64_t hits = 0;
    for (float c : cious)
        if (c >= tau) ++hits;
    return static_cast<float>(hits) / static_cast<float>(cious.size());
}

EvalReport build_report(std::vector<float> cious) {
    if (cious.empty()) throw UsageError("build_report: empty sample list");
    EvalReport r;
    r.per_sample_ciou = std::move(cious);
    for (int i = 0; i <= 20; ++i) {
        const float tau = 0.05f * static_cast<float>(i);
        r.thresholds.push_back(tau);
        r.success_curve.push_back(success_ratio(r.per_sample_ciou, tau));
    }
    r.ciou_at_half = r.success_curve[10];
    double auc = 0;
    for (size_t i = 0; i + 1 < r.success_curve.size(); ++i)
        auc += 0.5 * (r.success_curve[i] + r.success_curve[i + 1]) * 0.05;
    r.auc = static_cast<float>(auc);
    return r;
}

std::string report_to_csv(const EvalReport& report) {
    std::string out;
    char line[64];
    for (size_t i = 0; i < report.thresholds.size(); ++i) {
        std::snprintf(line, sizeof(line), "%.2f,%.6f\n", report.thresholds[i],
                      report.success_curve[i]);
        out += line;
    }
    std::snprintf(line, sizeof(line), "ciou_at_half,%.6f\n", report.ciou_at_half);
    out += line;
    std::snprintf(line, sizeof(line), "auc,%.6f\n", report.auc);
    out += line;
    return out;
}

} // namespace sspl
