#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dagan::metrics {

// Pixel tallies for the binary change / no-change task.
struct ConfusionMatrix {
    uint64_t tp = 0;
    uint64_t fp = 0;
    uint64_t fn = 0;
    uint64_t tn = 0;

    uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    friend ConfusionMatrix operator+(ConfusionMatrix l, const ConfusionMatrix& r) { return l += r; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Adds the tallies of `pred` vs `target`. Both maps are binarized with
// `value > threshold`, so {0,1} masks and probability maps are both accepted.
ConfusionMatrix accumulate(ConfusionMatrix cm, const torch::Tensor& pred, const torch::Tensor& target,
                           double threshold = 0.5);

struct MetricReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double oa = 0.0;
    double kappa = 0.0;
    double iou = 0.0;   // change-class IoU, TP / (TP + FP + FN)
    double miou = 0.0;  // mean of change and no-change IoU
    ConfusionMatrix counts;
};

// Ratios with an empty denominator are 1.0 when both maps agree that there is
// nothing to count (no positives anywhere, or no negatives anywhere for the
// no-change terms), and 0.0 otherwise. Throws std::invalid_argument on an
// empty matrix.
MetricReport compute_all(const ConfusionMatrix& cm);

// Chance agreement P_e used by kappa.
double expected_agreement(const ConfusionMatrix& cm);

// Structured-text report (JSON, keys sorted) with six metrics, miou and counts.
std::string to_json(const MetricReport& report);

struct ImageTally {
    std::string id;
    ConfusionMatrix counts;
};
void write_per_image_csv(const std::filesystem::path& path, const std::vector<ImageTally>& rows);

// Colour-coded error map, uint8 [H, W, 3]: white TP, red FP, blue FN, black TN.
torch::Tensor error_map(const torch::Tensor& pred, const torch::Tensor& target, double threshold = 0.5);

}  // namespace dagan::metrics
