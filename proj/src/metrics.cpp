#include "dagan/metrics.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dagan/errors.hpp"

namespace dagan::metrics {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    tn += other.tn;
    return *this;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const torch::Tensor& pred, const torch::Tensor& target,
                           double threshold) {
    if (pred.sizes() != target.sizes()) {
        throw ShapeError("accumulate: prediction and target shapes differ");
    }
    auto p = pred.detach().gt(threshold);
    auto t = target.detach().gt(threshold);
    const auto tp = p.logical_and(t).sum().item<int64_t>();
    const auto fp = p.logical_and(t.logical_not()).sum().item<int64_t>();
    const auto fn = p.logical_not().logical_and(t).sum().item<int64_t>();
    cm.tp += static_cast<uint64_t>(tp);
    cm.fp += static_cast<uint64_t>(fp);
    cm.fn += static_cast<uint64_t>(fn);
    cm.tn += static_cast<uint64_t>(p.numel() - tp - fp - fn);
    return cm;
}

namespace {

// num / den, or the empty-agreement sentinel when den == 0.
double ratio_or(double num, double den, bool empty_agreement) {
    if (den == 0.0) {
        return empty_agreement ? 1.0 : 0.0;
    }
    return num / den;
}

}  // namespace

double expected_agreement(const ConfusionMatrix& cm) {
    const double tp = static_cast<double>(cm.tp);
    const double fp = static_cast<double>(cm.fp);
    const double fn = static_cast<double>(cm.fn);
    const double tn = static_cast<double>(cm.tn);
    const double total = tp + fp + fn + tn;
    return ((tn + fn) * (tn + fp) + (fp + tp) * (fn + tp)) / (total * total);
}

MetricReport compute_all(const ConfusionMatrix& cm) {
    if (cm.total() == 0) {
        throw std::invalid_argument("compute_all: confusion matrix is empty");
    }
    const double tp = static_cast<double>(cm.tp);
    const double fp = static_cast<double>(cm.fp);
    const double fn = static_cast<double>(cm.fn);
    const double tn = static_cast<double>(cm.tn);
    const double total = tp + fp + fn + tn;
    const bool no_positives = cm.tp == 0 && cm.fp == 0 && cm.fn == 0;
    const bool no_negatives = cm.tn == 0 && cm.fp == 0 && cm.fn == 0;

    MetricReport r;
    r.counts = cm;
    r.precision = ratio_or(tp, tp + fp, no_positives);
    r.recall = ratio_or(tp, tp + fn, no_positives);
    r.f1 = (r.precision + r.recall) == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    r.oa = (tp + tn) / total;
    const double pe = expected_agreement(cm);
    // P_e == 1 only when both maps are a single identical class.
    r.kappa = pe == 1.0 ? (r.oa == 1.0 ? 1.0 : 0.0) : (r.oa - pe) / (1.0 - pe);
    r.iou = ratio_or(tp, tp + fp + fn, no_positives);
    r.miou = 0.5 * (r.iou + ratio_or(tn, tn + fp + fn, no_negatives));
    return r;
}

std::string to_json(const MetricReport& report) {
    nlohmann::json j = {{"precision", report.precision},
                        {"recall", report.recall},
                        {"f1", report.f1},
                        {"oa", report.oa},
                        {"kappa", report.kappa},
                        {"iou", report.iou},
                        {"miou", report.miou},
                        {"tp", report.counts.tp},
                        {"fp", report.counts.fp},
                        {"fn", report.counts.fn},
                        {"tn", report.counts.tn}};
    return j.dump();
}

void write_per_image_csv(const std::filesystem::path& path, const std::vector<ImageTally>& rows) {
    std::ofstream os(path);
    if (!os) {
        throw DataError("cannot write " + path.string());
    }
    os << "id,tp,fp,fn,tn\n";
    for (const auto& row : rows) {
        os << row.id << ',' << row.counts.tp << ',' << row.counts.fp << ',' << row.counts.fn << ',' << row.counts.tn
           << '\n';
    }
}

torch::Tensor error_map(const torch::Tensor& pred, const torch::Tensor& target, double threshold) {
    auto p = pred.detach().squeeze().gt(threshold);
    auto t = target.detach().squeeze().gt(threshold);
    if (p.sizes() != t.sizes() || p.dim() != 2) {
        throw ShapeError("error_map: expects two single-channel maps of equal size");
    }
    auto out = torch::zeros({p.size(0), p.size(1), 3}, torch::kUInt8);
    auto tp = p.logical_and(t);
    auto fp = p.logical_and(t.logical_not());
    auto fn = p.logical_not().logical_and(t);
    out.index_put_({tp}, torch::tensor({255, 255, 255}, torch::kUInt8));
    out.index_put_({fp}, torch::tensor({255, 0, 0}, torch::kUInt8));
    out.index_put_({fn}, torch::tensor({0, 0, 255}, torch::kUInt8));
    return out;
}

}  // namespace dagan::metrics
