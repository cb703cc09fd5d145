#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgraseg/errors.hpp"

// Segmentation quality metrics following the Cityscapes protocol: a pooled
// confusion matrix over all pixels, pixel accuracy = trace/total, and mIoU
// averaged over classes that appear at all (TP+FP+FN > 0). Ground-truth
// pixels carrying the ignore label (255, the void category) contribute
// nothing; predictions never carry ignore.

namespace cgraseg {

struct LabelMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> data; // row-major

    static LabelMap filled(std::uint32_t width, std::uint32_t height, std::uint8_t value) {
        return LabelMap{width, height,
                        std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height,
                                                  value)};
    }
    std::uint8_t at(std::uint32_t y, std::uint32_t x) const {
        return data[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t& at(std::uint32_t y, std::uint32_t x) {
        return data[static_cast<std::size_t>(y) * width + x];
    }
};

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::uint32_t num_classes = 19, std::uint32_t ignore_label = 255)
        : num_classes_(num_classes), ignore_label_(ignore_label),
          counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
        if (num_classes < 1) throw MetricsError("num_classes must be >= 1");
        if (ignore_label < num_classes) {
            throw MetricsError("ignore_label must not collide with a class id");
        }
    }

    std::uint32_t num_classes() const { return num_classes_; }
    std::uint32_t ignore_label() const { return ignore_label_; }
    std::uint64_t total() const { return total_; }

    std::uint64_t at(std::uint32_t gt, std::uint32_t pred) const {
        return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
    }

    // counts[gt][pred] += 1 for every pixel whose ground truth is not ignored.
    void update(const LabelMap& pred, const LabelMap& gt) {
        if (pred.width != gt.width || pred.height != gt.height) {
            throw MetricsError("prediction and ground truth dimensions differ");
        }
        for (std::size_t i = 0; i < gt.data.size(); ++i) {
            const std::uint8_t g = gt.data[i];
            if (g == ignore_label_) continue;
            const std::uint8_t p = pred.data[i];
            if (g >= num_classes_) {
                throw MetricsError("ground-truth label " + std::to_string(g) + " out of range");
            }
            if (p >= num_classes_) {
                throw MetricsError("predicted label " + std::to_string(p) + " out of range");
            }
            ++counts_[static_cast<std::size_t>(g) * num_classes_ + p];
            ++total_;
        }
    }

    // Confusion matrices are mergeable monoids; sharded accumulation followed
    // by a merge must equal serial accumulation.
    void merge(const ConfusionMatrix& other) {
        if (other.num_classes_ != num_classes_ || other.ignore_label_ != ignore_label_) {
            throw MetricsError("cannot merge confusion matrices with different setups");
        }
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
        total_ += other.total_;
    }

    double pixel_accuracy() const {
        if (total_ == 0) throw MetricsError("empty confusion matrix");
        std::uint64_t diag = 0;
        for (std::uint32_t c = 0; c < num_classes_; ++c) diag += at(c, c);
        return static_cast<double>(diag) / static_cast<double>(total_);
    }

    // IoU_c = TP / (TP + FP + FN); classes absent from both prediction and
    // ground truth are excluded from the mean.
    std::vector<std::optional<double>> per_class_iou() const {
        std::vector<std::optional<double>> out(num_classes_);
        for (std::uint32_t c = 0; c < num_classes_; ++c) {
            const std::uint64_t tp = at(c, c);
            std::uint64_t row = 0, col = 0;
            for (std::uint32_t k = 0; k < num_classes_; ++k) {
                row += at(c, k);
                col += at(k, c);
            }
            const std::uint64_t denom = row + col - tp; // TP + FP + FN
            if (denom > 0) out[c] = static_cast<double>(tp) / static_cast<double>(denom);
        }
        return out;
    }

    double mean_iou() const {
        if (total_ == 0) throw MetricsError("empty confusion matrix");
        double sum = 0.0;
        std::uint32_t included = 0;
        for (const auto& iou : per_class_iou()) {
            if (iou) {
                sum += *iou;
                ++included;
            }
        }
        return sum / static_cast<double>(included);
    }

private:
    std::uint32_t num_classes_;
    std::uint32_t ignore_label_;
    std::vector<std::uint64_t> counts_;
    std::uint64_t total_ = 0;
};

inline nlohmann::json metrics_to_json(const ConfusionMatrix& cm) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& iou : cm.per_class_iou()) {
        per_class.push_back(iou ? nlohmann::json(*iou) : nlohmann::json());
    }
    return nlohmann::json{{"pixel_accuracy", cm.pixel_accuracy()},
                          {"miou", cm.mean_iou()},
                          {"per_class_iou", per_class}};
}

} // namespace cgraseg
