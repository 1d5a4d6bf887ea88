#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "mricascade/tensor.hpp"

namespace mricascade::metrics {

struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
};

// Degenerate denominators yield an empty optional, never a conventional 0.
struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> specificity;
    std::optional<double> f1;
    std::optional<double> dice;
};

inline ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("confusion: predictions/labels length mismatch");
    if (predictions.empty()) throw std::invalid_argument("confusion: empty input");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], y = labels[i];
        if ((p != 0 && p != 1) || (y != 0 && y != 1))
            throw std::invalid_argument("confusion: entries must be 0 or 1");
        if (p == 1 && y == 1)
            ++cm.tp;
        else if (p == 1 && y == 0)
            ++cm.fp;
        else if (p == 0 && y == 1)
            ++cm.fn;
        else
            ++cm.tn;
    }
    return cm;
}

inline MetricsReport classification_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("classification_metrics: empty confusion matrix");
    const double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
    const double fn = static_cast<double>(cm.fn), tn = static_cast<double>(cm.tn);
    MetricsReport r;
    r.accuracy = (tp + tn) / (tp + fp + fn + tn);
    if (cm.tp + cm.fp > 0) r.precision = tp / (tp + fp);
    if (cm.tp + cm.fn > 0) r.recall = tp / (tp + fn);
    if (cm.tn + cm.fp > 0) r.specificity = tn / (tn + fp);
    if (r.precision && r.recall && (*r.precision + *r.recall > 0.0))
        r.f1 = 2.0 * *r.recall * *r.precision / (*r.recall + *r.precision);
    return r;
}

inline double dice(const Mask& pred, const Mask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("dice: mask shapes differ");
    std::uint64_t inter = 0, sum = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        if (pred.v[i] > 1 || gt.v[i] > 1) throw std::invalid_argument("dice: masks must be binary");
        inter += pred.v[i] & gt.v[i];
        sum += pred.v[i] + gt.v[i];
    }
    if (sum == 0) return 1.0;  // both empty
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sum);
}

inline nlohmann::json to_json(const MetricsReport& r) {
    auto cell = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {{"accuracy", cell(r.accuracy)}, {"precision", cell(r.precision)},
            {"recall", cell(r.recall)},     {"specificity", cell(r.specificity)},
            {"f1", cell(r.f1)},             {"dice", cell(r.dice)}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
    auto cell = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<double>();
    };
    MetricsReport r;
    r.accuracy = cell("accuracy");
    r.precision = cell("precision");
    r.recall = cell("recall");
    r.specificity = cell("specificity");
    r.f1 = cell("f1");
    r.dice = cell("dice");
    return r;
}

}  // namespace mricascade::metrics
