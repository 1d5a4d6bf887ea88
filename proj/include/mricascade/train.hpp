#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mricascade/nets.hpp"
#include "mricascade/params.hpp"

namespace mricascade::train {

struct OptimizerConfig {
    double learning_rate = 0.0003;  // plain SGD, no momentum, no weight decay
};

enum class SegLossKind { bce, bce_plus_softdice };

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    std::uint64_t seed = 0;
    SegLossKind seg_loss = SegLossKind::bce;
    int early_stop_patience = 5;  // 0 disables early stopping
};

struct EpochRecord {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;  // Dice for segmenters, accuracy for classifiers
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double wall_seconds = 0.0;
};

inline nlohmann::json to_json(const TrainReport& r) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : r.epochs)
        eps.push_back({{"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_metric", e.val_metric}});
    return {{"epochs", eps}, {"best_epoch", r.best_epoch}, {"wall_seconds", r.wall_seconds}};
}

inline void sgd_step(nets::ParameterStore& params, const nets::GradStore& grads,
                     const OptimizerConfig& cfg) {
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
        throw std::invalid_argument("sgd_step: learning rate must be positive and finite");
    if (!params.same_structure(grads))
        throw std::invalid_argument("sgd_step: gradient store does not align with parameters");
    auto g = grads.begin();
    for (auto p = params.begin(); p != params.end(); ++p, ++g) {
        double* theta = p->second.data();
        const double* grad = g->second.data();
        const std::size_t n = p->second.numel();
        for (std::size_t i = 0; i < n; ++i) theta[i] -= cfg.learning_rate * grad[i];
    }
}

// Mean pixelwise binary cross-entropy with probabilities clamped to
// [1e-7, 1-1e-7]; the clamp is flat, so its gradient is zero outside the band.
inline std::pair<double, Tensor> seg_loss(const Tensor& prob, const Mask& target, SegLossKind kind) {
    if (prob.dim(0) != target.height || prob.dim(1) != target.width)
        throw std::invalid_argument("seg_loss: prediction/mask shape mismatch");
    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
    const std::size_t n = prob.numel();
    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor dprob(prob.shape());
    double loss = 0.0;
    double sum_p = 0.0, sum_y = 0.0, sum_py = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(prob[i], lo, hi);
        const double y = target.v[i];
        loss -= (y * std::log(p) + (1.0 - y) * std::log(1.0 - p)) * inv_n;
        if (prob[i] > lo && prob[i] < hi)
            dprob[i] = (-y / p + (1.0 - y) / (1.0 - p)) * inv_n;
        sum_p += p;
        sum_y += y;
        sum_py += p * y;
    }
    if (kind == SegLossKind::bce_plus_softdice) {
        const double denom = sum_p + sum_y + 1.0;
        const double num = 2.0 * sum_py + 1.0;
        loss += 1.0 - num / denom;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(prob[i] > lo && prob[i] < hi)) continue;
            const double y = target.v[i];
            dprob[i] -= (2.0 * y * denom - num) / (denom * denom);
        }
    }
    return {loss, std::move(dprob)};
}

// Same objective as seg_loss but differentiated straight through the terminal
// sigmoid: d(bce)/dz = (p - y)/N stays bounded even for saturated pixels,
// where the probability-space gradient would vanish against the clamp. This
// is the composition the training loop backpropagates.
inline std::pair<double, Tensor> seg_loss_logit_grad(const Tensor& prob, const Mask& target,
                                                     SegLossKind kind) {
    if (prob.dim(0) != target.height || prob.dim(1) != target.width)
        throw std::invalid_argument("seg_loss: prediction/mask shape mismatch");
    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
    const std::size_t n = prob.numel();
    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor dlogit(prob.shape());
    double loss = 0.0;
    double sum_p = 0.0, sum_y = 0.0, sum_py = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(prob[i], lo, hi);
        const double y = target.v[i];
        loss -= (y * std::log(p) + (1.0 - y) * std::log(1.0 - p)) * inv_n;
        dlogit[i] = (prob[i] - y) * inv_n;
        sum_p += p;
        sum_y += y;
        sum_py += p * y;
    }
    if (kind == SegLossKind::bce_plus_softdice) {
        const double denom = sum_p + sum_y + 1.0;
        const double num = 2.0 * sum_py + 1.0;
        loss += 1.0 - num / denom;
        for (std::size_t i = 0; i < n; ++i) {
            const double y = target.v[i];
            const double sig_prime = prob[i] * (1.0 - prob[i]);
            dlogit[i] -= (2.0 * y * denom - num) / (denom * denom) * sig_prime;
        }
    }
    return {loss, std::move(dlogit)};
}

// Softmax cross-entropy; gradient wrt logits is softmax - one_hot.
inline std::pair<double, Tensor> cls_loss(const Tensor& logits, int label) {
    const int k = static_cast<int>(logits.numel());
    if (label < 0 || label >= k) throw std::invalid_argument("cls_loss: label out of range");
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < logits.numel(); ++i) z += std::exp(logits[i] - mx);
    const double logz = std::log(z) + mx;
    Tensor grad(logits.shape());
    for (std::size_t i = 0; i < logits.numel(); ++i) grad[i] = std::exp(logits[i] - logz);
    grad[static_cast<std::size_t>(label)] -= 1.0;
    return {logz - logits[static_cast<std::size_t>(label)], std::move(grad)};
}

inline Tensor softmax(const Tensor& logits) {
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits[i]);
    Tensor p(logits.shape());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.numel(); ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (std::size_t i = 0; i < logits.numel(); ++i) p[i] /= z;
    return p;
}

inline void save_checkpoint(const nets::ParameterStore& params, const std::string& path) {
    nets::nta::save(params, path);
}

struct LoadReport {
    nets::ParameterStore params;
    std::vector<std::string> loaded;
    std::vector<std::string> skipped_in_archive;   // archive tensors with no match
    std::vector<std::string> missing_in_archive;   // template tensors left untouched
};

// strict: archive and template must match name-for-name and shape-for-shape.
// non-strict: the intersection is loaded, everything else reported (partial
// transfer-learning import).
inline LoadReport load_pretrained(const nets::ParameterStore& params_template,
                                  const std::string& path, bool strict) {
    nets::ParameterStore archive = nets::nta::load(path);
    LoadReport report;
    report.params = params_template;
    for (const auto& [name, t] : archive) {
        if (!report.params.has(name)) {
            if (strict) throw std::runtime_error("strict load: unexpected tensor '" + name + "' in archive");
            report.skipped_in_archive.push_back(name);
            continue;
        }
        Tensor& dst = report.params.get(name);
        if (dst.shape() != t.shape()) {
            if (strict)
                throw std::runtime_error("strict load: shape mismatch for '" + name + "' (" +
                                         dst.shape_str() + " vs " + t.shape_str() + ")");
            report.skipped_in_archive.push_back(name);
            continue;
        }
        dst = t;
        report.loaded.push_back(name);
    }
    for (const auto& [name, t] : params_template)
        if (!archive.has(name)) {
            if (strict) throw std::runtime_error("strict load: tensor '" + name + "' missing from archive");
            report.missing_in_archive.push_back(name);
        }
    return report;
}

// ---------------------------------------------------------------------------
// stage-1 training: segmentation
// ---------------------------------------------------------------------------

struct SegDataset {
    std::vector<Tensor> images;  // preprocessed slices
    std::vector<Mask> masks;
};

inline Mask binarize_prob(const Tensor& prob, double threshold) {
    Mask m(prob.dim(0), prob.dim(1));
    for (std::size_t i = 0; i < prob.numel(); ++i) m.v[i] = prob[i] >= threshold ? 1 : 0;
    return m;
}

inline double dice_of(const Mask& a, const Mask& b) {
    std::uint64_t inter = 0, sum = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        inter += a.v[i] & b.v[i];
        sum += a.v[i] + b.v[i];
    }
    return sum == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(sum);
}

// Mean Dice over slices whose aligned ground truth is non-empty (falls back to
// all slices for lesion-free sets).
inline double evaluate_dice(const nets::Segmenter& model, const nets::ParameterStore& params,
                            const SegDataset& data, double threshold = 0.5) {
    double sum_pos = 0.0, sum_all = 0.0;
    int n_pos = 0, n_all = 0;
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const Tensor prob = model.forward(params, data.images[i]);
        const Mask pred = binarize_prob(prob, threshold);
        const Mask gt = model.align_target(data.masks[i]);
        const double d = dice_of(pred, gt);
        sum_all += d;
        ++n_all;
        if (gt.area() > 0) {
            sum_pos += d;
            ++n_pos;
        }
    }
    if (n_pos > 0) return sum_pos / n_pos;
    return n_all > 0 ? sum_all / n_all : 0.0;
}

inline std::pair<nets::ParameterStore, TrainReport> train_segmenter(
    const nets::Segmenter& model, const SegDataset& train_set, const SegDataset& val_set,
    const TrainConfig& cfg, const OptimizerConfig& opt,
    const std::optional<preprocess::AugmentationConfig>& aug = std::nullopt) {
    if (train_set.images.empty()) throw std::invalid_argument("train_segmenter: empty training set");
    if (train_set.masks.size() != train_set.images.size())
        throw std::invalid_argument("train_segmenter: training set lacks masks");
    const auto t0 = std::chrono::steady_clock::now();

    nets::ParameterStore params = model.init(cfg.seed);
    nets::ParameterStore best = params;
    TrainReport report;
    double best_metric = -1.0;
    int since_best = 0;

    std::vector<std::size_t> order(train_set.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(Rng::mix(cfg.seed, 0x5e9000ULL + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            nets::GradStore acc;
            for (const auto& [name, t] : params) acc.add(name, Tensor(t.shape()));
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                Tensor image = train_set.images[idx];
                Mask mask = train_set.masks[idx];
                if (aug) {
                    Rng arng(Rng::mix(Rng::mix(cfg.seed, 0xa06ULL), Rng::mix(static_cast<std::uint64_t>(epoch), idx)));
                    auto [ai, am] = preprocess::augment_one(image, mask, *aug, arng);
                    image = std::move(ai);
                    mask = std::move(*am);
                }
                nets::Segmenter::Cache cache;
                const Tensor prob = model.forward(params, image, &cache);
                const Mask target = model.align_target(mask);
                auto [loss, dlogit] = seg_loss_logit_grad(prob, target, cfg.seg_loss);
                epoch_loss += loss;
                ++seen;
                nets::GradStore grads = model.backward(params, cache, dlogit, true);
                auto a = acc.begin();
                for (auto g = grads.begin(); g != grads.end(); ++g, ++a)
                    for (std::size_t i = 0; i < g->second.numel(); ++i) a->second[i] += g->second[i];
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            for (auto& [name, t] : acc)
                for (auto& v : t.values()) v *= scale;
            sgd_step(params, acc, opt);
        }

        EpochRecord rec;
        rec.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
        double val_loss = 0.0;
        for (std::size_t i = 0; i < val_set.images.size(); ++i) {
            const Tensor prob = model.forward(params, val_set.images[i]);
            val_loss += seg_loss(prob, model.align_target(val_set.masks[i]), cfg.seg_loss).first;
        }
        rec.val_loss = val_set.images.empty() ? 0.0 : val_loss / static_cast<double>(val_set.images.size());
        rec.val_metric = val_set.images.empty()
                             ? evaluate_dice(model, params, train_set)
                             : evaluate_dice(model, params, val_set);
        report.epochs.push_back(rec);

        if (rec.val_metric > best_metric) {
            best_metric = rec.val_metric;
            best = params;
            report.best_epoch = epoch;
            since_best = 0;
        } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(best), std::move(report)};
}

// ---------------------------------------------------------------------------
// stage-2 training: classification over ROI sequences
// ---------------------------------------------------------------------------

struct RoiPatient {
    std::string id;
    int label = 0;
    std::vector<Tensor> rois;
    std::vector<bool> fallback;  // true where no candidate was found
};

struct RoiDataset {
    std::vector<RoiPatient> patients;
};

inline double patient_probability(const nets::Classifier& model, const nets::ParameterStore& params,
                                  const RoiPatient& patient) {
    if (model.kind() == nets::ClassifierKind::recurrent) {
        const Tensor logits = nets::recurrent_forward(params, patient.rois, model.recurrent_config());
        return softmax(logits)[1];
    }
    double best = 0.0;  // max over per-slice probabilities
    for (const auto& roi : patient.rois) {
        const Tensor logits = nets::resnet_forward(params, roi, model.resnet_config());
        best = std::max(best, softmax(logits)[1]);
    }
    return best;
}

inline double evaluate_accuracy(const nets::Classifier& model, const nets::ParameterStore& params,
                                const RoiDataset& data, double threshold = 0.5) {
    if (data.patients.empty()) return 0.0;
    int correct = 0;
    for (const auto& p : data.patients) {
        const int decision = patient_probability(model, params, p) >= threshold ? 1 : 0;
        correct += decision == p.label;
    }
    return static_cast<double>(correct) / static_cast<double>(data.patients.size());
}

inline std::pair<nets::ParameterStore, TrainReport> train_classifier(const nets::Classifier& model,
                                            const RoiDataset& train_set, const RoiDataset& val_set,
                                            const TrainConfig& cfg, const OptimizerConfig& opt) {
    if (train_set.patients.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    const auto t0 = std::chrono::steady_clock::now();
    const bool recurrent = model.kind() == nets::ClassifierKind::recurrent;

    nets::ParameterStore params = model.init(cfg.seed);
    nets::ParameterStore best = params;
    TrainReport report;
    double best_metric = -1.0;
    int since_best = 0;

    // recurrent models consume whole patients; the residual CNN consumes
    // slices with the patient label broadcast
    struct SliceRef {
        std::size_t patient;
        std::size_t slice;
    };
    std::vector<SliceRef> slice_refs;
    if (!recurrent)
        for (std::size_t p = 0; p < train_set.patients.size(); ++p)
            for (std::size_t s = 0; s < train_set.patients[p].rois.size(); ++s)
                slice_refs.push_back({p, s});
    const std::size_t n_samples = recurrent ? train_set.patients.size() : slice_refs.size();
    std::vector<std::size_t> order(n_samples);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(Rng::mix(cfg.seed, 0xc75000ULL + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            nets::GradStore acc;
            for (const auto& [name, t] : params) acc.add(name, Tensor(t.shape()));
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                nets::GradStore grads;
                double loss = 0.0;
                if (recurrent) {
                    const auto& patient = train_set.patients[idx];
                    nets::RecurrentCache cache;
                    const Tensor logits =
                        nets::recurrent_forward(params, patient.rois, model.recurrent_config(), &cache);
                    auto [l, dlogits] = cls_loss(logits, patient.label);
                    loss = l;
                    grads = nets::recurrent_backward(params, cache, dlogits, model.recurrent_config());
                } else {
                    const auto& ref = slice_refs[idx];
                    const auto& patient = train_set.patients[ref.patient];
                    nets::ResNetCache cache;
                    const Tensor logits =
                        nets::resnet_forward(params, patient.rois[ref.slice], model.resnet_config(), &cache);
                    auto [l, dlogits] = cls_loss(logits, patient.label);
                    loss = l;
                    grads = nets::resnet_backward(params, cache, dlogits, model.resnet_config());
                }
                epoch_loss += loss;
                ++seen;
                auto a = acc.begin();
                for (auto g = grads.begin(); g != grads.end(); ++g, ++a)
                    for (std::size_t i = 0; i < g->second.numel(); ++i) a->second[i] += g->second[i];
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            for (auto& [name, t] : acc)
                for (auto& v : t.values()) v *= scale;
            sgd_step(params, acc, opt);
        }

        EpochRecord rec;
        rec.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
        double val_loss = 0.0;
        int val_n = 0;
        for (const auto& p : val_set.patients) {
            if (recurrent) {
                val_loss += cls_loss(nets::recurrent_forward(params, p.rois, model.recurrent_config()),
                                     p.label).first;
                ++val_n;
            } else {
                for (const auto& roi : p.rois) {
                    val_loss += cls_loss(nets::resnet_forward(params, roi, model.resnet_config()),
                                         p.label).first;
                    ++val_n;
                }
            }
        }
        rec.val_loss = val_n ? val_loss / val_n : 0.0;
        rec.val_metric = val_set.patients.empty() ? evaluate_accuracy(model, params, train_set)
                                                  : evaluate_accuracy(model, params, val_set);
        report.epochs.push_back(rec);

        if (rec.val_metric > best_metric) {
            best_metric = rec.val_metric;
            best = params;
            report.best_epoch = epoch;
            since_best = 0;
        } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(best), std::move(report)};
}

// ---------------------------------------------------------------------------
// gradient verification
// ---------------------------------------------------------------------------

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_tensor;
};

namespace detail {

// Relative error with an absolute floor: coordinates where both sides are
// below 1e-6 in magnitude are treated as exact.
inline void update_rel_err(GradCheckResult& res, const std::string& name, double analytic,
                           double numeric) {
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    if (denom < 1e-6) return;
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_tensor = name;
    }
}

// Zero-initialized biases leave whole relu patches sitting exactly on the
// kink (dead window -> pre-activation exactly 0), where finite differences
// average the two one-sided slopes. Checking at a generic point avoids that.
inline void jitter_params(nets::ParameterStore& params, std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x1177ULL));
    for (auto& [name, t] : params)
        for (auto& v : t.values()) v += 0.05 * rng.normal();
}

template <typename LossFn>
GradCheckResult check_against_fd(nets::ParameterStore& params, const nets::GradStore& analytic,
                                 LossFn&& loss_fn, double epsilon, int coords_per_tensor,
                                 std::uint64_t seed) {
    GradCheckResult res;
    Rng rng(Rng::mix(seed, 0xfdfdULL));
    auto g = analytic.begin();
    for (auto p = params.begin(); p != params.end(); ++p, ++g) {
        Tensor& theta = p->second;
        const std::size_t n = theta.numel();
        std::vector<std::size_t> coords;
        if (n <= static_cast<std::size_t>(coords_per_tensor)) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int k = 0; k < coords_per_tensor; ++k) coords.push_back(rng.index_below(n));
        }
        for (std::size_t i : coords) {
            const double saved = theta[i];
            theta[i] = saved + epsilon;
            const double lp = loss_fn(params);
            theta[i] = saved - epsilon;
            const double lm = loss_fn(params);
            theta[i] = saved + 0.5 * epsilon;
            const double lph = loss_fn(params);
            theta[i] = saved - 0.5 * epsilon;
            const double lmh = loss_fn(params);
            theta[i] = saved;
            const double fd_full = (lp - lm) / (2.0 * epsilon);
            const double fd_half = (lph - lmh) / epsilon;
            // two-step consistency filter: when the probe interval straddles a
            // relu/maxpool kink the two estimates disagree and the coordinate
            // is not differentiable there; skip it instead of flagging it
            const double scale = std::max({std::abs(fd_full), std::abs(fd_half), 1e-6});
            if (std::abs(fd_full - fd_half) > 1e-4 * scale) continue;
            detail::update_rel_err(res, p->first, g->second[i], fd_half);
        }
    }
    return res;
}

}  // namespace detail

inline GradCheckResult grad_check_segmenter(const nets::Segmenter& model, int input_size,
                                            std::uint64_t seed, double epsilon = 1e-5,
                                            int coords_per_tensor = 50) {
    Rng rng(Rng::mix(seed, 0x9cULL));
    Tensor image({input_size, input_size});
    for (auto& v : image.values()) v = rng.normal();
    Mask mask(model.output_size(input_size), model.output_size(input_size));
    for (auto& v : mask.v) v = rng.uniform() < 0.3 ? 1 : 0;

    nets::ParameterStore params = model.init(seed);
    detail::jitter_params(params, seed);
    nets::Segmenter::Cache cache;
    const Tensor prob = model.forward(params, image, &cache);
    auto [loss0, dprob] = seg_loss(prob, mask, SegLossKind::bce_plus_softdice);
    (void)loss0;
    nets::GradStore analytic = model.backward(params, cache, dprob);
    auto loss_fn = [&](const nets::ParameterStore& p) {
        return seg_loss(model.forward(p, image), mask, SegLossKind::bce_plus_softdice).first;
    };
    return detail::check_against_fd(params, analytic, loss_fn, epsilon, coords_per_tensor, seed);
}

inline GradCheckResult grad_check_resnet(const nets::ResNetConfig& cfg, std::uint64_t seed,
                                         double epsilon = 1e-5, int coords_per_tensor = 50) {
    Rng rng(Rng::mix(seed, 0x9dULL));
    Tensor image({cfg.input_size, cfg.input_size});
    for (auto& v : image.values()) v = rng.normal();
    const int label = 1;
    nets::ParameterStore params = nets::resnet_init(cfg, seed);
    detail::jitter_params(params, seed);
    nets::ResNetCache cache;
    const Tensor logits = nets::resnet_forward(params, image, cfg, &cache);
    auto [l0, dlogits] = cls_loss(logits, label);
    (void)l0;
    nets::GradStore analytic = nets::resnet_backward(params, cache, dlogits, cfg);
    auto loss_fn = [&](const nets::ParameterStore& p) {
        return cls_loss(nets::resnet_forward(p, image, cfg), label).first;
    };
    return detail::check_against_fd(params, analytic, loss_fn, epsilon, coords_per_tensor, seed);
}

inline GradCheckResult grad_check_recurrent(const nets::RecurrentConfig& cfg, int roi_size,
                                            int seq_len, std::uint64_t seed, double epsilon = 1e-5,
                                            int coords_per_tensor = 50) {
    Rng rng(Rng::mix(seed, 0x9eULL));
    std::vector<Tensor> seq;
    for (int t = 0; t < seq_len; ++t) {
        Tensor roi({roi_size, roi_size});
        for (auto& v : roi.values()) v = rng.normal();
        seq.push_back(std::move(roi));
    }
    const int label = 0;
    nets::ParameterStore params = nets::recurrent_init(cfg, seed);
    detail::jitter_params(params, seed);
    nets::RecurrentCache cache;
    const Tensor logits = nets::recurrent_forward(params, seq, cfg, &cache);
    auto [l0, dlogits] = cls_loss(logits, label);
    (void)l0;
    nets::GradStore analytic = nets::recurrent_backward(params, cache, dlogits, cfg);
    auto loss_fn = [&](const nets::ParameterStore& p) {
        return cls_loss(nets::recurrent_forward(p, seq, cfg), label).first;
    };
    return detail::check_against_fd(params, analytic, loss_fn, epsilon, coords_per_tensor, seed);
}

}  // namespace mricascade::train
