#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mricascade/dataio.hpp"
#include "mricascade/metrics.hpp"
#include "mricascade/train.hpp"

namespace mricascade::pipeline {

enum class PipelineKind { deepsegnet_resnet50, deepsegnet_rnn, unet_rnn, unet_lstm };

inline const std::vector<PipelineKind>& all_pipeline_kinds() {
    static const std::vector<PipelineKind> kinds = {
        PipelineKind::deepsegnet_resnet50, PipelineKind::deepsegnet_rnn, PipelineKind::unet_rnn,
        PipelineKind::unet_lstm};
    return kinds;
}

inline std::string kind_id(PipelineKind k) {
    switch (k) {
        case PipelineKind::deepsegnet_resnet50: return "deepsegnet_resnet50";
        case PipelineKind::deepsegnet_rnn: return "deepsegnet_rnn";
        case PipelineKind::unet_rnn: return "unet_rnn";
        case PipelineKind::unet_lstm: return "unet_lstm";
    }
    return "?";
}

inline std::string kind_display(PipelineKind k) {
    switch (k) {
        case PipelineKind::deepsegnet_resnet50: return "DeepSegNet+ResNet50";
        case PipelineKind::deepsegnet_rnn: return "DeepSegNet+RNN";
        case PipelineKind::unet_rnn: return "U-Net+RNN";
        case PipelineKind::unet_lstm: return "U-Net+LSTM";
    }
    return "?";
}

inline PipelineKind kind_from_id(const std::string& id) {
    for (PipelineKind k : all_pipeline_kinds())
        if (kind_id(k) == id) return k;
    throw std::invalid_argument("unknown pipeline kind '" + id + "'");
}

inline Mask binarize(const Tensor& prob, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("binarize: threshold must lie in (0,1)");
    Mask m(prob.dim(0), prob.dim(1));
    for (std::size_t i = 0; i < prob.numel(); ++i) m.v[i] = prob[i] >= threshold ? 1 : 0;
    return m;
}

struct CandidateRegion {
    int row_min, col_min, row_max, col_max;  // inclusive, margin applied
    int area;                                // component pixels, pre-margin
    int slice_index;
};

// 8-connected components, largest first, ties broken by (row_min, col_min);
// bounding boxes grown by `margin` pixels and clipped to the mask bounds.
inline std::vector<CandidateRegion> extract_candidates(const Mask& mask, int slice_index, int top_k,
                                                       int margin = 4) {
    const int h = mask.height, w = mask.width;
    std::vector<int> label(mask.numel(), -1);
    std::vector<CandidateRegion> regions;
    std::vector<int> stack;
    for (int r0 = 0; r0 < h; ++r0) {
        for (int c0 = 0; c0 < w; ++c0) {
            const int idx0 = r0 * w + c0;
            if (!mask.v[static_cast<std::size_t>(idx0)] || label[static_cast<std::size_t>(idx0)] >= 0)
                continue;
            CandidateRegion reg{r0, c0, r0, c0, 0, slice_index};
            stack.push_back(idx0);
            label[static_cast<std::size_t>(idx0)] = static_cast<int>(regions.size());
            while (!stack.empty()) {
                const int idx = stack.back();
                stack.pop_back();
                const int r = idx / w, c = idx % w;
                ++reg.area;
                reg.row_min = std::min(reg.row_min, r);
                reg.col_min = std::min(reg.col_min, c);
                reg.row_max = std::max(reg.row_max, r);
                reg.col_max = std::max(reg.col_max, c);
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                        const int nidx = rr * w + cc;
                        if (mask.v[static_cast<std::size_t>(nidx)] &&
                            label[static_cast<std::size_t>(nidx)] < 0) {
                            label[static_cast<std::size_t>(nidx)] = static_cast<int>(regions.size());
                            stack.push_back(nidx);
                        }
                    }
                }
            }
            regions.push_back(reg);
        }
    }
    std::sort(regions.begin(), regions.end(), [](const CandidateRegion& a, const CandidateRegion& b) {
        if (a.area != b.area) return a.area > b.area;
        if (a.row_min != b.row_min) return a.row_min < b.row_min;
        return a.col_min < b.col_min;
    });
    if (top_k >= 0 && regions.size() > static_cast<std::size_t>(top_k))
        regions.resize(static_cast<std::size_t>(top_k));
    for (auto& reg : regions) {
        reg.row_min = std::max(0, reg.row_min - margin);
        reg.col_min = std::max(0, reg.col_min - margin);
        reg.row_max = std::min(h - 1, reg.row_max + margin);
        reg.col_max = std::min(w - 1, reg.col_max + margin);
    }
    return regions;
}

struct RoiOptions {
    int roi_size = 16;
    double threshold = 0.5;
    int top_k = 1;
    int margin = 4;
};

struct PreprocessedPatient {
    std::string id;
    int label = 0;
    std::vector<Tensor> slices;  // resized + normalized
    std::vector<Mask> masks;     // resized to the same frame
};

inline PreprocessedPatient preprocess_patient(const dataio::PatientRecord& rec,
                                              const preprocess::PreprocessConfig& cfg) {
    PreprocessedPatient out;
    out.id = rec.patient_id;
    out.label = rec.label;
    for (const auto& s : rec.slices) out.slices.push_back(preprocess::preprocess_slice(s, cfg));
    for (const auto& m : rec.masks) out.masks.push_back(preprocess::preprocess_mask(m, cfg));
    return out;
}

namespace detail {

inline Tensor crop_and_resize(const Tensor& slice, int r0, int c0, int r1, int c1, int roi_size) {
    const int h = r1 - r0 + 1, w = c1 - c0 + 1;
    Tensor crop({h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) crop.at(r, c) = slice.at(r0 + r, c0 + c);
    return preprocess::resize_to(crop, roi_size, roi_size);
}

inline Tensor center_crop_roi(const Tensor& slice, int roi_size) {
    const int n = slice.dim(0);
    const int side = std::max(2, n / 2);
    const int r0 = (n - side) / 2;
    return crop_and_resize(slice, r0, r0, r0 + side - 1, r0 + side - 1, roi_size);
}

}  // namespace detail

// Stage-1 -> stage-2 handoff for one patient: segment each slice, keep the
// largest candidate, crop it from the preprocessed slice. Slices with no
// candidate contribute a flagged center crop so sequences keep their length.
inline train::RoiPatient crop_roi_sequence(const PreprocessedPatient& patient,
                                           const nets::Segmenter& seg,
                                           const nets::ParameterStore& seg_params,
                                           const RoiOptions& opts) {
    train::RoiPatient out;
    out.id = patient.id;
    out.label = patient.label;
    for (std::size_t s = 0; s < patient.slices.size(); ++s) {
        const Tensor& slice = patient.slices[s];
        const Tensor prob = seg.forward(seg_params, slice);
        const Mask pred = binarize(prob, opts.threshold);
        const auto regions = extract_candidates(pred, static_cast<int>(s), opts.top_k, opts.margin);
        if (regions.empty()) {
            out.rois.push_back(detail::center_crop_roi(slice, opts.roi_size));
            out.fallback.push_back(true);
            continue;
        }
        const auto& reg = regions.front();
        const int off = seg.output_offset(slice.dim(0));
        const int n = slice.dim(0);
        const int r0 = std::clamp(reg.row_min + off, 0, n - 2);
        const int c0 = std::clamp(reg.col_min + off, 0, n - 2);
        const int r1 = std::clamp(reg.row_max + off, r0 + 1, n - 1);
        const int c1 = std::clamp(reg.col_max + off, c0 + 1, n - 1);
        out.rois.push_back(detail::crop_and_resize(slice, r0, c0, r1, c1, opts.roi_size));
        out.fallback.push_back(false);
    }
    return out;
}

// Oracle variant: ground-truth masks stand in for the segmenter output.
inline train::RoiPatient crop_roi_sequence_from_masks(const PreprocessedPatient& patient,
                                                      const RoiOptions& opts) {
    train::RoiPatient out;
    out.id = patient.id;
    out.label = patient.label;
    for (std::size_t s = 0; s < patient.slices.size(); ++s) {
        const Tensor& slice = patient.slices[s];
        const auto regions =
            extract_candidates(patient.masks[s], static_cast<int>(s), opts.top_k, opts.margin);
        if (regions.empty()) {
            out.rois.push_back(detail::center_crop_roi(slice, opts.roi_size));
            out.fallback.push_back(true);
            continue;
        }
        const auto& reg = regions.front();
        out.rois.push_back(
            detail::crop_and_resize(slice, reg.row_min, reg.col_min, reg.row_max, reg.col_max, opts.roi_size));
        out.fallback.push_back(false);
    }
    return out;
}

struct PipelineConfigs {
    dataio::SplitConfig split;
    preprocess::PreprocessConfig prep;
    std::optional<preprocess::AugmentationConfig> augment;
    nets::UNetConfig unet;
    nets::DeepSegNetConfig deepsegnet;
    nets::ResNetConfig resnet;
    nets::RecurrentConfig rnn;
    nets::RecurrentConfig lstm;
    train::TrainConfig seg_train;
    train::TrainConfig cls_train;
    train::OptimizerConfig seg_opt;
    train::OptimizerConfig cls_opt;
    RoiOptions roi;
    double decision_threshold = 0.5;
};

struct DiceVariants {
    std::optional<double> slice_patient;  // headline: slice-mean per patient, then patient-mean
    std::optional<double> slice_pooled;   // mean over all annotated slices
    std::optional<double> pixel_pooled;   // global 2TP/(2TP+FP+FN)
};

struct EvalRecord {
    std::string patient_id;
    int label = 0;
    int decision = 0;
    double probability = 0.0;
};

struct PipelineResult {
    PipelineKind kind = PipelineKind::unet_lstm;
    metrics::MetricsReport metrics;
    DiceVariants dice;
    metrics::ConfusionMatrix confusion;
    double train_fraction = 0.0;
    std::uint64_t seed = 0;
    std::vector<EvalRecord> eval_patients;
    train::TrainReport seg_report;
    train::TrainReport cls_report;
};

inline nets::Segmenter make_segmenter(PipelineKind kind, const PipelineConfigs& cfg) {
    const bool unet = kind == PipelineKind::unet_rnn || kind == PipelineKind::unet_lstm;
    return unet ? nets::Segmenter(cfg.unet) : nets::Segmenter(cfg.deepsegnet);
}

inline nets::Classifier make_classifier(PipelineKind kind, const PipelineConfigs& cfg) {
    switch (kind) {
        case PipelineKind::deepsegnet_resnet50: return nets::Classifier(cfg.resnet);
        case PipelineKind::deepsegnet_rnn: return nets::Classifier(cfg.rnn);
        case PipelineKind::unet_rnn: return nets::Classifier(cfg.rnn);
        case PipelineKind::unet_lstm: return nets::Classifier(cfg.lstm);
    }
    throw std::logic_error("unreachable");
}

namespace detail {

inline DiceVariants dice_variants(const nets::Segmenter& seg, const nets::ParameterStore& params,
                                  const std::vector<PreprocessedPatient>& patients,
                                  double threshold) {
    DiceVariants out;
    double patient_sum = 0.0;
    int patient_n = 0;
    double slice_sum = 0.0;
    int slice_n = 0;
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (const auto& patient : patients) {
        double per_patient_sum = 0.0;
        int per_patient_n = 0;
        for (std::size_t s = 0; s < patient.slices.size(); ++s) {
            const Tensor prob = seg.forward(params, patient.slices[s]);
            const Mask pred = binarize(prob, threshold);
            const Mask gt = seg.align_target(patient.masks[s]);
            for (std::size_t i = 0; i < pred.numel(); ++i) {
                tp += pred.v[i] & gt.v[i];
                fp += pred.v[i] & static_cast<std::uint8_t>(1 - gt.v[i]);
                fn += static_cast<std::uint8_t>(1 - pred.v[i]) & gt.v[i];
            }
            if (gt.area() == 0) continue;
            const double d = train::dice_of(pred, gt);
            per_patient_sum += d;
            ++per_patient_n;
            slice_sum += d;
            ++slice_n;
        }
        if (per_patient_n > 0) {
            patient_sum += per_patient_sum / per_patient_n;
            ++patient_n;
        }
    }
    if (patient_n > 0) out.slice_patient = patient_sum / patient_n;
    if (slice_n > 0) out.slice_pooled = slice_sum / slice_n;
    if (2 * tp + fp + fn > 0)
        out.pixel_pooled = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    return out;
}

}  // namespace detail

struct PipelineArtifacts {
    PipelineResult result;
    nets::ParameterStore seg_params;
    nets::ParameterStore cls_params;
};

// Two-stage composition: split by patient, train the kind's segmenter, build
// ROI sequences with the best weights, train the kind's classifier, evaluate
// patient decisions and segmentation Dice on the held-out patients.
// `pretrained_seg`, when given, skips stage-1 training and uses those weights.
inline PipelineArtifacts run_pipeline_full(PipelineKind kind, const dataio::DatasetManifest& manifest,
                                           const PipelineConfigs& cfg, std::uint64_t seed,
                                           const nets::ParameterStore* pretrained_seg = nullptr) {
    for (const auto& p : manifest.patients)
        if (!p.mask_paths)
            throw std::invalid_argument("run_pipeline: patient '" + p.id + "' has no masks");

    dataio::SplitConfig split = cfg.split;
    split.seed = Rng::mix(seed, 0x5011ULL);
    auto [train_manifest, val_manifest] = dataio::split_dataset(manifest, split);

    auto load_split = [&](const dataio::DatasetManifest& m) {
        std::vector<PreprocessedPatient> out;
        for (const auto& entry : m.patients)
            out.push_back(preprocess_patient(dataio::load_patient(m, entry.id), cfg.prep));
        return out;
    };
    const std::vector<PreprocessedPatient> train_patients = load_split(train_manifest);
    const std::vector<PreprocessedPatient> val_patients = load_split(val_manifest);

    train::SegDataset seg_train_set, seg_val_set;
    for (const auto& p : train_patients)
        for (std::size_t s = 0; s < p.slices.size(); ++s) {
            seg_train_set.images.push_back(p.slices[s]);
            seg_train_set.masks.push_back(p.masks[s]);
        }
    for (const auto& p : val_patients)
        for (std::size_t s = 0; s < p.slices.size(); ++s) {
            seg_val_set.images.push_back(p.slices[s]);
            seg_val_set.masks.push_back(p.masks[s]);
        }

    const nets::Segmenter seg = make_segmenter(kind, cfg);
    nets::ParameterStore seg_params;
    train::TrainReport seg_report;
    if (pretrained_seg) {
        seg_params = *pretrained_seg;
    } else {
        train::TrainConfig seg_tc = cfg.seg_train;
        seg_tc.seed = Rng::mix(seed, 0x5e9ULL);
        std::tie(seg_params, seg_report) =
            train::train_segmenter(seg, seg_train_set, seg_val_set, seg_tc, cfg.seg_opt, cfg.augment);
    }

    train::RoiDataset roi_train, roi_val;
    for (const auto& p : train_patients)
        roi_train.patients.push_back(crop_roi_sequence(p, seg, seg_params, cfg.roi));
    for (const auto& p : val_patients)
        roi_val.patients.push_back(crop_roi_sequence(p, seg, seg_params, cfg.roi));

    const nets::Classifier cls = make_classifier(kind, cfg);
    train::TrainConfig cls_tc = cfg.cls_train;
    cls_tc.seed = Rng::mix(seed, 0xc75ULL);
    auto [cls_params, cls_report] = train::train_classifier(cls, roi_train, roi_val, cls_tc, cfg.cls_opt);

    PipelineResult result;
    result.kind = kind;
    result.train_fraction = cfg.split.train_fraction;
    result.seed = seed;
    result.seg_report = std::move(seg_report);
    result.cls_report = std::move(cls_report);

    std::vector<int> decisions, labels;
    for (const auto& p : roi_val.patients) {
        EvalRecord rec;
        rec.patient_id = p.id;
        rec.label = p.label;
        rec.probability = train::patient_probability(cls, cls_params, p);
        rec.decision = rec.probability >= cfg.decision_threshold ? 1 : 0;
        decisions.push_back(rec.decision);
        labels.push_back(rec.label);
        result.eval_patients.push_back(std::move(rec));
    }
    result.confusion = metrics::confusion(decisions, labels);
    result.metrics = metrics::classification_metrics(result.confusion);
    result.dice = detail::dice_variants(seg, seg_params, val_patients, cfg.roi.threshold);
    result.metrics.dice = result.dice.slice_patient;
    return {std::move(result), std::move(seg_params), std::move(cls_params)};
}

inline PipelineResult run_pipeline(PipelineKind kind, const dataio::DatasetManifest& manifest,
                                   const PipelineConfigs& cfg, std::uint64_t seed,
                                   const nets::ParameterStore* pretrained_seg = nullptr) {
    return run_pipeline_full(kind, manifest, cfg, seed, pretrained_seg).result;
}

inline nlohmann::json to_json(const PipelineResult& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json evals = nlohmann::json::array();
    for (const auto& e : r.eval_patients)
        evals.push_back({{"id", e.patient_id},
                         {"label", e.label},
                         {"decision", e.decision},
                         {"probability", e.probability}});
    return {{"kind", kind_id(r.kind)},
            {"train_fraction", r.train_fraction},
            {"seed", r.seed},
            {"metrics", metrics::to_json(r.metrics)},
            {"dice_variants",
             {{"slice_patient", opt(r.dice.slice_patient)},
              {"slice_pooled", opt(r.dice.slice_pooled)},
              {"pixel_pooled", opt(r.dice.pixel_pooled)}}},
            {"confusion",
             {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}}},
            {"eval_patients", evals}};
}

inline PipelineResult result_from_json(const nlohmann::json& j) {
    PipelineResult r;
    r.kind = kind_from_id(j.at("kind").get<std::string>());
    r.train_fraction = j.at("train_fraction").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metrics = metrics::metrics_from_json(j.at("metrics"));
    auto opt = [&](const nlohmann::json& v) -> std::optional<double> {
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    const auto& dv = j.at("dice_variants");
    r.dice.slice_patient = opt(dv.at("slice_patient"));
    r.dice.slice_pooled = opt(dv.at("slice_pooled"));
    r.dice.pixel_pooled = opt(dv.at("pixel_pooled"));
    const auto& cm = j.at("confusion");
    r.confusion = {cm.at("tp").get<std::uint64_t>(), cm.at("fp").get<std::uint64_t>(),
                   cm.at("fn").get<std::uint64_t>(), cm.at("tn").get<std::uint64_t>()};
    for (const auto& e : j.value("eval_patients", nlohmann::json::array()))
        r.eval_patients.push_back({e.at("id").get<std::string>(), e.at("label").get<int>(),
                                   e.at("decision").get<int>(), e.at("probability").get<double>()});
    return r;
}

// ---------------------------------------------------------------------------
// comparison table and training-fraction sweep
// ---------------------------------------------------------------------------

struct ComparisonTable {
    std::string markdown;
    std::string csv;
};

// Rows = pipelines, columns = the six report metrics. Column bests are bolded
// in the markdown (ties all bold); undefined cells render as dashes.
inline ComparisonTable compare(const std::vector<PipelineResult>& results) {
    if (results.empty()) throw std::invalid_argument("compare: no results");
    struct Col {
        const char* header;
        std::function<std::optional<double>(const PipelineResult&)> get;
        bool percent;
    };
    const std::vector<Col> cols = {
        {"Accuracy (%)", [](const PipelineResult& r) { return r.metrics.accuracy; }, true},
        {"F1 (%)", [](const PipelineResult& r) { return r.metrics.f1; }, true},
        {"Precision (%)", [](const PipelineResult& r) { return r.metrics.precision; }, true},
        {"Recall (Sens. (%))", [](const PipelineResult& r) { return r.metrics.recall; }, true},
        {"Spec. (%)", [](const PipelineResult& r) { return r.metrics.specificity; }, true},
        {"Dice", [](const PipelineResult& r) { return r.metrics.dice; }, false},
    };

    std::vector<std::optional<double>> best(cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (const auto& r : results) {
            const auto v = cols[c].get(r);
            if (v && (!best[c] || *v > *best[c])) best[c] = *v;
        }

    auto fmt = [](double v, bool percent) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), percent ? "%.2f" : "%.3f", percent ? 100.0 * v : v);
        return std::string(buf);
    };

    std::ostringstream md, csv;
    md << "| Architectures |";
    csv << "architecture";
    for (const auto& col : cols) {
        md << " " << col.header << " |";
        csv << "," << col.header;
    }
    md << "\n|---|";
    for (std::size_t c = 0; c < cols.size(); ++c) md << "---|";
    md << "\n";
    csv << "\n";
    for (const auto& r : results) {
        md << "| " << kind_display(r.kind) << " |";
        csv << kind_id(r.kind);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto v = cols[c].get(r);
            if (!v) {
                md << " - |";
                csv << ",";
                continue;
            }
            const bool bold = best[c] && *v >= *best[c];
            const std::string cell = fmt(*v, cols[c].percent);
            md << " " << (bold ? "**" + cell + "**" : cell) << " |";
            csv << "," << fmt(*v, false);
        }
        md << "\n";
        csv << "\n";
    }
    return {md.str(), csv.str()};
}

struct SweepCell {
    PipelineKind kind;
    double fraction;
    std::uint64_t seed;
    std::optional<double> accuracy;
    std::optional<double> sensitivity;
};

struct SweepReport {
    std::vector<SweepCell> cells;

    std::string csv() const {
        std::ostringstream os;
        os << "kind,fraction,seed,accuracy,sensitivity\n";
        for (const auto& c : cells) {
            os << kind_id(c.kind) << "," << c.fraction << "," << c.seed << ",";
            if (c.accuracy) os << *c.accuracy;
            os << ",";
            if (c.sensitivity) os << *c.sensitivity;
            os << "\n";
        }
        return os.str();
    }

    // mean over seeds of a column at (kind, fraction)
    std::optional<double> mean(PipelineKind kind, double fraction, bool sensitivity) const {
        double sum = 0;
        int n = 0;
        for (const auto& c : cells) {
            if (c.kind != kind || std::abs(c.fraction - fraction) > 1e-12) continue;
            const auto& v = sensitivity ? c.sensitivity : c.accuracy;
            if (v) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / n;
    }
};

// Full (kind x fraction x seed) grid of run_pipeline calls. When
// retrain_segmenter is false the stage-1 weights are trained once per
// (kind, seed) at the base fraction and only the classifier sees the sweep.
// Cells are independent; (kind, seed) groups are distributed over `workers`
// threads and merged by grid position, so the report is order-stable.
inline SweepReport sweep_training_fraction(const std::vector<PipelineKind>& kinds,
                                           const std::vector<double>& fractions,
                                           const std::vector<std::uint64_t>& seeds,
                                           const dataio::DatasetManifest& manifest,
                                           const PipelineConfigs& cfg,
                                           bool retrain_segmenter = true, int workers = 1) {
    for (double f : fractions)
        if (!(f > 0.0 && f < 1.0))
            throw std::invalid_argument("sweep: fractions must lie in (0,1)");

    struct Group {
        PipelineKind kind;
        std::uint64_t seed;
        std::size_t first_cell;
    };
    std::vector<Group> groups;
    SweepReport report;
    for (PipelineKind kind : kinds)
        for (std::uint64_t seed : seeds) {
            groups.push_back({kind, seed, report.cells.size()});
            for (double fraction : fractions)
                report.cells.push_back({kind, fraction, seed, std::nullopt, std::nullopt});
        }

    auto run_group = [&](const Group& group) {
        std::optional<nets::ParameterStore> shared_seg;
        if (!retrain_segmenter) {
            // stage-1 trained once per (kind, seed) at the base fraction
            dataio::SplitConfig split = cfg.split;
            split.seed = Rng::mix(group.seed, 0x5011ULL);
            auto [train_manifest, val_manifest] = dataio::split_dataset(manifest, split);
            train::SegDataset tr, va;
            for (const auto& entry : train_manifest.patients) {
                auto p = preprocess_patient(dataio::load_patient(train_manifest, entry.id), cfg.prep);
                for (std::size_t s = 0; s < p.slices.size(); ++s) {
                    tr.images.push_back(p.slices[s]);
                    tr.masks.push_back(p.masks[s]);
                }
            }
            for (const auto& entry : val_manifest.patients) {
                auto p = preprocess_patient(dataio::load_patient(val_manifest, entry.id), cfg.prep);
                for (std::size_t s = 0; s < p.slices.size(); ++s) {
                    va.images.push_back(p.slices[s]);
                    va.masks.push_back(p.masks[s]);
                }
            }
            train::TrainConfig seg_tc = cfg.seg_train;
            seg_tc.seed = Rng::mix(group.seed, 0x5e9ULL);
            shared_seg = train::train_segmenter(make_segmenter(group.kind, cfg), tr, va, seg_tc,
                                                cfg.seg_opt, cfg.augment)
                             .first;
        }
        for (std::size_t f = 0; f < fractions.size(); ++f) {
            PipelineConfigs cell_cfg = cfg;
            cell_cfg.split.train_fraction = fractions[f];
            const PipelineResult r = run_pipeline(group.kind, manifest, cell_cfg, group.seed,
                                                  shared_seg ? &*shared_seg : nullptr);
            report.cells[group.first_cell + f].accuracy = r.metrics.accuracy;
            report.cells[group.first_cell + f].sensitivity = r.metrics.recall;
        }
    };

    if (workers <= 1) {
        for (const auto& group : groups) run_group(group);
        return report;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex error_mutex;
    std::exception_ptr first_error;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= groups.size()) return;
                try {
                    run_group(groups[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return report;
}

}  // namespace mricascade::pipeline
