#pragma once

#include <variant>

#include "mricascade/deepsegnet.hpp"
#include "mricascade/preprocess.hpp"
#include "mricascade/recurrent.hpp"
#include "mricascade/resnet.hpp"
#include "mricascade/unet.hpp"

namespace mricascade::nets {

using NetConfig = std::variant<UNetConfig, DeepSegNetConfig, ResNetConfig, RecurrentConfig>;

inline ParameterStore init_params(const NetConfig& config, std::uint64_t seed) {
    return std::visit(
        [&](const auto& cfg) -> ParameterStore {
            using T = std::decay_t<decltype(cfg)>;
            if constexpr (std::is_same_v<T, UNetConfig>) return unet_init(cfg, seed);
            else if constexpr (std::is_same_v<T, DeepSegNetConfig>) return deepsegnet_init(cfg, seed);
            else if constexpr (std::is_same_v<T, ResNetConfig>) return resnet_init(cfg, seed);
            else return recurrent_init(cfg, seed);
        },
        config);
}

// Mirror-pads a slice symmetrically to `target` pixels per side.
inline Tensor mirror_pad(const Tensor& image, int target) {
    const int n = image.dim(0);
    if (n == target) return image;
    const int left = (target - n) / 2;
    Tensor out({target, target});
    for (int r = 0; r < target; ++r) {
        const int sr = preprocess::detail::reflect_index(r - left, n);
        for (int c = 0; c < target; ++c)
            out.at(r, c) = image.at(sr, preprocess::detail::reflect_index(c - left, n));
    }
    return out;
}

enum class SegmenterKind { unet, deepsegnet };

// Wraps the two segmentation nets behind one face: handles the valid-mode
// mirror padding to the nearest admissible size and aligns ground-truth masks
// with the (possibly smaller) output frame.
class Segmenter {
public:
    explicit Segmenter(UNetConfig cfg) : kind_(SegmenterKind::unet), unet_(cfg) {}
    explicit Segmenter(DeepSegNetConfig cfg) : kind_(SegmenterKind::deepsegnet), dsn_(cfg) {}

    SegmenterKind kind() const { return kind_; }
    const UNetConfig& unet_config() const { return unet_; }

    ParameterStore init(std::uint64_t seed) const {
        return kind_ == SegmenterKind::unet ? unet_init(unet_, seed) : deepsegnet_init(dsn_, seed);
    }

    // Size the net actually consumes for an input of `n` pixels per side.
    int padded_size(int n) const {
        if (kind_ == SegmenterKind::deepsegnet) {
            const int step = 1 << dsn_.depth;
            if (n % step != 0)
                throw std::invalid_argument("deepsegnet: input size " + std::to_string(n) +
                                            " not divisible by 2^" + std::to_string(dsn_.depth));
            return n;
        }
        if (unet_.padding == PaddingMode::same) {
            const int step = 1 << unet_.depth;
            if (n % step != 0)
                throw std::invalid_argument("unet(same): input size " + std::to_string(n) +
                                            " not divisible by 2^" + std::to_string(unet_.depth));
            return n;
        }
        UNetConfig probe = unet_;
        for (int s = n; s <= n + (64 << unet_.depth); ++s) {
            probe.input_size = s;
            if (unet_valid_shape(probe)) return s;
        }
        throw std::invalid_argument("unet(valid): no admissible size near " + std::to_string(n));
    }

    int output_size(int n) const {
        if (kind_ == SegmenterKind::deepsegnet || unet_.padding == PaddingMode::same)
            return padded_size(n);
        UNetConfig probe = unet_;
        probe.input_size = padded_size(n);
        return *unet_valid_shape(probe);
    }

    // Offset of output pixel (0,0) in original-image coordinates.
    int output_offset(int n) const { return (n - output_size(n)) / 2; }

    struct Cache {
        UNetCache unet;
        DeepSegNetCache dsn;
        int input_size = 0;
    };

    Tensor forward(const ParameterStore& params, const Tensor& slice, Cache* cache = nullptr) const {
        const int n = slice.dim(0);
        const Tensor padded = mirror_pad(slice, padded_size(n));
        if (cache) cache->input_size = n;
        if (kind_ == SegmenterKind::unet) {
            UNetConfig cfg = unet_;
            cfg.input_size = padded.dim(0);
            return unet_forward(params, padded, cfg, cache ? &cache->unet : nullptr);
        }
        return deepsegnet_forward(params, padded, dsn_, cache ? &cache->dsn : nullptr);
    }

    GradStore backward(const ParameterStore& params, const Cache& cache, const Tensor& dprob,
                       bool grad_is_logit = false) const {
        if (kind_ == SegmenterKind::unet) {
            UNetConfig cfg = unet_;
            cfg.input_size = padded_size(cache.input_size);
            return unet_backward(params, cache.unet, dprob, cfg, grad_is_logit);
        }
        return deepsegnet_backward(params, cache.dsn, dprob, dsn_, grad_is_logit);
    }

    // Ground truth aligned with the output frame (mirror-padded, center-cropped).
    Mask align_target(const Mask& mask) const {
        const int n = mask.height;
        const int out = output_size(n);
        if (out == n) return mask;
        const int off = output_offset(n);
        Mask t(out, out);
        for (int r = 0; r < out; ++r) {
            const int sr = preprocess::detail::reflect_index(r + off, n);
            for (int c = 0; c < out; ++c)
                t.at(r, c) = mask.at(sr, preprocess::detail::reflect_index(c + off, n));
        }
        return t;
    }

private:
    SegmenterKind kind_;
    UNetConfig unet_{};
    DeepSegNetConfig dsn_{};
};

enum class ClassifierKind { resnet, recurrent };

// The residual CNN scores single ROI slices; recurrent cells consume the
// whole per-patient ROI sequence.
class Classifier {
public:
    explicit Classifier(ResNetConfig cfg) : kind_(ClassifierKind::resnet), rn_(cfg) {}
    explicit Classifier(RecurrentConfig cfg) : kind_(ClassifierKind::recurrent), rc_(cfg) {}

    ClassifierKind kind() const { return kind_; }
    const ResNetConfig& resnet_config() const { return rn_; }
    const RecurrentConfig& recurrent_config() const { return rc_; }

    ParameterStore init(std::uint64_t seed) const {
        return kind_ == ClassifierKind::resnet ? resnet_init(rn_, seed) : recurrent_init(rc_, seed);
    }

private:
    ClassifierKind kind_;
    ResNetConfig rn_{};
    RecurrentConfig rc_{};
};

}  // namespace mricascade::nets
