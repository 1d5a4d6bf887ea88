#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mricascade/rng.hpp"
#include "mricascade/tensor.hpp"

namespace mricascade::preprocess {

enum class NormalizeMode { zscore };

struct PreprocessConfig {
    int target_size = 256;
    NormalizeMode normalize_mode = NormalizeMode::zscore;
};

struct ElasticDeformParams {
    int grid_h = 3;
    int grid_w = 3;
    double sigma = 10.0;  // pixels
};

struct DisplacementField {
    Tensor dx;
    Tensor dy;
};

struct AugmentationConfig {
    std::vector<double> rotations = {-15.0, 15.0};  // degrees, picked uniformly
    bool flip_horizontal = true;
    bool flip_vertical = true;
    int max_translation = 10;  // pixels, uniform in [-m, m] per axis
    double noise_sigma = 0.01;
    ElasticDeformParams elastic;
    int copies_per_sample = 1;
};

namespace detail {

// Keys cubic convolution kernel, a = -1/2 (Catmull-Rom). Interpolating:
// integer sample positions reproduce the input exactly.
inline double cubic_weight(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

// Mirror extension without edge duplication (... c b | a b c | b a ...).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

inline double bicubic_sample(const Tensor& img, double fy, double fx) {
    const int h = img.dim(0), w = img.dim(1);
    const int y0 = static_cast<int>(std::floor(fy));
    const int x0 = static_cast<int>(std::floor(fx));
    const double ty = fy - y0, tx = fx - x0;
    double wy[4], wx[4];
    for (int k = 0; k < 4; ++k) {
        wy[k] = cubic_weight(ty - (k - 1));
        wx[k] = cubic_weight(tx - (k - 1));
    }
    double acc = 0.0;
    for (int ky = 0; ky < 4; ++ky) {
        if (wy[ky] == 0.0) continue;
        const int r = reflect_index(y0 + ky - 1, h);
        double row = 0.0;
        for (int kx = 0; kx < 4; ++kx) {
            if (wx[kx] == 0.0) continue;
            row += wx[kx] * img.at(r, reflect_index(x0 + kx - 1, w));
        }
        acc += wy[ky] * row;
    }
    return acc;
}

inline std::uint8_t nearest_sample(const Mask& m, double fy, double fx) {
    const int r = reflect_index(static_cast<int>(std::lround(fy)), m.height);
    const int c = reflect_index(static_cast<int>(std::lround(fx)), m.width);
    return m.at(r, c);
}

// Upsamples a coarse lattice spanning the image corners to full resolution.
inline Tensor bicubic_upsample_grid(const Tensor& grid, int height, int width) {
    const int gh = grid.dim(0), gw = grid.dim(1);
    Tensor out({height, width});
    const double sy = height > 1 ? static_cast<double>(gh - 1) / (height - 1) : 0.0;
    const double sx = width > 1 ? static_cast<double>(gw - 1) / (width - 1) : 0.0;
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out.at(r, c) = bicubic_sample(grid, r * sy, c * sx);
    return out;
}

}  // namespace detail

// Per-slice z-score with population std; near-constant slices map to zeros.
inline Tensor normalize(const Tensor& image) {
    if (image.empty()) throw std::invalid_argument("normalize: empty image");
    if (!image.all_finite()) throw std::invalid_argument("normalize: non-finite input pixels");
    const std::size_t n = image.numel();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += image[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = image[i] - mean;
        var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    Tensor out(image.shape());
    if (sd <= 1e-8) return out;  // all zeros
    for (std::size_t i = 0; i < n; ++i) out[i] = (image[i] - mean) / sd;
    return out;
}

inline Tensor resize_to(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 2) throw std::invalid_argument("resize: expects a 2-D image");
    if (out_h < 2 || out_w < 2) throw std::invalid_argument("resize: target size must be >= 2");
    const int h = image.dim(0), w = image.dim(1);
    if (h == out_h && w == out_w) return image;
    Tensor out({out_h, out_w});
    // pixel-center mapping; reduces to the identity when sizes match
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int r = 0; r < out_h; ++r) {
        const double fy = (r + 0.5) * sy - 0.5;
        for (int c = 0; c < out_w; ++c) out.at(r, c) = detail::bicubic_sample(image, fy, (c + 0.5) * sx - 0.5);
    }
    return out;
}

inline Tensor resize(const Tensor& image, int size) { return resize_to(image, size, size); }

inline Mask resize_mask_to(const Mask& mask, int out_h, int out_w) {
    if (mask.height == out_h && mask.width == out_w) return mask;
    Mask out(out_h, out_w);
    const double sy = static_cast<double>(mask.height) / out_h;
    const double sx = static_cast<double>(mask.width) / out_w;
    for (int r = 0; r < out_h; ++r)
        for (int c = 0; c < out_w; ++c)
            out.at(r, c) = detail::nearest_sample(mask, (r + 0.5) * sy - 0.5, (c + 0.5) * sx - 0.5);
    return out;
}

inline DisplacementField sample_displacement_field(const ElasticDeformParams& params, int height,
                                                   int width, Rng& rng) {
    if (params.grid_h < 2 || params.grid_w < 2)
        throw std::invalid_argument("displacement field: grid dimensions must be >= 2");
    if (height < params.grid_h || width < params.grid_w)
        throw std::invalid_argument("displacement field: image smaller than grid");
    Tensor gx({params.grid_h, params.grid_w}), gy({params.grid_h, params.grid_w});
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = rng.normal(0.0, params.sigma);
    for (std::size_t i = 0; i < gy.numel(); ++i) gy[i] = rng.normal(0.0, params.sigma);
    if (params.sigma == 0.0)
        return {Tensor({height, width}), Tensor({height, width})};
    return {detail::bicubic_upsample_grid(gx, height, width),
            detail::bicubic_upsample_grid(gy, height, width)};
}

inline DisplacementField sample_displacement_field(const ElasticDeformParams& params, int height,
                                                   int width, std::uint64_t seed) {
    Rng rng(seed);
    return sample_displacement_field(params, height, width, rng);
}

// Backward warp: output(r,c) samples input at (r + dy, c + dx). The image is
// sampled bicubically, the mask nearest-neighbor, both with mirror extension.
inline std::pair<Tensor, std::optional<Mask>> elastic_deform(const Tensor& image,
                                                             const std::optional<Mask>& mask,
                                                             const DisplacementField& field) {
    const int h = image.dim(0), w = image.dim(1);
    if (field.dx.dim(0) != h || field.dx.dim(1) != w || !field.dx.same_shape(field.dy))
        throw std::invalid_argument("elastic_deform: field shape mismatch");
    if (mask && (mask->height != h || mask->width != w))
        throw std::invalid_argument("elastic_deform: mask shape mismatch");
    Tensor out({h, w});
    std::optional<Mask> mout;
    if (mask) mout.emplace(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double fy = r + field.dy.at(r, c);
            const double fx = c + field.dx.at(r, c);
            out.at(r, c) = detail::bicubic_sample(image, fy, fx);
            if (mask) mout->at(r, c) = detail::nearest_sample(*mask, fy, fx);
        }
    }
    return {std::move(out), std::move(mout)};
}

inline Tensor flip_image(const Tensor& image, bool horizontal) {
    const int h = image.dim(0), w = image.dim(1);
    Tensor out({h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out.at(r, c) = horizontal ? image.at(r, w - 1 - c) : image.at(h - 1 - r, c);
    return out;
}

inline Mask flip_mask(const Mask& mask, bool horizontal) {
    Mask out(mask.height, mask.width);
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            out.at(r, c) = horizontal ? mask.at(r, mask.width - 1 - c) : mask.at(mask.height - 1 - r, c);
    return out;
}

// Rotation about the image center, backward-mapped.
inline void rotate_pair(Tensor& image, std::optional<Mask>& mask, double angle_deg) {
    const int h = image.dim(0), w = image.dim(1);
    const double th = angle_deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Tensor out({h, w});
    std::optional<Mask> mout;
    if (mask) mout.emplace(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double dy = r - cy, dx = c - cx;
            const double fy = cy + cs * dy - sn * dx;
            const double fx = cx + sn * dy + cs * dx;
            out.at(r, c) = detail::bicubic_sample(image, fy, fx);
            if (mask) mout->at(r, c) = detail::nearest_sample(*mask, fy, fx);
        }
    }
    image = std::move(out);
    mask = std::move(mout);
}

// Integer shift with mirror fill; exact pixel permutation in the interior.
inline void translate_pair(Tensor& image, std::optional<Mask>& mask, int dr, int dc) {
    const int h = image.dim(0), w = image.dim(1);
    Tensor out({h, w});
    std::optional<Mask> mout;
    if (mask) mout.emplace(h, w);
    for (int r = 0; r < h; ++r) {
        const int sr = detail::reflect_index(r - dr, h);
        for (int c = 0; c < w; ++c) {
            const int sc = detail::reflect_index(c - dc, w);
            out.at(r, c) = image.at(sr, sc);
            if (mask) mout->at(r, c) = mask->at(sr, sc);
        }
    }
    image = std::move(out);
    mask = std::move(mout);
}

// One sampled composition: flips, rotation, translation, elastic warp applied
// identically to image and mask; additive Gaussian noise on the image only.
inline std::pair<Tensor, std::optional<Mask>> augment_one(const Tensor& image,
                                                          const std::optional<Mask>& mask,
                                                          const AugmentationConfig& cfg, Rng& rng) {
    Tensor img = image;
    std::optional<Mask> msk = mask;
    if (cfg.flip_horizontal && rng.uniform() < 0.5) {
        img = flip_image(img, true);
        if (msk) msk = flip_mask(*msk, true);
    }
    if (cfg.flip_vertical && rng.uniform() < 0.5) {
        img = flip_image(img, false);
        if (msk) msk = flip_mask(*msk, false);
    }
    if (!cfg.rotations.empty()) {
        const double angle = cfg.rotations[rng.index_below(cfg.rotations.size())];
        if (angle != 0.0) rotate_pair(img, msk, angle);
    }
    if (cfg.max_translation > 0) {
        const int dr = static_cast<int>(rng.uniform_int(-cfg.max_translation, cfg.max_translation));
        const int dc = static_cast<int>(rng.uniform_int(-cfg.max_translation, cfg.max_translation));
        if (dr != 0 || dc != 0) translate_pair(img, msk, dr, dc);
    }
    if (cfg.elastic.sigma > 0.0) {
        const DisplacementField field =
            sample_displacement_field(cfg.elastic, img.dim(0), img.dim(1), rng);
        auto warped = elastic_deform(img, msk, field);
        img = std::move(warped.first);
        msk = std::move(warped.second);
    }
    if (cfg.noise_sigma > 0.0)
        for (std::size_t i = 0; i < img.numel(); ++i) img[i] += rng.normal(0.0, cfg.noise_sigma);
    return {std::move(img), std::move(msk)};
}

inline std::vector<std::pair<Tensor, std::optional<Mask>>> augment(
    const Tensor& image, const std::optional<Mask>& mask, const AugmentationConfig& cfg,
    std::uint64_t seed) {
    std::vector<std::pair<Tensor, std::optional<Mask>>> out;
    out.reserve(static_cast<std::size_t>(cfg.copies_per_sample));
    for (int i = 0; i < cfg.copies_per_sample; ++i) {
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(i)));
        out.push_back(augment_one(image, mask, cfg, rng));
    }
    return out;
}

inline Tensor preprocess_slice(const Tensor& image, const PreprocessConfig& cfg) {
    return normalize(resize(image, cfg.target_size));
}

inline Mask preprocess_mask(const Mask& mask, const PreprocessConfig& cfg) {
    return resize_mask_to(mask, cfg.target_size, cfg.target_size);
}

}  // namespace mricascade::preprocess
