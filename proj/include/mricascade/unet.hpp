#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mricascade/layers.hpp"
#include "mricascade/params.hpp"
#include "mricascade/rng.hpp"

namespace mricascade::nets {

enum class PaddingMode { valid, same };

struct UNetConfig {
    int depth = 4;
    int base_channels = 16;
    PaddingMode padding = PaddingMode::valid;
    int input_size = 0;  // spatial size the net is built for
};

namespace detail {

inline Tensor he_tensor(Rng& rng, std::vector<int> shape, int fan_in) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : t.values()) v = rng.normal(0.0, sd);
    return t;
}

inline void add_conv(ParameterStore& store, Rng& rng, const std::string& name, int co, int ci,
                     int k, bool bias = true) {
    store.add(name + ".weight", he_tensor(rng, {co, ci, k, k}, ci * k * k));
    if (bias) store.add(name + ".bias", Tensor({co}));
}

inline void add_tconv(ParameterStore& store, Rng& rng, const std::string& name, int ci, int co) {
    store.add(name + ".weight", he_tensor(rng, {ci, co, 2, 2}, ci * 4));
    store.add(name + ".bias", Tensor({co}));
}

inline int level_channels(int base, int level) { return base << level; }

}  // namespace detail

// Output spatial size of the valid-padding U-Net, or nullopt when some
// intermediate size is odd before pooling or a convolution would underflow.
inline std::optional<int> unet_valid_shape(const UNetConfig& cfg) {
    int s = cfg.input_size;
    std::vector<int> skip(cfg.depth);
    for (int i = 0; i < cfg.depth; ++i) {
        s -= 4;
        if (s < 2) return std::nullopt;
        skip[static_cast<std::size_t>(i)] = s;
        if (s % 2 != 0) return std::nullopt;
        s /= 2;
    }
    s -= 4;
    if (s < 1) return std::nullopt;
    for (int i = cfg.depth - 1; i >= 0; --i) {
        s *= 2;
        if (skip[static_cast<std::size_t>(i)] < s) return std::nullopt;
        s -= 4;
        if (s < 1) return std::nullopt;
    }
    return s;
}

// In same mode the symmetric pool/upsample ladder needs 2^depth | input_size.
inline bool unet_input_admissible(const UNetConfig& cfg, int input_size) {
    if (cfg.padding == PaddingMode::same) return input_size % (1 << cfg.depth) == 0;
    UNetConfig probe = cfg;
    probe.input_size = input_size;
    return unet_valid_shape(probe).has_value();
}

inline ParameterStore unet_init(const UNetConfig& cfg, std::uint64_t seed) {
    if (cfg.depth < 1 || cfg.base_channels < 1) throw std::invalid_argument("unet: bad config");
    Rng rng(Rng::mix(seed, 0x756e6574ULL));
    ParameterStore store;
    const int b = cfg.base_channels;
    for (int i = 0; i < cfg.depth; ++i) {
        const int ci = i == 0 ? 1 : detail::level_channels(b, i - 1);
        const int co = detail::level_channels(b, i);
        detail::add_conv(store, rng, "enc" + std::to_string(i) + ".conv1", co, ci, 3);
        detail::add_conv(store, rng, "enc" + std::to_string(i) + ".conv2", co, co, 3);
    }
    const int cb = detail::level_channels(b, cfg.depth);
    detail::add_conv(store, rng, "bott.conv1", cb, cb / 2, 3);
    detail::add_conv(store, rng, "bott.conv2", cb, cb, 3);
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const int ch = detail::level_channels(b, i);
        detail::add_tconv(store, rng, "up" + std::to_string(i) + ".tconv", ch * 2, ch);
        detail::add_conv(store, rng, "dec" + std::to_string(i) + ".conv1", ch, ch * 2, 3);
        detail::add_conv(store, rng, "dec" + std::to_string(i) + ".conv2", ch, ch, 3);
    }
    detail::add_conv(store, rng, "head.conv", 1, b, 1);
    return store;
}

struct UNetCache {
    struct ConvRec {
        ConvCache col;
        Tensor pre;                // pre-activation output
        std::vector<int> in_shape;
    };
    std::vector<ConvRec> enc;      // 2 per level
    std::vector<PoolCache> pools;
    std::vector<std::vector<int>> pool_in_shapes;
    std::vector<std::vector<int>> skip_shapes;  // post-enc, pre-crop
    ConvRec bott1, bott2;
    std::vector<Tensor> tconv_in;  // decoder inputs per level (deep to shallow)
    std::vector<ConvRec> dec;      // 2 per level
    ConvRec head;
    Tensor prob;                   // sigmoid output
    int pad = 0;
};

// image: {H,W} normalized slice -> per-pixel lesion probability map
inline Tensor unet_forward(const ParameterStore& params, const Tensor& image, const UNetConfig& cfg,
                           UNetCache* cache = nullptr) {
    if (image.rank() != 2) throw std::invalid_argument("unet_forward: expects a 2-D slice");
    const int pad = cfg.padding == PaddingMode::same ? 1 : 0;
    if (!unet_input_admissible(cfg, image.dim(0)) || image.dim(0) != image.dim(1))
        throw std::invalid_argument("unet_forward: input size " + std::to_string(image.dim(0)) +
                                    " inadmissible for depth " + std::to_string(cfg.depth));
    UNetCache local;
    UNetCache& c = cache ? *cache : local;
    c = UNetCache{};
    c.pad = pad;

    auto conv_block = [&](const Tensor& x, const std::string& name, UNetCache::ConvRec& rec) {
        rec.in_shape = x.shape();
        Tensor pre = conv2d_forward(x, params.get(name + ".weight"), &params.get(name + ".bias"), 1,
                                    pad, &rec.col);
        Tensor y = relu_forward(pre);
        rec.pre = std::move(pre);
        return y;
    };

    Tensor x({1, image.dim(0), image.dim(1)}, image.values());
    std::vector<Tensor> skips;
    c.enc.resize(static_cast<std::size_t>(cfg.depth) * 2);
    c.pools.resize(static_cast<std::size_t>(cfg.depth));
    c.pool_in_shapes.resize(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i) {
        x = conv_block(x, "enc" + std::to_string(i) + ".conv1", c.enc[static_cast<std::size_t>(2 * i)]);
        x = conv_block(x, "enc" + std::to_string(i) + ".conv2", c.enc[static_cast<std::size_t>(2 * i + 1)]);
        skips.push_back(x);
        c.skip_shapes.push_back(x.shape());
        c.pool_in_shapes[static_cast<std::size_t>(i)] = x.shape();
        x = maxpool_forward(x, 2, 2, 0, c.pools[static_cast<std::size_t>(i)]);
    }
    x = conv_block(x, "bott.conv1", c.bott1);
    x = conv_block(x, "bott.conv2", c.bott2);

    c.dec.resize(static_cast<std::size_t>(cfg.depth) * 2);
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const std::string lvl = std::to_string(i);
        c.tconv_in.push_back(x);
        Tensor up = tconv2x2_forward(x, params.get("up" + lvl + ".tconv.weight"),
                                     &params.get("up" + lvl + ".tconv.bias"));
        Tensor skip = skips[static_cast<std::size_t>(i)];
        if (skip.dim(1) != up.dim(1)) skip = center_crop(skip, up.dim(1), up.dim(2));
        Tensor cat = concat_channels(up, skip);
        const std::size_t d = static_cast<std::size_t>(2 * (cfg.depth - 1 - i));
        x = conv_block(cat, "dec" + lvl + ".conv1", c.dec[d]);
        x = conv_block(x, "dec" + lvl + ".conv2", c.dec[d + 1]);
    }

    c.head.in_shape = x.shape();
    Tensor logits = conv2d_forward(x, params.get("head.conv.weight"), &params.get("head.conv.bias"),
                                   1, 0, &c.head.col);
    c.head.pre = logits;
    Tensor prob = sigmoid_forward(logits);
    c.prob = prob;
    return Tensor({prob.dim(1), prob.dim(2)}, prob.values());
}

// dprob: gradient of the loss wrt the probability map {Ho,Wo}. With
// grad_is_logit the incoming gradient already lives before the terminal
// sigmoid (the numerically stable route the trainer uses).
inline GradStore unet_backward(const ParameterStore& params, const UNetCache& c, const Tensor& dprob,
                               const UNetConfig& cfg, bool grad_is_logit = false) {
    if (c.prob.empty()) throw std::logic_error("unet_backward: no cached forward state");
    GradStore grads;
    for (const auto& [name, t] : params) grads.add(name, Tensor(t.shape()));

    auto conv_block_backward = [&](const Tensor& dy, const std::string& name,
                                   const UNetCache::ConvRec& rec) {
        Tensor dpre = relu_backward(dy, rec.pre);
        Tensor dx;
        Tensor fake_in(rec.in_shape);
        conv2d_backward(dpre, fake_in, params.get(name + ".weight"), 1, c.pad, &rec.col, &dx,
                        grads.get(name + ".weight"), &grads.get(name + ".bias"));
        return dx;
    };

    Tensor dprob3({1, dprob.dim(0), dprob.dim(1)}, dprob.values());
    Tensor dlogits = grad_is_logit ? dprob3 : sigmoid_backward(dprob3, c.prob);
    Tensor dx;
    {
        Tensor fake_in(c.head.in_shape);
        conv2d_backward(dlogits, fake_in, params.get("head.conv.weight"), 1, 0, &c.head.col, &dx,
                        grads.get("head.conv.weight"), &grads.get("head.conv.bias"));
    }

    std::vector<Tensor> dskips(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i <= cfg.depth - 1; ++i) {
        const std::string lvl = std::to_string(i);
        const std::size_t d = static_cast<std::size_t>(2 * (cfg.depth - 1 - i));
        dx = conv_block_backward(dx, "dec" + lvl + ".conv2", c.dec[d + 1]);
        dx = conv_block_backward(dx, "dec" + lvl + ".conv1", c.dec[d]);
        const int up_ch = dx.dim(0) / 2;
        Tensor dup, dskip;
        split_channels_backward(dx, up_ch, dup, dskip);
        if (c.skip_shapes[static_cast<std::size_t>(i)][1] != dskip.dim(1))
            dskip = center_crop_backward(dskip, c.skip_shapes[static_cast<std::size_t>(i)]);
        dskips[static_cast<std::size_t>(i)] = std::move(dskip);
        const Tensor& tin = c.tconv_in[static_cast<std::size_t>(cfg.depth - 1 - i)];
        Tensor dtin;
        tconv2x2_backward(dup, tin, params.get("up" + lvl + ".tconv.weight"), &dtin,
                          grads.get("up" + lvl + ".tconv.weight"),
                          &grads.get("up" + lvl + ".tconv.bias"));
        dx = std::move(dtin);
    }

    dx = conv_block_backward(dx, "bott.conv2", c.bott2);
    dx = conv_block_backward(dx, "bott.conv1", c.bott1);

    for (int i = cfg.depth - 1; i >= 0; --i) {
        Tensor dpool = maxpool_backward(dx, c.pools[static_cast<std::size_t>(i)],
                                        c.pool_in_shapes[static_cast<std::size_t>(i)]);
        for (std::size_t k = 0; k < dpool.numel(); ++k)
            dpool[k] += dskips[static_cast<std::size_t>(i)][k];
        dx = conv_block_backward(dpool, "enc" + std::to_string(i) + ".conv2",
                                 c.enc[static_cast<std::size_t>(2 * i + 1)]);
        dx = conv_block_backward(dx, "enc" + std::to_string(i) + ".conv1",
                                 c.enc[static_cast<std::size_t>(2 * i)]);
    }
    return grads;
}

}  // namespace mricascade::nets
