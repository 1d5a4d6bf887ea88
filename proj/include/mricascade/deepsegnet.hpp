#pragma once

#include <string>
#include <vector>

#include "mricascade/unet.hpp"

namespace mricascade::nets {

struct DeepSegNetConfig {
    int depth = 4;
    int base_channels = 16;
};

inline ParameterStore deepsegnet_init(const DeepSegNetConfig& cfg, std::uint64_t seed) {
    if (cfg.depth < 1 || cfg.base_channels < 1) throw std::invalid_argument("deepsegnet: bad config");
    Rng rng(Rng::mix(seed, 0x647365676eULL));
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
        detail::add_conv(store, rng, "dec" + std::to_string(i) + ".conv1", ch, ch, 3);
    }
    detail::add_conv(store, rng, "head.conv", 1, b, 1);
    return store;
}

struct DeepSegNetCache {
    std::vector<UNetCache::ConvRec> enc;
    std::vector<PoolCache> pools;
    std::vector<std::vector<int>> pool_in_shapes;
    UNetCache::ConvRec bott1, bott2;
    std::vector<Tensor> tconv_in;
    std::vector<UNetCache::ConvRec> dec;
    UNetCache::ConvRec head;
    Tensor prob;
};

// Same-size probability map; decoder stages add matching-resolution encoder
// features instead of concatenating them.
inline Tensor deepsegnet_forward(const ParameterStore& params, const Tensor& image,
                                 const DeepSegNetConfig& cfg, DeepSegNetCache* cache = nullptr) {
    if (image.rank() != 2) throw std::invalid_argument("deepsegnet_forward: expects a 2-D slice");
    if (image.dim(0) != image.dim(1) || image.dim(0) % (1 << cfg.depth) != 0)
        throw std::invalid_argument("deepsegnet_forward: input size " + std::to_string(image.dim(0)) +
                                    " not divisible by 2^" + std::to_string(cfg.depth));
    DeepSegNetCache local;
    DeepSegNetCache& c = cache ? *cache : local;
    c = DeepSegNetCache{};

    auto conv_block = [&](const Tensor& x, const std::string& name, UNetCache::ConvRec& rec) {
        rec.in_shape = x.shape();
        Tensor pre = conv2d_forward(x, params.get(name + ".weight"), &params.get(name + ".bias"), 1,
                                    1, &rec.col);
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
        c.pool_in_shapes[static_cast<std::size_t>(i)] = x.shape();
        x = maxpool_forward(x, 2, 2, 0, c.pools[static_cast<std::size_t>(i)]);
    }
    x = conv_block(x, "bott.conv1", c.bott1);
    x = conv_block(x, "bott.conv2", c.bott2);

    c.dec.resize(static_cast<std::size_t>(cfg.depth));
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const std::string lvl = std::to_string(i);
        c.tconv_in.push_back(x);
        Tensor up = tconv2x2_forward(x, params.get("up" + lvl + ".tconv.weight"),
                                     &params.get("up" + lvl + ".tconv.bias"));
        const Tensor& skip = skips[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < up.numel(); ++k) up[k] += skip[k];
        x = conv_block(up, "dec" + lvl + ".conv1", c.dec[static_cast<std::size_t>(cfg.depth - 1 - i)]);
    }

    c.head.in_shape = x.shape();
    Tensor logits = conv2d_forward(x, params.get("head.conv.weight"), &params.get("head.conv.bias"),
                                   1, 0, &c.head.col);
    c.head.pre = logits;
    c.prob = sigmoid_forward(logits);
    return Tensor({c.prob.dim(1), c.prob.dim(2)}, c.prob.values());
}

inline GradStore deepsegnet_backward(const ParameterStore& params, const DeepSegNetCache& c,
                                     const Tensor& dprob, const DeepSegNetConfig& cfg,
                                     bool grad_is_logit = false) {
    if (c.prob.empty()) throw std::logic_error("deepsegnet_backward: no cached forward state");
    GradStore grads;
    for (const auto& [name, t] : params) grads.add(name, Tensor(t.shape()));

    auto conv_block_backward = [&](const Tensor& dy, const std::string& name,
                                   const UNetCache::ConvRec& rec) {
        Tensor dpre = relu_backward(dy, rec.pre);
        Tensor dx;
        Tensor fake_in(rec.in_shape);
        conv2d_backward(dpre, fake_in, params.get(name + ".weight"), 1, 1, &rec.col, &dx,
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
        dx = conv_block_backward(dx, "dec" + lvl + ".conv1",
                                 c.dec[static_cast<std::size_t>(cfg.depth - 1 - i)]);
        dskips[static_cast<std::size_t>(i)] = dx;  // additive skip: same gradient both ways
        const Tensor& tin = c.tconv_in[static_cast<std::size_t>(cfg.depth - 1 - i)];
        Tensor dtin;
        tconv2x2_backward(dx, tin, params.get("up" + lvl + ".tconv.weight"), &dtin,
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
