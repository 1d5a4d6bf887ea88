#pragma once

#include <array>
#include <string>
#include <vector>

#include "mricascade/unet.hpp"

namespace mricascade::nets {

enum class ResNetVariant { resnet50, resnet_mini };

struct ResNetConfig {
    ResNetVariant variant = ResNetVariant::resnet_mini;
    int num_classes = 2;
    int input_size = 32;
    int base_channels = 8;  // canonical ResNet-50 uses 64
};

namespace detail {

struct BottleneckSpec {
    int in_ch, mid_ch, out_ch, stride;
    std::string name;
};

struct ResNetPlan {
    int stem_kernel, stem_stride, stem_pad, stem_out;
    bool stem_pool;
    std::vector<BottleneckSpec> blocks;
    int feat_ch;
};

inline ResNetPlan resnet_plan(const ResNetConfig& cfg) {
    ResNetPlan plan{};
    const int b = cfg.base_channels;
    const bool full = cfg.variant == ResNetVariant::resnet50;
    const std::array<int, 4> counts = full ? std::array<int, 4>{3, 4, 6, 3} : std::array<int, 4>{1, 1, 1, 1};
    const int expansion = full ? 4 : 2;
    plan.stem_kernel = full ? 7 : 3;
    plan.stem_stride = full ? 2 : 1;
    plan.stem_pad = full ? 3 : 1;
    plan.stem_out = b;
    plan.stem_pool = full;
    int in_ch = b;
    for (int s = 0; s < 4; ++s) {
        const int mid = b << s;
        const int out = expansion * mid;
        for (int k = 0; k < counts[static_cast<std::size_t>(s)]; ++k) {
            BottleneckSpec blk;
            blk.in_ch = in_ch;
            blk.mid_ch = mid;
            blk.out_ch = out;
            blk.stride = (k == 0 && s > 0) ? 2 : 1;
            blk.name = "layer" + std::to_string(s + 1) + ".block" + std::to_string(k);
            plan.blocks.push_back(blk);
            in_ch = out;
        }
    }
    plan.feat_ch = in_ch;
    return plan;
}

}  // namespace detail

// Bias-free convolutions and head: the store holds exactly 48 bottleneck conv
// weights plus the input conv and the fc weight for the resnet50 variant.
inline ParameterStore resnet_init(const ResNetConfig& cfg, std::uint64_t seed) {
    if (cfg.num_classes < 1 || cfg.base_channels < 1) throw std::invalid_argument("resnet: bad config");
    Rng rng(Rng::mix(seed, 0x7265736eULL));
    ParameterStore store;
    const auto plan = detail::resnet_plan(cfg);
    store.add("conv1.weight", detail::he_tensor(rng, {plan.stem_out, 1, plan.stem_kernel, plan.stem_kernel},
                                                plan.stem_kernel * plan.stem_kernel));
    for (const auto& blk : plan.blocks) {
        store.add(blk.name + ".conv1.weight",
                  detail::he_tensor(rng, {blk.mid_ch, blk.in_ch, 1, 1}, blk.in_ch));
        store.add(blk.name + ".conv2.weight",
                  detail::he_tensor(rng, {blk.mid_ch, blk.mid_ch, 3, 3}, blk.mid_ch * 9));
        store.add(blk.name + ".conv3.weight",
                  detail::he_tensor(rng, {blk.out_ch, blk.mid_ch, 1, 1}, blk.mid_ch));
    }
    store.add("fc.weight", detail::he_tensor(rng, {cfg.num_classes, plan.feat_ch}, plan.feat_ch));
    return store;
}

struct ResNetCache {
    struct BlockRec {
        ConvCache col1, col2, col3;
        Tensor pre1, pre2;          // pre-activations inside the branch
        std::vector<int> in_shape;
        Tensor input;               // block input, needed for the shortcut path
    };
    ConvCache stem_col;
    Tensor stem_pre;
    std::vector<int> image_shape;
    PoolCache stem_pool;
    std::vector<int> stem_pool_in_shape;
    bool pooled = false;
    std::vector<BlockRec> blocks;
    std::vector<int> gap_in_shape;
    Tensor gap_out;
};

namespace detail {

// Parameter-free shortcut: spatial subsample by stride, zero-pad channels.
inline Tensor shortcut_forward(const Tensor& x, int out_ch, int stride) {
    if (stride == 1 && x.dim(0) == out_ch) return x;
    const int h = (x.dim(1) + stride - 1) / stride, w = (x.dim(2) + stride - 1) / stride;
    Tensor y({out_ch, h, w});
    for (int c = 0; c < x.dim(0); ++c)
        for (int r = 0; r < h; ++r)
            for (int q = 0; q < w; ++q) y.at(c, r, q) = x.at(c, r * stride, q * stride);
    return y;
}

inline void shortcut_backward_accumulate(const Tensor& dy, Tensor& dx, int stride) {
    for (int c = 0; c < dx.dim(0); ++c)
        for (int r = 0; r < dy.dim(1); ++r)
            for (int q = 0; q < dy.dim(2); ++q) dx.at(c, r * stride, q * stride) += dy.at(c, r, q);
}

}  // namespace detail

inline Tensor resnet_forward(const ParameterStore& params, const Tensor& image,
                             const ResNetConfig& cfg, ResNetCache* cache = nullptr) {
    if (image.rank() != 2) throw std::invalid_argument("resnet_forward: expects a 2-D slice");
    if (image.dim(0) != cfg.input_size || image.dim(1) != cfg.input_size)
        throw std::invalid_argument("resnet_forward: input is " + image.shape_str() + ", config wants " +
                                    std::to_string(cfg.input_size));
    const auto plan = detail::resnet_plan(cfg);
    ResNetCache local;
    ResNetCache& c = cache ? *cache : local;
    c = ResNetCache{};

    Tensor x({1, image.dim(0), image.dim(1)}, image.values());
    c.image_shape = x.shape();
    Tensor pre = conv2d_forward(x, params.get("conv1.weight"), nullptr, plan.stem_stride,
                                plan.stem_pad, &c.stem_col);
    c.stem_pre = pre;
    x = relu_forward(pre);
    if (plan.stem_pool) {
        c.stem_pool_in_shape = x.shape();
        x = maxpool_forward(x, 3, 2, 1, c.stem_pool);
        c.pooled = true;
    }

    c.blocks.resize(plan.blocks.size());
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        const auto& blk = plan.blocks[i];
        auto& rec = c.blocks[i];
        rec.input = x;
        rec.in_shape = x.shape();
        Tensor p1 = conv2d_forward(x, params.get(blk.name + ".conv1.weight"), nullptr, 1, 0, &rec.col1);
        Tensor a1 = relu_forward(p1);
        rec.pre1 = std::move(p1);
        Tensor p2 = conv2d_forward(a1, params.get(blk.name + ".conv2.weight"), nullptr, blk.stride, 1,
                                   &rec.col2);
        Tensor a2 = relu_forward(p2);
        rec.pre2 = std::move(p2);
        Tensor branch = conv2d_forward(a2, params.get(blk.name + ".conv3.weight"), nullptr, 1, 0,
                                       &rec.col3);
        Tensor next = detail::shortcut_forward(x, blk.out_ch, blk.stride);
        for (std::size_t k = 0; k < next.numel(); ++k) next[k] += branch[k];
        x = std::move(next);
    }

    c.gap_in_shape = x.shape();
    Tensor feat = global_avg_pool(x);
    c.gap_out = feat;
    return dense_forward(feat, params.get("fc.weight"), nullptr);
}

inline GradStore resnet_backward(const ParameterStore& params, const ResNetCache& c,
                                 const Tensor& dlogits, const ResNetConfig& cfg) {
    if (c.gap_out.empty()) throw std::logic_error("resnet_backward: no cached forward state");
    const auto plan = detail::resnet_plan(cfg);
    GradStore grads;
    for (const auto& [name, t] : params) grads.add(name, Tensor(t.shape()));

    Tensor dfeat;
    dense_backward(dlogits, c.gap_out, params.get("fc.weight"), &dfeat, grads.get("fc.weight"), nullptr);
    Tensor dx = global_avg_pool_backward(dfeat, c.gap_in_shape);

    for (std::size_t i = plan.blocks.size(); i-- > 0;) {
        const auto& blk = plan.blocks[i];
        const auto& rec = c.blocks[i];
        Tensor da2;
        {
            Tensor fake(rec.pre2.shape());
            conv2d_backward(dx, fake, params.get(blk.name + ".conv3.weight"), 1, 0, &rec.col3, &da2,
                            grads.get(blk.name + ".conv3.weight"), nullptr);
        }
        Tensor dp2 = relu_backward(da2, rec.pre2);
        Tensor da1;
        {
            Tensor fake(rec.pre1.shape());
            conv2d_backward(dp2, fake, params.get(blk.name + ".conv2.weight"), blk.stride, 1,
                            &rec.col2, &da1, grads.get(blk.name + ".conv2.weight"), nullptr);
        }
        Tensor dp1 = relu_backward(da1, rec.pre1);
        Tensor dinput;
        {
            Tensor fake(rec.in_shape);
            conv2d_backward(dp1, fake, params.get(blk.name + ".conv1.weight"), 1, 0, &rec.col1,
                            &dinput, grads.get(blk.name + ".conv1.weight"), nullptr);
        }
        if (blk.stride == 1 && blk.in_ch == blk.out_ch) {
            for (std::size_t k = 0; k < dinput.numel(); ++k) dinput[k] += dx[k];
        } else {
            Tensor dpadded({blk.in_ch, dx.dim(1), dx.dim(2)});
            for (int ch = 0; ch < blk.in_ch; ++ch)
                for (int r = 0; r < dx.dim(1); ++r)
                    for (int q = 0; q < dx.dim(2); ++q) dpadded.at(ch, r, q) = dx.at(ch, r, q);
            detail::shortcut_backward_accumulate(dpadded, dinput, blk.stride);
        }
        dx = std::move(dinput);
    }

    if (c.pooled) dx = maxpool_backward(dx, c.stem_pool, c.stem_pool_in_shape);
    Tensor dpre = relu_backward(dx, c.stem_pre);
    Tensor fake(c.image_shape);
    conv2d_backward(dpre, fake, params.get("conv1.weight"), plan.stem_stride, plan.stem_pad,
                    &c.stem_col, nullptr, grads.get("conv1.weight"), nullptr);
    return grads;
}

}  // namespace mricascade::nets
