#pragma once

#include <string>
#include <vector>

#include "mricascade/unet.hpp"

namespace mricascade::nets {

enum class CellKind { plain, gated };

struct EncoderConvSpec {
    int channels;
    int stride;
};

struct RecurrentConfig {
    CellKind cell = CellKind::plain;
    int input_dim = 32;
    int hidden_dim = 32;
    int num_classes = 2;
    std::vector<EncoderConvSpec> encoder = {{8, 2}, {16, 2}};  // 3x3 convs, shared across steps
};

inline ParameterStore recurrent_init(const RecurrentConfig& cfg, std::uint64_t seed) {
    if (cfg.hidden_dim < 1 || cfg.input_dim < 1 || cfg.encoder.empty())
        throw std::invalid_argument("recurrent: bad config");
    Rng rng(Rng::mix(seed, cfg.cell == CellKind::gated ? 0x6c73746dULL : 0x726e6eULL));
    ParameterStore store;
    int ci = 1;
    for (std::size_t k = 0; k < cfg.encoder.size(); ++k) {
        detail::add_conv(store, rng, "encoder.conv" + std::to_string(k), cfg.encoder[k].channels, ci, 3);
        ci = cfg.encoder[k].channels;
    }
    store.add("encoder.fc.weight", detail::he_tensor(rng, {cfg.input_dim, ci}, ci));
    store.add("encoder.fc.bias", Tensor({cfg.input_dim}));
    auto add_cell_mats = [&](const std::string& gate, double bias_value) {
        store.add("cell.W" + gate, detail::he_tensor(rng, {cfg.hidden_dim, cfg.input_dim}, cfg.input_dim));
        store.add("cell.U" + gate, detail::he_tensor(rng, {cfg.hidden_dim, cfg.hidden_dim}, cfg.hidden_dim));
        store.add("cell.b" + gate, Tensor::full({cfg.hidden_dim}, bias_value));
    };
    if (cfg.cell == CellKind::plain) {
        add_cell_mats("", 0.0);
    } else {
        add_cell_mats("i", 0.0);
        add_cell_mats("f", 1.0);  // forget gate starts open
        add_cell_mats("o", 0.0);
        add_cell_mats("g", 0.0);
    }
    store.add("head.weight", detail::he_tensor(rng, {cfg.num_classes, cfg.hidden_dim}, cfg.hidden_dim));
    store.add("head.bias", Tensor({cfg.num_classes}));
    return store;
}

struct RecurrentCache {
    struct EncRec {
        std::vector<UNetCache::ConvRec> convs;
        std::vector<int> gap_in_shape;
        Tensor gap_out;
        Tensor feat;  // encoder output fed to the cell
    };
    struct StepRec {
        Tensor h_prev, c_prev;
        Tensor i, f, o, g, c, tanh_c, h;  // gated
        Tensor a, h_plain;                // plain
    };
    std::vector<EncRec> enc;
    std::vector<StepRec> steps;
    Tensor h_final;
};

namespace detail {

inline Tensor encode_roi(const ParameterStore& params, const Tensor& roi, const RecurrentConfig& cfg,
                         RecurrentCache::EncRec& rec) {
    Tensor x({1, roi.dim(0), roi.dim(1)}, roi.values());
    rec.convs.resize(cfg.encoder.size());
    for (std::size_t k = 0; k < cfg.encoder.size(); ++k) {
        auto& cr = rec.convs[k];
        cr.in_shape = x.shape();
        const std::string name = "encoder.conv" + std::to_string(k);
        Tensor pre = conv2d_forward(x, params.get(name + ".weight"), &params.get(name + ".bias"),
                                    cfg.encoder[k].stride, 1, &cr.col);
        x = relu_forward(pre);
        cr.pre = std::move(pre);
    }
    rec.gap_in_shape = x.shape();
    rec.gap_out = global_avg_pool(x);
    rec.feat = dense_forward(rec.gap_out, params.get("encoder.fc.weight"), &params.get("encoder.fc.bias"));
    return rec.feat;
}

inline void encode_roi_backward(const ParameterStore& params, const RecurrentConfig& cfg,
                                const RecurrentCache::EncRec& rec, const Tensor& dfeat,
                                GradStore& grads) {
    Tensor dgap;
    dense_backward(dfeat, rec.gap_out, params.get("encoder.fc.weight"), &dgap,
                   grads.get("encoder.fc.weight"), &grads.get("encoder.fc.bias"));
    Tensor dx = global_avg_pool_backward(dgap, rec.gap_in_shape);
    for (std::size_t k = cfg.encoder.size(); k-- > 0;) {
        const auto& cr = rec.convs[k];
        Tensor dpre = relu_backward(dx, cr.pre);
        const std::string name = "encoder.conv" + std::to_string(k);
        Tensor fake(cr.in_shape);
        Tensor dnext;
        conv2d_backward(dpre, fake, params.get(name + ".weight"), cfg.encoder[k].stride, 1, &cr.col,
                        k == 0 ? nullptr : &dnext, grads.get(name + ".weight"),
                        &grads.get(name + ".bias"));
        dx = std::move(dnext);
    }
}

inline Tensor affine(const ParameterStore& p, const std::string& gate, const Tensor& x,
                     const Tensor& h) {
    Tensor a = dense_forward(x, p.get("cell.W" + gate), &p.get("cell.b" + gate));
    Tensor uh = dense_forward(h, p.get("cell.U" + gate), nullptr);
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] += uh[i];
    return a;
}

}  // namespace detail

// sequence: ordered ROI slices of one patient -> class logits from the final
// hidden state. Plain cell: h <- tanh(Wx + Uh + b). Gated cell: standard
// input/forget/output gates with tanh candidate.
inline Tensor recurrent_forward(const ParameterStore& params, const std::vector<Tensor>& sequence,
                                const RecurrentConfig& cfg, RecurrentCache* cache = nullptr) {
    if (sequence.empty()) throw std::invalid_argument("recurrent_forward: empty sequence");
    RecurrentCache local;
    RecurrentCache& rc = cache ? *cache : local;
    rc = RecurrentCache{};
    rc.enc.resize(sequence.size());
    rc.steps.resize(sequence.size());

    Tensor h({cfg.hidden_dim}), c({cfg.hidden_dim});
    for (std::size_t t = 0; t < sequence.size(); ++t) {
        Tensor x = detail::encode_roi(params, sequence[t], cfg, rc.enc[t]);
        auto& st = rc.steps[t];
        st.h_prev = h;
        if (cfg.cell == CellKind::plain) {
            Tensor a = detail::affine(params, "", x, h);
            st.a = a;
            h = tanh_forward(a);
            st.h_plain = h;
        } else {
            st.c_prev = c;
            st.i = sigmoid_forward(detail::affine(params, "i", x, h));
            st.f = sigmoid_forward(detail::affine(params, "f", x, h));
            st.o = sigmoid_forward(detail::affine(params, "o", x, h));
            st.g = tanh_forward(detail::affine(params, "g", x, h));
            Tensor cn({cfg.hidden_dim});
            for (int k = 0; k < cfg.hidden_dim; ++k) {
                const auto u = static_cast<std::size_t>(k);
                cn[u] = st.f[u] * c[u] + st.i[u] * st.g[u];
            }
            c = cn;
            st.c = c;
            st.tanh_c = tanh_forward(c);
            Tensor hn({cfg.hidden_dim});
            for (int k = 0; k < cfg.hidden_dim; ++k) {
                const auto u = static_cast<std::size_t>(k);
                hn[u] = st.o[u] * st.tanh_c[u];
            }
            h = hn;
            st.h = h;
        }
    }
    rc.h_final = h;
    return dense_forward(h, params.get("head.weight"), &params.get("head.bias"));
}

inline GradStore recurrent_backward(const ParameterStore& params, const RecurrentCache& rc,
                                    const Tensor& dlogits, const RecurrentConfig& cfg) {
    if (rc.steps.empty()) throw std::logic_error("recurrent_backward: no cached forward state");
    GradStore grads;
    for (const auto& [name, t] : params) grads.add(name, Tensor(t.shape()));

    Tensor dh;
    dense_backward(dlogits, rc.h_final, params.get("head.weight"), &dh, grads.get("head.weight"),
                   &grads.get("head.bias"));
    Tensor dc({cfg.hidden_dim});

    auto affine_backward = [&](const std::string& gate, const Tensor& da, const Tensor& x,
                               const Tensor& h_prev, Tensor& dx_acc, Tensor& dh_prev_acc) {
        Tensor dx;
        dense_backward(da, x, params.get("cell.W" + gate), &dx, grads.get("cell.W" + gate),
                       &grads.get("cell.b" + gate));
        Tensor dhp;
        dense_backward(da, h_prev, params.get("cell.U" + gate), &dhp, grads.get("cell.U" + gate), nullptr);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx_acc[i] += dx[i];
        for (std::size_t i = 0; i < dhp.numel(); ++i) dh_prev_acc[i] += dhp[i];
    };

    for (std::size_t t = rc.steps.size(); t-- > 0;) {
        const auto& st = rc.steps[t];
        const Tensor& x = rc.enc[t].feat;
        Tensor dx({cfg.input_dim}), dh_prev({cfg.hidden_dim});
        if (cfg.cell == CellKind::plain) {
            Tensor da = tanh_backward(dh, st.h_plain);
            affine_backward("", da, x, st.h_prev, dx, dh_prev);
        } else {
            Tensor do_({cfg.hidden_dim}), dtanh_c({cfg.hidden_dim});
            for (int k = 0; k < cfg.hidden_dim; ++k) {
                const auto u = static_cast<std::size_t>(k);
                do_[u] = dh[u] * st.tanh_c[u];
                dtanh_c[u] = dh[u] * st.o[u];
            }
            for (int k = 0; k < cfg.hidden_dim; ++k) {
                const auto u = static_cast<std::size_t>(k);
                dc[u] += dtanh_c[u] * (1.0 - st.tanh_c[u] * st.tanh_c[u]);
            }
            Tensor di({cfg.hidden_dim}), df({cfg.hidden_dim}), dg({cfg.hidden_dim}),
                dc_prev({cfg.hidden_dim});
            for (int k = 0; k < cfg.hidden_dim; ++k) {
                const auto u = static_cast<std::size_t>(k);
                di[u] = dc[u] * st.g[u];
                dg[u] = dc[u] * st.i[u];
                df[u] = dc[u] * st.c_prev[u];
                dc_prev[u] = dc[u] * st.f[u];
            }
            Tensor dai = sigmoid_backward(di, st.i);
            Tensor daf = sigmoid_backward(df, st.f);
            Tensor dao = sigmoid_backward(do_, st.o);
            Tensor dag = tanh_backward(dg, st.g);
            affine_backward("i", dai, x, st.h_prev, dx, dh_prev);
            affine_backward("f", daf, x, st.h_prev, dx, dh_prev);
            affine_backward("o", dao, x, st.h_prev, dx, dh_prev);
            affine_backward("g", dag, x, st.h_prev, dx, dh_prev);
            dc = std::move(dc_prev);
        }
        detail::encode_roi_backward(params, cfg, rc.enc[t], dx, grads);
        dh = std::move(dh_prev);
    }
    return grads;
}

}  // namespace mricascade::nets
