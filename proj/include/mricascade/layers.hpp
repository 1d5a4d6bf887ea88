#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mricascade/tensor.hpp"

namespace mricascade::nets {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline int conv_out_size(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

struct ConvCache {
    Tensor col;  // [Ho*Wo, Ci*kh*kw]
};

namespace detail {

inline Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad) {
    const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = conv_out_size(h, kh, stride, pad), wo = conv_out_size(w, kw, stride, pad);
    Tensor col({ho * wo, ci * kh * kw});
    double* out = col.data();
    for (int r = 0; r < ho; ++r) {
        for (int c = 0; c < wo; ++c) {
            for (int ch = 0; ch < ci; ++ch) {
                const double* plane = x.data() + static_cast<std::size_t>(ch) * h * w;
                for (int i = 0; i < kh; ++i) {
                    const int y = r * stride - pad + i;
                    for (int j = 0; j < kw; ++j) {
                        const int xx = c * stride - pad + j;
                        *out++ = (y >= 0 && y < h && xx >= 0 && xx < w)
                                     ? plane[static_cast<std::size_t>(y) * w + xx]
                                     : 0.0;
                    }
                }
            }
        }
    }
    return col;
}

inline void col2im_accumulate(const Tensor& col, int ci, int h, int w, int kh, int kw, int stride,
                              int pad, Tensor& dx) {
    const int ho = conv_out_size(h, kh, stride, pad), wo = conv_out_size(w, kw, stride, pad);
    const double* in = col.data();
    for (int r = 0; r < ho; ++r) {
        for (int c = 0; c < wo; ++c) {
            for (int ch = 0; ch < ci; ++ch) {
                double* plane = dx.data() + static_cast<std::size_t>(ch) * h * w;
                for (int i = 0; i < kh; ++i) {
                    const int y = r * stride - pad + i;
                    for (int j = 0; j < kw; ++j) {
                        const int xx = c * stride - pad + j;
                        if (y >= 0 && y < h && xx >= 0 && xx < w)
                            plane[static_cast<std::size_t>(y) * w + xx] += *in;
                        ++in;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x: {Ci,H,W}, weight: {Co,Ci,kh,kw}, bias: {Co} or null -> {Co,Ho,Wo}
inline Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, int stride,
                             int pad, ConvCache* cache = nullptr) {
    const int co = weight.dim(0), ci = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (x.dim(0) != ci) throw std::invalid_argument("conv2d: channel mismatch");
    const int ho = conv_out_size(x.dim(1), kh, stride, pad);
    const int wo = conv_out_size(x.dim(2), kw, stride, pad);
    if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: output would be empty");
    Tensor col = detail::im2col(x, kh, kw, stride, pad);
    Tensor y({co, ho, wo});
    ConstMatMap w_mat(weight.data(), co, ci * kh * kw);
    ConstMatMap col_mat(col.data(), ho * wo, ci * kh * kw);
    MatMap y_mat(y.data(), co, ho * wo);
    y_mat.noalias() = w_mat * col_mat.transpose();
    if (bias)
        for (int ch = 0; ch < co; ++ch) y_mat.row(ch).array() += (*bias)[static_cast<std::size_t>(ch)];
    if (cache) cache->col = std::move(col);
    return y;
}

// Accumulates into dweight/dbias; dx (optional) is overwritten.
inline void conv2d_backward(const Tensor& dy, const Tensor& x, const Tensor& weight, int stride,
                            int pad, const ConvCache* cache, Tensor* dx, Tensor& dweight,
                            Tensor* dbias) {
    const int co = weight.dim(0), ci = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    const int ho = dy.dim(1), wo = dy.dim(2);
    Tensor col_local;
    const Tensor* col = cache ? &cache->col : nullptr;
    if (!col) {
        col_local = detail::im2col(x, kh, kw, stride, pad);
        col = &col_local;
    }
    ConstMatMap dy_mat(dy.data(), co, ho * wo);
    ConstMatMap col_mat(col->data(), ho * wo, ci * kh * kw);
    MatMap dw_mat(dweight.data(), co, ci * kh * kw);
    dw_mat.noalias() += dy_mat * col_mat;
    if (dbias)
        for (int ch = 0; ch < co; ++ch) (*dbias)[static_cast<std::size_t>(ch)] += dy_mat.row(ch).sum();
    if (dx) {
        Tensor dcol({ho * wo, ci * kh * kw});
        MatMap dcol_mat(dcol.data(), ho * wo, ci * kh * kw);
        ConstMatMap w_mat(weight.data(), co, ci * kh * kw);
        dcol_mat.noalias() = dy_mat.transpose() * w_mat;
        *dx = Tensor(x.shape());
        detail::col2im_accumulate(dcol, ci, x.dim(1), x.dim(2), kh, kw, stride, pad, *dx);
    }
}

struct PoolCache {
    std::vector<int> argmax;  // flat input index per output element
};

inline Tensor maxpool_forward(const Tensor& x, int kernel, int stride, int pad, PoolCache& cache) {
    const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = conv_out_size(h, kernel, stride, pad), wo = conv_out_size(w, kernel, stride, pad);
    Tensor y({ch, ho, wo});
    cache.argmax.assign(y.numel(), -1);
    std::size_t o = 0;
    for (int c = 0; c < ch; ++c) {
        const double* plane = x.data() + static_cast<std::size_t>(c) * h * w;
        for (int r = 0; r < ho; ++r) {
            for (int q = 0; q < wo; ++q, ++o) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = -1;
                for (int i = 0; i < kernel; ++i) {
                    const int y0 = r * stride - pad + i;
                    if (y0 < 0 || y0 >= h) continue;
                    for (int j = 0; j < kernel; ++j) {
                        const int x0 = q * stride - pad + j;
                        if (x0 < 0 || x0 >= w) continue;
                        const double v = plane[static_cast<std::size_t>(y0) * w + x0];
                        if (v > best) {
                            best = v;
                            best_idx = static_cast<int>(c * h * w + y0 * w + x0);
                        }
                    }
                }
                y[o] = best;
                cache.argmax[o] = best_idx;
            }
        }
    }
    return y;
}

inline Tensor maxpool_backward(const Tensor& dy, const PoolCache& cache,
                               const std::vector<int>& x_shape) {
    Tensor dx(x_shape);
    for (std::size_t o = 0; o < dy.numel(); ++o) dx[static_cast<std::size_t>(cache.argmax[o])] += dy[o];
    return dx;
}

// Transposed 2x2 stride-2 convolution (learnable upsampling).
// x: {Ci,H,W}, weight: {Ci,Co,2,2} -> {Co,2H,2W}
inline Tensor tconv2x2_forward(const Tensor& x, const Tensor& weight, const Tensor* bias) {
    const int ci = weight.dim(0), co = weight.dim(1);
    if (x.dim(0) != ci) throw std::invalid_argument("tconv2x2: channel mismatch");
    const int h = x.dim(1), w = x.dim(2);
    Tensor y({co, 2 * h, 2 * w});
    ConstMatMap x_mat(x.data(), ci, h * w);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sub(co, h * w);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wij(ci, co);
            for (int a = 0; a < ci; ++a)
                for (int b = 0; b < co; ++b) wij(a, b) = weight.at(a, b, i, j);
            sub.noalias() = wij.transpose() * x_mat;
            for (int c = 0; c < co; ++c)
                for (int r = 0; r < h; ++r)
                    for (int q = 0; q < w; ++q) y.at(c, 2 * r + i, 2 * q + j) = sub(c, r * w + q);
        }
    }
    if (bias)
        for (int c = 0; c < co; ++c) {
            double* plane = y.data() + static_cast<std::size_t>(c) * 4 * h * w;
            const double b = (*bias)[static_cast<std::size_t>(c)];
            for (int i = 0; i < 4 * h * w; ++i) plane[i] += b;
        }
    return y;
}

inline void tconv2x2_backward(const Tensor& dy, const Tensor& x, const Tensor& weight,
                              Tensor* dx, Tensor& dweight, Tensor* dbias) {
    const int ci = weight.dim(0), co = weight.dim(1);
    const int h = x.dim(1), w = x.dim(2);
    ConstMatMap x_mat(x.data(), ci, h * w);
    if (dx) *dx = Tensor(x.shape());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dy_sub(co, h * w);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            for (int c = 0; c < co; ++c)
                for (int r = 0; r < h; ++r)
                    for (int q = 0; q < w; ++q) dy_sub(c, r * w + q) = dy.at(c, 2 * r + i, 2 * q + j);
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dwij(ci, co);
            dwij.noalias() = x_mat * dy_sub.transpose();
            for (int a = 0; a < ci; ++a)
                for (int b = 0; b < co; ++b) dweight.at(a, b, i, j) += dwij(a, b);
            if (dx) {
                Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wij(ci, co);
                for (int a = 0; a < ci; ++a)
                    for (int b = 0; b < co; ++b) wij(a, b) = weight.at(a, b, i, j);
                MatMap dx_mat(dx->data(), ci, h * w);
                dx_mat.noalias() += wij * dy_sub;
            }
        }
    }
    if (dbias) {
        ConstMatMap dy_mat(dy.data(), co, 4 * h * w);
        for (int c = 0; c < co; ++c) (*dbias)[static_cast<std::size_t>(c)] += dy_mat.row(c).sum();
    }
}

inline Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

inline Tensor relu_backward(const Tensor& dy, const Tensor& x_pre) {
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = x_pre[i] > 0.0 ? dy[i] : 0.0;
    return dx;
}

inline Tensor sigmoid_forward(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return y;
}

inline Tensor sigmoid_backward(const Tensor& dy, const Tensor& y) {
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
    return dx;
}

inline Tensor tanh_forward(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

inline Tensor tanh_backward(const Tensor& dy, const Tensor& y) {
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
    return dx;
}

// x: {n}, weight: {m,n}, bias: {m} or null -> {m}
inline Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor* bias) {
    const int m = weight.dim(0), n = weight.dim(1);
    if (static_cast<int>(x.numel()) != n) throw std::invalid_argument("dense: input size mismatch");
    Tensor y({m});
    ConstMatMap w_mat(weight.data(), m, n);
    Eigen::Map<const Eigen::VectorXd> x_vec(x.data(), n);
    Eigen::Map<Eigen::VectorXd> y_vec(y.data(), m);
    y_vec.noalias() = w_mat * x_vec;
    if (bias)
        for (int i = 0; i < m; ++i) y[static_cast<std::size_t>(i)] += (*bias)[static_cast<std::size_t>(i)];
    return y;
}

inline void dense_backward(const Tensor& dy, const Tensor& x, const Tensor& weight, Tensor* dx,
                           Tensor& dweight, Tensor* dbias) {
    const int m = weight.dim(0), n = weight.dim(1);
    ConstMatMap w_mat(weight.data(), m, n);
    Eigen::Map<const Eigen::VectorXd> x_vec(x.data(), n);
    Eigen::Map<const Eigen::VectorXd> dy_vec(dy.data(), m);
    MatMap dw_mat(dweight.data(), m, n);
    dw_mat.noalias() += dy_vec * x_vec.transpose();
    if (dbias)
        for (int i = 0; i < m; ++i) (*dbias)[static_cast<std::size_t>(i)] += dy[static_cast<std::size_t>(i)];
    if (dx) {
        *dx = Tensor(x.shape());
        Eigen::Map<Eigen::VectorXd> dx_vec(dx->data(), n);
        dx_vec.noalias() = w_mat.transpose() * dy_vec;
    }
}

inline Tensor global_avg_pool(const Tensor& x) {
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor y({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = x.data() + static_cast<std::size_t>(ch) * hw;
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += plane[i];
        y[static_cast<std::size_t>(ch)] = s / hw;
    }
    return y;
}

inline Tensor global_avg_pool_backward(const Tensor& dy, const std::vector<int>& x_shape) {
    Tensor dx(x_shape);
    const int hw = x_shape[1] * x_shape[2];
    for (int ch = 0; ch < x_shape[0]; ++ch) {
        const double g = dy[static_cast<std::size_t>(ch)] / hw;
        double* plane = dx.data() + static_cast<std::size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) plane[i] = g;
    }
    return dx;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw std::invalid_argument("concat: spatial shape mismatch");
    Tensor y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.data(), a.data() + a.numel(), y.data());
    std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
    return y;
}

inline void split_channels_backward(const Tensor& dy, int c_first, Tensor& da, Tensor& db) {
    da = Tensor({c_first, dy.dim(1), dy.dim(2)});
    db = Tensor({dy.dim(0) - c_first, dy.dim(1), dy.dim(2)});
    std::copy(dy.data(), dy.data() + da.numel(), da.data());
    std::copy(dy.data() + da.numel(), dy.data() + dy.numel(), db.data());
}

inline Tensor center_crop(const Tensor& x, int th, int tw) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (th > h || tw > w) throw std::invalid_argument("center_crop: target larger than input");
    const int r0 = (h - th) / 2, c0 = (w - tw) / 2;
    Tensor y({c, th, tw});
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < th; ++r)
            for (int q = 0; q < tw; ++q) y.at(ch, r, q) = x.at(ch, r0 + r, c0 + q);
    return y;
}

inline Tensor center_crop_backward(const Tensor& dy, const std::vector<int>& x_shape) {
    Tensor dx(x_shape);
    const int h = x_shape[1], w = x_shape[2];
    const int th = dy.dim(1), tw = dy.dim(2);
    const int r0 = (h - th) / 2, c0 = (w - tw) / 2;
    for (int ch = 0; ch < x_shape[0]; ++ch)
        for (int r = 0; r < th; ++r)
            for (int q = 0; q < tw; ++q) dx.at(ch, r0 + r, c0 + q) = dy.at(ch, r, q);
    return dx;
}

}  // namespace mricascade::nets
