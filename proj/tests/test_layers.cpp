#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mricascade/layers.hpp"
#include "mricascade/rng.hpp"

using namespace mricascade;
using namespace mricascade::nets;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
    return s;
}

// max relative error between analytic and central-difference gradients of the
// scalar loss sum(f(x) .* r) over every coordinate of `x`
template <typename Forward>
double fd_check(Tensor& x, const Tensor& analytic_dx, const Tensor& r, Forward&& fwd,
                double eps = 1e-5) {
    double worst = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double lp = weighted_sum(fwd(), r);
        x[i] = saved - eps;
        const double lm = weighted_sum(fwd(), r);
        x[i] = saved;
        const double numeric = (lp - lm) / (2 * eps);
        const double denom = std::max(std::abs(numeric), std::abs(analytic_dx[i]));
        if (denom < 1e-6) continue;
        worst = std::max(worst, std::abs(numeric - analytic_dx[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("conv2d forward matches a direct convolution") {
    Rng rng(1);
    Tensor x = random_tensor(rng, {2, 6, 6});
    Tensor w = random_tensor(rng, {3, 2, 3, 3});
    Tensor b = random_tensor(rng, {3});
    Tensor y = conv2d_forward(x, w, &b, 1, 0);
    REQUIRE(y.shape() == std::vector<int>{3, 4, 4});
    for (int co = 0; co < 3; ++co)
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) {
                double expect = b[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < 2; ++ci)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j)
                            expect += w.at(co, ci, i, j) * x.at(ci, r + i, c + j);
                CHECK(y.at(co, r, c) == doctest::Approx(expect).epsilon(1e-12));
            }
}

TEST_CASE("conv2d gradients pass finite differences") {
    Rng rng(2);
    for (auto [stride, pad, k] : {std::tuple{1, 0, 3}, {1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 3, 7}}) {
        Tensor x = random_tensor(rng, {2, 9, 9});
        Tensor w = random_tensor(rng, {2, 2, k, k});
        Tensor b = random_tensor(rng, {2});
        ConvCache cache;
        Tensor y = conv2d_forward(x, w, &b, stride, pad, &cache);
        Tensor r = random_tensor(rng, y.shape());
        Tensor dx, dw(w.shape()), db(b.shape());
        conv2d_backward(r, x, w, stride, pad, &cache, &dx, dw, &db);
        auto fx = [&] { return conv2d_forward(x, w, &b, stride, pad); };
        CHECK(fd_check(x, dx, r, fx) < 1e-6);
        CHECK(fd_check(w, dw, r, fx) < 1e-6);
        CHECK(fd_check(b, db, r, fx) < 1e-6);
    }
}

TEST_CASE("transposed 2x2 conv doubles resolution and passes finite differences") {
    Rng rng(3);
    Tensor x = random_tensor(rng, {3, 5, 5});
    Tensor w = random_tensor(rng, {3, 2, 2, 2});
    Tensor b = random_tensor(rng, {2});
    Tensor y = tconv2x2_forward(x, w, &b);
    REQUIRE(y.shape() == std::vector<int>{2, 10, 10});
    Tensor r = random_tensor(rng, y.shape());
    Tensor dx, dw(w.shape()), db(b.shape());
    tconv2x2_backward(r, x, w, &dx, dw, &db);
    auto fx = [&] { return tconv2x2_forward(x, w, &b); };
    CHECK(fd_check(x, dx, r, fx) < 1e-6);
    CHECK(fd_check(w, dw, r, fx) < 1e-6);
    CHECK(fd_check(b, db, r, fx) < 1e-6);
}

TEST_CASE("maxpool routes gradient to the argmax") {
    Rng rng(4);
    for (auto [k, stride, pad] : {std::tuple{2, 2, 0}, {3, 2, 1}}) {
        Tensor x = random_tensor(rng, {2, 8, 8});
        PoolCache cache;
        Tensor y = maxpool_forward(x, k, stride, pad, cache);
        Tensor r = random_tensor(rng, y.shape());
        Tensor dx = maxpool_backward(r, cache, x.shape());
        auto fx = [&] {
            PoolCache c2;
            return maxpool_forward(x, k, stride, pad, c2);
        };
        CHECK(fd_check(x, dx, r, fx, 1e-6) < 1e-5);
    }
}

TEST_CASE("dense layer matches hand evaluation and finite differences") {
    Rng rng(5);
    Tensor x = random_tensor(rng, {4});
    Tensor w = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {3});
    Tensor y = dense_forward(x, w, &b);
    for (int i = 0; i < 3; ++i) {
        double expect = b[static_cast<std::size_t>(i)];
        for (int j = 0; j < 4; ++j) expect += w.at(i, j) * x[static_cast<std::size_t>(j)];
        CHECK(y[static_cast<std::size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
    }
    Tensor r = random_tensor(rng, {3});
    Tensor dx, dw(w.shape()), db(b.shape());
    dense_backward(r, x, w, &dx, dw, &db);
    auto fx = [&] { return dense_forward(x, w, &b); };
    CHECK(fd_check(x, dx, r, fx) < 1e-6);
    CHECK(fd_check(w, dw, r, fx) < 1e-6);
}

TEST_CASE("global average pool of a constant map is that constant") {
    Tensor x = Tensor::full({3, 5, 5}, 0.0);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 5; ++r)
            for (int q = 0; q < 5; ++q) x.at(c, r, q) = 1.0 + c;
    Tensor y = global_avg_pool(x);
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(3.0).epsilon(1e-12));

    Rng rng(6);
    Tensor z = random_tensor(rng, {2, 4, 4});
    Tensor r = random_tensor(rng, {2});
    Tensor dz = global_avg_pool_backward(r, z.shape());
    auto fx = [&] { return global_avg_pool(z); };
    CHECK(fd_check(z, dz, r, fx) < 1e-6);
}

TEST_CASE("activations pass finite differences") {
    Rng rng(7);
    Tensor x = random_tensor(rng, {2, 3, 3});
    Tensor r = random_tensor(rng, x.shape());

    Tensor ys = sigmoid_forward(x);
    Tensor ds = sigmoid_backward(r, ys);
    CHECK(fd_check(x, ds, r, [&] { return sigmoid_forward(x); }) < 1e-6);

    Tensor yt = tanh_forward(x);
    Tensor dt = tanh_backward(r, yt);
    CHECK(fd_check(x, dt, r, [&] { return tanh_forward(x); }) < 1e-6);

    // keep values away from the relu kink so central differences are valid
    for (auto& v : x.values())
        if (std::abs(v) < 0.05) v = 0.1;
    Tensor dr = relu_backward(r, x);
    CHECK(fd_check(x, dr, r, [&] { return relu_forward(x); }) < 1e-6);
}

TEST_CASE("concat, crop and split are consistent") {
    Rng rng(8);
    Tensor a = random_tensor(rng, {2, 4, 4});
    Tensor b = random_tensor(rng, {3, 4, 4});
    Tensor y = concat_channels(a, b);
    REQUIRE(y.shape() == std::vector<int>{5, 4, 4});
    Tensor da, db;
    split_channels_backward(y, 2, da, db);
    CHECK(da.values() == a.values());
    CHECK(db.values() == b.values());

    Tensor big = random_tensor(rng, {2, 6, 6});
    Tensor crop = center_crop(big, 4, 4);
    CHECK(crop.at(0, 0, 0) == big.at(0, 1, 1));
    Tensor r = random_tensor(rng, crop.shape());
    Tensor dbig = center_crop_backward(r, big.shape());
    CHECK(fd_check(big, dbig, r, [&] { return center_crop(big, 4, 4); }) < 1e-6);
}
