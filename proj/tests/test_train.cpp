#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "mricascade/train.hpp"

using namespace mricascade;
using namespace mricascade::train;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mricascade_tests";
    fs::create_directories(dir);
    return dir / name;
}

// blob-vs-noise toy data used by the learnability smokes
SegDataset blob_seg_dataset(int n_images, int size, std::uint64_t seed) {
    SegDataset out;
    Rng rng(seed);
    for (int i = 0; i < n_images; ++i) {
        Tensor img({size, size});
        for (auto& v : img.values()) v = 0.2 * rng.normal();
        Mask msk(size, size);
        if (i % 2 == 0) {
            const double cy = size * (0.3 + 0.4 * rng.uniform());
            const double cx = size * (0.3 + 0.4 * rng.uniform());
            const double rad = size * 0.15;
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c)
                    if (std::hypot(r - cy, c - cx) <= rad) {
                        img.at(r, c) += 1.5;
                        msk.at(r, c) = 1;
                    }
        }
        out.images.push_back(preprocess::normalize(img));
        out.masks.push_back(msk);
    }
    return out;
}

RoiDataset blob_roi_dataset(int n_patients, int roi, int seq, std::uint64_t seed, bool shuffle_labels) {
    RoiDataset out;
    Rng rng(seed);
    for (int p = 0; p < n_patients; ++p) {
        RoiPatient pat;
        pat.id = "t" + std::to_string(p);
        pat.label = p % 2;
        for (int s = 0; s < seq; ++s) {
            Tensor img({roi, roi});
            for (auto& v : img.values()) v = 0.3 * rng.normal();
            if (pat.label == 1)
                for (int r = roi / 4; r < 3 * roi / 4; ++r)
                    for (int c = roi / 4; c < 3 * roi / 4; ++c) img.at(r, c) += 1.2;
            pat.rois.push_back(preprocess::normalize(img));
            pat.fallback.push_back(false);
        }
        out.patients.push_back(std::move(pat));
    }
    if (shuffle_labels) {
        Rng lr(Rng::mix(seed, 777));
        for (auto& pat : out.patients) pat.label = lr.uniform() < 0.5 ? 1 : 0;
    }
    return out;
}

}  // namespace

TEST_CASE("sgd_step applies theta -= lr * g") {
    nets::ParameterStore p;
    p.add("w", Tensor({1}, {1.0}));
    nets::GradStore g;
    g.add("w", Tensor({1}, {1.0}));
    sgd_step(p, g, {0.0003});
    CHECK(p.get("w")[0] == doctest::Approx(0.9997).epsilon(1e-12));

    nets::ParameterStore p2;
    p2.add("w", Tensor({2}, {2.0, -2.0}));
    nets::GradStore g2;
    g2.add("w", Tensor({2}, {1.0, -1.0}));
    sgd_step(p2, g2, {0.5});
    CHECK(p2.get("w")[0] == 1.5);
    CHECK(p2.get("w")[1] == -1.5);
}

TEST_CASE("zero gradients leave parameters bit-identical") {
    Rng rng(1);
    nets::ParameterStore p;
    Tensor t({3, 3});
    for (auto& v : t.values()) v = rng.normal();
    p.add("w", t);
    nets::ParameterStore before = p;
    nets::GradStore g;
    g.add("w", Tensor({3, 3}));
    sgd_step(p, g, {0.1});
    CHECK(p == before);
}

TEST_CASE("sgd_step rejects misaligned stores") {
    nets::ParameterStore p;
    p.add("w", Tensor({2}));
    nets::GradStore g;
    g.add("v", Tensor({2}));
    CHECK_THROWS(sgd_step(p, g, {0.1}));
    nets::GradStore g2;
    g2.add("w", Tensor({3}));
    CHECK_THROWS(sgd_step(p, g2, {0.1}));
}

TEST_CASE("bce loss on perfect and uninformative predictions") {
    Mask y(2, 2);
    y.at(0, 0) = y.at(1, 1) = 1;
    Tensor perfect({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(seg_loss(perfect, y, SegLossKind::bce).first <= 1e-6);

    Tensor half = Tensor::full({2, 2}, 0.5);
    CHECK(seg_loss(half, y, SegLossKind::bce).first == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // soft-dice term vanishes when p == y (up to the probability clamp)
    const double with_dice = seg_loss(perfect, y, SegLossKind::bce_plus_softdice).first;
    const double without = seg_loss(perfect, y, SegLossKind::bce).first;
    CHECK(std::abs(with_dice - without) < 1e-6);

    Mask bad(2, 3);
    CHECK_THROWS(static_cast<void>(seg_loss(perfect, bad, SegLossKind::bce)));
}

TEST_CASE("bce stays finite over the whole probability range") {
    Mask y(1, 2);
    y.at(0, 1) = 1;
    for (double p : {0.0, 1e-12, 0.5, 1.0 - 1e-12, 1.0}) {
        Tensor prob = Tensor::full({1, 2}, p);
        const auto [loss, grad] = seg_loss(prob, y, SegLossKind::bce);
        CHECK(std::isfinite(loss));
        CHECK(grad.all_finite());
    }
}

TEST_CASE("seg_loss gradient passes finite differences") {
    Rng rng(2);
    Mask y(4, 4);
    for (auto& v : y.v) v = rng.uniform() < 0.4 ? 1 : 0;
    Tensor p({4, 4});
    for (auto& v : p.values()) v = 0.1 + 0.8 * rng.uniform();
    for (auto kind : {SegLossKind::bce, SegLossKind::bce_plus_softdice}) {
        const auto [loss, grad] = seg_loss(p, y, kind);
        (void)loss;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p[i];
            const double eps = 1e-6;
            p[i] = saved + eps;
            const double lp = seg_loss(p, y, kind).first;
            p[i] = saved - eps;
            const double lm = seg_loss(p, y, kind).first;
            p[i] = saved;
            CHECK(grad[i] == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-4));
        }
    }
}

TEST_CASE("softmax cross-entropy hand values") {
    CHECK(cls_loss(Tensor({2}, {0.3, 0.3}), 0).first == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cls_loss(Tensor({5}, {1.1, 1.1, 1.1, 1.1, 1.1}), 3).first ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
    const auto [loss, grad] = cls_loss(Tensor({2}, {50.0, -50.0}), 0);
    CHECK(loss < 1e-9);
    CHECK(std::abs(grad[0]) < 1e-9);
    CHECK_THROWS(static_cast<void>(cls_loss(Tensor({2}, {0.0, 0.0}), 2)));
}

TEST_CASE("cls_loss gradient is softmax minus one-hot") {
    Rng rng(3);
    Tensor logits({4});
    for (auto& v : logits.values()) v = rng.normal();
    const auto [loss, grad] = cls_loss(logits, 2);
    (void)loss;
    Tensor p = softmax(logits);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(grad[i] == doctest::Approx(p[i] - (i == 2 ? 1.0 : 0.0)).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    nets::UNetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 2;
    auto params = nets::unet_init(cfg, 3);
    const auto path = tmp_file("unet.nta").string();
    save_checkpoint(params, path);
    auto report = load_pretrained(params, path, true);
    CHECK(report.params == params);
    CHECK(report.loaded.size() == params.size());
}

TEST_CASE("strict load reports the first mismatch by name") {
    nets::RecurrentConfig cfg;
    cfg.cell = nets::CellKind::plain;
    auto params = nets::recurrent_init(cfg, 4);
    const auto path = tmp_file("strict.nta").string();
    save_checkpoint(params, path);

    nets::RecurrentConfig bigger = cfg;
    bigger.hidden_dim = cfg.hidden_dim + 1;
    auto other = nets::recurrent_init(bigger, 4);
    CHECK_THROWS_WITH_AS(static_cast<void>(load_pretrained(other, path, true)),
                         doctest::Contains("cell.U"), std::runtime_error);

    nets::ParameterStore partial;
    partial.add("cell.W", params.get("cell.W"));
    save_checkpoint(partial, path);
    CHECK_THROWS_WITH_AS(static_cast<void>(load_pretrained(params, path, true)),
                         doctest::Contains("missing"), std::runtime_error);
}

TEST_CASE("non-strict load imports the intersection and reports the rest") {
    nets::RecurrentConfig cfg;
    cfg.cell = nets::CellKind::gated;
    auto params = nets::recurrent_init(cfg, 5);
    nets::ParameterStore encoder_only;
    for (const auto& name : params.names())
        if (name.rfind("encoder.", 0) == 0) encoder_only.add(name, params.get(name));
    const auto path = tmp_file("encoder.nta").string();
    save_checkpoint(encoder_only, path);

    auto fresh = nets::recurrent_init(cfg, 6);
    const Tensor head_before = fresh.get("head.weight");
    auto report = load_pretrained(fresh, path, false);
    CHECK(report.params.get("encoder.fc.weight").values() == params.get("encoder.fc.weight").values());
    CHECK(report.params.get("head.weight").values() == head_before.values());
    CHECK(report.loaded.size() == encoder_only.size());
    CHECK(report.skipped_in_archive.empty());
    CHECK(report.missing_in_archive.size() == params.size() - encoder_only.size());
}

TEST_CASE("corrupt archives are rejected") {
    const auto path = tmp_file("corrupt.nta").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "not an archive at all";
    }
    CHECK_THROWS_WITH_AS(static_cast<void>(nets::nta::load(path)), doctest::Contains("magic"),
                         std::runtime_error);
}

TEST_CASE("a dense softmax layer passes tight gradient checks") {
    Rng rng(7);
    nets::ParameterStore params;
    Tensor w({3, 5});
    for (auto& v : w.values()) v = rng.normal();
    params.add("w", w);
    Tensor x({5});
    for (auto& v : x.values()) v = rng.normal();

    nets::GradStore analytic;
    analytic.add("w", Tensor({3, 5}));
    const Tensor logits = nets::dense_forward(x, params.get("w"), nullptr);
    auto [l0, dlogits] = cls_loss(logits, 1);
    (void)l0;
    nets::dense_backward(dlogits, x, params.get("w"), nullptr, analytic.get("w"), nullptr);
    auto loss_fn = [&](const nets::ParameterStore& p) {
        return cls_loss(nets::dense_forward(x, p.get("w"), nullptr), 1).first;
    };
    auto res = detail::check_against_fd(params, analytic, loss_fn, 1e-5, 1000, 8);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("one full-batch step on a convex toy strictly decreases the loss") {
    Rng rng(9);
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int i = 0; i < 16; ++i) {
        Tensor x({4});
        for (auto& v : x.values()) v = rng.normal();
        xs.push_back(x);
        ys.push_back(i % 2);
    }
    nets::ParameterStore params;
    Tensor w({2, 4});
    for (auto& v : w.values()) v = 0.1 * rng.normal();
    params.add("w", w);

    auto total_loss = [&](const nets::ParameterStore& p) {
        double s = 0;
        for (std::size_t i = 0; i < xs.size(); ++i)
            s += cls_loss(nets::dense_forward(xs[i], p.get("w"), nullptr), ys[i]).first;
        return s / static_cast<double>(xs.size());
    };
    nets::GradStore grads;
    grads.add("w", Tensor({2, 4}));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto [l, dlogits] = cls_loss(nets::dense_forward(xs[i], params.get("w"), nullptr), ys[i]);
        (void)l;
        for (auto& v : dlogits.values()) v /= static_cast<double>(xs.size());
        nets::dense_backward(dlogits, xs[i], params.get("w"), nullptr, grads.get("w"), nullptr);
    }
    const double before = total_loss(params);
    sgd_step(params, grads, {0.05});
    CHECK(total_loss(params) < before);
}

TEST_CASE("segmenter gradients verify against finite differences") {
    SUBCASE("same-padding U-Net, depth 2, 16x16") {
        nets::UNetConfig cfg;
        cfg.depth = 2;
        cfg.base_channels = 2;
        cfg.padding = nets::PaddingMode::same;
        auto res = grad_check_segmenter(nets::Segmenter(cfg), 16, 11, 1e-5, 12);
        CAPTURE(res.worst_tensor);
        CHECK(res.max_rel_err < 1e-4);
    }
    SUBCASE("valid U-Net, depth 2") {
        nets::UNetConfig cfg;
        cfg.depth = 2;
        cfg.base_channels = 2;
        cfg.padding = nets::PaddingMode::valid;
        auto res = grad_check_segmenter(nets::Segmenter(cfg), 24, 12, 1e-5, 12);
        CAPTURE(res.worst_tensor);
        CHECK(res.max_rel_err < 1e-4);
    }
    SUBCASE("DeepSegNet, depth 2") {
        nets::DeepSegNetConfig cfg;
        cfg.depth = 2;
        cfg.base_channels = 2;
        auto res = grad_check_segmenter(nets::Segmenter(cfg), 16, 13, 1e-5, 12);
        CAPTURE(res.worst_tensor);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("classifier gradients verify against finite differences") {
    SUBCASE("resnet_mini") {
        nets::ResNetConfig cfg;
        cfg.variant = nets::ResNetVariant::resnet_mini;
        cfg.base_channels = 2;
        cfg.input_size = 16;
        auto res = grad_check_resnet(cfg, 14, 1e-5, 12);
        CAPTURE(res.worst_tensor);
        CHECK(res.max_rel_err < 1e-4);
    }
    SUBCASE("plain recurrent cell over 3 steps") {
        nets::RecurrentConfig cfg;
        cfg.cell = nets::CellKind::plain;
        cfg.input_dim = 6;
        cfg.hidden_dim = 5;
        cfg.encoder = {{3, 2}};
        auto res = grad_check_recurrent(cfg, 8, 3, 15, 1e-5, 12);
        CAPTURE(res.worst_tensor);
        CHECK(res.max_rel_err < 1e-4);
    }
    SUBCASE("gated recurrent cell over 3 steps") {
        nets::RecurrentConfig cfg;
        cfg.cell = nets::CellKind::gated;
        cfg.input_dim = 6;
        cfg.hidden_dim = 5;
        cfg.encoder = {{3, 2}};
        auto res = grad_check_recurrent(cfg, 8, 3, 16, 1e-5, 12);
        CAPTURE(res.worst_tensor);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("zero epochs return the freshly initialized parameters") {
    auto data = blob_seg_dataset(4, 16, 20);
    nets::UNetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg.padding = nets::PaddingMode::same;
    nets::Segmenter model(cfg);
    TrainConfig tc;
    tc.epochs = 0;
    tc.seed = 99;
    auto [params, report] = train_segmenter(model, data, data, tc, {0.1});
    CHECK(params == model.init(99));
    CHECK(report.epochs.empty());
    CHECK(report.best_epoch == -1);

    auto rois = blob_roi_dataset(4, 8, 2, 21, false);
    nets::RecurrentConfig rc;
    rc.encoder = {{2, 2}};
    rc.input_dim = 4;
    rc.hidden_dim = 4;
    nets::Classifier cls(rc);
    auto [cparams, creport] = train_classifier(cls, rois, rois, tc, {0.1});
    CHECK(cparams == cls.init(99));
    CHECK(creport.epochs.empty());
}

TEST_CASE("training is bit-deterministic in (data, config, seed)") {
    auto data = blob_seg_dataset(8, 16, 22);
    auto val = blob_seg_dataset(4, 16, 23);
    nets::UNetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg.padding = nets::PaddingMode::same;
    nets::Segmenter model(cfg);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 5;
    preprocess::AugmentationConfig aug;
    aug.rotations.clear();
    aug.max_translation = 2;
    aug.noise_sigma = 0.01;
    aug.elastic.sigma = 1.0;
    auto [pa, ra] = train_segmenter(model, data, val, tc, {0.05}, aug);
    auto [pb, rb] = train_segmenter(model, data, val, tc, {0.05}, aug);
    CHECK(pa == pb);
    REQUIRE(ra.epochs.size() == rb.epochs.size());
    for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
        CHECK(ra.epochs[i].train_loss == rb.epochs[i].train_loss);
        CHECK(ra.epochs[i].val_loss == rb.epochs[i].val_loss);
        CHECK(ra.epochs[i].val_metric == rb.epochs[i].val_metric);
    }
}

TEST_CASE("a small U-Net learns the blob task quickly") {
    auto data = blob_seg_dataset(24, 32, 30);
    auto val = blob_seg_dataset(8, 32, 31);
    nets::UNetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 4;
    cfg.padding = nets::PaddingMode::same;
    nets::Segmenter model(cfg);
    TrainConfig tc;
    tc.epochs = 14;
    tc.batch_size = 4;
    tc.seed = 1;
    tc.seg_loss = SegLossKind::bce_plus_softdice;
    tc.early_stop_patience = 0;
    auto [params, report] = train_segmenter(model, data, val, tc, {0.1});
    CHECK(evaluate_dice(model, params, val) > 0.8);
    CHECK(report.best_epoch >= 0);
}

TEST_CASE("classifier training loss decreases on a separable toy") {
    auto train_set = blob_roi_dataset(24, 12, 3, 40, false);
    auto val_set = blob_roi_dataset(8, 12, 3, 41, false);
    nets::RecurrentConfig rc;
    rc.cell = nets::CellKind::plain;
    rc.encoder = {{4, 2}};
    rc.input_dim = 8;
    rc.hidden_dim = 8;
    nets::Classifier model(rc);
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 4;
    tc.seed = 2;
    tc.early_stop_patience = 0;
    auto [params, report] = train_classifier(model, train_set, val_set, tc, {0.1});
    REQUIRE(report.epochs.size() == 8);
    for (std::size_t i = 1; i < 5; ++i)
        CHECK(report.epochs[i].train_loss < report.epochs[i - 1].train_loss);
    CHECK(evaluate_accuracy(model, params, val_set) > 0.7);
}

TEST_CASE("label-permuted training lands near chance accuracy") {
    auto train_set = blob_roi_dataset(40, 12, 2, 50, true);
    auto val_set = blob_roi_dataset(40, 12, 2, 51, true);
    nets::RecurrentConfig rc;
    rc.cell = nets::CellKind::plain;
    rc.encoder = {{4, 2}};
    rc.input_dim = 8;
    rc.hidden_dim = 8;
    nets::Classifier model(rc);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.seed = 3;
    tc.early_stop_patience = 0;
    auto [params, report] = train_classifier(model, train_set, val_set, tc, {0.1});
    (void)report;
    const double acc = evaluate_accuracy(model, params, val_set);
    CHECK(acc >= 0.3);
    CHECK(acc <= 0.7);
}
