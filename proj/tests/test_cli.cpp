#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mricascade/cli.hpp"
#include "mricascade/config.hpp"
#include "mricascade/report.hpp"

using namespace mricascade;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mricascade_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int invoke(std::vector<std::string> args) {
    std::vector<const char*> argv = {"mricascade"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("toml parser handles tables, scalars, arrays and comments") {
    const auto t = config::parse_toml(
        "seed = 9            # top-level\n"
        "[dataset]\n"
        "path = \"data/x\"   # trailing comment\n"
        "[augment]\n"
        "rotations = [-15.0, 15]\n"
        "flip_horizontal = false\n"
        "noise_sigma = 0.02\n"
        "[augment.elastic]\n"
        "grid = [3, 3]\n"
        "[pipeline]\n"
        "kinds = [\"unet_rnn\", \"unet_lstm\"]\n");
    CHECK(t.get_int("seed", 0) == 9);
    CHECK(t.require_string("dataset.path") == "data/x");
    CHECK(t.get_doubles("augment.rotations", {}) == std::vector<double>{-15.0, 15.0});
    CHECK(t.get_bool("augment.flip_horizontal", true) == false);
    CHECK(t.get_double("augment.noise_sigma", 0) == doctest::Approx(0.02));
    CHECK(t.get_strings("pipeline.kinds", {}) == std::vector<std::string>{"unet_rnn", "unet_lstm"});
    CHECK(t.get_int("missing.key", 42) == 42);
}

TEST_CASE("toml parser reports malformed lines with their numbers") {
    CHECK_THROWS_WITH_AS(static_cast<void>(config::parse_toml("a = 1\nb ~ 2\n")),
                         doctest::Contains("line 2"), std::runtime_error);
    CHECK_THROWS_WITH_AS(static_cast<void>(config::parse_toml("x = \"unterminated\n")),
                         doctest::Contains("line 1"), std::runtime_error);
    CHECK_THROWS(static_cast<void>(config::parse_toml("[broken\nx = 1\n")));
}

TEST_CASE("run config applies defaults and validates section values") {
    auto t = config::parse_toml("[dataset]\npath = \"d\"\n");
    auto rc = config::run_config_from_toml(t);
    CHECK(rc.pipeline.split.train_fraction == 0.9);
    CHECK(rc.pipeline.prep.target_size == 256);
    CHECK(rc.pipeline.unet.depth == 4);
    CHECK(rc.pipeline.unet.base_channels == 16);
    CHECK(rc.pipeline.unet.padding == nets::PaddingMode::valid);
    CHECK(rc.pipeline.seg_opt.learning_rate == 0.0003);
    CHECK(rc.pipeline.seg_train.epochs == 30);
    CHECK(rc.pipeline.seg_train.batch_size == 8);
    CHECK(rc.pipeline.roi.threshold == 0.5);
    CHECK(rc.pipeline.roi.margin == 4);
    CHECK(rc.kinds.size() == 4);
    REQUIRE(rc.pipeline.augment.has_value());
    CHECK(rc.pipeline.augment->rotations == std::vector<double>{-15.0, 15.0});
    CHECK(rc.pipeline.augment->max_translation == 10);
    CHECK(rc.pipeline.augment->elastic.grid_h == 3);
    CHECK(rc.pipeline.augment->elastic.sigma == 10.0);

    CHECK_THROWS_WITH_AS(
        static_cast<void>(config::run_config_from_toml(config::parse_toml("[output]\ndir = \"o\"\n"))),
        doctest::Contains("dataset.path"), std::runtime_error);
    CHECK_THROWS_WITH_AS(static_cast<void>(config::run_config_from_toml(config::parse_toml(
                             "[dataset]\npath = \"d\"\n[split]\ntrain_fraction = 1.5\n"))),
                         doctest::Contains("[split]"), std::runtime_error);
    CHECK_THROWS_WITH_AS(static_cast<void>(config::run_config_from_toml(config::parse_toml(
                             "[dataset]\npath = \"d\"\n[unet]\npadding = \"reflect\"\n"))),
                         doctest::Contains("[unet]"), std::runtime_error);
}

TEST_CASE("MRICASCADE_SEED overrides the configured seed") {
    auto t = config::parse_toml("seed = 3\n[dataset]\npath = \"d\"\n");
    setenv("MRICASCADE_SEED", "1234", 1);
    auto rc = config::run_config_from_toml(t);
    unsetenv("MRICASCADE_SEED");
    CHECK(rc.seed == 1234);
    auto rc2 = config::run_config_from_toml(t);
    CHECK(rc2.seed == 3);
}

TEST_CASE("synth command writes the requested dataset and reruns byte-identically") {
    auto dir = fresh_dir("cli_synth");
    const auto out_a = (dir / "a").string();
    const auto out_b = (dir / "b").string();
    for (const auto& out : {out_a, out_b})
        CHECK(invoke({"synth", "--out", out, "--patients", "5", "--slices", "2", "--size", "16",
                      "--seed", "7"}) == 0);
    auto manifest = dataio::load_manifest(fs::path(out_a) / "manifest.json");
    CHECK(manifest.patients.size() == 5);
    for (const auto& entry : fs::recursive_directory_iterator(out_a)) {
        if (!entry.is_regular_file()) continue;
        auto rel = fs::relative(entry.path(), out_a);
        std::ifstream fa(entry.path(), std::ios::binary), fb(fs::path(out_b) / rel, std::ios::binary);
        std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        CHECK(ba == bb);
    }
}

TEST_CASE("unwritable output paths exit nonzero") {
    CHECK(invoke({"synth", "--out", "/proc/definitely/not/writable", "--patients", "1"}) != 0);
}

TEST_CASE("run command refuses configs with a missing dataset section") {
    auto dir = fresh_dir("cli_badcfg");
    {
        std::ofstream out(dir / "bad.toml");
        out << "[output]\ndir = \"o\"\n";
    }
    CHECK(invoke({"run", "--config", (dir / "bad.toml").string()}) != 0);
}

TEST_CASE("overlay tint equals the binarized prediction") {
    Rng rng(5);
    const int n = 24;
    Tensor raw({n, n}), prob({n, n});
    for (auto& v : raw.values()) v = rng.uniform();
    for (auto& v : prob.values()) v = rng.uniform();
    Mask gt(n, n);
    gt.at(3, 3) = 1;
    const Mask pred = pipeline::binarize(prob, 0.5);
    const auto img = report::render_overlay(raw, preprocess::normalize(raw), gt, pred);
    CHECK(report::tinted_pixels(img) == pred);

    // all-zero prediction -> no tinted pixels
    const Mask empty(n, n);
    const auto img2 = report::render_overlay(raw, preprocess::normalize(raw), gt, empty);
    CHECK(report::tinted_pixels(img2).area() == 0);

    // a 37-pixel prediction tints exactly 37 pixels
    Mask spot(n, n);
    int placed = 0;
    for (int r = 0; r < n && placed < 37; ++r)
        for (int c = 0; c < n && placed < 37; ++c)
            if ((r + c) % 3 == 0) {
                spot.at(r, c) = 1;
                ++placed;
            }
    REQUIRE(placed == 37);
    const auto img3 = report::render_overlay(raw, preprocess::normalize(raw), gt, spot);
    CHECK(report::tinted_pixels(img3).area() == 37);
}

TEST_CASE("sweep svg contains one polyline per kind") {
    pipeline::SweepReport sweep;
    for (auto kind : {pipeline::PipelineKind::unet_rnn, pipeline::PipelineKind::unet_lstm})
        for (double f : {0.5, 0.9})
            sweep.cells.push_back({kind, f, 1, 0.8 + 0.1 * (f == 0.9), 0.7});
    const auto svg = report::render_sweep_svg(
        sweep, {pipeline::PipelineKind::unet_rnn, pipeline::PipelineKind::unet_lstm}, {0.5, 0.9},
        false, "Accuracy values");
    CHECK(svg.find("<svg") == 0);
    std::size_t count = 0;
    for (std::size_t pos = svg.find("<polyline"); pos != std::string::npos;
         pos = svg.find("<polyline", pos + 1))
        ++count;
    CHECK(count == 2);
    CHECK(svg.find("U-Net+LSTM") != std::string::npos);
}

#ifdef MRICASCADE_BIN
TEST_CASE("the binary reports failures as JSON on stderr with a nonzero exit") {
    auto dir = fresh_dir("cli_stderr");
    const std::string err_path = (dir / "err.txt").string();
    const std::string cmd = std::string(MRICASCADE_BIN) + " run --config " +
                            (dir / "missing.toml").string() + " 2> " + err_path;
    const int rc = std::system(cmd.c_str());
    CHECK(rc != 0);
    std::ifstream in(err_path);
    nlohmann::json j;
    CHECK_NOTHROW(in >> j);
    CHECK(j.contains("error"));
    CHECK(j.at("error").get<std::string>().find("missing.toml") != std::string::npos);
}
#endif

TEST_CASE("compare command aggregates saved results") {
    auto dir = fresh_dir("cli_compare");
    pipeline::PipelineResult r;
    r.kind = pipeline::PipelineKind::unet_lstm;
    r.metrics.accuracy = 0.9;
    r.metrics.dice = 0.8;
    fs::create_directories(dir / "results" / "unet_lstm");
    {
        std::ofstream out(dir / "results" / "unet_lstm" / "metrics.json");
        out << pipeline::to_json(r).dump(2);
    }
    CHECK(invoke({"compare", "--results", (dir / "results").string(), "--out",
                  (dir / "cmp").string()}) == 0);
    std::ifstream in(dir / "cmp" / "comparison.md");
    std::string md((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(md.find("U-Net+LSTM") != std::string::npos);
    CHECK(md.find("**90.00**") != std::string::npos);
    CHECK(invoke({"compare", "--results", (dir / "nothing").string()}) != 0);
}
