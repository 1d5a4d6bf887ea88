#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "mricascade/dataio.hpp"

using namespace mricascade;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mricascade_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& body) {
    std::ofstream out(p);
    out << body;
}

// Minimal hand-rolled dataset: one gray slice + one mask per patient.
void write_tiny_patient(const fs::path& root, const std::string& id, double intensity,
                        bool mask_on) {
    fs::create_directories(root / id);
    Tensor img = Tensor::full({16, 16}, intensity);
    png_io::write_gray16((root / id / "s0.png").string(), img);
    Mask m(16, 16);
    if (mask_on)
        for (auto& v : m.v) v = 1;
    png_io::write_mask((root / id / "m0.png").string(), m);
}

std::string manifest_entry(const std::string& id, int label) {
    return "{\"id\":\"" + id + "\",\"label\":" + std::to_string(label) +
           ",\"slices\":[\"" + id + "/s0.png\"],\"masks\":[\"" + id + "/m0.png\"]}";
}

dataio::DatasetManifest fake_manifest(int n) {
    dataio::DatasetManifest m;
    m.source_tag = "fake";
    for (int i = 0; i < n; ++i) {
        dataio::PatientEntry p;
        p.id = "q" + std::to_string(i);
        p.slice_paths = {"x.png"};
        m.patients.push_back(p);
    }
    return m;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("manifest loads patients in file order") {
    auto root = fresh_dir("manifest_order");
    for (auto id : {"P03", "P01", "P02"}) write_tiny_patient(root, id, 0.5, false);
    write_text(root / "manifest.json",
               "{\"source_tag\":\"t\",\"patients\":[" + manifest_entry("P03", 0) + "," +
                   manifest_entry("P01", 1) + "," + manifest_entry("P02", 0) + "]}");
    auto m = dataio::load_manifest(root / "manifest.json");
    REQUIRE(m.patients.size() == 3);
    CHECK(m.patients[0].id == "P03");
    CHECK(m.patients[1].id == "P01");
    CHECK(m.patients[2].id == "P02");
}

TEST_CASE("manifest errors: duplicate id, dangling reference, malformed JSON, missing file") {
    auto root = fresh_dir("manifest_errors");
    write_tiny_patient(root, "P01", 0.5, false);
    write_text(root / "dup.json", "{\"source_tag\":\"t\",\"patients\":[" + manifest_entry("P01", 0) +
                                      "," + manifest_entry("P01", 0) + "]}");
    CHECK_THROWS_WITH_AS(static_cast<void>(dataio::load_manifest(root / "dup.json")),
                         doctest::Contains("P01"), std::runtime_error);

    write_text(root / "dangling.json",
               "{\"source_tag\":\"t\",\"patients\":[{\"id\":\"P09\",\"label\":0,"
               "\"slices\":[\"P09/nope.png\"],\"masks\":null}]}");
    CHECK_THROWS_WITH_AS(static_cast<void>(dataio::load_manifest(root / "dangling.json")),
                         doctest::Contains("nope.png"), std::runtime_error);

    write_text(root / "broken.json", "{\"source_tag\": \"t\", patients: oops");
    CHECK_THROWS_WITH_AS(static_cast<void>(dataio::load_manifest(root / "broken.json")),
                         doctest::Contains("malformed"), std::runtime_error);

    CHECK_THROWS(static_cast<void>(dataio::load_manifest(root / "missing.json")));
}

TEST_CASE("patient decoding applies the 16-bit and mask binarization rules") {
    auto root = fresh_dir("patient_decode");
    write_tiny_patient(root, "P01", 1.0, true);  // slice all 65535, mask all 255
    write_text(root / "manifest.json",
               "{\"source_tag\":\"t\",\"patients\":[" + manifest_entry("P01", 1) + "]}");
    auto m = dataio::load_manifest(root / "manifest.json");
    auto rec = dataio::load_patient(m, "P01");
    REQUIRE(rec.slices.size() == 1);
    for (double v : rec.slices[0].values()) CHECK(v == 1.0);
    for (auto v : rec.masks[0].v) CHECK(v == 1);
    CHECK_THROWS_WITH_AS(static_cast<void>(dataio::load_patient(m, "P77")),
                         doctest::Contains("P77"), std::runtime_error);
}

TEST_CASE("slice/mask shape mismatch is rejected") {
    auto root = fresh_dir("shape_mismatch");
    fs::create_directories(root / "P01");
    png_io::write_gray16((root / "P01" / "s0.png").string(), Tensor::full({16, 16}, 0.5));
    png_io::write_mask((root / "P01" / "m0.png").string(), Mask(12, 12));
    write_text(root / "manifest.json",
               "{\"source_tag\":\"t\",\"patients\":[" + manifest_entry("P01", 0) + "]}");
    auto m = dataio::load_manifest(root / "manifest.json");
    CHECK_THROWS_WITH_AS(static_cast<void>(dataio::load_patient(m, "P01")),
                         doctest::Contains("mask shape mismatch"), std::runtime_error);
}

TEST_CASE("slice/mask count mismatch is rejected") {
    auto root = fresh_dir("count_mismatch");
    write_tiny_patient(root, "P01", 0.5, false);
    Tensor img = Tensor::full({16, 16}, 0.5);
    png_io::write_gray16((root / "P01" / "s1.png").string(), img);
    write_text(root / "manifest.json",
               "{\"source_tag\":\"t\",\"patients\":[{\"id\":\"P01\",\"label\":0,"
               "\"slices\":[\"P01/s0.png\",\"P01/s1.png\"],\"masks\":[\"P01/m0.png\"]}]}");
    auto m = dataio::load_manifest(root / "manifest.json");
    CHECK_THROWS_WITH_AS(static_cast<void>(dataio::load_patient(m, "P01")),
                         doctest::Contains("mismatch"), std::runtime_error);
}

TEST_CASE("split sizes follow round-half-up") {
    auto [tr90, va90] = dataio::split_dataset(fake_manifest(100), {0.9, 1});
    CHECK(tr90.patients.size() == 90);
    CHECK(va90.patients.size() == 10);

    auto [tr5, va5] = dataio::split_dataset(fake_manifest(10), {0.5, 3});
    CHECK(tr5.patients.size() == 5);
    CHECK(va5.patients.size() == 5);

    auto [tr7, va7] = dataio::split_dataset(fake_manifest(7), {0.9, 11});
    CHECK(tr7.patients.size() == 6);
    CHECK(va7.patients.size() == 1);
}

TEST_CASE("split is deterministic in the seed and varies across seeds") {
    auto m = fake_manifest(10);
    auto [a_tr, a_va] = dataio::split_dataset(m, {0.5, 42});
    auto [b_tr, b_va] = dataio::split_dataset(m, {0.5, 42});
    for (std::size_t i = 0; i < a_tr.patients.size(); ++i)
        CHECK(a_tr.patients[i].id == b_tr.patients[i].id);

    // seeds 0..31 against seed 42: memberships must differ for at least one seed
    bool any_different = false;
    for (std::uint64_t seed = 0; seed < 32 && !any_different; ++seed) {
        auto [c_tr, c_va] = dataio::split_dataset(m, {0.5, seed});
        for (std::size_t i = 0; i < c_tr.patients.size(); ++i)
            if (c_tr.patients[i].id != a_tr.patients[i].id) any_different = true;
    }
    CHECK(any_different);

    // 7 patients at 0.9: both seeds give 6/1, with different held-out patients
    auto m7 = fake_manifest(7);
    auto [s1_tr, s1_va] = dataio::split_dataset(m7, {0.9, 101});
    auto [s2_tr, s2_va] = dataio::split_dataset(m7, {0.9, 104});
    CHECK(s1_tr.patients.size() == 6);
    CHECK(s2_tr.patients.size() == 6);
    REQUIRE(s1_va.patients.size() == 1);
    REQUIRE(s2_va.patients.size() == 1);
    CHECK(s1_va.patients[0].id != s2_va.patients[0].id);
}

TEST_CASE("split partitions the manifest at patient granularity") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(0, 30));
        const double f = 0.05 + 0.9 * rng.uniform();
        auto m = fake_manifest(n);
        auto [tr, va] = dataio::split_dataset(m, {f, rng.next_u64()});
        CHECK(tr.patients.size() + va.patients.size() == static_cast<std::size_t>(n));
        CHECK(!tr.patients.empty());
        std::set<std::string> seen;
        for (const auto& p : tr.patients) seen.insert(p.id);
        for (const auto& p : va.patients) CHECK(seen.insert(p.id).second);
        CHECK(seen.size() == static_cast<std::size_t>(n));
    }
}

TEST_CASE("split validates inputs") {
    CHECK_THROWS(static_cast<void>(dataio::split_dataset(fake_manifest(0), {0.9, 0})));
    CHECK_THROWS(static_cast<void>(dataio::split_dataset(fake_manifest(5), {0.0, 0})));
    CHECK_THROWS(static_cast<void>(dataio::split_dataset(fake_manifest(5), {1.5, 0})));
    CHECK_THROWS(static_cast<void>(dataio::split_dataset(fake_manifest(1), {0.5, 0})));
    auto [tr, va] = dataio::split_dataset(fake_manifest(4), {1.0, 0});
    CHECK(tr.patients.size() == 4);
    CHECK(va.patients.empty());
}

TEST_CASE("synthetic generator honors lesion probability extremes") {
    dataio::SyntheticConfig cfg;
    cfg.n_patients = 6;
    cfg.slices_per_patient = 2;
    cfg.image_size = 16;
    cfg.seed = 9;

    cfg.lesion_probability = 0.0;
    auto m0 = dataio::generate_synthetic(cfg, fresh_dir("synth_p0"));
    for (const auto& p : m0.patients) {
        CHECK(p.label == 0);
        auto rec = dataio::load_patient(m0, p.id);
        for (const auto& msk : rec.masks) CHECK(msk.area() == 0);
    }

    cfg.lesion_probability = 1.0;
    auto m1 = dataio::generate_synthetic(cfg, fresh_dir("synth_p1"));
    for (const auto& p : m1.patients) CHECK(p.label == 1);
}

TEST_CASE("synthetic generation is byte-identical for the same config and seed") {
    dataio::SyntheticConfig cfg;
    cfg.n_patients = 4;
    cfg.slices_per_patient = 2;
    cfg.image_size = 16;
    cfg.lesion_probability = 0.5;
    cfg.seed = 21;
    auto root_a = fresh_dir("synth_rep_a");
    auto root_b = fresh_dir("synth_rep_b");
    dataio::generate_synthetic(cfg, root_a);
    dataio::generate_synthetic(cfg, root_b);
    for (auto& entry : fs::recursive_directory_iterator(root_a)) {
        if (!entry.is_regular_file()) continue;
        auto rel = fs::relative(entry.path(), root_a);
        CHECK(file_bytes(entry.path()) == file_bytes(root_b / rel));
    }
}

TEST_CASE("synthetic data round-trips bit-exactly through PNG") {
    dataio::SyntheticConfig cfg;
    cfg.n_patients = 3;
    cfg.slices_per_patient = 3;
    cfg.image_size = 24;
    cfg.lesion_probability = 0.8;
    cfg.seed = 33;
    auto root = fresh_dir("synth_roundtrip");
    auto m = dataio::generate_synthetic(cfg, root);
    for (int i = 0; i < cfg.n_patients; ++i) {
        auto expect = dataio::synth_patient(cfg, i);
        auto got = dataio::load_patient(m, expect.patient_id);
        CHECK(got.label == expect.label);
        REQUIRE(got.slices.size() == expect.slices.size());
        for (std::size_t s = 0; s < got.slices.size(); ++s) {
            CHECK(got.slices[s].values() == expect.slices[s].values());
            CHECK(got.masks[s] == expect.masks[s]);
        }
    }
}

TEST_CASE("synthetic labels agree with mask content") {
    dataio::SyntheticConfig cfg;
    cfg.n_patients = 20;
    cfg.slices_per_patient = 3;
    cfg.image_size = 16;
    cfg.lesion_probability = 0.5;
    cfg.seed = 4;
    auto root = fresh_dir("synth_labels");
    auto m = dataio::generate_synthetic(cfg, root);
    int positives = 0;
    for (const auto& p : m.patients) {
        auto rec = dataio::load_patient(m, p.id);
        std::size_t total_area = 0;
        for (const auto& msk : rec.masks) total_area += msk.area();
        CHECK((rec.label == 1) == (total_area > 0));
        positives += rec.label;
    }
    CHECK(positives > 0);
    CHECK(positives < 20);
}
