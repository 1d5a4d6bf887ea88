#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mricascade/png_io.hpp"
#include "mricascade/preprocess.hpp"
#include "mricascade/rng.hpp"
#include "mricascade/tensor.hpp"

namespace mricascade::dataio {

namespace fs = std::filesystem;

struct PatientEntry {
    std::string id;
    int label = 0;
    std::vector<std::string> slice_paths;                 // relative to root
    std::optional<std::vector<std::string>> mask_paths;
};

struct DatasetManifest {
    fs::path root;
    std::string source_tag;
    std::vector<PatientEntry> patients;

    const PatientEntry* find(const std::string& id) const {
        for (const auto& p : patients)
            if (p.id == id) return &p;
        return nullptr;
    }
};

struct PatientRecord {
    std::string patient_id;
    int label = 0;
    std::vector<Tensor> slices;
    std::vector<Mask> masks;  // empty when the dataset carries no annotations

    bool has_masks() const { return !masks.empty(); }
};

struct SplitConfig {
    double train_fraction = 0.9;
    std::uint64_t seed = 0;
};

struct SyntheticConfig {
    int n_patients = 16;
    int slices_per_patient = 3;
    int image_size = 64;
    double lesion_probability = 0.5;
    double texture_contrast = 0.35;
    std::uint64_t seed = 0;
};

inline DatasetManifest load_manifest(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("manifest not found: '" + manifest_path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed manifest JSON in '" + manifest_path.string() + "': " + e.what());
    }
    DatasetManifest m;
    m.root = manifest_path.parent_path();
    try {
        m.source_tag = j.at("source_tag").get<std::string>();
        std::set<std::string> seen;
        for (const auto& pj : j.at("patients")) {
            PatientEntry p;
            p.id = pj.at("id").get<std::string>();
            if (!seen.insert(p.id).second)
                throw std::runtime_error("duplicate patient id '" + p.id + "'");
            p.label = pj.at("label").get<int>();
            if (p.label != 0 && p.label != 1)
                throw std::runtime_error("patient '" + p.id + "': label must be 0 or 1");
            p.slice_paths = pj.at("slices").get<std::vector<std::string>>();
            if (p.slice_paths.empty())
                throw std::runtime_error("patient '" + p.id + "': no slices listed");
            if (pj.contains("masks") && !pj.at("masks").is_null())
                p.mask_paths = pj.at("masks").get<std::vector<std::string>>();
            m.patients.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed manifest JSON in '" + manifest_path.string() + "': " + e.what());
    }
    for (const auto& p : m.patients) {
        auto check = [&](const std::string& rel) {
            if (!fs::exists(m.root / rel))
                throw std::runtime_error("patient '" + p.id + "': dangling file reference '" +
                                         (m.root / rel).string() + "'");
        };
        for (const auto& s : p.slice_paths) check(s);
        if (p.mask_paths)
            for (const auto& s : *p.mask_paths) check(s);
    }
    return m;
}

inline PatientRecord load_patient(const DatasetManifest& manifest, const std::string& id) {
    const PatientEntry* entry = manifest.find(id);
    if (!entry) throw std::runtime_error("unknown patient id '" + id + "'");
    if (entry->mask_paths && entry->mask_paths->size() != entry->slice_paths.size())
        throw std::runtime_error("patient '" + id + "': slice/mask count mismatch (" +
                                 std::to_string(entry->slice_paths.size()) + " slices, " +
                                 std::to_string(entry->mask_paths->size()) + " masks)");
    PatientRecord rec;
    rec.patient_id = id;
    rec.label = entry->label;
    for (const auto& rel : entry->slice_paths)
        rec.slices.push_back(png_io::read_gray((manifest.root / rel).string()));
    if (entry->mask_paths) {
        for (std::size_t i = 0; i < entry->mask_paths->size(); ++i) {
            Mask m = png_io::read_mask((manifest.root / (*entry->mask_paths)[i]).string());
            if (m.height != rec.slices[i].dim(0) || m.width != rec.slices[i].dim(1))
                throw std::runtime_error("patient '" + id + "': mask shape mismatch at slice " +
                                         std::to_string(i));
            rec.masks.push_back(std::move(m));
        }
    }
    return rec;
}

// Patient-granular split; |train| = round-half-up(fraction * N), clamped so
// both sides stay non-empty whenever fraction < 1.
inline std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                                 const SplitConfig& cfg) {
    if (manifest.patients.empty()) throw std::invalid_argument("split_dataset: empty manifest");
    if (cfg.train_fraction <= 0.0 || cfg.train_fraction > 1.0)
        throw std::invalid_argument("split_dataset: train_fraction must be in (0,1]");
    const std::size_t n = manifest.patients.size();
    if (cfg.train_fraction < 1.0 && n < 2)
        throw std::invalid_argument("split_dataset: need >= 2 patients to split");

    std::size_t n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n) + 0.5));
    if (cfg.train_fraction < 1.0) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(cfg.seed);
    rng.shuffle(order);

    std::vector<bool> in_train(n, false);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

    DatasetManifest train, val;
    train.root = val.root = manifest.root;
    train.source_tag = val.source_tag = manifest.source_tag;
    for (std::size_t i = 0; i < n; ++i)
        (in_train[i] ? train : val).patients.push_back(manifest.patients[i]);
    return {std::move(train), std::move(val)};
}

namespace detail {

inline double quantize16(double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return std::floor(v * 65535.0 + 0.5) / 65535.0;
}

}  // namespace detail

// Deterministic in (cfg.seed, patient index); the on-disk PNGs reproduce these
// arrays bit-exactly because intensities are quantized to 16-bit steps here.
inline PatientRecord synth_patient(const SyntheticConfig& cfg, int index) {
    if (cfg.image_size < 16) throw std::invalid_argument("synthetic: image_size must be >= 16");
    const int S = cfg.slices_per_patient, N = cfg.image_size;
    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(index)));

    const bool positive = rng.uniform() < cfg.lesion_probability;
    int run_start = 0, run_len = 0;
    double cy = 0, cx = 0, ar = 0, ac = 0, phi = 0;
    if (positive) {
        run_len = static_cast<int>(rng.uniform_int((S + 1) / 2, S));
        run_start = static_cast<int>(rng.uniform_int(0, S - run_len));
        cy = N * (0.3 + 0.4 * rng.uniform());
        cx = N * (0.3 + 0.4 * rng.uniform());
        ar = std::max(2.5, N * (0.10 + 0.10 * rng.uniform()));
        ac = std::max(2.5, N * (0.10 + 0.10 * rng.uniform()));
        phi = 3.14159265358979323846 * rng.uniform();
    }

    PatientRecord rec;
    rec.patient_id = "p" + std::string(4 - std::min<std::size_t>(4, std::to_string(index).size()), '0') +
                     std::to_string(index);
    for (int s = 0; s < S; ++s) {
        // smoothed-noise background plus a little fine grain
        const int g = std::max(4, N / 12);
        Tensor coarse({g, g});
        for (std::size_t i = 0; i < coarse.numel(); ++i) coarse[i] = rng.normal();
        Tensor smooth = preprocess::detail::bicubic_upsample_grid(coarse, N, N);
        Tensor img({N, N});
        for (std::size_t i = 0; i < img.numel(); ++i)
            img[i] = 0.45 + 0.09 * smooth[i] + 0.03 * rng.normal();

        Mask msk(N, N);
        if (positive && s >= run_start && s < run_start + run_len) {
            const double cs = std::cos(phi), sn = std::sin(phi);
            for (int r = 0; r < N; ++r) {
                for (int c = 0; c < N; ++c) {
                    const double dy = r - cy, dx = c - cx;
                    const double u = (cs * dx + sn * dy) / ac;
                    const double v = (-sn * dx + cs * dy) / ar;
                    const double e = u * u + v * v;
                    if (e <= 1.0) {
                        msk.at(r, c) = 1;
                        img.at(r, c) += cfg.texture_contrast * (1.0 - 0.5 * e) *
                                        (1.0 + 0.15 * rng.normal());
                    }
                }
            }
        }
        for (std::size_t i = 0; i < img.numel(); ++i) img[i] = detail::quantize16(img[i]);
        rec.slices.push_back(std::move(img));
        rec.masks.push_back(std::move(msk));
    }
    rec.label = 0;
    for (const auto& m : rec.masks)
        if (m.area() > 0) rec.label = 1;
    return rec;
}

inline DatasetManifest generate_synthetic(const SyntheticConfig& cfg, const fs::path& root) {
    if (cfg.n_patients < 1) throw std::invalid_argument("synthetic: n_patients must be >= 1");
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root))
        throw std::runtime_error("cannot create dataset root '" + root.string() + "'");

    nlohmann::json patients = nlohmann::json::array();
    for (int i = 0; i < cfg.n_patients; ++i) {
        PatientRecord rec = synth_patient(cfg, i);
        const fs::path dir = root / rec.patient_id;
        fs::create_directories(dir, ec);
        if (ec) throw std::runtime_error("cannot create '" + dir.string() + "'");
        std::vector<std::string> slice_rel, mask_rel;
        for (std::size_t s = 0; s < rec.slices.size(); ++s) {
            char name[32];
            std::snprintf(name, sizeof(name), "slice_%03zu.png", s);
            slice_rel.push_back(rec.patient_id + "/" + name);
            png_io::write_gray16((root / slice_rel.back()).string(), rec.slices[s]);
            std::snprintf(name, sizeof(name), "mask_%03zu.png", s);
            mask_rel.push_back(rec.patient_id + "/" + name);
            png_io::write_mask((root / mask_rel.back()).string(), rec.masks[s]);
        }
        patients.push_back({{"id", rec.patient_id},
                            {"label", rec.label},
                            {"slices", slice_rel},
                            {"masks", mask_rel}});
    }
    nlohmann::json manifest = {{"source_tag", "synthetic"}, {"patients", patients}};
    {
        std::ofstream out(root / "manifest.json");
        if (!out) throw std::runtime_error("cannot write '" + (root / "manifest.json").string() + "'");
        out << manifest.dump(2) << "\n";
    }
    return load_manifest(root / "manifest.json");
}

inline std::vector<PatientRecord> load_all(const DatasetManifest& manifest) {
    std::vector<PatientRecord> out;
    out.reserve(manifest.patients.size());
    for (const auto& p : manifest.patients) out.push_back(load_patient(manifest, p.id));
    return out;
}

}  // namespace mricascade::dataio
