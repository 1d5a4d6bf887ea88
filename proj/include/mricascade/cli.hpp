#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mricascade/config.hpp"
#include "mricascade/report.hpp"

namespace mricascade::cli {

namespace fs = std::filesystem;

namespace detail {

inline void write_file(const fs::path& path, const std::string& body) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << body;
}

inline std::vector<pipeline::PipelineKind> parse_kinds(const std::vector<std::string>& ids) {
    std::vector<pipeline::PipelineKind> kinds;
    for (const auto& id : ids) kinds.push_back(pipeline::kind_from_id(id));
    return kinds;
}

}  // namespace detail

inline int cmd_synth(const std::string& out, int patients, int slices, int size, double lesion_prob,
                     double contrast, std::uint64_t seed) {
    dataio::SyntheticConfig cfg;
    cfg.n_patients = patients;
    cfg.slices_per_patient = slices;
    cfg.image_size = size;
    cfg.lesion_probability = lesion_prob;
    cfg.texture_contrast = contrast;
    cfg.seed = seed;
    const auto manifest = dataio::generate_synthetic(cfg, out);
    std::cout << "wrote " << manifest.patients.size() << " patients to " << (fs::path(out) / "manifest.json").string()
              << "\n";
    return 0;
}

// Debug hook: materializes augmented copies of the first few training slices
// so the on-the-fly augmentation stream can be inspected on disk.
inline void dump_augmented_samples(const config::RunConfig& rc,
                                   const dataio::DatasetManifest& manifest) {
    if (!rc.pipeline.augment) return;
    const fs::path dir = fs::path(rc.out_dir) / "augmented_samples";
    fs::create_directories(dir);
    preprocess::AugmentationConfig aug = *rc.pipeline.augment;
    if (aug.copies_per_sample < 1) aug.copies_per_sample = 1;
    int written = 0;
    for (const auto& entry : manifest.patients) {
        if (written >= 8) break;
        const auto rec = dataio::load_patient(manifest, entry.id);
        const Tensor slice = preprocess::resize(rec.slices[0], rc.pipeline.prep.target_size);
        std::optional<Mask> mask;
        if (!rec.masks.empty()) mask = preprocess::preprocess_mask(rec.masks[0], rc.pipeline.prep);
        const auto copies = preprocess::augment(slice, mask, aug, Rng::mix(rc.seed, written));
        for (std::size_t k = 0; k < copies.size(); ++k) {
            char name[96];
            std::snprintf(name, sizeof(name), "%s_copy%zu.png", entry.id.c_str(), k);
            png_io::write_gray16((dir / name).string(), copies[k].first);
            if (copies[k].second) {
                std::snprintf(name, sizeof(name), "%s_copy%zu_mask.png", entry.id.c_str(), k);
                png_io::write_mask((dir / name).string(), *copies[k].second);
            }
        }
        ++written;
    }
}

inline int cmd_run(config::RunConfig rc, bool dump_augmented = false) {
    const auto manifest = dataio::load_manifest(fs::path(rc.dataset_path) / "manifest.json");
    if (dump_augmented) dump_augmented_samples(rc, manifest);
    std::vector<pipeline::PipelineResult> results;
    for (const auto kind : rc.kinds) {
        std::cout << "running " << pipeline::kind_display(kind) << " (seed " << rc.seed << ")\n";
        auto artifacts = pipeline::run_pipeline_full(kind, manifest, rc.pipeline, rc.seed);
        const fs::path dir = fs::path(rc.out_dir) / pipeline::kind_id(kind);
        fs::create_directories(dir);
        detail::write_file(dir / "metrics.json", pipeline::to_json(artifacts.result).dump(2) + "\n");
        train::save_checkpoint(artifacts.seg_params, (dir / "segmenter.nta").string());
        train::save_checkpoint(artifacts.cls_params, (dir / "classifier.nta").string());
        detail::write_file(dir / "train_report_segmenter.json",
                           train::to_json(artifacts.result.seg_report).dump(2) + "\n");
        detail::write_file(dir / "train_report_classifier.json",
                           train::to_json(artifacts.result.cls_report).dump(2) + "\n");
        results.push_back(std::move(artifacts.result));
    }
    const auto table = pipeline::compare(results);
    detail::write_file(fs::path(rc.out_dir) / "comparison.md", table.markdown);
    detail::write_file(fs::path(rc.out_dir) / "comparison.csv", table.csv);
    std::cout << table.markdown;
    return 0;
}

inline int cmd_sweep(config::RunConfig rc, const std::vector<double>& fractions,
                     const std::vector<std::uint64_t>& seeds, bool classifier_only, int workers) {
    const auto manifest = dataio::load_manifest(fs::path(rc.dataset_path) / "manifest.json");
    const auto sweep = pipeline::sweep_training_fraction(rc.kinds, fractions, seeds, manifest,
                                                         rc.pipeline, !classifier_only, workers);
    detail::write_file(fs::path(rc.out_dir) / "sweep.csv", sweep.csv());
    detail::write_file(fs::path(rc.out_dir) / "accuracy.svg",
                       report::render_sweep_svg(sweep, rc.kinds, fractions, false, "Accuracy values"));
    detail::write_file(fs::path(rc.out_dir) / "sensitivity.svg",
                       report::render_sweep_svg(sweep, rc.kinds, fractions, true, "Sensitivity values"));
    std::cout << "sweep grid: " << sweep.cells.size() << " cells -> " << rc.out_dir << "\n";
    return 0;
}

inline int cmd_overlay(const config::RunConfig& rc, const std::string& checkpoint,
                       const std::string& segmenter_kind, const std::string& patient_id,
                       const std::string& out_dir) {
    const auto manifest = dataio::load_manifest(fs::path(rc.dataset_path) / "manifest.json");
    const nets::Segmenter seg = segmenter_kind == "deepsegnet"
                                    ? nets::Segmenter(rc.pipeline.deepsegnet)
                                    : nets::Segmenter(rc.pipeline.unet);
    const nets::ParameterStore params = nets::nta::load(checkpoint);
    const auto record = dataio::load_patient(manifest, patient_id);
    if (record.masks.empty())
        throw std::runtime_error("patient '" + patient_id + "' carries no ground-truth masks");
    fs::create_directories(out_dir);
    for (std::size_t s = 0; s < record.slices.size(); ++s) {
        const Tensor raw = preprocess::resize(record.slices[s], rc.pipeline.prep.target_size);
        const Tensor pre = preprocess::normalize(raw);
        const Mask gt = preprocess::preprocess_mask(record.masks[s], rc.pipeline.prep);
        const Tensor prob = seg.forward(params, pre);
        const Mask pred_out = pipeline::binarize(prob, rc.pipeline.roi.threshold);
        // place the output-frame prediction into the input frame
        Mask pred(raw.dim(0), raw.dim(1));
        const int off = seg.output_offset(raw.dim(0));
        for (int r = 0; r < pred_out.height; ++r)
            for (int c = 0; c < pred_out.width; ++c) {
                const int rr = r + off, cc = c + off;
                if (rr >= 0 && rr < pred.height && cc >= 0 && cc < pred.width)
                    pred.at(rr, cc) = pred_out.at(r, c);
            }
        const report::RgbImage img = report::render_overlay(raw, pre, gt, pred);
        char name[64];
        std::snprintf(name, sizeof(name), "%s_slice_%03zu.png", patient_id.c_str(), s);
        png_io::write_rgb8((fs::path(out_dir) / name).string(), img.height, img.width, img.rgb);
    }
    std::cout << "wrote " << record.slices.size() << " overlay panels to " << out_dir << "\n";
    return 0;
}

inline int cmd_compare(const std::string& results_dir, const std::string& out_dir) {
    std::vector<pipeline::PipelineResult> results;
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(results_dir))
        if (entry.is_regular_file() && entry.path().filename() == "metrics.json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        std::ifstream in(file);
        nlohmann::json j;
        in >> j;
        results.push_back(pipeline::result_from_json(j));
    }
    if (results.empty()) throw std::runtime_error("no metrics.json files under '" + results_dir + "'");
    const auto table = pipeline::compare(results);
    detail::write_file(fs::path(out_dir) / "comparison.md", table.markdown);
    detail::write_file(fs::path(out_dir) / "comparison.csv", table.csv);
    std::cout << table.markdown;
    return 0;
}

inline int cmd_gradcheck(std::uint64_t seed) {
    struct Row {
        std::string name;
        train::GradCheckResult res;
    };
    std::vector<Row> rows;
    {
        nets::UNetConfig cfg;
        cfg.depth = 2;
        cfg.base_channels = 2;
        cfg.padding = nets::PaddingMode::same;
        rows.push_back({"unet(same, depth 2, 16x16)",
                        train::grad_check_segmenter(nets::Segmenter(cfg), 16, seed)});
        cfg.padding = nets::PaddingMode::valid;
        rows.push_back({"unet(valid, depth 2, 24x24)",
                        train::grad_check_segmenter(nets::Segmenter(cfg), 24, seed)});
    }
    {
        nets::DeepSegNetConfig cfg;
        cfg.depth = 2;
        cfg.base_channels = 2;
        rows.push_back({"deepsegnet(depth 2, 16x16)",
                        train::grad_check_segmenter(nets::Segmenter(cfg), 16, seed)});
    }
    {
        nets::ResNetConfig cfg;
        cfg.variant = nets::ResNetVariant::resnet_mini;
        cfg.base_channels = 2;
        cfg.input_size = 16;
        rows.push_back({"resnet_mini(16x16)", train::grad_check_resnet(cfg, seed)});
    }
    {
        nets::RecurrentConfig cfg;
        cfg.cell = nets::CellKind::plain;
        cfg.input_dim = 6;
        cfg.hidden_dim = 5;
        cfg.encoder = {{3, 2}};
        rows.push_back({"rnn(plain, 3 steps)", train::grad_check_recurrent(cfg, 8, 3, seed)});
        cfg.cell = nets::CellKind::gated;
        rows.push_back({"lstm(gated, 3 steps)", train::grad_check_recurrent(cfg, 8, 3, seed)});
    }
    bool ok = true;
    for (const auto& row : rows) {
        const bool pass = row.res.max_rel_err < 1e-4;
        ok = ok && pass;
        std::cout << (pass ? "PASS " : "FAIL ") << row.name << " max_rel_err " << row.res.max_rel_err
                  << (row.res.worst_tensor.empty() ? "" : " (worst: " + row.res.worst_tensor + ")")
                  << "\n";
    }
    return ok ? 0 : 1;
}

// Entry point shared by the binary and the end-to-end tests.
inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"two-stage MRI lesion segmentation + patient classification pipelines"};
    app.require_subcommand(1);

    std::string config_path, out_override, dataset_override;
    std::vector<std::string> kind_ids;
    std::int64_t seed_override = -1;

    auto add_config_opts = [&](CLI::App* cmd, bool config_required) {
        cmd->add_option("--config", config_path, "pipeline TOML config")->required(config_required);
        cmd->add_option("--out", out_override, "output directory override");
        cmd->add_option("--dataset", dataset_override, "dataset directory override");
        cmd->add_option("--kinds", kind_ids,
                        "pipeline kinds (deepsegnet_resnet50 deepsegnet_rnn unet_rnn unet_lstm)");
        cmd->add_option("--seed", seed_override, "seed override");
    };
    auto load_rc = [&]() {
        config::RunConfig rc = config::load_run_config(config_path);
        if (!out_override.empty()) rc.out_dir = out_override;
        if (!dataset_override.empty()) rc.dataset_path = dataset_override;
        if (!kind_ids.empty()) rc.kinds = detail::parse_kinds(kind_ids);
        if (seed_override >= 0) rc.seed = static_cast<std::uint64_t>(seed_override);
        return rc;
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic lesion dataset");
    std::string synth_out;
    int patients = 200, slices = 3, size = 64;
    double lesion_prob = 0.5, contrast = 0.35;
    std::int64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "dataset root directory")->required();
    synth->add_option("--patients", patients, "number of patients");
    synth->add_option("--slices", slices, "slices per patient");
    synth->add_option("--size", size, "image size in pixels");
    synth->add_option("--lesion-prob", lesion_prob, "probability a patient carries a lesion");
    synth->add_option("--contrast", contrast, "lesion intensity offset");
    synth->add_option("--seed", synth_seed, "generator seed");

    auto* run = app.add_subcommand("run", "train + evaluate the requested pipelines");
    bool dump_augmented = false;
    add_config_opts(run, true);
    run->add_flag("--dump-augmented", dump_augmented,
                  "materialize augmented sample copies under <out>/augmented_samples for inspection");

    auto* sweep = app.add_subcommand("sweep", "training-fraction sweep");
    std::vector<double> fractions = {0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<std::uint64_t> sweep_seeds = {1, 2, 3};
    bool classifier_only = false;
    int workers = 1;
    add_config_opts(sweep, true);
    sweep->add_option("--fractions", fractions, "training fractions in (0,1)");
    sweep->add_option("--seeds", sweep_seeds, "seeds for the grid");
    sweep->add_flag("--classifier-only", classifier_only,
                    "train the segmenter once per (kind, seed) and sweep only the classifier");
    sweep->add_option("--workers", workers, "grid cells run on this many threads");

    auto* overlay = app.add_subcommand("overlay", "render per-slice overlay panels");
    std::string checkpoint, patient_id, overlay_out = "overlays", segmenter_kind = "unet";
    add_config_opts(overlay, true);
    overlay->add_option("--checkpoint", checkpoint, "trained segmenter NTA archive")->required();
    overlay->add_option("--patient", patient_id, "patient id")->required();
    overlay->add_option("--segmenter", segmenter_kind, "unet | deepsegnet");
    overlay->add_option("--overlay-out", overlay_out, "overlay output directory");

    auto* compare = app.add_subcommand("compare", "table from saved metrics.json files");
    std::string results_dir, compare_out = ".";
    compare->add_option("--results", results_dir, "directory containing <kind>/metrics.json")->required();
    compare->add_option("--out", compare_out, "output directory");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::int64_t gc_seed = 7;
    gradcheck->add_option("--seed", gc_seed, "seed");

    try {
        app.parse(argc, argv);
        if (synth->parsed())
            return cmd_synth(synth_out, patients, slices, size, lesion_prob, contrast,
                             static_cast<std::uint64_t>(synth_seed));
        if (run->parsed()) return cmd_run(load_rc(), dump_augmented);
        if (sweep->parsed()) return cmd_sweep(load_rc(), fractions, sweep_seeds, classifier_only, workers);
        if (overlay->parsed())
            return cmd_overlay(load_rc(), checkpoint, segmenter_kind, patient_id, overlay_out);
        if (compare->parsed()) return cmd_compare(results_dir, compare_out);
        if (gradcheck->parsed()) return cmd_gradcheck(static_cast<std::uint64_t>(gc_seed));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json({{"error", e.what()}}).dump() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace mricascade::cli
