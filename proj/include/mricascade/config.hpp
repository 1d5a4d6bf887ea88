#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mricascade/pipeline.hpp"

namespace mricascade::config {

// Small TOML subset: [table] headers, key = value with strings, integers,
// floats, booleans and flat arrays. Enough for the run configuration; keys
// flatten to "table.key".
struct TomlValue {
    std::variant<std::string, std::int64_t, double, bool, std::vector<double>,
                 std::vector<std::string>>
        v;
};

class Toml {
public:
    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : expect<std::string>(key, it->second);
    }
    std::string require_string(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw std::runtime_error("config: missing key '" + key + "'");
        return expect<std::string>(key, it->second);
    }
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : expect<std::int64_t>(key, it->second);
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        if (std::holds_alternative<std::int64_t>(it->second.v))
            return static_cast<double>(std::get<std::int64_t>(it->second.v));
        return expect<double>(key, it->second);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : expect<bool>(key, it->second);
    }
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        if (std::holds_alternative<std::vector<double>>(it->second.v))
            return std::get<std::vector<double>>(it->second.v);
        throw std::runtime_error("config: key '" + key + "' is not a numeric array");
    }
    std::vector<std::string> get_strings(const std::string& key,
                                         std::vector<std::string> fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        if (std::holds_alternative<std::vector<std::string>>(it->second.v))
            return std::get<std::vector<std::string>>(it->second.v);
        throw std::runtime_error("config: key '" + key + "' is not a string array");
    }

    void set(const std::string& key, TomlValue value) { entries_[key] = std::move(value); }

private:
    template <typename T>
    static const T& expect(const std::string& key, const TomlValue& value) {
        if (!std::holds_alternative<T>(value.v))
            throw std::runtime_error("config: key '" + key + "' has the wrong type");
        return std::get<T>(value.v);
    }

    std::map<std::string, TomlValue> entries_;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline TomlValue parse_scalar(const std::string& raw, int line_no) {
    const std::string s = trim(raw);
    if (s.empty()) throw std::runtime_error("config line " + std::to_string(line_no) + ": empty value");
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"')
            throw std::runtime_error("config line " + std::to_string(line_no) + ": unterminated string");
        return {s.substr(1, s.size() - 2)};
    }
    if (s == "true") return {true};
    if (s == "false") return {false};
    try {
        std::size_t used = 0;
        if (s.find_first_of(".eE") == std::string::npos) {
            const std::int64_t i = std::stoll(s, &used);
            if (used == s.size()) return {i};
        }
        const double d = std::stod(s, &used);
        if (used == s.size()) return {d};
    } catch (...) {
    }
    throw std::runtime_error("config line " + std::to_string(line_no) + ": cannot parse value '" + s + "'");
}

}  // namespace detail

inline Toml parse_toml(const std::string& text) {
    Toml out;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // strip comments outside strings
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line = line.substr(0, i);
                break;
            }
        }
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) + ": bad table header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        const std::string full_key = section.empty() ? key : section + "." + key;
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) + ": unterminated array");
            const std::string body = value.substr(1, value.size() - 2);
            std::vector<std::string> items;
            std::string cur;
            bool in_str = false;
            for (char ch : body) {
                if (ch == '"') in_str = !in_str;
                if (ch == ',' && !in_str) {
                    items.push_back(cur);
                    cur.clear();
                } else {
                    cur += ch;
                }
            }
            if (!detail::trim(cur).empty()) items.push_back(cur);
            if (items.empty()) {
                out.set(full_key, TomlValue{std::vector<double>{}});
                continue;
            }
            if (detail::trim(items[0]).front() == '"') {
                std::vector<std::string> strs;
                for (const auto& item : items)
                    strs.push_back(std::get<std::string>(detail::parse_scalar(item, line_no).v));
                out.set(full_key, TomlValue{std::move(strs)});
            } else {
                std::vector<double> nums;
                for (const auto& item : items) {
                    const TomlValue v = detail::parse_scalar(item, line_no);
                    nums.push_back(std::holds_alternative<std::int64_t>(v.v)
                                       ? static_cast<double>(std::get<std::int64_t>(v.v))
                                       : std::get<double>(v.v));
                }
                out.set(full_key, TomlValue{std::move(nums)});
            }
            continue;
        }
        out.set(full_key, detail::parse_scalar(value, line_no));
    }
    return out;
}

inline Toml load_toml(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config file not found: '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_toml(ss.str());
}

struct RunConfig {
    std::string dataset_path;
    std::string out_dir;
    std::vector<pipeline::PipelineKind> kinds;
    pipeline::PipelineConfigs pipeline;
    std::uint64_t seed = 0;
};

// Builds the full pipeline configuration from a parsed TOML file, validating
// section by section so errors carry the offending name.
inline RunConfig run_config_from_toml(const Toml& t) {
    RunConfig rc;
    rc.dataset_path = t.require_string("dataset.path");
    rc.out_dir = t.get_string("output.dir", "out");
    rc.seed = static_cast<std::uint64_t>(t.get_int("seed", 0));
    if (const char* env = std::getenv("MRICASCADE_SEED")) rc.seed = std::strtoull(env, nullptr, 10);

    for (const auto& id : t.get_strings("pipeline.kinds",
                                        {"deepsegnet_resnet50", "deepsegnet_rnn", "unet_rnn", "unet_lstm"}))
        rc.kinds.push_back(pipeline::kind_from_id(id));

    auto& p = rc.pipeline;
    p.split.train_fraction = t.get_double("split.train_fraction", 0.9);
    if (!(p.split.train_fraction > 0.0 && p.split.train_fraction <= 1.0))
        throw std::runtime_error("config [split]: train_fraction must lie in (0,1]");

    p.prep.target_size = static_cast<int>(t.get_int("preprocess.target_size", 256));
    if (p.prep.target_size < 16) throw std::runtime_error("config [preprocess]: target_size must be >= 16");

    if (t.get_bool("augment.enabled", true)) {
        preprocess::AugmentationConfig aug;
        aug.rotations = t.get_doubles("augment.rotations", {-15.0, 15.0});
        aug.flip_horizontal = t.get_bool("augment.flip_horizontal", true);
        aug.flip_vertical = t.get_bool("augment.flip_vertical", true);
        aug.max_translation = static_cast<int>(t.get_int("augment.max_translation", 10));
        aug.noise_sigma = t.get_double("augment.noise_sigma", 0.01);
        aug.copies_per_sample = static_cast<int>(t.get_int("augment.copies_per_sample", 1));
        const auto grid = t.get_doubles("augment.elastic.grid", {3, 3});
        if (grid.size() != 2) throw std::runtime_error("config [augment.elastic]: grid needs two entries");
        aug.elastic.grid_h = static_cast<int>(grid[0]);
        aug.elastic.grid_w = static_cast<int>(grid[1]);
        aug.elastic.sigma = t.get_double("augment.elastic.sigma", 10.0);
        if (aug.max_translation < 0) throw std::runtime_error("config [augment]: max_translation must be >= 0");
        p.augment = aug;
    } else {
        p.augment = std::nullopt;
    }

    p.unet.depth = static_cast<int>(t.get_int("unet.depth", 4));
    p.unet.base_channels = static_cast<int>(t.get_int("unet.base_channels", 16));
    const std::string pad = t.get_string("unet.padding", "valid");
    if (pad == "valid")
        p.unet.padding = nets::PaddingMode::valid;
    else if (pad == "same")
        p.unet.padding = nets::PaddingMode::same;
    else
        throw std::runtime_error("config [unet]: padding must be 'valid' or 'same'");

    p.deepsegnet.depth = static_cast<int>(t.get_int("deepsegnet.depth", 4));
    p.deepsegnet.base_channels = static_cast<int>(t.get_int("deepsegnet.base_channels", 16));

    const std::string variant = t.get_string("resnet.variant", "resnet_mini");
    if (variant == "resnet50")
        p.resnet.variant = nets::ResNetVariant::resnet50;
    else if (variant == "resnet_mini")
        p.resnet.variant = nets::ResNetVariant::resnet_mini;
    else
        throw std::runtime_error("config [resnet]: variant must be 'resnet50' or 'resnet_mini'");
    p.resnet.base_channels = static_cast<int>(t.get_int("resnet.base_channels", 8));
    p.resnet.num_classes = 2;

    p.rnn.cell = nets::CellKind::plain;
    p.rnn.input_dim = static_cast<int>(t.get_int("recurrent.input_dim", 32));
    p.rnn.hidden_dim = static_cast<int>(t.get_int("recurrent.hidden_dim", 32));
    {
        const auto chans = t.get_doubles("recurrent.encoder_channels", {8, 16});
        const auto strides = t.get_doubles("recurrent.encoder_strides", {2, 2});
        if (chans.size() != strides.size())
            throw std::runtime_error("config [recurrent]: encoder_channels/encoder_strides lengths differ");
        p.rnn.encoder.clear();
        for (std::size_t i = 0; i < chans.size(); ++i)
            p.rnn.encoder.push_back({static_cast<int>(chans[i]), static_cast<int>(strides[i])});
    }
    p.lstm = p.rnn;
    p.lstm.cell = nets::CellKind::gated;

    auto read_train = [&](const std::string& section, train::TrainConfig& tc) {
        tc.epochs = static_cast<int>(t.get_int(section + ".epochs", 30));
        tc.batch_size = static_cast<int>(t.get_int(section + ".batch_size", 8));
        tc.early_stop_patience = static_cast<int>(t.get_int(section + ".patience", 5));
        if (tc.batch_size < 1) throw std::runtime_error("config [" + section + "]: batch_size must be >= 1");
        if (tc.epochs < 0) throw std::runtime_error("config [" + section + "]: epochs must be >= 0");
    };
    read_train("train.segmenter", p.seg_train);
    read_train("train.classifier", p.cls_train);
    const std::string loss = t.get_string("train.segmenter.loss", "bce_plus_softdice");
    if (loss == "bce")
        p.seg_train.seg_loss = train::SegLossKind::bce;
    else if (loss == "bce_plus_softdice")
        p.seg_train.seg_loss = train::SegLossKind::bce_plus_softdice;
    else
        throw std::runtime_error("config [train.segmenter]: loss must be 'bce' or 'bce_plus_softdice'");

    const double lr = t.get_double("optimizer.learning_rate", 0.0003);
    p.seg_opt.learning_rate = t.get_double("optimizer.segmenter_learning_rate", lr);
    p.cls_opt.learning_rate = t.get_double("optimizer.classifier_learning_rate", lr);
    if (!(p.seg_opt.learning_rate > 0.0) || !(p.cls_opt.learning_rate > 0.0))
        throw std::runtime_error("config [optimizer]: learning rates must be positive");

    p.roi.roi_size = static_cast<int>(t.get_int("pipeline.roi_size", 16));
    p.roi.threshold = t.get_double("pipeline.threshold", 0.5);
    p.roi.top_k = static_cast<int>(t.get_int("pipeline.top_k", 1));
    p.roi.margin = static_cast<int>(t.get_int("pipeline.margin", 4));
    p.decision_threshold = t.get_double("pipeline.decision_threshold", 0.5);
    if (!(p.roi.threshold > 0.0 && p.roi.threshold < 1.0))
        throw std::runtime_error("config [pipeline]: threshold must lie in (0,1)");
    if (p.roi.roi_size < 2) throw std::runtime_error("config [pipeline]: roi_size must be >= 2");

    p.resnet.input_size = p.roi.roi_size;
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    return run_config_from_toml(load_toml(path));
}

}  // namespace mricascade::config
