#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mricascade/tensor.hpp"

namespace mricascade::nets {

// Named-tensor collection holding all learnable weights of one network.
// std::map keeps iteration order deterministic (sorted by name).
class ParameterStore {
public:
    void add(const std::string& name, Tensor t) {
        if (entries_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        entries_.emplace(name, std::move(t));
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    const Tensor& get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("no parameter '" + name + "'");
        return it->second;
    }

    Tensor& get(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("no parameter '" + name + "'");
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [k, v] : entries_) out.push_back(k);
        return out;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    bool same_structure(const ParameterStore& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        auto a = entries_.begin();
        auto b = o.entries_.begin();
        for (; a != entries_.end(); ++a, ++b)
            if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
        return true;
    }

    bool operator==(const ParameterStore& o) const {
        if (!same_structure(o)) return false;
        auto a = entries_.begin();
        auto b = o.entries_.begin();
        for (; a != entries_.end(); ++a, ++b)
            if (a->second.values() != b->second.values()) return false;
        return true;
    }

private:
    std::map<std::string, Tensor> entries_;
};

using GradStore = ParameterStore;

// NTA ("named-tensor archive"): magic "NTA1", u64 LE index length, JSON index
// {name: {dtype, shape, offset, length}}, then raw little-endian payloads.
// Offsets are relative to the start of the payload section.
namespace nta {

static_assert(std::endian::native == std::endian::little, "NTA writer assumes a little-endian host");

inline void save(const ParameterStore& store, const std::string& path) {
    nlohmann::json index = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : store) {
        const std::uint64_t length = t.numel() * sizeof(double);
        index[name] = {{"dtype", "f64"}, {"shape", t.shape()}, {"offset", offset}, {"length", length}};
        offset += length;
    }
    const std::string index_str = index.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    out.write("NTA1", 4);
    const std::uint64_t index_len = index_str.size();
    out.write(reinterpret_cast<const char*>(&index_len), sizeof(index_len));
    out.write(index_str.data(), static_cast<std::streamsize>(index_str.size()));
    for (const auto& [name, t] : store)
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed for checkpoint '" + path + "'");
}

inline ParameterStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint not found: '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "NTA1", 4) != 0)
        throw std::runtime_error("corrupt archive '" + path + "': bad magic");
    std::uint64_t index_len = 0;
    in.read(reinterpret_cast<char*>(&index_len), sizeof(index_len));
    if (!in) throw std::runtime_error("corrupt archive '" + path + "': truncated index length");
    std::string index_str(index_len, '\0');
    in.read(index_str.data(), static_cast<std::streamsize>(index_len));
    if (!in) throw std::runtime_error("corrupt archive '" + path + "': truncated index");
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(index_str);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt archive '" + path + "': " + e.what());
    }
    const std::streampos payload_start = in.tellg();
    ParameterStore store;
    for (const auto& [name, desc] : index.items()) {
        const std::string dtype = desc.at("dtype").get<std::string>();
        const auto shape = desc.at("shape").get<std::vector<int>>();
        const std::uint64_t offset = desc.at("offset").get<std::uint64_t>();
        const std::uint64_t length = desc.at("length").get<std::uint64_t>();
        Tensor t(shape);
        const std::uint64_t elem = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
        if (elem == 0) throw std::runtime_error("corrupt archive '" + path + "': dtype '" + dtype + "'");
        if (length != t.numel() * elem)
            throw std::runtime_error("corrupt archive '" + path + "': length/shape mismatch for '" + name + "'");
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        if (dtype == "f64") {
            in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(length));
        } else {
            std::vector<float> buf(t.numel());
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(length));
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = buf[i];
        }
        if (!in) throw std::runtime_error("corrupt archive '" + path + "': truncated payload for '" + name + "'");
        store.add(name, std::move(t));
    }
    return store;
}

}  // namespace nta

}  // namespace mricascade::nets
