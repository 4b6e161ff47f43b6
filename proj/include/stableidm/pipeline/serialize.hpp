#pragma once

// Model directory: manifest.json (format tag, version, config echo, tensor
// table) plus one f64 .fmap payload per tensor.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "stableidm/encoder/fmap.hpp"
#include "stableidm/pipeline/model.hpp"

namespace stableidm::pipeline {

inline constexpr const char* kModelFormat = "stableidm-model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline std::string tensor_file(const std::string& name) { return name + ".fmap"; }

inline nlohmann::json shape_json(const numcore::Shape& s) {
    nlohmann::json a = nlohmann::json::array();
    for (auto d : s) a.push_back(d);
    return a;
}

}  // namespace detail

inline void save_model(const Model& model, const std::filesystem::path& dir) {
    Model& m = const_cast<Model&>(model);  // registry() needs mutable pointers; nothing is written
    std::filesystem::create_directories(dir);
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    const numcore::ParamRegistry reg = m.registry();
    for (const auto& [name, t] : reg.entries()) tensors.emplace_back(name, t);
    const Tensor mu = Tensor::vector(m.norm.mu), sigma = Tensor::vector(m.norm.sigma);
    tensors.emplace_back("norm.mu", &mu);
    tensors.emplace_back("norm.sigma", &sigma);

    nlohmann::json manifest;
    manifest["format"] = kModelFormat;
    manifest["version"] = kModelVersion;
    manifest["action_dim"] = m.action_dim();
    nlohmann::json config = nlohmann::json::object();
    const KeyValueConfig echo = m.cfg.to_kv();
    for (const auto& [k, v] : echo.values()) config[k] = v;
    manifest["config"] = config;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        fmap::save_fmap(*t, dir / detail::tensor_file(name), fmap::DType::f64);
        table.push_back({{"name", name}, {"file", detail::tensor_file(name)}, {"shape", detail::shape_json(t->shape())}});
    }
    manifest["tensors"] = table;
    std::ofstream f(dir / "manifest.json");
    if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
    f << manifest.dump(2) << '\n';
}

inline Model load_model(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot read " + manifest_path.string());
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": malformed manifest: " + e.what());
    }

    Model m;
    std::map<std::string, nlohmann::json> table;
    try {
        if (manifest.at("format").get<std::string>() != kModelFormat) {
            throw FormatError(manifest_path.string() + ": not a model manifest");
        }
        const int version = manifest.at("version").get<int>();
        if (version != kModelVersion) {
            throw fmap::VersionError(manifest_path.string() + ": model version " + std::to_string(version) +
                                     " is not supported (expected " + std::to_string(kModelVersion) + ")");
        }
        KeyValueConfig kv;
        for (const auto& [k, v] : manifest.at("config").items()) kv.set(k, v.get<std::string>());
        m = Model::init(PipelineConfig::from(kv), manifest.at("action_dim").get<std::size_t>());
        for (const auto& entry : manifest.at("tensors")) table[entry.at("name").get<std::string>()] = entry;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(manifest_path.string() + ": bad config echo: " + e.what());
    }

    auto read = [&](const std::string& name, const numcore::Shape& expected) {
        auto it = table.find(name);
        if (it == table.end()) throw FormatError(manifest_path.string() + ": manifest is missing tensor '" + name + "'");
        numcore::Shape listed;
        try {
            listed = it->second.at("shape").get<numcore::Shape>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(manifest_path.string() + ": tensor '" + name + "': " + e.what());
        }
        const auto file = dir / it->second.value("file", detail::tensor_file(name));
        if (!std::filesystem::exists(file)) throw FormatError("tensor '" + name + "': payload " + file.string() + " is missing");
        const fmap::Decoded d = fmap::load_fmap_with_dtype(file);
        if (d.tensor.shape() != listed) {
            throw FormatError("tensor '" + name + "': manifest shape " + numcore::shape_str(listed) +
                              " disagrees with payload " + numcore::shape_str(d.tensor.shape()));
        }
        if (listed != expected) {
            throw FormatError("tensor '" + name + "': shape " + numcore::shape_str(listed) + " does not fit the model (" +
                              numcore::shape_str(expected) + ")");
        }
        return d.tensor;
    };

    numcore::ParamRegistry reg = m.registry();
    for (const auto& [name, t] : reg.entries()) *t = read(name, t->shape());
    m.norm.mu = read("norm.mu", {m.action_dim()}).values();
    m.norm.sigma = read("norm.sigma", {m.action_dim()}).values();
    for (double s : m.norm.sigma) {
        if (!(s > 0.0)) throw FormatError(manifest_path.string() + ": normalization sigma must be positive");
    }
    return m;
}

}  // namespace stableidm::pipeline
