#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "stableidm/config.hpp"
#include "stableidm/dfa/dfa.hpp"
#include "stableidm/encoder/encoder.hpp"
#include "stableidm/tdr/fusion.hpp"
#include "stableidm/tdr/regressor.hpp"

namespace stableidm::pipeline {

struct AblationFlags {
    bool disable_dfa = false;
    bool disable_tdr = false;
    bool disable_mask = false;
    bool disable_refinement = false;

    /// Refinement removal applies the DFA, TDR and mask substitutions together.
    AblationFlags effective() const {
        AblationFlags f = *this;
        if (f.disable_refinement) {
            f.disable_dfa = true;
            f.disable_tdr = true;
            f.disable_mask = true;
        }
        return f;
    }

    bool operator==(const AblationFlags&) const = default;

    /// full, no_dfa, no_tdr, no_mask, no_refine.
    static AblationFlags from_variant(const std::string& name) {
        AblationFlags f;
        if (name == "full") return f;
        if (name == "no_dfa") f.disable_dfa = true;
        else if (name == "no_tdr") f.disable_tdr = true;
        else if (name == "no_mask") f.disable_mask = true;
        else if (name == "no_refine") f.disable_refinement = true;
        else throw ConfigError("unknown variant '" + name + "'");
        return f;
    }
};

struct PipelineConfig {
    std::size_t window = 8;
    encoder::EncoderConfig encoder;
    dfa::DfaConfig dfa;
    tdr::FusionConfig fusion;
    tdr::RegressorConfig regressor;
    std::string loss = "l1";
    double learning_rate = 3e-3;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    std::size_t windows_per_episode = 8;
    int augment_pixels = 2;
    AblationFlags flags;
    std::uint64_t seed = 0;

    static const std::set<std::string>& keys() {
        static const std::set<std::string> k{
            "window",        "resolution",    "patch",          "channels",         "context_dim",
            "stage_channels", "angles",       "taps",           "dir_channels",     "temperature",
            "fusion_hidden", "max_offset",    "cascade",        "dilations",        "kernel_width",
            "tcn_channels",  "hidden",        "beta_init",      "slope",            "loss",
            "learning_rate", "epochs",        "batch_size",     "windows_per_episode", "augment_pixels",
            "disable_dfa",   "disable_tdr",   "disable_mask",   "disable_refinement", "seed"};
        return k;
    }

    /// Reads the pipeline keys; other keys are ignored so one file can also
    /// carry dataset settings.
    static PipelineConfig from(const KeyValueConfig& kv) {
        PipelineConfig c;
        c.window = kv.get_size("window", c.window);
        c.encoder.resolution = kv.get_size("resolution", c.encoder.resolution);
        c.encoder.patch = kv.get_size("patch", c.encoder.patch);
        c.encoder.channels = kv.get_size("channels", c.encoder.channels);
        c.encoder.context_dim = kv.get_size("context_dim", c.encoder.context_dim);
        const auto stages = kv.get_sizes("stage_channels", {c.encoder.stage_channels[0], c.encoder.stage_channels[1]});
        if (stages.size() != 2) throw ConfigError("stage_channels needs exactly two values");
        c.encoder.stage_channels = {stages[0], stages[1]};
        c.dfa.angles_deg = kv.get_doubles("angles", c.dfa.angles_deg);
        c.dfa.taps = kv.get_size("taps", c.dfa.taps);
        c.dfa.dir_channels = kv.get_size("dir_channels", c.dfa.dir_channels);
        c.dfa.temperature = kv.get_double("temperature", c.dfa.temperature);
        c.fusion.hidden = kv.get_size("fusion_hidden", c.fusion.hidden);
        c.fusion.max_offset = kv.get_double("max_offset", c.fusion.max_offset);
        c.fusion.cascade = kv.get_bool("cascade", c.fusion.cascade);
        c.regressor.dilations = kv.get_sizes("dilations", c.regressor.dilations);
        c.regressor.kernel_width = kv.get_size("kernel_width", c.regressor.kernel_width);
        c.regressor.tcn_channels = kv.get_size("tcn_channels", c.regressor.tcn_channels);
        c.regressor.hidden = kv.get_size("hidden", c.regressor.hidden);
        const double beta = kv.get_double("beta_init", c.fusion.beta_init);
        c.fusion.beta_init = c.regressor.beta_init = beta;
        const double slope = kv.get_double("slope", c.encoder.slope);
        c.encoder.slope = c.dfa.slope = c.fusion.slope = c.regressor.slope = slope;
        c.loss = kv.get_string("loss", c.loss);
        c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
        c.epochs = kv.get_size("epochs", c.epochs);
        c.batch_size = kv.get_size("batch_size", c.batch_size);
        c.windows_per_episode = kv.get_size("windows_per_episode", c.windows_per_episode);
        c.augment_pixels = static_cast<int>(kv.get_size("augment_pixels", static_cast<std::size_t>(c.augment_pixels)));
        c.flags.disable_dfa = kv.get_bool("disable_dfa", false);
        c.flags.disable_tdr = kv.get_bool("disable_tdr", false);
        c.flags.disable_mask = kv.get_bool("disable_mask", false);
        c.flags.disable_refinement = kv.get_bool("disable_refinement", false);
        c.seed = kv.get_u64("seed", c.seed);
        c.sync();
        c.validate();
        return c;
    }

    /// Propagates shared sizes into the sub-configs.
    void sync() { regressor.descriptor_dim = dfa.descriptor_dim(); }

    void validate() const {
        if (window == 0) throw ConfigError("window must be positive");
        encoder.validate();
        dfa.validate();
        if (loss != "l1") throw ConfigError("unsupported loss '" + loss + "' (only l1)");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (windows_per_episode == 0) throw ConfigError("windows_per_episode must be positive");
        if (augment_pixels < 0) throw ConfigError("augment_pixels must be non-negative");
        if (!(fusion.beta_init > 0.0)) throw ConfigError("beta_init must be positive");
        if (!(fusion.max_offset > 0.0)) throw ConfigError("max_offset must be positive");
        if (fusion.hidden == 0 || regressor.hidden == 0 || regressor.tcn_channels == 0) {
            throw ConfigError("hidden sizes must be positive");
        }
        if (regressor.dilations.empty() || regressor.kernel_width == 0) throw ConfigError("tcn needs dilations and a kernel width");
        if (regressor.descriptor_dim != dfa.descriptor_dim()) throw ConfigError("descriptor size out of sync");
    }

    /// Key=value text that parses back to an identical config.
    KeyValueConfig to_kv() const {
        KeyValueConfig kv;
        kv.set("window", std::to_string(window));
        kv.set("resolution", std::to_string(encoder.resolution));
        kv.set("patch", std::to_string(encoder.patch));
        kv.set("channels", std::to_string(encoder.channels));
        kv.set("context_dim", std::to_string(encoder.context_dim));
        kv.set("stage_channels", std::to_string(encoder.stage_channels[0]) + "," + std::to_string(encoder.stage_channels[1]));
        kv.set("angles", join_list(dfa.angles_deg));
        kv.set("taps", std::to_string(dfa.taps));
        kv.set("dir_channels", std::to_string(dfa.dir_channels));
        kv.set("temperature", format_double(dfa.temperature));
        kv.set("fusion_hidden", std::to_string(fusion.hidden));
        kv.set("max_offset", format_double(fusion.max_offset));
        kv.set("cascade", fusion.cascade ? "true" : "false");
        kv.set("dilations", join_list(regressor.dilations));
        kv.set("kernel_width", std::to_string(regressor.kernel_width));
        kv.set("tcn_channels", std::to_string(regressor.tcn_channels));
        kv.set("hidden", std::to_string(regressor.hidden));
        kv.set("beta_init", format_double(fusion.beta_init));
        kv.set("slope", format_double(encoder.slope));
        kv.set("loss", loss);
        kv.set("learning_rate", format_double(learning_rate));
        kv.set("epochs", std::to_string(epochs));
        kv.set("batch_size", std::to_string(batch_size));
        kv.set("windows_per_episode", std::to_string(windows_per_episode));
        kv.set("augment_pixels", std::to_string(augment_pixels));
        kv.set("disable_dfa", flags.disable_dfa ? "true" : "false");
        kv.set("disable_tdr", flags.disable_tdr ? "true" : "false");
        kv.set("disable_mask", flags.disable_mask ? "true" : "false");
        kv.set("disable_refinement", flags.disable_refinement ? "true" : "false");
        kv.set("seed", std::to_string(seed));
        return kv;
    }
};

}  // namespace stableidm::pipeline
