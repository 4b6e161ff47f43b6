#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stableidm/evalbench/metrics.hpp"
#include "stableidm/masking/mask.hpp"
#include "stableidm/pipeline/model.hpp"
#include "stableidm/pipeline/train.hpp"
#include "stableidm/synth/world.hpp"

namespace stableidm::evalbench {

using EpisodePredictor = std::function<std::vector<std::vector<double>>(const synth::EpisodeRecord&)>;

/// A named predictor producing one raw action per frame of an episode.
struct Variant {
    std::string name;
    EpisodePredictor predict;
};

inline Variant model_variant(std::string name, const pipeline::Model& model, pipeline::AblationFlags flags) {
    return Variant{std::move(name), [&model, flags](const synth::EpisodeRecord& ep) {
                       return pipeline::infer_episode(model, ep, flags);
                   }};
}

inline Variant model_variant(std::string name, const pipeline::Model& model) {
    return model_variant(std::move(name), model, model.cfg.flags);
}

/// Mean L1 per occupancy bin; bins are [k*width, (k+1)*width), the last one open-ended.
struct OccupancyCurve {
    std::string variant;
    std::vector<double> bin_lo;
    std::vector<double> l1;
    std::vector<std::size_t> n;
};

struct BenchmarkReport {
    std::vector<MetricReport> rows;
    std::vector<OccupancyCurve> curves;
    std::map<std::string, std::string> config;
};

struct CurveBins {
    double width = 0.05;
    std::size_t count = 8;
};

/// Scores one variant on every frame of every episode; each frame is labeled
/// by its own occupancy.
inline void evaluate_variant(const Variant& v, const std::vector<synth::EpisodeRecord>& episodes,
                             const ThresholdSpec& spec, const SplitRule& rule, BenchmarkReport& out,
                             CurveBins bins = {}) {
    MetricAccumulator light(spec), heavy(spec);
    OccupancyCurve curve{v.name, {}, std::vector<double>(bins.count, 0.0), std::vector<std::size_t>(bins.count, 0)};
    for (std::size_t b = 0; b < bins.count; ++b) curve.bin_lo.push_back(static_cast<double>(b) * bins.width);
    for (const auto& ep : episodes) {
        const auto preds = v.predict(ep);
        if (preds.size() != ep.length()) throw DataError("variant " + v.name + ": prediction count mismatch on " + ep.episode_id);
        std::vector<std::optional<double>> occ(ep.occupancy.begin(), ep.occupancy.end());
        const Partition part = split_by_truncation(occ, rule);
        for (std::size_t t : part.light) light.add(preds[t], ep.actions[t]);
        for (std::size_t t : part.heavy) heavy.add(preds[t], ep.actions[t]);
        for (std::size_t t = 0; t < ep.length(); ++t) {
            auto b = static_cast<std::size_t>(std::floor(ep.occupancy[t] / bins.width));
            if (b >= bins.count) b = bins.count - 1;
            curve.l1[b] += l1_distance(preds[t], ep.actions[t]);
            ++curve.n[b];
        }
    }
    for (std::size_t b = 0; b < bins.count; ++b) {
        if (curve.n[b]) curve.l1[b] /= static_cast<double>(curve.n[b]);
    }
    out.rows.push_back(light.report(v.name, "light"));
    out.rows.push_back(heavy.report(v.name, "heavy"));
    out.curves.push_back(std::move(curve));
}

/// One (light, heavy) pair of rows per variant, all on the same frames in the same order.
inline BenchmarkReport run_benchmark(const std::vector<Variant>& variants, const std::vector<synth::EpisodeRecord>& episodes,
                                     const ThresholdSpec& spec, const SplitRule& rule = {}) {
    if (episodes.empty()) throw DataError("run_benchmark: empty eval split");
    if (variants.empty()) throw ParameterError("run_benchmark: no variants");
    spec.validate();
    rule.validate();
    BenchmarkReport report;
    for (const auto& v : variants) evaluate_variant(v, episodes, spec, rule, report);
    report.config["split_threshold"] = format_double(rule.threshold);
    return report;
}

inline const std::vector<std::string>& default_variants() {
    static const std::vector<std::string> v{"full", "no_dfa", "no_tdr", "no_mask", "no_refine"};
    return v;
}

/// Trains one model per variant name from the same config and seed.
inline std::vector<std::unique_ptr<pipeline::Model>> train_variants(const pipeline::PipelineConfig& base,
                                                                    const std::vector<std::string>& names,
                                                                    const std::vector<synth::EpisodeRecord>& train_eps,
                                                                    const pipeline::EpochCallback& on_epoch = {}) {
    if (train_eps.empty()) throw DataError("train_variants: empty training split");
    std::vector<std::unique_ptr<pipeline::Model>> models;
    for (const auto& name : names) {
        pipeline::PipelineConfig cfg = base;
        cfg.flags = pipeline::AblationFlags::from_variant(name);
        auto m = std::make_unique<pipeline::Model>(pipeline::Model::init(cfg, train_eps.front().actions.front().size()));
        pipeline::train(*m, train_eps, on_epoch);
        models.push_back(std::move(m));
    }
    return models;
}

inline std::string severity_label(double s) { return "severity=" + format_double(s); }

/// Clean masks versus masks degraded at each severity, on identical frames.
/// Rows: "clean" then one "severity=<s>" pair per severity.
inline BenchmarkReport mask_quality_study(const pipeline::Model& model, const std::vector<synth::EpisodeRecord>& episodes,
                                          const std::vector<double>& severities, const ThresholdSpec& spec,
                                          std::uint64_t seed, const SplitRule& rule = {}) {
    if (episodes.empty()) throw DataError("mask_quality_study: empty eval split");
    const pipeline::AblationFlags flags = model.cfg.flags;
    std::vector<Variant> variants{model_variant("clean", model, flags)};
    for (double s : severities) {
        if (!(s >= 0.0 && s <= 1.0)) throw ParameterError("mask_quality_study: severity must lie in [0, 1]");
        variants.push_back(Variant{severity_label(s), [&model, flags, s, seed, &episodes](const synth::EpisodeRecord& ep) {
                                       std::size_t e = 0;
                                       while (e < episodes.size() && &episodes[e] != &ep) ++e;
                                       std::vector<MaskGrid> masks;
                                       for (std::size_t t = 0; t < ep.length(); ++t) {
                                           const auto key = numcore::derive_seed(numcore::derive_seed(seed, e), t);
                                           masks.push_back(masking::degrade_mask(
                                                               masking::RobotMask{ep.masks[t], masking::MaskSource::ground_truth},
                                                               s, key)
                                                               .grid);
                                       }
                                       return pipeline::infer_episode(model, ep.frames, masks, flags);
                                   }});
    }
    BenchmarkReport r = run_benchmark(variants, episodes, spec, rule);
    r.config["seed"] = std::to_string(seed);
    return r;
}

}  // namespace stableidm::evalbench
