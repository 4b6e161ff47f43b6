#pragma once

#include <functional>
#include <random>
#include <vector>

#include "stableidm/pipeline/model.hpp"

namespace stableidm::pipeline {

struct TrainResult {
    std::vector<double> loss_curve;  // mean window loss per epoch
    std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

inline std::vector<std::vector<double>> collect_actions(const std::vector<synth::EpisodeRecord>& episodes) {
    std::vector<std::vector<double>> out;
    for (const auto& ep : episodes) out.insert(out.end(), ep.actions.begin(), ep.actions.end());
    return out;
}

/// Mean per-dimension L1 between prediction and normalized target for one window.
inline Var window_loss(Tape& tape, const Model& m, const std::vector<FrameInput>& window,
                       const std::vector<double>& raw_target) {
    const Var pred = forward_window(tape, m, window, m.cfg.flags);
    return numcore::l1_loss(pred, Tensor::vector(m.norm.normalize(raw_target)));
}

/// Fits normalization on the training episodes, then runs Adam on uniformly
/// sampled windows with per-window pixel shifts. The model's config and flags
/// drive every choice; identical inputs give identical parameter trajectories.
inline TrainResult train(Model& m, const std::vector<synth::EpisodeRecord>& episodes, const EpochCallback& on_epoch = {}) {
    if (episodes.empty()) throw DataError("train: empty training split");
    const PipelineConfig& cfg = m.cfg;
    m.norm = NormStats::fit(collect_actions(episodes));

    numcore::ParamRegistry reg = m.registry();
    numcore::Adam adam(reg, numcore::AdamOptions{cfg.learning_rate});
    numcore::Rng rng(numcore::derive_seed(cfg.seed, 0x747261696eULL));
    std::uniform_int_distribution<int> shift(-cfg.augment_pixels, cfg.augment_pixels);

    TrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::pair<std::size_t, std::size_t>> samples;
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            std::uniform_int_distribution<std::size_t> pick(0, episodes[e].length() - 1);
            for (std::size_t i = 0; i < cfg.windows_per_episode; ++i) samples.emplace_back(e, pick(rng));
        }
        std::shuffle(samples.begin(), samples.end(), rng);

        double epoch_loss = 0.0;
        try {
            for (std::size_t b = 0; b < samples.size(); b += cfg.batch_size) {
                const std::size_t end = std::min(samples.size(), b + cfg.batch_size);
                numcore::GradAccumulator acc(reg);
                for (std::size_t i = b; i < end; ++i) {
                    const auto& ep = episodes[samples[i].first];
                    const std::size_t t = samples[i].second;
                    const int dx = shift(rng), dy = shift(rng);
                    Tape tape;
                    tape.set_training(true);
                    const Var loss = window_loss(tape, m, episode_window(m, ep.frames, ep.masks, t, cfg.flags, dx, dy),
                                                 ep.actions[t]);
                    tape.backward(loss);
                    acc.collect(tape);
                    epoch_loss += loss.value()[0];
                }
                acc.scale(1.0 / static_cast<double>(end - b));
                adam.step(acc);
                ++result.steps;
            }
        } catch (const NumericError& e) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        epoch_loss /= static_cast<double>(samples.size());
        if (!std::isfinite(epoch_loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
        for (const auto& [name, p] : reg.entries()) {
            if (!p->all_finite()) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": parameter " + name);
            }
        }
        result.loss_curve.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    return result;
}

}  // namespace stableidm::pipeline
