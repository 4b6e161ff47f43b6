#pragma once

// End-to-end model: mask -> encode -> fuse over the window -> descriptor per
// frame -> temporal regression -> denormalize.

#include <cstdint>
#include <optional>
#include <vector>

#include "stableidm/dfa/dfa.hpp"
#include "stableidm/encoder/encoder.hpp"
#include "stableidm/imaging.hpp"
#include "stableidm/masking/mask.hpp"
#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/optim.hpp"
#include "stableidm/pipeline/config.hpp"
#include "stableidm/pipeline/norm.hpp"
#include "stableidm/synth/world.hpp"
#include "stableidm/tdr/fusion.hpp"
#include "stableidm/tdr/regressor.hpp"

namespace stableidm::pipeline {

using numcore::Tape;
using numcore::Tensor;
using numcore::Var;

struct Model {
    PipelineConfig cfg;
    encoder::EncoderParams enc;
    dfa::DirectionBank bank;
    dfa::ContextProjection ctx;
    tdr::FusionParams fusion;
    tdr::RegressorParams head;
    Tensor pool_w, pool_b;  // used when DFA is disabled: pooled grid -> descriptor
    NormStats norm;

    std::size_t action_dim() const { return cfg.regressor.action_dim; }

    static Model init(PipelineConfig cfg, std::size_t action_dim) {
        cfg.regressor.action_dim = action_dim;
        cfg.sync();
        cfg.validate();
        if (action_dim == 0) throw ParameterError("model: action_dim must be positive");
        numcore::Rng rng(numcore::derive_seed(cfg.seed, 0x6d6f64656cULL));
        Model m;
        m.cfg = cfg;
        m.enc = encoder::EncoderParams::init(cfg.encoder, rng);
        m.bank = dfa::DirectionBank::init(cfg.dfa, cfg.encoder.channels, rng);
        m.ctx = dfa::ContextProjection::init(cfg.dfa, cfg.encoder.context_dim, rng);
        m.fusion = tdr::FusionParams::init(cfg.fusion, cfg.encoder.channels, rng);
        m.head = tdr::RegressorParams::init(cfg.regressor, rng);
        m.pool_w = numcore::fan_in_uniform({cfg.dfa.descriptor_dim(), cfg.encoder.channels}, cfg.encoder.channels, rng);
        m.pool_b = Tensor::zeros({cfg.dfa.descriptor_dim()});
        m.norm = NormStats{std::vector<double>(action_dim, 0.0), std::vector<double>(action_dim, 1.0)};
        return m;
    }

    /// Every trainable tensor in a fixed order. The registry points into this
    /// object, so the model must stay in place while it is used.
    numcore::ParamRegistry registry() {
        numcore::ParamRegistry reg;
        enc.register_params(reg, "encoder.");
        bank.register_params(reg, "dfa.");
        ctx.register_params(reg, "dfa.context.");
        fusion.register_params(reg, "fusion.");
        head.register_params(reg, "head.");
        reg.add("pool.weight", &pool_w);
        reg.add("pool.bias", &pool_b);
        return reg;
    }
};

/// One frame after masking and (optional) shifting, ready for the encoder.
struct FrameInput {
    Tensor pixels;     // 3 x R x R in [0, 1], background zeroed
    Tensor cell_mask;  // grid x grid coverage fractions
};

inline FrameInput prepare_frame(const Image& frame, const MaskGrid& mask, const PipelineConfig& cfg,
                                const AblationFlags& flags, int dx = 0, int dy = 0) {
    masking::require_same_extents(frame, mask);
    const std::size_t g = cfg.encoder.grid();
    const Image shifted = (dx || dy) ? masking::shift(frame, dx, dy) : frame;
    if (flags.effective().disable_mask) {
        return FrameInput{image_to_tensor(shifted), Tensor::ones({g, g})};
    }
    const MaskGrid m = (dx || dy) ? masking::shift(mask, dx, dy) : mask;
    return FrameInput{masking::apply_mask(image_to_tensor(shifted), m), masking::downsample_mask(m, g, g)};
}

/// Descriptor z for one (possibly fused) grid.
inline Var frame_descriptor(Var grid, const Tensor& cell_mask, Var context, const Model& m, const AblationFlags& f) {
    if (f.disable_dfa) {
        Tape& tape = *grid.tape;
        Var pooled = dfa::masked_pool(grid, cell_mask).vector;
        return numcore::linear(pooled, tape.param(m.pool_w), tape.param(m.pool_b));
    }
    return dfa::dfa_descriptor(grid, cell_mask, context, m.bank, m.ctx, m.cfg.dfa).descriptor;
}

/// Left-pad a descriptor history with zero descriptors up to K entries.
inline std::vector<Var> pad_history(Tape& tape, std::vector<Var> history, std::size_t k) {
    if (history.empty() || history.size() >= k) return history;
    const Var zero = tape.constant(Tensor::zeros(history.front().shape()));
    history.insert(history.begin(), k - history.size(), zero);
    return history;
}

/// Normalized prediction for the newest frame of a causal window (oldest
/// first, at most K frames). Shorter windows are left-padded with zero
/// descriptors.
inline Var forward_window(Tape& tape, const Model& m, const std::vector<FrameInput>& window, const AblationFlags& flags) {
    if (window.empty()) throw ParameterError("forward_window: empty window");
    if (window.size() > m.cfg.window) {
        throw ParameterError("forward_window: window of " + std::to_string(window.size()) + " frames exceeds K=" +
                             std::to_string(m.cfg.window));
    }
    const AblationFlags f = flags.effective();
    if (f.disable_tdr) {
        const FrameInput& last = window.back();
        const encoder::Encoded e = encoder::encode(tape.constant(last.pixels), m.enc, m.cfg.encoder);
        return tdr::base_head(frame_descriptor(e.grid, last.cell_mask, e.context, m, f), m.head, m.cfg.regressor);
    }
    std::vector<Var> grids, contexts;
    for (const FrameInput& in : window) {
        const encoder::Encoded e = encoder::encode(tape.constant(in.pixels), m.enc, m.cfg.encoder);
        grids.push_back(e.grid);
        contexts.push_back(e.context);
    }
    const std::vector<Var> fused = tdr::fuse_window(grids, m.fusion, m.cfg.fusion);
    std::vector<Var> history;
    for (std::size_t i = 0; i < window.size(); ++i) {
        history.push_back(frame_descriptor(fused[i], window[i].cell_mask, contexts[i], m, f));
    }
    return tdr::temporal_regress(pad_history(tape, std::move(history), m.cfg.window), m.head, m.cfg.regressor, true);
}

/// Window of frames [max(0, t-K+1), t] from an episode.
inline std::vector<FrameInput> episode_window(const Model& m, const std::vector<Image>& frames,
                                              const std::vector<MaskGrid>& masks, std::size_t t,
                                              const AblationFlags& flags, int dx = 0, int dy = 0) {
    if (t >= frames.size() || masks.size() != frames.size()) throw ParameterError("episode_window: index out of range");
    const std::size_t k = m.cfg.window;
    const std::size_t start = flags.effective().disable_tdr ? t : (t + 1 >= k ? t + 1 - k : 0);
    std::vector<FrameInput> out;
    for (std::size_t s = start; s <= t; ++s) out.push_back(prepare_frame(frames[s], masks[s], m.cfg, flags, dx, dy));
    return out;
}

/// Raw action at the newest frame of the window.
inline std::vector<double> infer(const Model& m, const std::vector<Image>& frames, const std::vector<MaskGrid>& masks,
                                 const AblationFlags& flags) {
    if (frames.size() != masks.size()) throw ShapeError("infer: frame and mask counts differ");
    if (frames.empty()) throw ParameterError("infer: empty window");
    std::vector<FrameInput> window;
    for (std::size_t i = 0; i < frames.size(); ++i) window.push_back(prepare_frame(frames[i], masks[i], m.cfg, flags));
    Tape tape;
    const Var out = forward_window(tape, m, window, flags);
    return m.norm.denormalize(out.value().values());
}

/// First frame a prediction for target t depends on.
inline std::size_t window_start(const Model& m, std::size_t t, const AblationFlags& flags) {
    const std::size_t k = m.cfg.window;
    return flags.effective().disable_tdr ? t : (t + 1 >= k ? t + 1 - k : 0);
}

/// Prepared frames [window_start(first), last] of an episode, all shifted by (dx, dy).
inline std::vector<FrameInput> episode_span(const Model& m, const std::vector<Image>& frames,
                                            const std::vector<MaskGrid>& masks, std::size_t first, std::size_t last,
                                            const AblationFlags& flags, int dx = 0, int dy = 0) {
    if (first > last || last >= frames.size() || masks.size() != frames.size()) {
        throw ParameterError("episode_span: index out of range");
    }
    std::vector<FrameInput> out;
    for (std::size_t s = window_start(m, first, flags); s <= last; ++s) {
        out.push_back(prepare_frame(frames[s], masks[s], m.cfg, flags, dx, dy));
    }
    return out;
}

/// Normalized predictions for targets first..last of one episode, where
/// inputs[i] is frame window_start(first) + i. Each frame is encoded and
/// described once and shared by every window that contains it; the values
/// equal forward_window on each window separately.
inline std::vector<Var> forward_span(Tape& tape, const Model& m, const std::vector<FrameInput>& inputs,
                                     std::size_t first, std::size_t last, const AblationFlags& flags) {
    const AblationFlags f = flags.effective();
    const std::size_t origin = window_start(m, first, f);
    if (first > last || inputs.size() != last - origin + 1) {
        throw ParameterError("forward_span: expected " + std::to_string(last + 1 - std::min(origin, last + 1)) +
                             " frames, got " + std::to_string(inputs.size()));
    }
    std::vector<Var> out;
    if (m.cfg.fusion.cascade && !f.disable_tdr) {
        for (std::size_t t = first; t <= last; ++t) {
            const auto begin = inputs.begin() + static_cast<std::ptrdiff_t>(window_start(m, t, f) - origin);
            const auto end = inputs.begin() + static_cast<std::ptrdiff_t>(t - origin + 1);
            out.push_back(forward_window(tape, m, std::vector<FrameInput>(begin, end), f));
        }
        return out;
    }

    std::vector<Var> grids, contexts;
    for (const FrameInput& in : inputs) {
        const encoder::Encoded e = encoder::encode(tape.constant(in.pixels), m.enc, m.cfg.encoder);
        grids.push_back(e.grid);
        contexts.push_back(e.context);
    }
    auto describe = [&](Var grid, std::size_t i) { return frame_descriptor(grid, inputs[i].cell_mask, contexts[i], m, f); };
    if (f.disable_tdr) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            out.push_back(tdr::base_head(describe(grids[i], i), m.head, m.cfg.regressor));
        }
        return out;
    }

    const std::size_t n = inputs.size();
    std::vector<std::optional<Var>> z_raw(n), z_fused(n);
    for (std::size_t t = first; t <= last; ++t) {
        const std::size_t start = window_start(m, t, f) - origin;
        if (!z_raw[start]) z_raw[start] = describe(grids[start], start);
        std::vector<Var> history{*z_raw[start]};
        for (std::size_t i = start + 1; i <= t - origin; ++i) {
            if (!z_fused[i]) z_fused[i] = describe(tdr::temporal_fuse(grids[i - 1], grids[i], m.fusion, m.cfg.fusion), i);
            history.push_back(*z_fused[i]);
        }
        out.push_back(tdr::temporal_regress(pad_history(tape, std::move(history), m.cfg.window), m.head, m.cfg.regressor, true));
    }
    return out;
}

/// Raw predictions for every frame of an episode, each from its own causal window.
inline std::vector<std::vector<double>> infer_episode(const Model& m, const std::vector<Image>& frames,
                                                      const std::vector<MaskGrid>& masks, const AblationFlags& flags) {
    if (frames.size() != masks.size()) throw ShapeError("infer_episode: frame and mask counts differ");
    std::vector<std::vector<double>> out;
    if (frames.empty()) return out;
    Tape tape;
    const auto inputs = episode_span(m, frames, masks, 0, frames.size() - 1, flags);
    for (const Var& y : forward_span(tape, m, inputs, 0, frames.size() - 1, flags)) {
        out.push_back(m.norm.denormalize(y.value().values()));
    }
    return out;
}

inline std::vector<std::vector<double>> infer_episode(const Model& m, const synth::EpisodeRecord& rec,
                                                      const AblationFlags& flags) {
    return infer_episode(m, rec.frames, rec.masks, flags);
}

}  // namespace stableidm::pipeline
