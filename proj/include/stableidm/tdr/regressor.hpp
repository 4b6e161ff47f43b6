#pragma once

// Action head: a single-frame MLP on the newest descriptor plus a
// beta-scaled residual from a causal dilated TCN over the descriptor history.

#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/ops.hpp"
#include "stableidm/numcore/optim.hpp"
#include "stableidm/tdr/fusion.hpp"

namespace stableidm::tdr {

struct RegressorConfig {
    std::size_t descriptor_dim = 128;
    std::size_t action_dim = 8;
    std::size_t hidden = 64;
    std::size_t tcn_channels = 32;
    std::vector<std::size_t> dilations{1, 2, 4, 8};
    std::size_t kernel_width = 2;
    double beta_init = 0.1;
    double slope = 0.01;
};

inline std::size_t tcn_receptive_field(const std::vector<std::size_t>& dilations, std::size_t kernel_width) {
    if (dilations.empty()) throw ParameterError("tcn_receptive_field: no dilations");
    if (kernel_width < 1) throw ParameterError("tcn_receptive_field: kernel width must be at least 1");
    return 1 + (kernel_width - 1) * std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
}

struct TcnLayer {
    std::vector<Tensor> taps;  // kernel_width x (channels x channels); tap j reads x[t - j*d]
    Tensor bias;
};

struct RegressorParams {
    Tensor h_w1, h_b1, h_w2, h_b2;
    Tensor in_w, in_b;
    std::vector<TcnLayer> layers;
    Tensor out_w, out_b;
    Tensor rho;

    static RegressorParams init(const RegressorConfig& cfg, numcore::Rng& rng) {
        RegressorParams p;
        p.h_w1 = numcore::fan_in_uniform({cfg.hidden, cfg.descriptor_dim}, cfg.descriptor_dim, rng);
        p.h_b1 = Tensor::zeros({cfg.hidden});
        p.h_w2 = numcore::fan_in_uniform({cfg.action_dim, cfg.hidden}, cfg.hidden, rng);
        p.h_b2 = Tensor::zeros({cfg.action_dim});
        p.in_w = numcore::fan_in_uniform({cfg.tcn_channels, cfg.descriptor_dim}, cfg.descriptor_dim, rng);
        p.in_b = Tensor::zeros({cfg.tcn_channels});
        for (std::size_t l = 0; l < cfg.dilations.size(); ++l) {
            TcnLayer layer;
            for (std::size_t j = 0; j < cfg.kernel_width; ++j) {
                layer.taps.push_back(numcore::fan_in_uniform({cfg.tcn_channels, cfg.tcn_channels},
                                                             cfg.tcn_channels * cfg.kernel_width, rng));
            }
            layer.bias = Tensor::zeros({cfg.tcn_channels});
            p.layers.push_back(std::move(layer));
        }
        p.out_w = numcore::fan_in_uniform({cfg.action_dim, cfg.tcn_channels}, cfg.tcn_channels, rng);
        p.out_b = Tensor::zeros({cfg.action_dim});
        p.rho = Tensor::scalar(inverse_softplus(cfg.beta_init));
        return p;
    }

    void register_params(numcore::ParamRegistry& reg, const std::string& prefix) {
        reg.add(prefix + "base.w1", &h_w1);
        reg.add(prefix + "base.b1", &h_b1);
        reg.add(prefix + "base.w2", &h_w2);
        reg.add(prefix + "base.b2", &h_b2);
        reg.add(prefix + "tcn.in.weight", &in_w);
        reg.add(prefix + "tcn.in.bias", &in_b);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string lp = prefix + "tcn.layer" + std::to_string(l);
            for (std::size_t j = 0; j < layers[l].taps.size(); ++j) reg.add(lp + ".tap" + std::to_string(j), &layers[l].taps[j]);
            reg.add(lp + ".bias", &layers[l].bias);
        }
        reg.add(prefix + "tcn.out.weight", &out_w);
        reg.add(prefix + "tcn.out.bias", &out_b);
        reg.add(prefix + "rho", &rho);
    }

    double beta() const { return numcore::softplus_value(rho[0]); }
};

/// h(z): two affine layers with a leaky ReLU between them.
inline Var base_head(Var z, const RegressorParams& p, const RegressorConfig& cfg) {
    numcore::Tape& tape = *z.tape;
    Var hidden = numcore::leaky_relu(numcore::linear(z, tape.param(p.h_w1), tape.param(p.h_b1)), cfg.slope);
    return numcore::linear(hidden, tape.param(p.h_w2), tape.param(p.h_b2));
}

/// Causal dilated TCN over the history; returns the output at the newest step.
inline Var tcn(const std::vector<Var>& history, const RegressorParams& p, const RegressorConfig& cfg) {
    numcore::Tape& tape = *history.front().tape;
    std::vector<Var> x;
    x.reserve(history.size());
    for (const Var& z : history) x.push_back(numcore::linear(z, tape.param(p.in_w), tape.param(p.in_b)));
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const std::size_t d = cfg.dilations.at(l);
        const TcnLayer& layer = p.layers[l];
        std::vector<Var> next;
        next.reserve(x.size());
        for (std::size_t t = 0; t < x.size(); ++t) {
            Var acc{};
            for (std::size_t j = 0; j < layer.taps.size(); ++j) {
                if (j * d > t) break;  // reads before the window start are zero
                const bool last = acc.valid();
                Var term = numcore::linear(x[t - j * d], tape.param(layer.taps[j]),
                                           last ? std::nullopt : std::optional<Var>(tape.param(layer.bias)));
                acc = last ? numcore::add(acc, term) : term;
            }
            next.push_back(numcore::add(x[t], numcore::leaky_relu(acc, cfg.slope)));
        }
        x = std::move(next);
    }
    return numcore::linear(x.back(), tape.param(p.out_w), tape.param(p.out_b));
}

inline void require_history(const std::vector<Var>& history, const RegressorConfig& cfg) {
    if (history.empty()) throw ShapeError("temporal_regress: empty history");
    for (const Var& z : history) {
        if (z.value().rank() != 1 || z.value().size() != cfg.descriptor_dim) {
            throw ShapeError("temporal_regress: descriptor " + numcore::shape_str(z.shape()) + " expected length " +
                             std::to_string(cfg.descriptor_dim));
        }
    }
}

/// Same as temporal_regress with an explicit residual scale.
inline Var temporal_regress_with_beta(const std::vector<Var>& history, const RegressorParams& p,
                                      const RegressorConfig& cfg, Var beta) {
    require_history(history, cfg);
    return numcore::add(base_head(history.back(), p, cfg), numcore::mul_scalar(tcn(history, p, cfg), beta));
}

/// â_t = h(z_t) + beta * tcn(z_{t-K+1..t}). The history is ordered oldest
/// first and already left-padded; with use_tcn false only h(z_t) is returned.
inline Var temporal_regress(const std::vector<Var>& history, const RegressorParams& p, const RegressorConfig& cfg,
                            bool use_tcn = true) {
    require_history(history, cfg);
    Var base = base_head(history.back(), p, cfg);
    if (!use_tcn) return base;
    Var beta = numcore::softplus(history.back().tape->param(p.rho));
    return numcore::add(base, numcore::mul_scalar(tcn(history, p, cfg), beta));
}

}  // namespace stableidm::tdr
