#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stableidm/errors.hpp"

namespace stableidm::pipeline {

inline constexpr double kSigmaFloor = 1e-6;

/// Per-dimension action statistics of the training split.
struct NormStats {
    std::vector<double> mu;
    std::vector<double> sigma;

    std::size_t dim() const noexcept { return mu.size(); }

    /// Population mean and standard deviation, sigma floored.
    static NormStats fit(const std::vector<std::vector<double>>& actions) {
        if (actions.empty()) throw ParameterError("fit_norm_stats: empty action set");
        if (actions.size() < 2) throw ParameterError("fit_norm_stats: at least two actions are required");
        const std::size_t D = actions.front().size();
        if (D == 0) throw ParameterError("fit_norm_stats: zero-dimensional actions");
        NormStats s{std::vector<double>(D, 0.0), std::vector<double>(D, 0.0)};
        for (const auto& a : actions) {
            if (a.size() != D) throw ShapeError("fit_norm_stats: inconsistent action dimension");
            for (std::size_t d = 0; d < D; ++d) s.mu[d] += a[d];
        }
        const double n = static_cast<double>(actions.size());
        for (auto& m : s.mu) m /= n;
        for (const auto& a : actions) {
            for (std::size_t d = 0; d < D; ++d) s.sigma[d] += (a[d] - s.mu[d]) * (a[d] - s.mu[d]);
        }
        for (auto& v : s.sigma) v = std::max(std::sqrt(v / n), kSigmaFloor);
        return s;
    }

    void require_dim(std::size_t n, const char* op) const {
        if (n != mu.size()) {
            throw ShapeError(std::string(op) + ": action has " + std::to_string(n) + " dims, stats have " +
                             std::to_string(mu.size()));
        }
    }

    std::vector<double> normalize(const std::vector<double>& a) const {
        require_dim(a.size(), "normalize_action");
        std::vector<double> out(a.size());
        for (std::size_t d = 0; d < a.size(); ++d) out[d] = (a[d] - mu[d]) / sigma[d];
        return out;
    }

    std::vector<double> denormalize(const std::vector<double>& a) const {
        require_dim(a.size(), "denormalize_action");
        std::vector<double> out(a.size());
        for (std::size_t d = 0; d < a.size(); ++d) out[d] = mu[d] + sigma[d] * a[d];
        return out;
    }

    bool operator==(const NormStats&) const = default;
};

}  // namespace stableidm::pipeline
