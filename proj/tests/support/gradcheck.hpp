#pragma once

// Central finite-difference gradient checks over borrowed tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/ops.hpp"

namespace testing_support {

using stableidm::numcore::Rng;
using stableidm::numcore::Tape;
using stableidm::numcore::Tensor;
using stableidm::numcore::Var;

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;

/// Builds the quantity under test. Differentiable inputs must be bound with
/// tape.param() so the check can perturb them in place.
using Builder = std::function<Var(Tape&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::string worst;
};

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

/// Scalarizes the output with a fixed random projection, then compares the
/// analytic gradient with central differences on up to max_coords entries of
/// each target.
inline GradCheckReport gradcheck(const std::vector<Tensor*>& targets, const Builder& build, Rng& rng,
                                 std::size_t max_coords = 24) {
    Tensor projection;
    auto scalar_value = [&](Tape& tape) {
        Var out = build(tape);
        if (projection.empty()) projection = stableidm::numcore::uniform(out.value().shape(), -1.0, 1.0, rng);
        return stableidm::numcore::dot_const(out, projection);
    };

    Tape tape;
    const Var loss = scalar_value(tape);
    tape.backward(loss);
    std::vector<Tensor> analytic;
    for (Tensor* t : targets) analytic.push_back(tape.grad(tape.param(*t)));

    auto evaluate = [&]() {
        Tape probe;
        return scalar_value(probe).value()[0];
    };

    GradCheckReport report;
    for (std::size_t k = 0; k < targets.size(); ++k) {
        Tensor& t = *targets[k];
        std::vector<std::size_t> idx(t.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(idx.size(), max_coords));
        for (std::size_t i : idx) {
            const double saved = t[i];
            t[i] = saved + kFdStep;
            const double fp = evaluate();
            t[i] = saved - kFdStep;
            const double fm = evaluate();
            t[i] = saved;
            const double numeric = (fp - fm) / (2.0 * kFdStep);
            const double rel = relative_error(analytic[k][i], numeric);
            ++report.coords_checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = "target " + std::to_string(k) + " index " + std::to_string(i) + ": analytic " +
                               std::to_string(analytic[k][i]) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return report;
}

}  // namespace testing_support
