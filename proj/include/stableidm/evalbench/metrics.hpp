#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "stableidm/errors.hpp"
#include "stableidm/synth/world.hpp"

namespace stableidm::evalbench {

/// Per-dimension success thresholds in raw action units.
struct ThresholdSpec {
    std::vector<double> thresholds;

    static ThresholdSpec from_kinds(const std::vector<synth::DimKind>& kinds, double rotation = 0.1, double gripper = 0.5) {
        ThresholdSpec s;
        for (auto k : kinds) s.thresholds.push_back(k == synth::DimKind::rotation ? rotation : gripper);
        s.validate();
        return s;
    }

    void validate() const {
        if (thresholds.empty()) throw ParameterError("ThresholdSpec: no dimensions");
        for (double t : thresholds) {
            if (!(t > 0.0)) throw ParameterError("ThresholdSpec: thresholds must be positive");
        }
    }

    std::size_t dim() const noexcept { return thresholds.size(); }
};

namespace detail {
inline void require_dims(const std::vector<double>& pred, const std::vector<double>& gt, const char* op) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw ShapeError(std::string(op) + ": prediction has " + std::to_string(pred.size()) +
                         " dims, ground truth has " + std::to_string(gt.size()));
    }
}
inline void require_dims(const std::vector<double>& pred, const std::vector<double>& gt, const ThresholdSpec& spec,
                         const char* op) {
    require_dims(pred, gt, op);
    if (spec.dim() != pred.size()) {
        throw ShapeError(std::string(op) + ": threshold spec has " + std::to_string(spec.dim()) + " dims, actions have " +
                         std::to_string(pred.size()));
    }
}
}  // namespace detail

/// 1 iff every |pred_i - gt_i| <= threshold_i.
inline int strict_acc(const std::vector<double>& pred, const std::vector<double>& gt, const ThresholdSpec& spec) {
    detail::require_dims(pred, gt, spec, "strict_acc");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!(std::abs(pred[i] - gt[i]) <= spec.thresholds[i])) return 0;
    }
    return 1;
}

inline double acc_per_dim(const std::vector<double>& pred, const std::vector<double>& gt, const ThresholdSpec& spec) {
    detail::require_dims(pred, gt, spec, "acc_per_dim");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += std::abs(pred[i] - gt[i]) <= spec.thresholds[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline double l1_distance(const std::vector<double>& pred, const std::vector<double>& gt) {
    detail::require_dims(pred, gt, "l1_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
    return s / static_cast<double>(pred.size());
}

enum class Split { light, heavy };

inline const char* to_string(Split s) { return s == Split::light ? "light" : "heavy"; }

struct SplitRule {
    double threshold = 0.15;

    void validate() const {
        if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("SplitRule: threshold must lie in (0, 1)");
    }

    /// Ties go to light.
    Split classify(double occupancy) const { return occupancy >= threshold ? Split::light : Split::heavy; }
};

struct Partition {
    std::vector<std::size_t> light;
    std::vector<std::size_t> heavy;
};

/// Indices of samples by truncation level. A missing (or NaN) occupancy is a data error.
inline Partition split_by_truncation(const std::vector<std::optional<double>>& occupancy, const SplitRule& rule) {
    rule.validate();
    Partition p;
    for (std::size_t i = 0; i < occupancy.size(); ++i) {
        if (!occupancy[i] || std::isnan(*occupancy[i])) {
            throw DataError("split_by_truncation: sample " + std::to_string(i) + " has no occupancy");
        }
        (rule.classify(*occupancy[i]) == Split::light ? p.light : p.heavy).push_back(i);
    }
    return p;
}

inline Partition split_by_truncation(const std::vector<double>& occupancy, const SplitRule& rule) {
    std::vector<std::optional<double>> o(occupancy.begin(), occupancy.end());
    return split_by_truncation(o, rule);
}

/// One row of a results table.
struct MetricReport {
    std::string variant;
    std::string split;
    double acc = 0.0;
    double acc_per_dim = 0.0;
    double l1 = 0.0;
    std::size_t n = 0;

    bool operator==(const MetricReport&) const = default;
};

/// Running sums in sample order; an empty accumulator reports zeros with n = 0.
class MetricAccumulator {
public:
    explicit MetricAccumulator(ThresholdSpec spec) : spec_(std::move(spec)) {}

    void add(const std::vector<double>& pred, const std::vector<double>& gt) {
        acc_ += strict_acc(pred, gt, spec_);
        per_dim_ += acc_per_dim(pred, gt, spec_);
        l1_ += l1_distance(pred, gt);
        ++n_;
    }

    MetricReport report(std::string variant, std::string split) const {
        MetricReport r{std::move(variant), std::move(split), 0.0, 0.0, 0.0, n_};
        if (n_ > 0) {
            const double n = static_cast<double>(n_);
            r.acc = acc_ / n;
            r.acc_per_dim = per_dim_ / n;
            r.l1 = l1_ / n;
        }
        return r;
    }

    std::size_t count() const noexcept { return n_; }

private:
    ThresholdSpec spec_;
    double acc_ = 0.0, per_dim_ = 0.0, l1_ = 0.0;
    std::size_t n_ = 0;
};

}  // namespace stableidm::evalbench
