#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stableidm/errors.hpp"
#include "stableidm/imaging.hpp"
#include "stableidm/numcore/init.hpp"
#include "stableidm/numcore/tensor.hpp"

namespace stableidm::masking {

enum class MaskSource { ground_truth, external, degraded };

struct RobotMask {
    MaskGrid grid;
    MaskSource source = MaskSource::ground_truth;

    void validate() const {
        if (grid.bits.size() != grid.height * grid.width) throw ShapeError("RobotMask: grid size mismatch");
        for (auto b : grid.bits) {
            if (b > 1) throw ParameterError("RobotMask: values must be 0 or 1");
        }
    }
};

inline void require_same_extents(const Image& frame, const MaskGrid& mask) {
    if (frame.height != mask.height || frame.width != mask.width) {
        throw ShapeError("mask extents " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " do not match frame " + std::to_string(frame.height) + "x" + std::to_string(frame.width));
    }
}

/// Pixel-wise product; background pixels become zero.
inline Image apply_mask(const Image& frame, const RobotMask& mask) {
    mask.validate();
    require_same_extents(frame, mask.grid);
    Image out = frame;
    const std::size_t hw = frame.height * frame.width;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < hw; ++i) out.rgb[c * hw + i] = static_cast<std::uint8_t>(out.rgb[c * hw + i] * mask.grid.bits[i]);
    }
    return out;
}

/// Same product on a 3 x H x W real tensor.
inline numcore::Tensor apply_mask(const numcore::Tensor& frame, const MaskGrid& mask) {
    if (frame.rank() != 3 || frame.dim(1) != mask.height || frame.dim(2) != mask.width) {
        throw ShapeError("apply_mask: frame " + numcore::shape_str(frame.shape()) + " does not match mask " +
                         std::to_string(mask.height) + "x" + std::to_string(mask.width));
    }
    numcore::Tensor out = frame;
    const std::size_t hw = mask.height * mask.width;
    for (std::size_t c = 0; c < frame.dim(0); ++c) {
        for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] *= static_cast<double>(mask.bits[i]);
    }
    return out;
}

/// Area-weighted pooling of a binary mask onto an H x W grid: each cell holds
/// the fraction of its area covered by mask-on pixels.
inline numcore::Tensor downsample_mask(const MaskGrid& mask, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ParameterError("downsample_mask: target extents must be positive");
    if (mask.height == 0 || mask.width == 0) throw ParameterError("downsample_mask: empty mask");
    const double ch = static_cast<double>(mask.height) / static_cast<double>(height);
    const double cw = static_cast<double>(mask.width) / static_cast<double>(width);
    numcore::Tensor out({height, width});
    // Per-axis overlap of pixel p with cell i: |[p, p+1) ∩ [i*c, (i+1)*c)|.
    auto overlaps = [](std::size_t cells, std::size_t pixels, double c) {
        std::vector<std::vector<std::pair<std::size_t, double>>> ov(cells);
        for (std::size_t i = 0; i < cells; ++i) {
            const double lo = static_cast<double>(i) * c, hi = static_cast<double>(i + 1) * c;
            const auto p0 = static_cast<std::size_t>(std::floor(lo));
            const auto p1 = std::min(pixels, static_cast<std::size_t>(std::ceil(hi)));
            for (std::size_t p = p0; p < p1; ++p) {
                const double w = std::min(hi, static_cast<double>(p + 1)) - std::max(lo, static_cast<double>(p));
                if (w > 0.0) ov[i].emplace_back(p, w);
            }
        }
        return ov;
    };
    const auto oy = overlaps(height, mask.height, ch);
    const auto ox = overlaps(width, mask.width, cw);
    const double area = ch * cw;
    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            double acc = 0.0;
            for (const auto& [py, wy] : oy[i]) {
                for (const auto& [px, wx] : ox[j]) acc += wy * wx * mask.at(py, px);
            }
            out[i * width + j] = acc / area;
        }
    }
    return out;
}

inline numcore::Tensor downsample_mask(const RobotMask& mask, std::size_t height, std::size_t width) {
    mask.validate();
    return downsample_mask(mask.grid, height, width);
}

struct DegradeOptions {
    // Budget at severity 1; both failure modes scale linearly with severity.
    double erosion_radius = 2.0;
    double hole_radius_min = 4.0;
    double hole_radius_max = 14.0;
    double blob_count = 4.0;
    double blob_radius_min = 3.0;
    double blob_radius_max = 8.0;
};

namespace detail {

inline MaskGrid erode(const MaskGrid& m, int radius) {
    if (radius <= 0) return m;
    MaskGrid out(m.height, m.width, 0);
    const int H = static_cast<int>(m.height), W = static_cast<int>(m.width);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!m.at(y, x)) continue;
            bool keep = true;
            for (int dy = -radius; dy <= radius && keep; ++dy) {
                for (int dx = -radius; dx <= radius && keep; ++dx) {
                    if (dx * dx + dy * dy > radius * radius) continue;
                    const int yy = y + dy, xx = x + dx;
                    // Outside the frame counts as background.
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W || !m.at(yy, xx)) keep = false;
                }
            }
            out.at(y, x) = keep ? 1 : 0;
        }
    }
    return out;
}

inline void paint_disk(MaskGrid& m, double cx, double cy, double r, std::uint8_t value) {
    const int H = static_cast<int>(m.height), W = static_cast<int>(m.width);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r))), y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r))), x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= r * r) m.at(y, x) = value;
        }
    }
}

}  // namespace detail

/// Simulated segmentation failure. With probability `severity` the manipulator
/// is eroded and loses a disk-shaped region; independently, with probability
/// `severity`, background blobs leak into the mask. Severity 0 is the identity.
inline RobotMask degrade_mask(const RobotMask& mask, double severity, std::uint64_t seed,
                              const DegradeOptions& opts = {}) {
    if (!(severity >= 0.0 && severity <= 1.0)) {
        throw ParameterError("degrade_mask: severity must lie in [0, 1], got " + std::to_string(severity));
    }
    mask.validate();
    if (severity == 0.0) return mask;
    numcore::Rng rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    RobotMask out{mask.grid, MaskSource::degraded};
    MaskGrid& g = out.grid;

    const bool remove = u01(rng) < severity;
    const bool leak = u01(rng) < severity;
    if (remove) {
        g = detail::erode(g, static_cast<int>(std::ceil(opts.erosion_radius * severity)));
        std::vector<std::size_t> on;
        for (std::size_t i = 0; i < g.bits.size(); ++i) {
            if (g.bits[i]) on.push_back(i);
        }
        if (!on.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, on.size() - 1);
            const std::size_t c = on[pick(rng)];
            const double r = opts.hole_radius_min + (opts.hole_radius_max - opts.hole_radius_min) * severity * u01(rng);
            detail::paint_disk(g, static_cast<double>(c % g.width) + 0.5, static_cast<double>(c / g.width) + 0.5, r, 0);
        }
    }
    if (leak) {
        const auto n = static_cast<std::size_t>(std::max(1.0, std::round(opts.blob_count * severity)));
        std::uniform_real_distribution<double> ux(0.0, static_cast<double>(g.width)), uy(0.0, static_cast<double>(g.height));
        for (std::size_t i = 0; i < n; ++i) {
            const double r = opts.blob_radius_min + (opts.blob_radius_max - opts.blob_radius_min) * severity * u01(rng);
            detail::paint_disk(g, ux(rng), uy(rng), r, 1);
        }
    }
    return out;
}

inline double mask_iou(const MaskGrid& a, const MaskGrid& b) {
    if (a.bits.size() != b.bits.size()) throw ShapeError("mask_iou: extent mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Integer shift with zero fill, used for view perturbations (dx > 0 moves content right).
inline MaskGrid shift(const MaskGrid& m, int dx, int dy) {
    MaskGrid out(m.height, m.width, 0);
    const int H = static_cast<int>(m.height), W = static_cast<int>(m.width);
    for (int y = 0; y < H; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= H) continue;
        for (int x = 0; x < W; ++x) {
            const int sx = x - dx;
            if (sx >= 0 && sx < W) out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

inline Image shift(const Image& img, int dx, int dy) {
    Image out(img.height, img.width);
    const int H = static_cast<int>(img.height), W = static_cast<int>(img.width);
    for (std::size_t c = 0; c < 3; ++c) {
        for (int y = 0; y < H; ++y) {
            const int sy = y - dy;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < W; ++x) {
                const int sx = x - dx;
                if (sx >= 0 && sx < W) out.at(c, y, x) = img.at(c, sy, sx);
            }
        }
    }
    return out;
}

}  // namespace stableidm::masking
