#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stableidm/numcore/tensor.hpp"

namespace stableidm {

/// 8-bit RGB image, planar 3 x H x W.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(std::size_t h, std::size_t w) : height(h), width(w), rgb(3 * h * w, 0) {}

    std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return rgb[(c * height + y) * width + x]; }
    std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return rgb[(c * height + y) * width + x]; }

    bool operator==(const Image&) const = default;
};

/// Binary grid, values in {0, 1}, row-major H x W.
struct MaskGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;

    MaskGrid() = default;
    MaskGrid(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }

    bool operator==(const MaskGrid&) const = default;
};

/// u8 image -> 3 x H x W tensor scaled to [0, 1].
inline numcore::Tensor image_to_tensor(const Image& img) {
    numcore::Tensor t({3, img.height, img.width});
    for (std::size_t i = 0; i < img.rgb.size(); ++i) t[i] = static_cast<double>(img.rgb[i]) / 255.0;
    return t;
}

}  // namespace stableidm
