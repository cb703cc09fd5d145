#pragma once

#include <cstdint>
#include <string>

#include "cgraseg/errors.hpp"

namespace cgraseg {

// Spatial extent plus channel count of one activation tensor.
struct TensorShape {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;

    constexpr bool operator==(const TensorShape&) const = default;

    std::uint64_t elements() const {
        return static_cast<std::uint64_t>(height) * width * channels;
    }

    bool valid() const { return height >= 1 && width >= 1 && channels >= 1; }

    std::string str() const {
        return std::to_string(height) + "x" + std::to_string(width) + "x" +
               std::to_string(channels);
    }
};

inline void require_valid(const TensorShape& s, const std::string& what) {
    if (!s.valid()) {
        throw ShapeError(what + ": all shape fields must be >= 1, got " + s.str());
    }
}

// Ceiling division used by "same"-padded strided geometry and PE-pass counts.
constexpr std::uint64_t ceil_div(std::uint64_t num, std::uint64_t den) {
    return (num + den - 1) / den;
}

} // namespace cgraseg
