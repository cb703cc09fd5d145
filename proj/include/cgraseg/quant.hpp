#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cgraseg/errors.hpp"
#include "cgraseg/shape.hpp"

// Affine 8-bit quantization with 16-bit biases and 32-bit accumulators.
//
// A real value v and its integer code q are related by v = (q - zero_point) *
// scale. Quantization is per-tensor and signed; rounding is round-half-to-even
// everywhere so rounding bias cannot accumulate across millions of pixels.
// Accumulator rescaling to the 8-bit output grid goes through an integer
// multiplier and right shift, which is all the modeled datapath can do.

namespace cgraseg {

// Round-half-to-even. Relies on the default FE_TONEAREST environment.
inline double round_half_even(double v) { return std::nearbyint(v); }

struct QuantParams {
    double scale = 1.0;
    std::int32_t zero_point = 0;
    int bits = 8; // 8 activations/weights, 16 bias, 32 accumulators

    std::int64_t qmin() const { return -(std::int64_t(1) << (bits - 1)); }
    std::int64_t qmax() const { return (std::int64_t(1) << (bits - 1)) - 1; }

    bool operator==(const QuantParams&) const = default;

    void validate() const {
        if (!(scale > 0) || !std::isfinite(scale)) {
            throw QuantError("quantization scale must be positive and finite");
        }
        if (bits != 8 && bits != 16 && bits != 32) {
            throw QuantError("bit width must be one of 8/16/32");
        }
        if (zero_point < -128 || zero_point > 127) {
            throw QuantError("zero_point must lie in [-128, 127]");
        }
    }
};

// Integer tensor with affine parameters. Rank-generic: activations use dims
// {h, w, c} in row-major HWC order; convolution weights use
// {k_h, k_w, c_in_per_group, c_out} and dense weights {in, out}. Elements are
// held as int32 regardless of bit width; the width bounds their range.
struct QTensor {
    std::vector<std::uint32_t> dims;
    QuantParams params;
    std::vector<std::int32_t> data;

    std::uint64_t element_count() const {
        std::uint64_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    static QTensor activation(TensorShape shape, QuantParams params) {
        require_valid(shape, "activation tensor");
        params.validate();
        QTensor t;
        t.dims = {shape.height, shape.width, shape.channels};
        t.params = params;
        t.data.assign(shape.elements(), params.zero_point);
        return t;
    }

    bool is_activation() const { return dims.size() == 3; }
    std::uint32_t h() const { return dims.at(0); }
    std::uint32_t w() const { return dims.at(1); }
    std::uint32_t c() const { return dims.at(2); }

    TensorShape shape() const {
        if (!is_activation()) throw KernelError("tensor is not rank-3 (h, w, c)");
        return TensorShape{dims[0], dims[1], dims[2]};
    }

    std::size_t offset(std::uint32_t y, std::uint32_t x, std::uint32_t ch) const {
        return (static_cast<std::size_t>(y) * dims[1] + x) * dims[2] + ch;
    }
    std::int32_t at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) const {
        return data[offset(y, x, ch)];
    }
    std::int32_t& at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) {
        return data[offset(y, x, ch)];
    }

    void validate() const {
        params.validate();
        if (data.size() != element_count()) {
            throw QuantError("element count does not match dims");
        }
        for (std::int32_t v : data) {
            if (v < params.qmin() || v > params.qmax()) {
                throw QuantError("element " + std::to_string(v) + " outside " +
                                 std::to_string(params.bits) + "-bit range");
            }
        }
    }
};

// Chooses affine parameters covering [min, max]. scale = (max-min)/(2^bits-1);
// the zero point is picked so real 0 maps to an exactly representable integer.
// The degenerate range max == min yields scale 1, zero_point 0.
inline QuantParams calibrate_affine(double min, double max, int bits = 8) {
    if (!std::isfinite(min) || !std::isfinite(max)) {
        throw QuantError("calibration range must be finite");
    }
    if (min > max) throw QuantError("calibration requires min <= max");
    QuantParams p;
    p.bits = bits;
    if (!(max > min)) {
        p.scale = 1.0;
        p.zero_point = 0;
        p.validate();
        return p;
    }
    p.scale = (max - min) / static_cast<double>((std::uint64_t(1) << bits) - 1);
    const double zp = round_half_even(static_cast<double>(p.qmin()) - min / p.scale);
    const double lo = -128.0, hi = 127.0;
    p.zero_point = static_cast<std::int32_t>(std::min(hi, std::max(lo, zp)));
    p.validate();
    return p;
}

inline std::int32_t quantize_value(double v, const QuantParams& p) {
    if (std::isnan(v)) return p.zero_point;
    const double q = round_half_even(v / p.scale) + p.zero_point;
    const double lo = static_cast<double>(p.qmin());
    const double hi = static_cast<double>(p.qmax());
    return static_cast<std::int32_t>(std::min(hi, std::max(lo, q)));
}

inline double dequantize_value(std::int32_t q, const QuantParams& p) {
    return (q - p.zero_point) * p.scale;
}

// q = clamp(round_half_even(v/scale) + zero_point). Out-of-range saturates.
inline QTensor quantize_tensor(std::span<const double> values,
                               std::vector<std::uint32_t> dims, QuantParams params) {
    params.validate();
    QTensor t;
    t.dims = std::move(dims);
    t.params = params;
    if (t.element_count() != values.size()) {
        throw QuantError("value count does not match dims");
    }
    t.data.reserve(values.size());
    for (double v : values) t.data.push_back(quantize_value(v, params));
    return t;
}

inline std::vector<double> dequantize_tensor(const QTensor& t) {
    std::vector<double> out;
    out.reserve(t.data.size());
    for (std::int32_t q : t.data) out.push_back(dequantize_value(q, t.params));
    return out;
}

// quantize-then-dequantize in real arithmetic; idempotent by construction.
inline std::vector<double> fake_quant(std::span<const double> values,
                                      const QuantParams& params) {
    params.validate();
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) {
        out.push_back(dequantize_value(quantize_value(v, params), params));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Requantizer: integer multiplier + right shift approximating
// scale_in*scale_w/scale_out within 2^-15 relative error.
// ---------------------------------------------------------------------------

struct Requantizer {
    std::int64_t multiplier = 1;
    int right_shift = 0;

    static constexpr double kMaxRelError = 1.0 / 32768.0; // 2^-15

    // Builds the fixed-point approximation of a positive ratio. A 17-bit
    // mantissa leaves the error comfortably inside the contract while keeping
    // acc*multiplier within 64 bits for any 32-bit accumulator.
    static Requantizer from_ratio(double ratio) {
        if (!(ratio > 0) || !std::isfinite(ratio)) {
            throw QuantError("requantizer ratio must be positive and finite");
        }
        int exp = 0;
        const double frac = std::frexp(ratio, &exp); // ratio = frac * 2^exp, frac in [0.5, 1)
        std::int64_t mult = std::llround(frac * (std::int64_t(1) << 17));
        int shift = 17 - exp;
        if (shift < 0) {
            // Keep multiplier <= 2^32 so acc*multiplier fits in 64 bits.
            if (-shift > 15) throw QuantError("requantizer ratio too large");
            mult <<= -shift;
            shift = 0;
        }
        while (shift > 62) {
            mult >>= 1;
            --shift;
        }
        Requantizer r{mult, shift};
        const double approx = static_cast<double>(mult) / std::ldexp(1.0, shift);
        if (mult < 1 || std::abs(approx - ratio) / ratio > kMaxRelError) {
            throw QuantError("requantizer cannot represent ratio within 2^-15");
        }
        return r;
    }

    // clamp(round_half_even(acc*multiplier / 2^shift) + out_zp, range(bits)).
    // The intermediate product stays in 64 bits.
    std::int32_t apply(std::int64_t acc, std::int32_t out_zp, int out_bits = 8) const {
        std::int64_t p = acc * multiplier;
        std::int64_t q;
        if (right_shift == 0) {
            q = p;
        } else {
            q = p >> right_shift; // arithmetic shift: floor division
            const std::int64_t rem = p - (q << right_shift);
            const std::int64_t half = std::int64_t(1) << (right_shift - 1);
            if (rem > half || (rem == half && (q & 1))) ++q;
        }
        q += out_zp;
        const std::int64_t lo = -(std::int64_t(1) << (out_bits - 1));
        const std::int64_t hi = (std::int64_t(1) << (out_bits - 1)) - 1;
        return static_cast<std::int32_t>(std::min(hi, std::max(lo, q)));
    }
};

inline std::int32_t requantize(std::int32_t acc, const Requantizer& r, std::int32_t out_zp,
                               int out_bits = 8) {
    return r.apply(acc, out_zp, out_bits);
}

} // namespace cgraseg
