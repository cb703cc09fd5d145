#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cgraseg/errors.hpp"
#include "cgraseg/graph.hpp"
#include "cgraseg/quant.hpp"

// Reference integer implementations of every layer kind the network uses.
//
// Convolution and dense layers accumulate (x - zp_x)*(w - zp_w) in 32-bit
// integers (simulated with an overflow check on every partial sum - a sum
// leaving the signed 32-bit range raises AccumulatorOverflowError rather than
// wrapping), add the 16-bit bias, then requantize to 8 bits through an
// integer multiplier + right shift. Elementwise ops go through
// dequantize -> real op -> requantize, which is the binding 1-LSB contract
// either way. Zero padding contributes real 0, i.e. (zp_x - zp_x) terms.

namespace cgraseg {

namespace detail {

struct SamePad {
    std::uint32_t out = 0;
    std::int64_t begin = 0; // padding before the first element
};

// TF-style "same" padding: out = ceil(in/stride), pad split with the smaller
// half in front.
inline SamePad same_pad(std::uint32_t in, std::uint32_t stride, std::uint32_t extent) {
    SamePad p;
    p.out = static_cast<std::uint32_t>(ceil_div(in, stride));
    const std::int64_t total =
        std::max<std::int64_t>(0, static_cast<std::int64_t>(p.out - 1) * stride + extent - in);
    p.begin = total / 2;
    return p;
}

inline void check_acc32(std::int64_t acc, const char* what) {
    if (acc < INT32_MIN || acc > INT32_MAX) {
        throw AccumulatorOverflowError(std::string(what) +
                                       ": 32-bit accumulator overflow detected");
    }
}

inline void require_bits(const QTensor& t, int bits, const char* what) {
    if (t.params.bits != bits) {
        throw KernelError(std::string(what) + ": expected " + std::to_string(bits) +
                          "-bit tensor, got " + std::to_string(t.params.bits));
    }
}

} // namespace detail

// Weight layout for conv2d_q: dims {k_h, k_w, c_in/groups, c_out}, index
// ((ky*k_w + kx)*cpg + ic)*c_out + oc.
inline QTensor conv2d_q(const QTensor& input, const QTensor& weights,
                        std::span<const std::int32_t> bias, const Conv2D& spec,
                        const QuantParams& out_params) {
    detail::require_bits(input, 8, "conv2d_q input");
    detail::require_bits(weights, 8, "conv2d_q weights");
    const TensorShape in = input.shape();
    if (spec.groups < 1 || in.channels % spec.groups != 0 ||
        spec.out_channels % spec.groups != 0) {
        throw ShapeError("conv2d_q: groups must divide input and output channels");
    }
    const std::uint32_t cpg = in.channels / spec.groups;
    const std::uint32_t ocg = spec.out_channels / spec.groups;
    if (weights.dims != std::vector<std::uint32_t>{spec.kernel_h, spec.kernel_w, cpg,
                                                   spec.out_channels}) {
        throw ShapeError("conv2d_q: weight dims do not match kernel/groups/out_channels");
    }
    if (bias.size() != spec.out_channels) {
        throw ShapeError("conv2d_q: bias length must equal out_channels");
    }
    for (std::int32_t b : bias) {
        if (b < -32768 || b > 32767) throw KernelError("conv2d_q: bias outside 16-bit range");
    }

    const auto pad_h = detail::same_pad(in.height, spec.stride, spec.effective_extent_h());
    const auto pad_w = detail::same_pad(in.width, spec.stride, spec.effective_extent_w());
    QTensor out = QTensor::activation({pad_h.out, pad_w.out, spec.out_channels}, out_params);

    const Requantizer rq = Requantizer::from_ratio(
        input.params.scale * weights.params.scale / out_params.scale);
    const std::int32_t zp_x = input.params.zero_point;
    const std::int32_t zp_w = weights.params.zero_point;

    for (std::uint32_t oy = 0; oy < pad_h.out; ++oy) {
        for (std::uint32_t ox = 0; ox < pad_w.out; ++ox) {
            for (std::uint32_t oc = 0; oc < spec.out_channels; ++oc) {
                const std::uint32_t g = oc / ocg;
                std::int64_t acc = bias[oc];
                for (std::uint32_t ky = 0; ky < spec.kernel_h; ++ky) {
                    const std::int64_t iy =
                        static_cast<std::int64_t>(oy) * spec.stride + ky * spec.dilation -
                        pad_h.begin;
                    if (iy < 0 || iy >= in.height) continue; // zero padding: real 0
                    for (std::uint32_t kx = 0; kx < spec.kernel_w; ++kx) {
                        const std::int64_t ix =
                            static_cast<std::int64_t>(ox) * spec.stride + kx * spec.dilation -
                            pad_w.begin;
                        if (ix < 0 || ix >= in.width) continue;
                        for (std::uint32_t icg = 0; icg < cpg; ++icg) {
                            const std::uint32_t ic = g * cpg + icg;
                            const std::int32_t x =
                                input.at(static_cast<std::uint32_t>(iy),
                                         static_cast<std::uint32_t>(ix), ic);
                            const std::int32_t w =
                                weights.data[((static_cast<std::size_t>(ky) * spec.kernel_w +
                                               kx) * cpg + icg) * spec.out_channels + oc];
                            acc += static_cast<std::int64_t>(x - zp_x) * (w - zp_w);
                            detail::check_acc32(acc, "conv2d_q");
                        }
                    }
                }
                out.at(oy, ox, oc) = rq.apply(acc, out_params.zero_point, out_params.bits);
            }
        }
    }
    return out;
}

// Max pooling is exact in the integer domain; average pooling sums in 32 bits
// and divides by the count of in-bounds window elements with round-half-even.
inline QTensor pool_q(const QTensor& input, PoolOp op, std::uint32_t window,
                      std::uint32_t stride) {
    const TensorShape in = input.shape();
    if (window < 1 || stride < 1) throw ShapeError("pool_q: window/stride must be >= 1");
    if (window > in.height || window > in.width) {
        throw ShapeError("pool_q: window exceeds spatial dims");
    }
    const auto pad_h = detail::same_pad(in.height, stride, window);
    const auto pad_w = detail::same_pad(in.width, stride, window);
    QTensor out = QTensor::activation({pad_h.out, pad_w.out, in.channels}, input.params);

    for (std::uint32_t oy = 0; oy < pad_h.out; ++oy) {
        for (std::uint32_t ox = 0; ox < pad_w.out; ++ox) {
            for (std::uint32_t ch = 0; ch < in.channels; ++ch) {
                std::int64_t sum = 0;
                std::int32_t best = INT32_MIN;
                std::uint32_t count = 0;
                for (std::uint32_t wy = 0; wy < window; ++wy) {
                    const std::int64_t iy =
                        static_cast<std::int64_t>(oy) * stride + wy - pad_h.begin;
                    if (iy < 0 || iy >= in.height) continue;
                    for (std::uint32_t wx = 0; wx < window; ++wx) {
                        const std::int64_t ix =
                            static_cast<std::int64_t>(ox) * stride + wx - pad_w.begin;
                        if (ix < 0 || ix >= in.width) continue;
                        const std::int32_t v = input.at(static_cast<std::uint32_t>(iy),
                                                        static_cast<std::uint32_t>(ix), ch);
                        best = std::max(best, v);
                        sum += v;
                        detail::check_acc32(sum, "pool_q");
                        ++count;
                    }
                }
                if (count == 0) throw ShapeError("pool_q: empty window");
                out.at(oy, ox, ch) =
                    op == PoolOp::kMax
                        ? best
                        : static_cast<std::int32_t>(round_half_even(
                              static_cast<double>(sum) / static_cast<double>(count)));
            }
        }
    }
    return out;
}

// Per-channel reduction over all spatial positions; quantization unchanged.
inline QTensor global_pool_q(const QTensor& input, PoolOp op) {
    const TensorShape in = input.shape();
    QTensor out = QTensor::activation({1, 1, in.channels}, input.params);
    const std::uint64_t area = static_cast<std::uint64_t>(in.height) * in.width;
    for (std::uint32_t ch = 0; ch < in.channels; ++ch) {
        std::int64_t sum = 0;
        std::int32_t best = INT32_MIN;
        for (std::uint32_t y = 0; y < in.height; ++y) {
            for (std::uint32_t x = 0; x < in.width; ++x) {
                const std::int32_t v = input.at(y, x, ch);
                best = std::max(best, v);
                sum += v;
            }
        }
        out.at(0, 0, ch) = op == PoolOp::kMax
                               ? best
                               : static_cast<std::int32_t>(round_half_even(
                                     static_cast<double>(sum) / static_cast<double>(area)));
    }
    return out;
}

// output(y, x) = input(y div f, x div f); parameters unchanged.
inline QTensor upsample_nearest_q(const QTensor& input, std::uint32_t factor) {
    if (factor < 2) throw KernelError("upsample_nearest_q: factor must be >= 2");
    const TensorShape in = input.shape();
    QTensor out =
        QTensor::activation({in.height * factor, in.width * factor, in.channels}, input.params);
    for (std::uint32_t y = 0; y < out.h(); ++y) {
        for (std::uint32_t x = 0; x < out.w(); ++x) {
            for (std::uint32_t ch = 0; ch < in.channels; ++ch) {
                out.at(y, x, ch) = input.at(y / factor, x / factor, ch);
            }
        }
    }
    return out;
}

enum class EltOp { kAdd, kMultiply };

// Computed as dequantize -> real op -> requantize. Multiply accepts a 1x1xC
// second operand broadcast over space (channel attention gates).
inline QTensor elementwise_q(const QTensor& a, const QTensor& b, EltOp op,
                             const QuantParams& out_params) {
    const TensorShape sa = a.shape();
    const TensorShape sb = b.shape();
    const bool broadcast = op == EltOp::kMultiply && sb.height == 1 && sb.width == 1 &&
                           sb.channels == sa.channels && !(sb == sa);
    if (!(sb == sa) && !broadcast) {
        throw ShapeError("elementwise_q: shape mismatch " + sa.str() + " vs " + sb.str());
    }
    QTensor out = QTensor::activation(sa, out_params);
    for (std::uint32_t y = 0; y < sa.height; ++y) {
        for (std::uint32_t x = 0; x < sa.width; ++x) {
            for (std::uint32_t ch = 0; ch < sa.channels; ++ch) {
                const double va = dequantize_value(a.at(y, x, ch), a.params);
                const double vb = dequantize_value(
                    broadcast ? b.at(0, 0, ch) : b.at(y, x, ch), b.params);
                const double v = op == EltOp::kAdd ? va + vb : va * vb;
                out.at(y, x, ch) = quantize_value(v, out_params);
            }
        }
    }
    return out;
}

// Channel-axis concatenation; inputs with differing parameters are
// requantized onto out_params.
inline QTensor concat_q(std::span<const QTensor> inputs, const QuantParams& out_params) {
    if (inputs.empty()) throw ShapeError("concat_q: no inputs");
    const TensorShape first = inputs[0].shape();
    std::uint32_t channels = 0;
    for (const QTensor& t : inputs) {
        const TensorShape s = t.shape();
        if (s.height != first.height || s.width != first.width) {
            throw ShapeError("concat_q: spatial mismatch " + first.str() + " vs " + s.str());
        }
        channels += s.channels;
    }
    QTensor out = QTensor::activation({first.height, first.width, channels}, out_params);
    std::uint32_t base = 0;
    for (const QTensor& t : inputs) {
        const bool same = t.params == out_params;
        for (std::uint32_t y = 0; y < first.height; ++y) {
            for (std::uint32_t x = 0; x < first.width; ++x) {
                for (std::uint32_t ch = 0; ch < t.c(); ++ch) {
                    const std::int32_t q = t.at(y, x, ch);
                    out.at(y, x, base + ch) =
                        same ? q : quantize_value(dequantize_value(q, t.params), out_params);
                }
            }
        }
        base += t.c();
    }
    return out;
}

// Matrix-vector product on a 1x1xC input. Weight dims {in, out}.
inline QTensor dense_q(const QTensor& input, const QTensor& weights,
                       std::span<const std::int32_t> bias, const QuantParams& out_params) {
    detail::require_bits(input, 8, "dense_q input");
    detail::require_bits(weights, 8, "dense_q weights");
    const TensorShape in = input.shape();
    if (in.height != 1 || in.width != 1) {
        throw ShapeError("dense_q: expected a 1x1xC input, got " + in.str());
    }
    if (weights.dims.size() != 2 || weights.dims[0] != in.channels) {
        throw ShapeError("dense_q: weight dims must be {in, out}");
    }
    const std::uint32_t out_units = weights.dims[1];
    if (bias.size() != out_units) throw ShapeError("dense_q: bias length mismatch");
    for (std::int32_t b : bias) {
        if (b < -32768 || b > 32767) throw KernelError("dense_q: bias outside 16-bit range");
    }

    QTensor out = QTensor::activation({1, 1, out_units}, out_params);
    const Requantizer rq = Requantizer::from_ratio(
        input.params.scale * weights.params.scale / out_params.scale);
    for (std::uint32_t o = 0; o < out_units; ++o) {
        std::int64_t acc = bias[o];
        for (std::uint32_t i = 0; i < in.channels; ++i) {
            acc += static_cast<std::int64_t>(input.at(0, 0, i) - input.params.zero_point) *
                   (weights.data[static_cast<std::size_t>(i) * out_units + o] -
                    weights.params.zero_point);
            detail::check_acc32(acc, "dense_q");
        }
        out.at(0, 0, o) = rq.apply(acc, out_params.zero_point, out_params.bits);
    }
    return out;
}

// Real softmax over one channel vector (used by the classification head and
// by the argmax-consistency checks).
inline std::vector<double> softmax_real(std::span<const double> logits) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> out(logits.size());
    double sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// 256-entry sigmoid table for one (input, output) parameter pair.
inline std::array<std::int32_t, 256> sigmoid_lut(const QuantParams& in,
                                                 const QuantParams& out) {
    std::array<std::int32_t, 256> lut{};
    for (int q = -128; q <= 127; ++q) {
        const double v = 1.0 / (1.0 + std::exp(-dequantize_value(q, in)));
        lut[static_cast<std::size_t>(q + 128)] = quantize_value(v, out);
    }
    return lut;
}

// relu clamps at the integer code of real 0 and keeps the input grid (so it
// stays exact); sigmoid goes through the 256-entry table; softmax is computed
// in real arithmetic on dequantized values, channel-wise per pixel.
inline QTensor activation_q(const QTensor& input, ActOp op, const QuantParams& out_params) {
    const TensorShape in = input.shape();
    switch (op) {
        case ActOp::kRelu: {
            if (!(out_params == input.params)) {
                throw KernelError("activation_q: relu requires matching output params");
            }
            QTensor out = input;
            for (auto& v : out.data) v = std::max(v, input.params.zero_point);
            return out;
        }
        case ActOp::kSigmoid: {
            detail::require_bits(input, 8, "activation_q sigmoid");
            const auto lut = sigmoid_lut(input.params, out_params);
            QTensor out = QTensor::activation(in, out_params);
            for (std::size_t i = 0; i < input.data.size(); ++i) {
                out.data[i] = lut[static_cast<std::size_t>(input.data[i] + 128)];
            }
            return out;
        }
        case ActOp::kSoftmax: {
            QTensor out = QTensor::activation(in, out_params);
            std::vector<double> logits(in.channels);
            for (std::uint32_t y = 0; y < in.height; ++y) {
                for (std::uint32_t x = 0; x < in.width; ++x) {
                    for (std::uint32_t ch = 0; ch < in.channels; ++ch) {
                        logits[ch] = dequantize_value(input.at(y, x, ch), input.params);
                    }
                    const std::vector<double> probs = softmax_real(logits);
                    for (std::uint32_t ch = 0; ch < in.channels; ++ch) {
                        out.at(y, x, ch) = quantize_value(probs[ch], out_params);
                    }
                }
            }
            return out;
        }
    }
    throw KernelError("activation_q: unsupported kind");
}

// Channel slice [begin, begin+count); zero-cost structural op.
inline QTensor slice_channels_q(const QTensor& input, std::uint32_t begin,
                                std::uint32_t count) {
    const TensorShape in = input.shape();
    if (count < 1 || static_cast<std::uint64_t>(begin) + count > in.channels) {
        throw ShapeError("slice_channels_q: slice out of range");
    }
    QTensor out = QTensor::activation({in.height, in.width, count}, input.params);
    for (std::uint32_t y = 0; y < in.height; ++y) {
        for (std::uint32_t x = 0; x < in.width; ++x) {
            for (std::uint32_t ch = 0; ch < count; ++ch) {
                out.at(y, x, ch) = input.at(y, x, begin + ch);
            }
        }
    }
    return out;
}

// Per-pixel argmax over channels; ties resolve to the lowest class index.
// Computed on integer codes, which matches the real argmax whenever all
// channels share quantization parameters.
inline std::vector<std::uint32_t> argmax_channels(const QTensor& input) {
    const TensorShape in = input.shape();
    std::vector<std::uint32_t> out(static_cast<std::size_t>(in.height) * in.width, 0);
    for (std::uint32_t y = 0; y < in.height; ++y) {
        for (std::uint32_t x = 0; x < in.width; ++x) {
            std::uint32_t best = 0;
            for (std::uint32_t ch = 1; ch < in.channels; ++ch) {
                if (input.at(y, x, ch) > input.at(y, x, best)) best = ch;
            }
            out[static_cast<std::size_t>(y) * in.width + x] = best;
        }
    }
    return out;
}

} // namespace cgraseg
