#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgraseg/errors.hpp"
#include "cgraseg/graph.hpp"

// Builder for the CGRA-adapted LMIINet layer graph.
//
// Topology: a 3x3 stride-2 stem to encoder_filters[0], then three encoder
// stages (stride-2 downsampling conv to the stage filter count followed by
// two LFIB blocks with dilations 1 and 2), a FLAM block at the 1/16
// bottleneck, and a mirrored decoder (nearest x2 upsampling, concat with the
// matching encoder feature, depthwise+pointwise refinement, channel
// attention). The segmentation head fuses the three decoder features at 1/2
// scale and upsamples the class distribution to full resolution; an optional
// auxiliary head taps the 1/8-scale feature.
//
// scale_divisor shrinks spatial dims and filter counts proportionally so the
// full pipeline can run at desk scale without trained weights.

namespace cgraseg {

struct ModelConfig {
    std::array<std::uint32_t, 4> encoder_filters{24, 48, 96, 128};
    std::uint32_t num_classes = 19;
    TensorShape input_shape{2048, 1024, 3};
    std::uint32_t flam_heads = 8;
    std::uint32_t flam_key_dim = 64;
    bool include_aux_head = true;
    std::uint32_t scale_divisor = 1;
    std::uint32_t cc_ratio = 4;  // bottleneck ratio of the CC dense pair
    std::uint32_t cru_ratio = 4; // bottleneck ratio of the CRU pointwise pair

    std::uint32_t filters(std::size_t stage) const {
        return encoder_filters.at(stage) / scale_divisor;
    }
    TensorShape scaled_input() const {
        return TensorShape{input_shape.height / scale_divisor,
                           input_shape.width / scale_divisor, input_shape.channels};
    }
    std::uint32_t flam_projection_width() const {
        return flam_heads * flam_key_dim / scale_divisor;
    }

    void validate() const {
        if (scale_divisor < 1) throw ConfigError("scale_divisor must be >= 1");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (cc_ratio < 1 || cru_ratio < 1) throw ConfigError("ratios must be >= 1");
        for (std::size_t i = 0; i < encoder_filters.size(); ++i) {
            if (encoder_filters[i] % scale_divisor != 0 || filters(i) < 1) {
                throw ConfigError("encoder_filters[" + std::to_string(i) +
                                  "] must stay a positive multiple of scale_divisor");
            }
        }
        // Stage channels are split in half inside the LFIB blocks.
        for (std::size_t i = 1; i < encoder_filters.size(); ++i) {
            if (filters(i) % 2 != 0) {
                throw ConfigError("scaled encoder_filters[" + std::to_string(i) +
                                  "] must be even for the channel split");
            }
        }
        // The 1/8-scale auxiliary head needs dims divisible by 16 after scaling.
        const TensorShape in = scaled_input();
        if (input_shape.height % (16 * scale_divisor) != 0 ||
            input_shape.width % (16 * scale_divisor) != 0 || in.channels < 1) {
            throw ConfigError("input dims must be divisible by 16 * scale_divisor");
        }
        if (flam_heads < 1 || flam_key_dim < 1) throw ConfigError("FLAM sizes must be >= 1");
        if ((flam_heads * flam_key_dim) % scale_divisor != 0 ||
            flam_projection_width() % flam_heads != 0 || filters(3) % flam_heads != 0) {
            throw ConfigError("FLAM projection width and bottleneck channels must be "
                              "divisible by flam_heads after scaling");
        }
    }
};

// ---------------------------------------------------------------------------
// ModelConfig JSON (all keys optional; unknown keys rejected)
// ---------------------------------------------------------------------------

inline ModelConfig model_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw IoError("model config must be a JSON object");
    ModelConfig cfg;
    for (const auto& [key, value] : doc.items()) {
        if (key == "encoder_filters") {
            if (!value.is_array() || value.size() != 4) {
                throw IoError("model config: encoder_filters must have 4 entries");
            }
            for (std::size_t i = 0; i < 4; ++i) cfg.encoder_filters[i] = value.at(i).get<std::uint32_t>();
        } else if (key == "num_classes") {
            cfg.num_classes = value.get<std::uint32_t>();
        } else if (key == "input_shape") {
            if (!value.is_array() || value.size() != 3) {
                throw IoError("model config: input_shape must be [h, w, c]");
            }
            cfg.input_shape = TensorShape{value.at(0).get<std::uint32_t>(),
                                          value.at(1).get<std::uint32_t>(),
                                          value.at(2).get<std::uint32_t>()};
        } else if (key == "flam_heads") {
            cfg.flam_heads = value.get<std::uint32_t>();
        } else if (key == "flam_key_dim") {
            cfg.flam_key_dim = value.get<std::uint32_t>();
        } else if (key == "include_aux_head") {
            cfg.include_aux_head = value.get<bool>();
        } else if (key == "scale_divisor") {
            cfg.scale_divisor = value.get<std::uint32_t>();
        } else if (key == "cc_ratio") {
            cfg.cc_ratio = value.get<std::uint32_t>();
        } else if (key == "cru_ratio") {
            cfg.cru_ratio = value.get<std::uint32_t>();
        } else {
            throw IoError("model config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{
        {"encoder_filters", cfg.encoder_filters},
        {"num_classes", cfg.num_classes},
        {"input_shape", {cfg.input_shape.height, cfg.input_shape.width, cfg.input_shape.channels}},
        {"flam_heads", cfg.flam_heads},
        {"flam_key_dim", cfg.flam_key_dim},
        {"include_aux_head", cfg.include_aux_head},
        {"scale_divisor", cfg.scale_divisor},
        {"cc_ratio", cfg.cc_ratio},
        {"cru_ratio", cfg.cru_ratio},
    };
}

// ---------------------------------------------------------------------------
// Subgraph builders
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t bottleneck(std::uint32_t channels, std::uint32_t ratio) {
    return std::max<std::uint32_t>(1, channels / ratio);
}

inline Conv2D pointwise(std::uint32_t out_channels) {
    return Conv2D{1, 1, 1, 1, 1, out_channels};
}

inline Conv2D depthwise3x3(std::uint32_t channels, std::uint32_t dilation) {
    return Conv2D{3, 3, 1, dilation, channels, channels};
}

} // namespace detail

// Lightweight Feature Interaction Bottleneck. Channel split by slicing; left
// branch 3x1 then 1x3 asymmetric convs; right branch depthwise 3x3 (with the
// given dilation) then pointwise 1x1; a Combination Coefficient module
// (GAP -> dense -> dense -> sigmoid) gates the merged concat; a Channel
// Reconstruction Unit (pointwise reduce -> depthwise 3x3 -> pointwise expand)
// refines it; the channel shuffle is a half-swap concat; finally a residual
// add with the block input.
inline NodeId build_lfib(LayerGraph& g, NodeId input, std::uint32_t channels,
                         std::uint32_t dilation, const std::string& prefix,
                         std::uint32_t cc_ratio = 4, std::uint32_t cru_ratio = 4) {
    if (channels % 2 != 0) {
        throw ConfigError("LFIB '" + prefix + "': channels must be even for the split, got " +
                          std::to_string(channels));
    }
    const std::uint32_t half = channels / 2;

    const NodeId left_in = g.add(prefix + ".split_left", Slice{0, half}, {input});
    const NodeId l1 = g.add(prefix + ".left_conv3x1",
                            Conv2D{3, 1, 1, 1, 1, half}, {left_in});
    const NodeId l2 = g.add(prefix + ".left_conv1x3",
                            Conv2D{1, 3, 1, 1, 1, half}, {l1});

    const NodeId right_in = g.add(prefix + ".split_right", Slice{half, half}, {input});
    const NodeId r1 = g.add(prefix + ".right_dw",
                            detail::depthwise3x3(half, dilation), {right_in});
    const NodeId r2 = g.add(prefix + ".right_pw", detail::pointwise(half), {r1});

    const NodeId merge = g.add(prefix + ".merge", Concat{}, {l2, r2});

    const std::uint32_t cc_mid = detail::bottleneck(channels, cc_ratio);
    const NodeId cc_gap = g.add(prefix + ".cc.gap", GlobalPool{PoolOp::kAvg}, {merge});
    const NodeId cc_fc1 = g.add(prefix + ".cc.fc1", Dense{cc_mid}, {cc_gap});
    const NodeId cc_fc2 = g.add(prefix + ".cc.fc2", Dense{channels}, {cc_fc1});
    const NodeId cc_gate = g.add(prefix + ".cc.gate", Activation{ActOp::kSigmoid}, {cc_fc2});
    const NodeId gated = g.add(prefix + ".cc.scale", Multiply{}, {merge, cc_gate});

    const std::uint32_t cru_mid = detail::bottleneck(channels, cru_ratio);
    const NodeId cru_a = g.add(prefix + ".cru.reduce", detail::pointwise(cru_mid), {gated});
    const NodeId cru_b = g.add(prefix + ".cru.dw", detail::depthwise3x3(cru_mid, 1), {cru_a});
    const NodeId cru_c = g.add(prefix + ".cru.expand", detail::pointwise(channels), {cru_b});

    const NodeId sh_lo = g.add(prefix + ".shuffle_lo", Slice{0, half}, {cru_c});
    const NodeId sh_hi = g.add(prefix + ".shuffle_hi", Slice{half, half}, {cru_c});
    const NodeId shuffled = g.add(prefix + ".shuffle", Concat{}, {sh_hi, sh_lo});

    return g.add(prefix + ".add", Add{}, {shuffled, input});
}

// Flattened local attention: 3x3 dilation-2 conv, pointwise projection to
// heads*key_dim channels, self-gating sigmoid multiply, grouped pointwise
// back to the block channels (groups = heads keeps the per-filter input depth
// within the weight RAM bound), residual add. Normalization is assumed folded
// into the conv weights.
inline NodeId build_flam(LayerGraph& g, NodeId input, std::uint32_t channels,
                         std::uint32_t projection_width, std::uint32_t heads,
                         const std::string& prefix) {
    if (projection_width % heads != 0 || channels % heads != 0) {
        throw ConfigError("FLAM '" + prefix + "': projection width and channels must be "
                          "divisible by the head count");
    }
    const NodeId local = g.add(prefix + ".conv_d2",
                               Conv2D{3, 3, 1, 2, 1, channels}, {input});
    const NodeId proj = g.add(prefix + ".proj", detail::pointwise(projection_width), {local});
    const NodeId gate = g.add(prefix + ".gate", Activation{ActOp::kSigmoid}, {proj});
    const NodeId gated = g.add(prefix + ".gated", Multiply{}, {proj, gate});
    const NodeId back = g.add(prefix + ".merge",
                              Conv2D{1, 1, 1, 1, heads, channels}, {gated});
    return g.add(prefix + ".add", Add{}, {back, input});
}

enum class AttentionKind { kCab, kFe };

// CAB: GAP -> 1x1 conv -> 1x1 conv -> sigmoid -> broadcast multiply.
// FE:  (GAP and GMP) -> add -> 1x1 conv -> sigmoid -> broadcast multiply.
inline NodeId build_attention(LayerGraph& g, NodeId input, AttentionKind kind,
                              std::uint32_t channels, const std::string& prefix,
                              std::uint32_t ratio = 4) {
    NodeId gate_in = kInputId;
    if (kind == AttentionKind::kCab) {
        const NodeId gap = g.add(prefix + ".gap", GlobalPool{PoolOp::kAvg}, {input});
        const NodeId fc1 = g.add(prefix + ".fc1",
                                 detail::pointwise(detail::bottleneck(channels, ratio)), {gap});
        gate_in = g.add(prefix + ".fc2", detail::pointwise(channels), {fc1});
    } else {
        const NodeId gap = g.add(prefix + ".gap", GlobalPool{PoolOp::kAvg}, {input});
        const NodeId gmp = g.add(prefix + ".gmp", GlobalPool{PoolOp::kMax}, {input});
        const NodeId sum = g.add(prefix + ".sum", Add{}, {gap, gmp});
        gate_in = g.add(prefix + ".fc", detail::pointwise(channels), {sum});
    }
    const NodeId gate = g.add(prefix + ".gate", Activation{ActOp::kSigmoid}, {gate_in});
    return g.add(prefix + ".scale", Multiply{}, {input, gate});
}

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

inline LayerGraph build_lmiinet(const ModelConfig& cfg) {
    cfg.validate();
    LayerGraph g(cfg.scaled_input());

    // Stem: 3x3 stride-2 conv to encoder_filters[0] at 1/2 scale.
    const NodeId stem = g.add("stem", Conv2D{3, 3, 2, 1, 1, cfg.filters(0)}, {kInputId});

    // Encoder stages: stride-2 downsampling conv + two LFIBs (dilations 1, 2).
    std::array<NodeId, 3> enc_out{};
    NodeId cursor = stem;
    for (std::size_t stage = 1; stage <= 3; ++stage) {
        const std::string name = "enc" + std::to_string(stage);
        const std::uint32_t ch = cfg.filters(stage);
        cursor = g.add(name + ".down", Conv2D{3, 3, 2, 1, 1, ch}, {cursor});
        cursor = build_lfib(g, cursor, ch, 1, name + ".lfib1", cfg.cc_ratio, cfg.cru_ratio);
        cursor = build_lfib(g, cursor, ch, 2, name + ".lfib2", cfg.cc_ratio, cfg.cru_ratio);
        enc_out[stage - 1] = cursor;
    }

    // FLAM at the 1/16 bottleneck.
    cursor = build_flam(g, cursor, cfg.filters(3), cfg.flam_projection_width(),
                        cfg.flam_heads, "flam");

    // Decoder: x2 upsample, concat the matching encoder feature, then a
    // depthwise+pointwise refinement pair and channel attention per stage.
    const std::array<NodeId, 3> skips{enc_out[1], enc_out[0], stem}; // 1/8, 1/4, 1/2
    std::array<NodeId, 3> dec_out{};
    for (std::size_t stage = 1; stage <= 3; ++stage) {
        const std::string name = "dec" + std::to_string(stage);
        const std::uint32_t ch = cfg.filters(3 - stage);
        const NodeId up = g.add(name + ".up", UpsampleNearest{2}, {cursor});
        const NodeId cat = g.add(name + ".concat", Concat{}, {up, skips[stage - 1]});
        const std::uint32_t cat_ch =
            cfg.filters(4 - stage) + cfg.filters(3 - stage); // upsampled + skip
        const NodeId dw = g.add(name + ".refine_dw", detail::depthwise3x3(cat_ch, 1), {cat});
        const NodeId pw = g.add(name + ".refine_pw", detail::pointwise(ch), {dw});
        cursor = build_attention(g, pw, AttentionKind::kCab, ch, name + ".cab", cfg.cc_ratio);
        dec_out[stage - 1] = cursor;
    }

    // Segmentation head: fuse the three decoder features at 1/2 scale, score
    // classes with one pointwise conv + softmax, then upsample to full
    // resolution.
    const NodeId head_up8 = g.add("head.up_d1", UpsampleNearest{4}, {dec_out[0]});
    const NodeId head_up4 = g.add("head.up_d2", UpsampleNearest{2}, {dec_out[1]});
    const NodeId head_cat = g.add("head.concat", Concat{}, {head_up8, head_up4, dec_out[2]});
    const NodeId head_conv = g.add("head.conv", detail::pointwise(cfg.num_classes), {head_cat});
    const NodeId head_soft = g.add("head.softmax", Activation{ActOp::kSoftmax}, {head_conv});
    const NodeId main_out = g.add("head.up_out", UpsampleNearest{2}, {head_soft});

    std::vector<NodeId> outputs{main_out};
    if (cfg.include_aux_head) {
        const NodeId aux_conv = g.add("aux.conv", detail::pointwise(cfg.num_classes),
                                      {dec_out[0]});
        outputs.push_back(g.add("aux.softmax", Activation{ActOp::kSoftmax}, {aux_conv}));
    }
    g.set_outputs(std::move(outputs));
    return g;
}

// ---------------------------------------------------------------------------
// Parameter bookkeeping
// ---------------------------------------------------------------------------

struct LayerParams {
    NodeId node_id = 0;
    std::string name;
    std::uint64_t weight_count = 0;
    std::uint64_t bias_count = 0;
};

struct ParameterSummary {
    std::vector<LayerParams> rows;
    std::uint64_t total_weights = 0;
    std::uint64_t total_biases = 0;

    static std::uint64_t bytes_at(std::uint64_t count, std::uint32_t bits) {
        return count * bits / 8;
    }
    // Deployment widths: 8-bit weights, 16-bit biases.
    std::uint64_t weight_bytes() const { return bytes_at(total_weights, 8); }
    std::uint64_t bias_bytes() const { return bytes_at(total_biases, 16); }
};

// Counts weights/biases of every conv and dense node. Requires inferred
// shapes (for input channels).
inline ParameterSummary parameter_summary(const LayerGraph& graph) {
    ParameterSummary s;
    for (const auto& n : graph.nodes()) {
        std::uint64_t weights = 0, biases = 0;
        if (const auto* c = std::get_if<Conv2D>(&n.kind)) {
            if (!n.in_channels) {
                throw ShapeError("parameter_summary requires inferred shapes");
            }
            weights = static_cast<std::uint64_t>(c->kernel_h) * c->kernel_w *
                      (*n.in_channels / c->groups) * c->out_channels;
            biases = c->out_channels;
        } else if (const auto* d = std::get_if<Dense>(&n.kind)) {
            if (!n.in_channels) {
                throw ShapeError("parameter_summary requires inferred shapes");
            }
            weights = static_cast<std::uint64_t>(*n.in_channels) * d->out_units;
            biases = d->out_units;
        } else {
            continue;
        }
        s.rows.push_back({n.id, n.name, weights, biases});
        s.total_weights += weights;
        s.total_biases += biases;
    }
    return s;
}

} // namespace cgraseg
