#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "cgraseg/errors.hpp"
#include "cgraseg/graph.hpp"
#include "cgraseg/image_io.hpp"
#include "cgraseg/kernels.hpp"
#include "cgraseg/metrics.hpp"
#include "cgraseg/quant.hpp"
#include "cgraseg/weight_store.hpp"

// Reference execution of a layer graph on quantized tensors.
//
// Weighted nodes (conv, dense) pull three store entries keyed by node name:
//   "<name>.w"   int8 weights ({k_h, k_w, c_in/groups, c_out} or {in, out})
//   "<name>.b"   int16 bias at scale_in * scale_w
//   "<name>.out" rank-0 tensor carrying the output quantization parameters
// All other kinds derive their output parameters from their inputs: pools,
// upsampling, slices, relu and residual-style ops keep the first input's
// grid; sigmoid and softmax land on the fixed [0, 1] grid (scale 1/256,
// zero point -128).

namespace cgraseg {

// Input convention for PPM-fed inference: byte b maps to real b/255, which
// the grid (scale 1/255, zero point -128) represents exactly as b - 128.
inline QuantParams image_input_params() { return QuantParams{1.0 / 255.0, -128, 8}; }

inline QuantParams unit_interval_params() { return QuantParams{1.0 / 256.0, -128, 8}; }

namespace detail {

// Output params of a non-weighted node given its input params; nullopt for
// conv/dense (their params come from the weight store).
inline std::optional<QuantParams> derived_params(const LayerKind& kind,
                                                 const std::vector<QuantParams>& in) {
    struct Visitor {
        const std::vector<QuantParams>& in;
        std::optional<QuantParams> operator()(const Conv2D&) const { return std::nullopt; }
        std::optional<QuantParams> operator()(const Dense&) const { return std::nullopt; }
        std::optional<QuantParams> operator()(const Pool&) const { return in[0]; }
        std::optional<QuantParams> operator()(const GlobalPool&) const { return in[0]; }
        std::optional<QuantParams> operator()(const UpsampleNearest&) const { return in[0]; }
        std::optional<QuantParams> operator()(const Concat&) const { return in[0]; }
        std::optional<QuantParams> operator()(const Add&) const { return in[0]; }
        std::optional<QuantParams> operator()(const Multiply&) const { return in[0]; }
        std::optional<QuantParams> operator()(const Slice&) const { return in[0]; }
        std::optional<QuantParams> operator()(const Activation& a) const {
            return a.op == ActOp::kRelu ? in[0] : unit_interval_params();
        }
    };
    return std::visit(Visitor{in}, kind);
}

inline void check_bias_scale(const QTensor& bias, double expected, const std::string& name) {
    if (bias.params.bits != 16) {
        throw KernelError("'" + name + ".b' must be a 16-bit tensor");
    }
    // Scales live as float32 in the weight file; allow that rounding.
    if (std::abs(bias.params.scale - expected) > 1e-6 * expected) {
        throw KernelError("'" + name + ".b' scale must equal scale_in * scale_w");
    }
}

} // namespace detail

// Executes the graph and returns the tensors of the declared output nodes.
// Intermediate tensors are released after their last consumer.
inline std::map<NodeId, QTensor> run_graph(const LayerGraph& graph, const WeightStore& store,
                                           const QTensor& input) {
    if (!(input.shape() == graph.input_shape())) {
        throw ShapeError("input tensor shape " + input.shape().str() +
                         " does not match graph input " + graph.input_shape().str());
    }
    if (graph.outputs().empty()) throw ShapeError("graph has no outputs");

    std::map<NodeId, std::size_t> remaining_uses;
    for (const auto& n : graph.nodes()) {
        for (NodeId in : n.inputs) {
            if (in != kInputId) ++remaining_uses[in];
        }
    }
    for (NodeId out : graph.outputs()) ++remaining_uses[out];

    std::map<NodeId, QTensor> live;
    auto fetch = [&](NodeId id) -> const QTensor& {
        if (id == kInputId) return input;
        auto it = live.find(id);
        if (it == live.end()) throw ShapeError("internal: tensor for node already released");
        return it->second;
    };
    auto release = [&](NodeId id) {
        if (id == kInputId) return;
        if (--remaining_uses[id] == 0) live.erase(id);
    };

    for (NodeId id : topological_order(graph)) {
        const LayerNode& n = graph.node(id);
        std::vector<QuantParams> in_params;
        in_params.reserve(n.inputs.size());
        for (NodeId ref : n.inputs) in_params.push_back(fetch(ref).params);

        QTensor out;
        if (const auto* c = std::get_if<Conv2D>(&n.kind)) {
            const QTensor& w = store.get(n.name + ".w");
            const QTensor& b = store.get(n.name + ".b");
            detail::check_bias_scale(b, in_params[0].scale * w.params.scale, n.name);
            const QuantParams out_params = store.get(n.name + ".out").params;
            out = conv2d_q(fetch(n.inputs[0]), w, b.data, *c, out_params);
        } else if (std::get_if<Dense>(&n.kind)) {
            const QTensor& w = store.get(n.name + ".w");
            const QTensor& b = store.get(n.name + ".b");
            detail::check_bias_scale(b, in_params[0].scale * w.params.scale, n.name);
            const QuantParams out_params = store.get(n.name + ".out").params;
            out = dense_q(fetch(n.inputs[0]), w, b.data, out_params);
        } else if (const auto* p = std::get_if<Pool>(&n.kind)) {
            out = pool_q(fetch(n.inputs[0]), p->op, p->window, p->stride);
        } else if (const auto* gp = std::get_if<GlobalPool>(&n.kind)) {
            out = global_pool_q(fetch(n.inputs[0]), gp->op);
        } else if (const auto* u = std::get_if<UpsampleNearest>(&n.kind)) {
            out = upsample_nearest_q(fetch(n.inputs[0]), u->factor);
        } else if (std::get_if<Concat>(&n.kind)) {
            std::vector<QTensor> parts;
            parts.reserve(n.inputs.size());
            for (NodeId ref : n.inputs) parts.push_back(fetch(ref));
            out = concat_q(parts, in_params[0]);
        } else if (std::get_if<Add>(&n.kind)) {
            out = fetch(n.inputs[0]);
            for (std::size_t i = 1; i < n.inputs.size(); ++i) {
                out = elementwise_q(out, fetch(n.inputs[i]), EltOp::kAdd, in_params[0]);
            }
        } else if (std::get_if<Multiply>(&n.kind)) {
            out = fetch(n.inputs[0]);
            for (std::size_t i = 1; i < n.inputs.size(); ++i) {
                out = elementwise_q(out, fetch(n.inputs[i]), EltOp::kMultiply, in_params[0]);
            }
        } else if (const auto* a = std::get_if<Activation>(&n.kind)) {
            out = activation_q(fetch(n.inputs[0]), a->op,
                               *detail::derived_params(n.kind, in_params));
        } else if (const auto* s = std::get_if<Slice>(&n.kind)) {
            out = slice_channels_q(fetch(n.inputs[0]), s->begin, s->count);
        } else {
            throw KernelError("node '" + n.name + "': unsupported kind");
        }

        for (NodeId ref : n.inputs) release(ref);
        live.emplace(id, std::move(out));
    }

    std::map<NodeId, QTensor> outputs;
    for (NodeId id : graph.outputs()) outputs.emplace(id, live.at(id));
    return outputs;
}

// ---------------------------------------------------------------------------
// Image-based inference
// ---------------------------------------------------------------------------

inline QTensor image_to_qtensor(const Image& img) {
    const QuantParams p = image_input_params();
    QTensor t = QTensor::activation({img.height, img.width, img.channels}, p);
    for (std::uint32_t y = 0; y < img.height; ++y) {
        for (std::uint32_t x = 0; x < img.width; ++x) {
            for (std::uint32_t c = 0; c < img.channels; ++c) {
                t.at(y, x, c) = static_cast<std::int32_t>(img.at(y, x, c)) - 128;
            }
        }
    }
    return t;
}

// Runs the graph on an image and returns the per-pixel argmax class map of
// the main (first) output. Ties resolve to the lowest class id.
inline LabelMap run_inference(const LayerGraph& graph, const WeightStore& store,
                              const Image& img) {
    const auto outputs = run_graph(graph, store, image_to_qtensor(img));
    const QTensor& main_out = outputs.at(graph.outputs().front());
    const auto classes = argmax_channels(main_out);
    LabelMap map = LabelMap::filled(main_out.w(), main_out.h(), 0);
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] > 255) throw MetricsError("class id exceeds 8-bit label range");
        map.data[i] = static_cast<std::uint8_t>(classes[i]);
    }
    return map;
}

// ---------------------------------------------------------------------------
// Deterministic weight generation
// ---------------------------------------------------------------------------

// Fills a store with fixed-seed weights for every conv/dense node so the
// pipeline can run end to end without trained parameters. Output scales grow
// with fan-in to keep accumulators from saturating everywhere. The raw engine
// outputs are reduced modulo small ranges, so files are identical across
// platforms for a given seed.
inline WeightStore generate_weights(const LayerGraph& graph, std::uint64_t seed,
                                    QuantParams input_params = image_input_params()) {
    const LayerGraph shaped = infer_shapes(graph);
    std::mt19937_64 rng(seed);
    auto next_int = [&rng](std::int32_t lo, std::int32_t hi) {
        return lo + static_cast<std::int32_t>(rng() % (hi - lo + 1));
    };

    WeightStore store;
    std::map<NodeId, QuantParams> params;
    auto params_of = [&](NodeId id) {
        return id == kInputId ? input_params : params.at(id);
    };

    for (NodeId id : topological_order(shaped)) {
        const LayerNode& n = shaped.node(id);
        std::vector<QuantParams> in_params;
        for (NodeId ref : n.inputs) in_params.push_back(params_of(ref));

        const auto derived = detail::derived_params(n.kind, in_params);
        if (derived) {
            params[id] = *derived;
            continue;
        }

        // Weighted node: invent weights, bias, and an output grid.
        std::vector<std::uint32_t> w_dims;
        std::uint32_t cout = 0;
        std::uint64_t fan_in = 0;
        if (const auto* c = std::get_if<Conv2D>(&n.kind)) {
            const std::uint32_t cpg = *n.in_channels / c->groups;
            w_dims = {c->kernel_h, c->kernel_w, cpg, c->out_channels};
            cout = c->out_channels;
            fan_in = static_cast<std::uint64_t>(c->kernel_h) * c->kernel_w * cpg;
        } else {
            const auto& d = std::get<Dense>(n.kind);
            w_dims = {*n.in_channels, d.out_units};
            cout = d.out_units;
            fan_in = *n.in_channels;
        }

        QTensor w;
        w.dims = w_dims;
        w.params = QuantParams{1.0 / 64.0, 0, 8};
        w.data.reserve(w.element_count());
        for (std::uint64_t i = 0; i < w.element_count(); ++i) {
            w.data.push_back(next_int(-15, 15));
        }

        QTensor b;
        b.dims = {cout};
        b.params = QuantParams{in_params[0].scale * w.params.scale, 0, 16};
        b.data.reserve(cout);
        for (std::uint32_t i = 0; i < cout; ++i) b.data.push_back(next_int(-100, 100));

        QTensor out_marker;
        out_marker.dims = {};
        out_marker.params = QuantParams{
            in_params[0].scale * w.params.scale * std::max<double>(1.0, double(fan_in)), 0, 8};

        params[id] = out_marker.params;
        store.tensors.emplace(n.name + ".w", std::move(w));
        store.tensors.emplace(n.name + ".b", std::move(b));
        store.tensors.emplace(n.name + ".out", std::move(out_marker));
    }
    return store;
}

} // namespace cgraseg
