#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "cgraseg/errors.hpp"
#include "cgraseg/graph.hpp"

// Graph serialization. Document layout:
//
//   {
//     "input_shape": [h, w, c],
//     "nodes": [ {"id": 0, "name": "stem", "kind": "conv2d",
//                 "params": {...}, "inputs": [-1]}, ... ],
//     "outputs": [id, ...]
//   }
//
// An input id of -1 refers to the raw graph input. Unknown keys are rejected
// everywhere, as are unknown kinds and parameter values.

namespace cgraseg {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) { ok = true; break; }
        }
        if (!ok) throw IoError(where + ": unknown key '" + key + "'");
    }
}

inline std::uint32_t get_u32(const nlohmann::json& obj, const char* key,
                             const std::string& where) {
    if (!obj.contains(key)) throw IoError(where + ": missing key '" + key + "'");
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned()) throw IoError(where + ": '" + key + "' must be a non-negative integer");
    return v.get<std::uint32_t>();
}

inline PoolOp pool_op_from_string(const std::string& s, const std::string& where) {
    if (s == "max") return PoolOp::kMax;
    if (s == "avg") return PoolOp::kAvg;
    throw IoError(where + ": unknown pool op '" + s + "'");
}

inline ActOp act_op_from_string(const std::string& s, const std::string& where) {
    if (s == "relu") return ActOp::kRelu;
    if (s == "sigmoid") return ActOp::kSigmoid;
    if (s == "softmax") return ActOp::kSoftmax;
    throw IoError(where + ": unknown activation op '" + s + "'");
}

inline LayerKind kind_from_json(const std::string& kind, const nlohmann::json& params,
                                const std::string& where) {
    if (!params.is_object()) throw IoError(where + ": params must be an object");
    if (kind == "conv2d") {
        reject_unknown_keys(params,
                            {"kernel_h", "kernel_w", "stride", "dilation", "groups",
                             "out_channels", "padding_mode"},
                            where);
        if (params.contains("padding_mode") &&
            params.at("padding_mode").get<std::string>() != "same") {
            throw IoError(where + ": only 'same' padding is supported");
        }
        Conv2D c;
        c.kernel_h = get_u32(params, "kernel_h", where);
        c.kernel_w = get_u32(params, "kernel_w", where);
        c.stride = params.contains("stride") ? get_u32(params, "stride", where) : 1;
        c.dilation = params.contains("dilation") ? get_u32(params, "dilation", where) : 1;
        c.groups = params.contains("groups") ? get_u32(params, "groups", where) : 1;
        c.out_channels = get_u32(params, "out_channels", where);
        return c;
    }
    if (kind == "pool") {
        reject_unknown_keys(params, {"op", "window", "stride"}, where);
        Pool p;
        p.op = pool_op_from_string(params.at("op").get<std::string>(), where);
        p.window = get_u32(params, "window", where);
        p.stride = get_u32(params, "stride", where);
        return p;
    }
    if (kind == "global_pool") {
        reject_unknown_keys(params, {"op"}, where);
        return GlobalPool{pool_op_from_string(params.at("op").get<std::string>(), where)};
    }
    if (kind == "upsample_nearest") {
        reject_unknown_keys(params, {"factor"}, where);
        return UpsampleNearest{get_u32(params, "factor", where)};
    }
    if (kind == "concat") {
        reject_unknown_keys(params, {}, where);
        return Concat{};
    }
    if (kind == "add") {
        reject_unknown_keys(params, {}, where);
        return Add{};
    }
    if (kind == "multiply") {
        reject_unknown_keys(params, {}, where);
        return Multiply{};
    }
    if (kind == "dense") {
        reject_unknown_keys(params, {"out_units"}, where);
        return Dense{get_u32(params, "out_units", where)};
    }
    if (kind == "activation") {
        reject_unknown_keys(params, {"op"}, where);
        return Activation{act_op_from_string(params.at("op").get<std::string>(), where)};
    }
    if (kind == "slice") {
        reject_unknown_keys(params, {"begin", "count"}, where);
        return Slice{get_u32(params, "begin", where), get_u32(params, "count", where)};
    }
    throw IoError(where + ": unknown layer kind '" + kind + "'");
}

inline nlohmann::json params_to_json(const LayerKind& kind) {
    struct Visitor {
        nlohmann::json operator()(const Conv2D& c) const {
            return {{"kernel_h", c.kernel_h}, {"kernel_w", c.kernel_w},
                    {"stride", c.stride},     {"dilation", c.dilation},
                    {"groups", c.groups},     {"out_channels", c.out_channels},
                    {"padding_mode", "same"}};
        }
        nlohmann::json operator()(const Pool& p) const {
            return {{"op", p.op == PoolOp::kMax ? "max" : "avg"},
                    {"window", p.window},
                    {"stride", p.stride}};
        }
        nlohmann::json operator()(const GlobalPool& p) const {
            return {{"op", p.op == PoolOp::kMax ? "max" : "avg"}};
        }
        nlohmann::json operator()(const UpsampleNearest& u) const {
            return {{"factor", u.factor}};
        }
        nlohmann::json operator()(const Concat&) const { return nlohmann::json::object(); }
        nlohmann::json operator()(const Add&) const { return nlohmann::json::object(); }
        nlohmann::json operator()(const Multiply&) const { return nlohmann::json::object(); }
        nlohmann::json operator()(const Dense& d) const { return {{"out_units", d.out_units}}; }
        nlohmann::json operator()(const Activation& a) const {
            switch (a.op) {
                case ActOp::kRelu: return {{"op", "relu"}};
                case ActOp::kSigmoid: return {{"op", "sigmoid"}};
                case ActOp::kSoftmax: return {{"op", "softmax"}};
            }
            return nlohmann::json::object();
        }
        nlohmann::json operator()(const Slice& s) const {
            return {{"begin", s.begin}, {"count", s.count}};
        }
    };
    return std::visit(Visitor{}, kind);
}

} // namespace detail

inline nlohmann::json graph_to_json(const LayerGraph& graph) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : graph.nodes()) {
        nlohmann::json inputs = nlohmann::json::array();
        for (NodeId in : n.inputs) {
            inputs.push_back(in == kInputId ? nlohmann::json(-1) : nlohmann::json(in));
        }
        nodes.push_back({{"id", n.id},
                         {"name", n.name},
                         {"kind", kind_name(n.kind)},
                         {"params", detail::params_to_json(n.kind)},
                         {"inputs", inputs}});
    }
    return nlohmann::json{
        {"input_shape",
         {graph.input_shape().height, graph.input_shape().width, graph.input_shape().channels}},
        {"nodes", nodes},
        {"outputs", graph.outputs()},
    };
}

inline LayerGraph graph_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw IoError("model graph: document must be a JSON object");
    detail::reject_unknown_keys(doc, {"input_shape", "nodes", "outputs"}, "model graph");
    for (const char* key : {"input_shape", "nodes", "outputs"}) {
        if (!doc.contains(key)) throw IoError(std::string("model graph: missing key '") + key + "'");
    }

    const auto& shape = doc.at("input_shape");
    if (!shape.is_array() || shape.size() != 3) {
        throw IoError("model graph: input_shape must be [h, w, c]");
    }
    LayerGraph graph(TensorShape{shape.at(0).get<std::uint32_t>(),
                                 shape.at(1).get<std::uint32_t>(),
                                 shape.at(2).get<std::uint32_t>()});

    if (!doc.at("nodes").is_array()) throw IoError("model graph: nodes must be an array");
    for (const auto& jn : doc.at("nodes")) {
        if (!jn.is_object()) throw IoError("model graph: each node must be an object");
        detail::reject_unknown_keys(jn, {"id", "name", "kind", "params", "inputs"}, "node");
        for (const char* key : {"id", "name", "kind", "inputs"}) {
            if (!jn.contains(key)) throw IoError(std::string("node: missing key '") + key + "'");
        }
        const NodeId id = jn.at("id").get<NodeId>();
        const std::string name = jn.at("name").get<std::string>();
        const std::string where = "node '" + name + "'";
        LayerKind kind = detail::kind_from_json(
            jn.at("kind").get<std::string>(),
            jn.contains("params") ? jn.at("params") : nlohmann::json::object(), where);
        std::vector<NodeId> inputs;
        for (const auto& jin : jn.at("inputs")) {
            const std::int64_t v = jin.get<std::int64_t>();
            if (v == -1) {
                inputs.push_back(kInputId);
            } else if (v >= 0) {
                inputs.push_back(static_cast<NodeId>(v));
            } else {
                throw IoError(where + ": invalid input id " + std::to_string(v));
            }
        }
        graph.add_with_id(id, name, std::move(kind), std::move(inputs));
    }

    std::vector<NodeId> outputs;
    for (const auto& jo : doc.at("outputs")) outputs.push_back(jo.get<NodeId>());
    graph.set_outputs(std::move(outputs));

    // Documents may list nodes in any order, so references are checked after
    // the whole array is loaded.
    for (const auto& n : graph.nodes()) {
        for (NodeId in : n.inputs) {
            if (in != kInputId && !graph.contains(in)) {
                throw IoError("node '" + n.name + "' references unknown input id " +
                              std::to_string(in));
            }
        }
    }
    return graph;
}

} // namespace cgraseg
