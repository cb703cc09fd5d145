#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "cgraseg/errors.hpp"
#include "cgraseg/hw_config.hpp"
#include "cgraseg/shape.hpp"

namespace cgraseg {

// ---------------------------------------------------------------------------
// Layer kinds
//
// The graph is a pure activation-dataflow DAG: weights and biases are node
// attributes resolved at execution time, never edges. All convolutions use
// "same" zero padding; depthwise is Conv2D with groups == input channels,
// pointwise is a 1x1 kernel, asymmetric convolutions are 3x1 / 1x3 kernels.
// ---------------------------------------------------------------------------

enum class PoolOp { kMax, kAvg };
enum class ActOp { kRelu, kSigmoid, kSoftmax };

struct Conv2D {
    std::uint32_t kernel_h = 1;
    std::uint32_t kernel_w = 1;
    std::uint32_t stride = 1;
    std::uint32_t dilation = 1;
    std::uint32_t groups = 1;
    std::uint32_t out_channels = 0;

    // Footprint of the dilated kernel along one axis: d*(k-1)+1.
    std::uint32_t effective_extent_h() const { return dilation * (kernel_h - 1) + 1; }
    std::uint32_t effective_extent_w() const { return dilation * (kernel_w - 1) + 1; }
};

struct Pool {
    PoolOp op = PoolOp::kMax;
    std::uint32_t window = 2;
    std::uint32_t stride = 2;
};

struct GlobalPool {
    PoolOp op = PoolOp::kAvg;
};

struct UpsampleNearest {
    std::uint32_t factor = 2;
};

struct Concat {};
struct Add {};
struct Multiply {};

struct Dense {
    std::uint32_t out_units = 0;
};

struct Activation {
    ActOp op = ActOp::kRelu;
};

// Channel slice [begin, begin+count). Zero-MAC structural op; it is how the
// bottleneck blocks realize channel splitting on the streaming datapath.
struct Slice {
    std::uint32_t begin = 0;
    std::uint32_t count = 0;
};

using LayerKind = std::variant<Conv2D, Pool, GlobalPool, UpsampleNearest, Concat,
                               Add, Multiply, Dense, Activation, Slice>;

inline const char* kind_name(const LayerKind& k) {
    struct Visitor {
        const char* operator()(const Conv2D&) const { return "conv2d"; }
        const char* operator()(const Pool&) const { return "pool"; }
        const char* operator()(const GlobalPool&) const { return "global_pool"; }
        const char* operator()(const UpsampleNearest&) const { return "upsample_nearest"; }
        const char* operator()(const Concat&) const { return "concat"; }
        const char* operator()(const Add&) const { return "add"; }
        const char* operator()(const Multiply&) const { return "multiply"; }
        const char* operator()(const Dense&) const { return "dense"; }
        const char* operator()(const Activation&) const { return "activation"; }
        const char* operator()(const Slice&) const { return "slice"; }
    };
    return std::visit(Visitor{}, k);
}

// ---------------------------------------------------------------------------
// Nodes and graph
// ---------------------------------------------------------------------------

using NodeId = std::uint32_t;

// Edges referencing the raw graph input use this sentinel (serialized as -1).
inline constexpr NodeId kInputId = std::numeric_limits<NodeId>::max();

struct LayerNode {
    NodeId id = 0;
    std::string name;
    LayerKind kind;
    std::vector<NodeId> inputs;

    // Annotations filled by infer_shapes() / annotate_macs().
    std::optional<TensorShape> shape;
    std::optional<std::uint32_t> in_channels; // channels of the first input
    std::optional<std::uint64_t> macs;
};

class LayerGraph {
public:
    LayerGraph() = default;
    explicit LayerGraph(TensorShape input_shape) : input_shape_(input_shape) {
        require_valid(input_shape, "graph input");
    }

    const TensorShape& input_shape() const { return input_shape_; }

    NodeId add(std::string name, LayerKind kind, std::vector<NodeId> inputs) {
        return add_with_id(next_id_, std::move(name), std::move(kind), std::move(inputs));
    }

    // Forward references are allowed (serialized graphs need not be in
    // topological order); unknown ids surface at traversal time.
    NodeId add_with_id(NodeId id, std::string name, LayerKind kind,
                       std::vector<NodeId> inputs) {
        if (id == kInputId) throw ShapeError("node id collides with the input sentinel");
        if (index_.count(id)) {
            throw ShapeError("duplicate node id " + std::to_string(id));
        }
        check_arity(name, kind, inputs.size());
        index_[id] = nodes_.size();
        nodes_.push_back(LayerNode{id, std::move(name), std::move(kind), std::move(inputs),
                                   std::nullopt, std::nullopt, std::nullopt});
        next_id_ = std::max(next_id_, id + 1);
        return id;
    }

    void set_outputs(std::vector<NodeId> ids) {
        if (ids.empty()) throw ShapeError("graph outputs must be non-empty");
        for (NodeId id : ids) {
            if (!index_.count(id)) {
                throw ShapeError("output references unknown node id " + std::to_string(id));
            }
        }
        outputs_ = std::move(ids);
    }

    const std::vector<NodeId>& outputs() const { return outputs_; }
    const std::vector<LayerNode>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }

    bool contains(NodeId id) const { return index_.count(id) != 0; }

    const LayerNode& node(NodeId id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ShapeError("unknown node id " + std::to_string(id));
        return nodes_[it->second];
    }

    LayerNode& node(NodeId id) {
        auto it = index_.find(id);
        if (it == index_.end()) throw ShapeError("unknown node id " + std::to_string(id));
        return nodes_[it->second];
    }

private:
    static void check_arity(const std::string& name, const LayerKind& kind,
                            std::size_t n_inputs) {
        const bool multi = std::holds_alternative<Concat>(kind) ||
                           std::holds_alternative<Add>(kind) ||
                           std::holds_alternative<Multiply>(kind);
        if (multi) {
            if (n_inputs < 2) {
                throw ShapeError("node '" + name + "': " +
                                 std::string(kind_name(kind)) + " requires >= 2 inputs");
            }
        } else if (n_inputs != 1) {
            throw ShapeError("node '" + name + "': " + std::string(kind_name(kind)) +
                             " requires exactly 1 input");
        }
    }

    TensorShape input_shape_{1, 1, 1};
    std::vector<LayerNode> nodes_;
    std::unordered_map<NodeId, std::size_t> index_;
    std::vector<NodeId> outputs_;
    NodeId next_id_ = 0;
};

// ---------------------------------------------------------------------------
// Topological order (Kahn). Deterministic: ties broken by insertion order.
// ---------------------------------------------------------------------------

inline std::vector<NodeId> topological_order(const LayerGraph& graph) {
    const auto& nodes = graph.nodes();
    std::unordered_map<NodeId, std::size_t> pos;
    for (std::size_t i = 0; i < nodes.size(); ++i) pos[nodes[i].id] = i;

    std::vector<std::size_t> indegree(nodes.size(), 0);
    std::vector<std::vector<std::size_t>> consumers(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (NodeId in : nodes[i].inputs) {
            if (in == kInputId) continue;
            auto it = pos.find(in);
            if (it == pos.end()) {
                throw ShapeError("node '" + nodes[i].name + "' references unknown input id " +
                                 std::to_string(in));
            }
            ++indegree[i];
            consumers[it->second].push_back(i);
        }
    }

    // Min-heap over insertion index keeps the order stable.
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (indegree[i] == 0) ready.push(i);
    }

    std::vector<NodeId> order;
    order.reserve(nodes.size());
    while (!ready.empty()) {
        std::size_t i = ready.top();
        ready.pop();
        order.push_back(nodes[i].id);
        for (std::size_t c : consumers[i]) {
            if (--indegree[c] == 0) ready.push(c);
        }
    }
    if (order.size() != nodes.size()) {
        throw CycleError("layer graph contains a cycle");
    }
    return order;
}

// ---------------------------------------------------------------------------
// Shape inference
// ---------------------------------------------------------------------------

namespace detail {

inline TensorShape input_shape_of(const LayerGraph& graph, const LayerNode& node,
                                  NodeId ref) {
    if (ref == kInputId) return graph.input_shape();
    const auto& src = graph.node(ref);
    if (!src.shape) {
        throw ShapeError("node '" + node.name + "': input '" + src.name +
                         "' has no inferred shape");
    }
    return *src.shape;
}

inline TensorShape infer_node_shape(const LayerGraph& graph, const LayerNode& node) {
    std::vector<TensorShape> in;
    in.reserve(node.inputs.size());
    for (NodeId ref : node.inputs) in.push_back(input_shape_of(graph, node, ref));

    struct Visitor {
        const LayerNode& node;
        const std::vector<TensorShape>& in;

        [[noreturn]] void fail(const std::string& msg) const {
            throw ShapeError("node '" + node.name + "': " + msg);
        }

        TensorShape operator()(const Conv2D& c) const {
            if (c.kernel_h < 1 || c.kernel_w < 1) fail("kernel dims must be >= 1");
            if (c.dilation < 1) fail("dilation must be >= 1");
            if (c.stride < 1) fail("stride must be >= 1");
            if (c.out_channels < 1) fail("out_channels must be >= 1");
            if (c.groups < 1) fail("groups must be >= 1");
            const TensorShape& s = in[0];
            if (s.channels % c.groups != 0) {
                fail("groups " + std::to_string(c.groups) + " does not divide input channels " +
                     std::to_string(s.channels));
            }
            if (c.out_channels % c.groups != 0) {
                fail("groups " + std::to_string(c.groups) + " does not divide out_channels " +
                     std::to_string(c.out_channels));
            }
            // "same" zero padding: H -> ceil(H/stride).
            return TensorShape{static_cast<std::uint32_t>(ceil_div(s.height, c.stride)),
                               static_cast<std::uint32_t>(ceil_div(s.width, c.stride)),
                               c.out_channels};
        }

        TensorShape operator()(const Pool& p) const {
            if (p.window < 1 || p.stride < 1) fail("pool window/stride must be >= 1");
            const TensorShape& s = in[0];
            if (p.window > s.height || p.window > s.width) {
                fail("pool window " + std::to_string(p.window) + " exceeds spatial dims " +
                     s.str());
            }
            return TensorShape{static_cast<std::uint32_t>(ceil_div(s.height, p.stride)),
                               static_cast<std::uint32_t>(ceil_div(s.width, p.stride)),
                               s.channels};
        }

        TensorShape operator()(const GlobalPool&) const {
            return TensorShape{1, 1, in[0].channels};
        }

        TensorShape operator()(const UpsampleNearest& u) const {
            if (u.factor < 2) fail("upsample factor must be >= 2");
            return TensorShape{in[0].height * u.factor, in[0].width * u.factor,
                               in[0].channels};
        }

        TensorShape operator()(const Concat&) const {
            std::uint32_t channels = 0;
            for (const auto& s : in) {
                if (s.height != in[0].height || s.width != in[0].width) {
                    fail("concat inputs must share spatial dims (" + in[0].str() + " vs " +
                         s.str() + ")");
                }
                channels += s.channels;
            }
            return TensorShape{in[0].height, in[0].width, channels};
        }

        TensorShape operator()(const Add&) const {
            for (const auto& s : in) {
                if (!(s == in[0])) {
                    fail("add inputs must have identical shapes (" + in[0].str() + " vs " +
                         s.str() + ")");
                }
            }
            return in[0];
        }

        TensorShape operator()(const Multiply&) const {
            // Identical shapes, or trailing operands broadcast as 1x1xC gates.
            for (std::size_t i = 1; i < in.size(); ++i) {
                const auto& s = in[i];
                const bool same = s == in[0];
                const bool gate = s.height == 1 && s.width == 1 && s.channels == in[0].channels;
                if (!same && !gate) {
                    fail("multiply operand " + std::to_string(i) + " must match " +
                         in[0].str() + " or broadcast as 1x1x" +
                         std::to_string(in[0].channels) + ", got " + s.str());
                }
            }
            return in[0];
        }

        TensorShape operator()(const Dense& d) const {
            if (d.out_units < 1) fail("out_units must be >= 1");
            const TensorShape& s = in[0];
            if (s.height != 1 || s.width != 1) {
                fail("dense expects a 1x1xC input, got " + s.str());
            }
            return TensorShape{1, 1, d.out_units};
        }

        TensorShape operator()(const Activation&) const { return in[0]; }

        TensorShape operator()(const Slice& sl) const {
            if (sl.count < 1) fail("slice count must be >= 1");
            const TensorShape& s = in[0];
            if (static_cast<std::uint64_t>(sl.begin) + sl.count > s.channels) {
                fail("slice [" + std::to_string(sl.begin) + ", " +
                     std::to_string(sl.begin + sl.count) + ") exceeds " +
                     std::to_string(s.channels) + " channels");
            }
            return TensorShape{s.height, s.width, sl.count};
        }
    };

    return std::visit(Visitor{node, in}, node.kind);
}

} // namespace detail

// Fills every node's shape (and input-channel) annotation. Pure: returns an
// annotated copy; idempotent. Also checks reachability from the graph input.
inline LayerGraph infer_shapes(const LayerGraph& graph) {
    LayerGraph out = graph;
    require_valid(out.input_shape(), "graph input");

    for (NodeId id : topological_order(out)) {
        LayerNode& n = out.node(id);
        n.shape = detail::infer_node_shape(out, n);
        n.in_channels = detail::input_shape_of(out, n, n.inputs[0]).channels;
    }

    // Every node must be reachable from the input.
    std::unordered_set<NodeId> reachable;
    bool grew = true;
    while (grew) {
        grew = false;
        for (const auto& n : out.nodes()) {
            if (reachable.count(n.id)) continue;
            for (NodeId in : n.inputs) {
                if (in == kInputId || reachable.count(in)) {
                    reachable.insert(n.id);
                    grew = true;
                    break;
                }
            }
        }
    }
    for (const auto& n : out.nodes()) {
        if (!reachable.count(n.id)) {
            throw ShapeError("node '" + n.name + "' is not reachable from the graph input");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// MAC counting
//
// Conv2D: H_out*W_out*K_h*K_w*(C_in/groups)*C_out. Dense: in*out. All other
// kinds cost zero MACs here; their cycle cost is owned by the performance
// model, matching the fused per-layer accounting of the hardware reports.
// ---------------------------------------------------------------------------

inline std::uint64_t count_macs(const LayerNode& node) {
    if (!node.shape || !node.in_channels) {
        throw ShapeError("node '" + node.name + "': count_macs requires inferred shapes");
    }
    if (const auto* c = std::get_if<Conv2D>(&node.kind)) {
        const TensorShape& o = *node.shape;
        return static_cast<std::uint64_t>(o.height) * o.width * c->kernel_h * c->kernel_w *
               (*node.in_channels / c->groups) * c->out_channels;
    }
    if (const auto* d = std::get_if<Dense>(&node.kind)) {
        return static_cast<std::uint64_t>(*node.in_channels) * d->out_units;
    }
    return 0;
}

// Fills the macs annotation on every node.
inline LayerGraph annotate_macs(const LayerGraph& graph) {
    LayerGraph out = graph;
    for (NodeId id : topological_order(out)) {
        LayerNode& n = out.node(id);
        n.macs = count_macs(n);
    }
    return out;
}

inline LayerGraph infer_and_count(const LayerGraph& graph) {
    return annotate_macs(infer_shapes(graph));
}

// ---------------------------------------------------------------------------
// Hardware-constraint validation
// ---------------------------------------------------------------------------

struct Violation {
    NodeId node_id = 0;
    std::string node_name;
    std::string message;
};

// Checks every compute node against the array's kernel and channel bounds.
// The kernel bound applies to the dilated footprint d*(k-1)+1. The channel
// bound applies to the per-filter input depth the weight RAM must hold, i.e.
// C_in/groups for convolutions and in_units for dense layers. Violations are
// data, not errors: an empty list means the graph is mappable.
inline std::vector<Violation> validate_hw_constraints(const LayerGraph& graph,
                                                      const HwConfig& hw) {
    std::vector<Violation> out;
    for (const auto& n : graph.nodes()) {
        if (!n.shape || !n.in_channels) {
            throw ShapeError("node '" + n.name + "': validation requires inferred shapes");
        }
        if (const auto* c = std::get_if<Conv2D>(&n.kind)) {
            const std::uint32_t extent = std::max(c->effective_extent_h(), c->effective_extent_w());
            if (extent > hw.max_kernel) {
                out.push_back({n.id, n.name,
                               "effective kernel extent " + std::to_string(extent) +
                                   " exceeds max_kernel " + std::to_string(hw.max_kernel)});
            }
            const std::uint32_t depth = *n.in_channels / c->groups;
            if (depth > hw.max_channels) {
                out.push_back({n.id, n.name,
                               "input channels per filter " + std::to_string(depth) +
                                   " exceed max_channels " + std::to_string(hw.max_channels)});
            }
        } else if (std::get_if<Dense>(&n.kind)) {
            if (*n.in_channels > hw.max_channels) {
                out.push_back({n.id, n.name,
                               "input units " + std::to_string(*n.in_channels) +
                                   " exceed max_channels " + std::to_string(hw.max_channels)});
            }
        }
    }
    return out;
}

} // namespace cgraseg
