#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cgraseg/errors.hpp"
#include "cgraseg/graph.hpp"
#include "cgraseg/hw_config.hpp"

// Performance model of the layer graph mapped onto the PE array.
//
// The estimator is an efficiency-factored roofline: the unconditional lower
// bound is ceil(MACs / PE-count) cycles, divided by a per-type efficiency
// fraction and charged a fixed pipeline-fill overhead per pass, where a pass
// covers pe_cols output channels by pe_rows output rows. A calibration file
// can pin measured per-layer cycles verbatim; the model is honest about what
// is derived versus calibrated. Report rows follow the fused granularity of
// the hardware's layer table: a conv absorbs immediately-following pool and
// activation nodes.
//
// Memory traffic is reported for information only (input + output bytes plus
// weight bytes times reload passes); the accounting basis of the published
// numbers is not recoverable, so it carries no pass/fail meaning.

namespace cgraseg {

struct LayerPerf {
    std::uint32_t layer_index = 0;
    std::string name;
    std::uint64_t ops = 0;    // MACs
    std::uint64_t cycles = 0;
    double utilization = 0.0; // ops / (cycles * pe_count), 0 when cycles == 0
    std::uint64_t mem_bytes = 0;
    std::string type_tag;
};

struct PerfReport {
    std::vector<LayerPerf> rows;
    std::uint64_t total_cycles = 0;
    std::optional<double> latency_seconds; // absent when total_cycles == 0
    std::optional<double> fps;
};

// One row of the reference/calibration CSV (ops is in millions, as published).
struct RefRow {
    std::uint32_t layer = 0;
    double ops_m = 0.0;
    std::uint64_t cycles = 0;
    double util_pct = 0.0;
    double mem_mb = 0.0;
    std::string type;

    std::uint64_t ops_count() const {
        return static_cast<std::uint64_t>(std::llround(ops_m * 1e6));
    }
};

struct EfficiencyModel {
    std::optional<double> default_efficiency = 0.75;
    std::map<std::string, double> per_type;      // type tag -> fraction in (0, 1]
    std::uint32_t pipeline_fill_cycles = 16;     // fixed overhead per pass
    std::map<std::uint32_t, RefRow> overrides;   // layer index -> pinned row

    double efficiency_for(const std::string& tag) const {
        auto it = per_type.find(tag);
        if (it != per_type.end()) return check(it->second, tag);
        if (default_efficiency) return check(*default_efficiency, tag);
        throw PerfError("no efficiency defined for layer type '" + tag + "'");
    }

private:
    static double check(double e, const std::string& tag) {
        if (!(e > 0.0) || e > 1.0) {
            throw PerfError("efficiency for '" + tag + "' must lie in (0, 1]");
        }
        return e;
    }
};

// ---------------------------------------------------------------------------
// Per-layer primitives
// ---------------------------------------------------------------------------

// Compute-bound lower bound: ceil(MACs / PE count).
inline std::uint64_t ideal_cycles(std::uint64_t macs, const HwConfig& hw) {
    return ceil_div(macs, hw.pe_count());
}

inline std::uint64_t ideal_cycles(const LayerNode& node, const HwConfig& hw) {
    if (!node.macs) throw PerfError("ideal_cycles requires counted MACs");
    return ideal_cycles(*node.macs, hw);
}

// Passes needed to cover the output: ceil(C_out/pe_cols) * ceil(H_out/pe_rows).
inline std::uint64_t array_passes(const TensorShape& out, const HwConfig& hw) {
    return ceil_div(out.channels, hw.pe_cols) * ceil_div(out.height, hw.pe_rows);
}

// ceil(ideal / efficiency) + pipeline-fill overhead per pass.
inline std::uint64_t estimate_cycles(std::uint64_t macs, const TensorShape& out,
                                     const std::string& type_tag, const HwConfig& hw,
                                     const EfficiencyModel& eff) {
    const double e = eff.efficiency_for(type_tag);
    const std::uint64_t ideal = ideal_cycles(macs, hw);
    const auto scaled = static_cast<std::uint64_t>(std::ceil(static_cast<double>(ideal) / e));
    return scaled + static_cast<std::uint64_t>(eff.pipeline_fill_cycles) * array_passes(out, hw);
}

inline std::uint64_t estimate_cycles(const LayerNode& node, const HwConfig& hw,
                                     const EfficiencyModel& eff) {
    if (!node.macs || !node.shape) {
        throw PerfError("estimate_cycles requires inferred shapes and counted MACs");
    }
    return estimate_cycles(*node.macs, *node.shape, kind_name(node.kind), hw, eff);
}

inline double utilization(std::uint64_t ops, std::uint64_t cycles, const HwConfig& hw) {
    if (cycles == 0) throw PerfError("utilization undefined for zero cycles");
    return static_cast<double>(ops) /
           (static_cast<double>(cycles) * static_cast<double>(hw.pe_count()));
}

// Input + output bytes plus weight bytes times reload passes. Activations and
// weights are one byte per element. Weights reload once when the per-column
// filter slice fits the weight RAM, otherwise once per output row block.
inline std::uint64_t estimate_memory(const LayerGraph& graph, const LayerNode& node,
                                     const HwConfig& hw) {
    if (!node.shape || !node.in_channels) {
        throw PerfError("estimate_memory requires inferred shapes");
    }
    std::uint64_t in_bytes = 0;
    for (NodeId ref : node.inputs) {
        const TensorShape s =
            ref == kInputId ? graph.input_shape() : graph.node(ref).shape.value();
        in_bytes += s.elements() * hw.act_bits / 8;
    }
    const std::uint64_t out_bytes = node.shape->elements() * hw.act_bits / 8;

    std::uint64_t weight_bytes = 0;
    std::uint64_t reloads = 1;
    if (const auto* c = std::get_if<Conv2D>(&node.kind)) {
        const std::uint64_t weights = static_cast<std::uint64_t>(c->kernel_h) * c->kernel_w *
                                      (*node.in_channels / c->groups) * c->out_channels;
        weight_bytes = weights * hw.weight_bits / 8;
        const std::uint64_t per_column = static_cast<std::uint64_t>(c->kernel_h) * c->kernel_w *
                                         (*node.in_channels / c->groups) *
                                         ceil_div(c->out_channels, hw.pe_cols);
        if (per_column > hw.weight_ram_depth) {
            reloads = ceil_div(node.shape->height, hw.pe_rows);
        }
    } else if (const auto* d = std::get_if<Dense>(&node.kind)) {
        // Dense layers have a single output row: weights stream exactly once.
        const std::uint64_t weights = static_cast<std::uint64_t>(*node.in_channels) * d->out_units;
        weight_bytes = weights * hw.weight_bits / 8;
    }
    return in_bytes + out_bytes + weight_bytes * reloads;
}

// ---------------------------------------------------------------------------
// Row fusion
// ---------------------------------------------------------------------------

struct FusedRow {
    NodeId root_id = 0;
    NodeId tail_id = 0; // last absorbed node (== root_id when none)
    std::uint64_t ops = 0;
    std::string type_tag;
};

namespace detail {

inline std::string base_tag(const LayerKind& kind) {
    struct Visitor {
        std::string operator()(const Conv2D&) const { return "Conv"; }
        std::string operator()(const Pool&) const { return "Pool"; }
        std::string operator()(const GlobalPool&) const { return "Pool"; }
        std::string operator()(const UpsampleNearest&) const { return "Upsample"; }
        std::string operator()(const Concat&) const { return "Concat"; }
        std::string operator()(const Add&) const { return "Add"; }
        std::string operator()(const Multiply&) const { return "Multiply"; }
        std::string operator()(const Dense&) const { return "Dense"; }
        std::string operator()(const Activation&) const { return "Act"; }
        std::string operator()(const Slice&) const { return "Slice"; }
    };
    return std::visit(Visitor{}, kind);
}

} // namespace detail

// Fuses each conv (or other compute node) with immediately-following pool and
// activation nodes, provided the producer feeds only that consumer. Matches
// the published table's "Conv+Pool" / "Conv+Softmax" granularity.
inline std::vector<FusedRow> fuse_rows(const LayerGraph& graph) {
    std::map<NodeId, std::size_t> consumer_count;
    for (const auto& n : graph.nodes()) {
        for (NodeId in : n.inputs) {
            if (in != kInputId) ++consumer_count[in];
        }
    }
    for (NodeId out : graph.outputs()) ++consumer_count[out];

    std::vector<FusedRow> rows;
    std::map<NodeId, std::size_t> row_of; // node -> row index
    for (NodeId id : topological_order(graph)) {
        const LayerNode& n = graph.node(id);
        if (!n.macs || !n.shape) {
            throw PerfError("fuse_rows requires inferred shapes and counted MACs");
        }
        const bool fusable = std::holds_alternative<Pool>(n.kind) ||
                             std::holds_alternative<GlobalPool>(n.kind) ||
                             std::holds_alternative<Activation>(n.kind);
        if (fusable && n.inputs.size() == 1 && n.inputs[0] != kInputId &&
            consumer_count[n.inputs[0]] == 1) {
            auto it = row_of.find(n.inputs[0]);
            if (it != row_of.end() && rows[it->second].tail_id == n.inputs[0]) {
                FusedRow& row = rows[it->second];
                row.tail_id = id;
                row.ops += *n.macs;
                if (std::holds_alternative<Pool>(n.kind) ||
                    std::holds_alternative<GlobalPool>(n.kind)) {
                    row.type_tag += "+Pool";
                } else if (const auto* a = std::get_if<Activation>(&n.kind);
                           a && a->op == ActOp::kSoftmax) {
                    row.type_tag += "+Softmax";
                }
                row_of[id] = it->second;
                continue;
            }
        }
        FusedRow row;
        row.root_id = id;
        row.tail_id = id;
        row.ops = *n.macs;
        row.type_tag = detail::base_tag(n.kind);
        row_of[id] = rows.size();
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Report construction
// ---------------------------------------------------------------------------

inline PerfReport finalize_report(std::vector<LayerPerf> rows, const HwConfig& hw) {
    PerfReport report;
    report.rows = std::move(rows);
    for (const auto& r : report.rows) report.total_cycles += r.cycles;
    if (report.total_cycles > 0) {
        report.latency_seconds = static_cast<double>(report.total_cycles) / hw.clock_hz;
        report.fps = 1.0 / *report.latency_seconds;
    }
    return report;
}

// Builds the per-layer report. When the efficiency model carries calibration
// overrides, the override rows are the ground-truth layer sequence and are
// reproduced verbatim (utilization recomputed from ops and cycles). Without
// calibration the rows come from the fused layer graph and the analytic
// estimator. Batch > 1 multiplies ops and cycles per image independently.
inline PerfReport analyze(const LayerGraph& graph, const HwConfig& hw,
                          const EfficiencyModel& eff, std::uint32_t batch = 1) {
    hw.validate();
    if (batch < 1 || batch > hw.max_batch) {
        throw PerfError("batch must lie in [1, max_batch=" + std::to_string(hw.max_batch) + "]");
    }

    std::vector<LayerPerf> rows;
    if (!eff.overrides.empty()) {
        for (const auto& [layer, ref] : eff.overrides) {
            LayerPerf r;
            r.layer_index = layer;
            r.name = "layer" + std::to_string(layer);
            r.ops = ref.ops_count() * batch;
            r.cycles = ref.cycles * batch;
            r.utilization = r.cycles ? utilization(r.ops, r.cycles, hw) : 0.0;
            r.mem_bytes = static_cast<std::uint64_t>(std::llround(ref.mem_mb * 1e6)) * batch;
            r.type_tag = ref.type;
            rows.push_back(std::move(r));
        }
        return finalize_report(std::move(rows), hw);
    }

    const LayerGraph annotated = infer_and_count(graph);
    std::uint32_t index = 0;
    for (const FusedRow& f : fuse_rows(annotated)) {
        const LayerNode& root = annotated.node(f.root_id);
        const LayerNode& tail = annotated.node(f.tail_id);
        LayerPerf r;
        r.layer_index = index++;
        r.name = root.name;
        r.ops = f.ops * batch;
        r.cycles = estimate_cycles(f.ops, root.shape.value(), f.type_tag, hw, eff) * batch;
        r.utilization = r.cycles ? utilization(r.ops, r.cycles, hw) : 0.0;
        std::uint64_t mem = estimate_memory(annotated, root, hw);
        if (f.tail_id != f.root_id) {
            // Fused group: report the group's final output, not the root's.
            mem += tail.shape->elements() * hw.act_bits / 8;
            mem -= root.shape->elements() * hw.act_bits / 8;
        }
        r.mem_bytes = mem * batch;
        r.type_tag = f.type_tag;
        rows.push_back(std::move(r));
    }
    return finalize_report(std::move(rows), hw);
}

// ---------------------------------------------------------------------------
// Reference comparison
// ---------------------------------------------------------------------------

struct Deviation {
    std::uint32_t layer = 0;
    double rel_cycle_error = 0.0;
    double util_diff_pp = 0.0;
    bool cycle_ok = true;
    bool util_ok = true;
};

struct ComparisonResult {
    std::vector<Deviation> rows;
    bool all_ok = true;
};

// Per-row relative cycle error and absolute utilization difference in
// percentage points. A row fails only when strictly greater than the
// tolerance.
inline ComparisonResult compare_to_reference(const std::vector<RefRow>& report,
                                             const std::vector<RefRow>& reference,
                                             double cycle_tol, double util_tol_pp) {
    if (report.size() != reference.size()) {
        throw PerfError("row count mismatch: report has " + std::to_string(report.size()) +
                        " rows, reference has " + std::to_string(reference.size()));
    }
    ComparisonResult result;
    for (std::size_t i = 0; i < report.size(); ++i) {
        Deviation d;
        d.layer = reference[i].layer;
        d.rel_cycle_error =
            std::abs(static_cast<double>(report[i].cycles) -
                     static_cast<double>(reference[i].cycles)) /
            static_cast<double>(reference[i].cycles);
        d.util_diff_pp = std::abs(report[i].util_pct - reference[i].util_pct);
        d.cycle_ok = !(d.rel_cycle_error > cycle_tol);
        d.util_ok = !(d.util_diff_pp > util_tol_pp);
        result.all_ok = result.all_ok && d.cycle_ok && d.util_ok;
        result.rows.push_back(d);
    }
    return result;
}

inline std::vector<RefRow> report_to_ref_rows(const PerfReport& report) {
    std::vector<RefRow> rows;
    for (const auto& r : report.rows) {
        rows.push_back(RefRow{r.layer_index, static_cast<double>(r.ops) / 1e6, r.cycles,
                              r.utilization * 100.0, static_cast<double>(r.mem_bytes) / 1e6,
                              r.type_tag});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV / JSON formats
// ---------------------------------------------------------------------------

inline constexpr const char* kPerfCsvHeader = "layer,ops,cycles,util_pct,mem_mb,type";

// Reads both reference files and emitted reports (footer rows are skipped).
inline std::vector<RefRow> load_perf_csv(std::istream& is, const std::string& what) {
    std::string line;
    if (!std::getline(is, line)) throw IoError(what + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kPerfCsvHeader) {
        throw IoError(what + ": expected header '" + std::string(kPerfCsvHeader) + "'");
    }
    std::vector<RefRow> rows;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.empty()) continue;
        if (fields[0] == "total_cycles" || fields[0] == "latency_ms" || fields[0] == "fps") {
            continue; // report footer
        }
        if (fields.size() != 6) {
            throw IoError(what + ": expected 6 fields, got " + std::to_string(fields.size()) +
                          " in line '" + line + "'");
        }
        try {
            // stoul/stoull accept leading '-' by wrapping; reject it up front.
            if (fields[0].starts_with('-') || fields[2].starts_with('-')) {
                throw std::invalid_argument("negative count");
            }
            RefRow r;
            r.layer = static_cast<std::uint32_t>(std::stoul(fields[0]));
            r.ops_m = std::stod(fields[1]);
            r.cycles = std::stoull(fields[2]);
            r.util_pct = std::stod(fields[3]);
            r.mem_mb = std::stod(fields[4]);
            r.type = fields[5];
            rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw IoError(what + ": malformed row '" + line + "'");
        }
    }
    return rows;
}

inline std::vector<RefRow> load_perf_csv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    return load_perf_csv(is, path);
}

inline EfficiencyModel with_calibration(EfficiencyModel eff, const std::vector<RefRow>& rows) {
    for (const auto& r : rows) eff.overrides[r.layer] = r;
    return eff;
}

inline std::string report_to_csv(const PerfReport& report) {
    std::string out = std::string(kPerfCsvHeader) + "\n";
    char buf[256];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%u,%.4f,%llu,%.2f,%.4f,%s\n", r.layer_index,
                      static_cast<double>(r.ops) / 1e6,
                      static_cast<unsigned long long>(r.cycles), r.utilization * 100.0,
                      static_cast<double>(r.mem_bytes) / 1e6, r.type_tag.c_str());
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "total_cycles,%llu\n",
                  static_cast<unsigned long long>(report.total_cycles));
    out += buf;
    if (report.latency_seconds) {
        std::snprintf(buf, sizeof(buf), "latency_ms,%.3f\n", *report.latency_seconds * 1e3);
        out += buf;
    }
    if (report.fps) {
        std::snprintf(buf, sizeof(buf), "fps,%.2f\n", *report.fps);
        out += buf;
    }
    return out;
}

inline nlohmann::json report_to_json(const PerfReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"layer", r.layer_index},
                        {"name", r.name},
                        {"ops", r.ops},
                        {"cycles", r.cycles},
                        {"utilization", r.utilization},
                        {"mem_bytes", r.mem_bytes},
                        {"type", r.type_tag}});
    }
    nlohmann::json doc{{"rows", rows}, {"total_cycles", report.total_cycles}};
    doc["latency_ms"] =
        report.latency_seconds ? nlohmann::json(*report.latency_seconds * 1e3) : nlohmann::json();
    doc["fps"] = report.fps ? nlohmann::json(*report.fps) : nlohmann::json();
    return doc;
}

} // namespace cgraseg
