// cgraseg command-line front end.
//
// Subcommands:
//   describe   print the layer table of a model (config or graph JSON)
//   analyze    emit the per-layer performance report (CSV or JSON)
//   infer      run quantized inference on a PPM image, write a PGM class map
//   eval       score predicted class maps against ground truth
//   validate   compare a report CSV against a reference CSV with tolerances
//   schedule   emit the 240-epoch training-schedule table
//   genweights write deterministic fixed-seed weights for a model
//
// Exit codes: 0 success, 1 validation failure, 2 usage error, 3 I/O or data
// error. Machine-parseable output goes to stdout, diagnostics to stderr.

#include <clocale>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cgraseg/executor.hpp"
#include "cgraseg/graph_json.hpp"
#include "cgraseg/image_io.hpp"
#include "cgraseg/lmiinet.hpp"
#include "cgraseg/metrics.hpp"
#include "cgraseg/perf.hpp"
#include "cgraseg/schedule.hpp"
#include "cgraseg/weight_store.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidationFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw cgraseg::IoError("cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        is >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw cgraseg::IoError(path + ": invalid JSON (" + e.what() + ")");
    }
    return doc;
}

// --model accepts either a built graph (has "nodes") or a ModelConfig
// document; --scale overrides the config's scale_divisor.
cgraseg::LayerGraph load_model(const std::string& path, unsigned scale_override) {
    const nlohmann::json doc = load_json_file(path);
    if (doc.is_object() && doc.contains("nodes")) {
        if (scale_override != 0) {
            throw cgraseg::IoError("--scale applies to model configs, not built graphs");
        }
        return cgraseg::graph_from_json(doc);
    }
    cgraseg::ModelConfig cfg = cgraseg::model_config_from_json(doc);
    if (scale_override != 0) {
        cfg.scale_divisor = scale_override;
        cfg.validate();
    }
    return cgraseg::build_lmiinet(cfg);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw cgraseg::IoError("cannot open '" + path + "' for writing");
    os << text;
    if (!os) throw cgraseg::IoError("write failed for '" + path + "'");
}

int cmd_describe(const std::string& model_path, unsigned scale, const std::string& emit_path) {
    using namespace cgraseg;
    const LayerGraph graph = infer_and_count(load_model(model_path, scale));
    const ParameterSummary params = parameter_summary(graph);

    std::map<NodeId, LayerParams> by_id;
    for (const auto& row : params.rows) by_id[row.node_id] = row;

    std::cout << "name,kind,shape,macs,weights,biases\n";
    std::uint64_t total_macs = 0;
    for (NodeId id : topological_order(graph)) {
        const LayerNode& n = graph.node(id);
        const auto it = by_id.find(id);
        const std::uint64_t weights = it == by_id.end() ? 0 : it->second.weight_count;
        const std::uint64_t biases = it == by_id.end() ? 0 : it->second.bias_count;
        total_macs += *n.macs;
        std::cout << n.name << "," << kind_name(n.kind) << "," << n.shape->str() << ","
                  << *n.macs << "," << weights << "," << biases << "\n";
    }
    std::cout << "total_macs," << total_macs << "\n";
    std::cout << "total_weights," << params.total_weights << "\n";
    std::cout << "total_biases," << params.total_biases << "\n";

    if (!emit_path.empty()) {
        write_text_file(emit_path, graph_to_json(graph).dump(2) + "\n");
        std::cerr << "wrote graph JSON to " << emit_path << "\n";
    }
    return kExitOk;
}

int cmd_analyze(const std::string& model_path, const std::string& hw_path,
                const std::string& calib_path, const std::string& out_path) {
    using namespace cgraseg;
    const LayerGraph graph = load_model(model_path, 0);
    const HwConfig hw = hw_config_from_json(load_json_file(hw_path));
    EfficiencyModel eff;
    if (!calib_path.empty()) {
        eff = with_calibration(eff, load_perf_csv_file(calib_path));
    }
    const PerfReport report = analyze(graph, hw, eff);

    const std::string csv = report_to_csv(report);
    std::cout << csv;
    if (!out_path.empty()) {
        if (out_path.size() >= 5 && out_path.substr(out_path.size() - 5) == ".json") {
            write_text_file(out_path, report_to_json(report).dump(2) + "\n");
        } else {
            write_text_file(out_path, csv);
        }
        std::cerr << "wrote report to " << out_path << "\n";
    }
    return kExitOk;
}

int cmd_infer(const std::string& model_path, const std::string& weights_path,
              const std::string& image_path, const std::string& out_path) {
    using namespace cgraseg;
    const LayerGraph graph = load_model(model_path, 0);
    const WeightStore store = read_lmqw_file(weights_path);
    const Image image = read_ppm(image_path);
    const LabelMap map = run_inference(graph, store, image);
    write_pgm(out_path, map);
    std::cout << "output," << out_path << "\n";
    std::cout << "width," << map.width << "\n";
    std::cout << "height," << map.height << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, unsigned classes,
             unsigned ignore) {
    using namespace cgraseg;
    namespace fs = std::filesystem;
    if (!fs::is_directory(pred_dir)) throw IoError("'" + pred_dir + "' is not a directory");
    if (!fs::is_directory(gt_dir)) throw IoError("'" + gt_dir + "' is not a directory");

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(pred_dir)) {
        if (entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .pgm predictions found in '" + pred_dir + "'");

    ConfusionMatrix cm(classes, ignore);
    for (const auto& pred_path : files) {
        const fs::path gt_path = fs::path(gt_dir) / pred_path.filename();
        if (!fs::exists(gt_path)) {
            throw IoError("missing ground truth for '" + pred_path.filename().string() + "'");
        }
        cm.update(read_pgm(pred_path.string()), read_pgm(gt_path.string()));
    }
    std::cout << metrics_to_json(cm).dump(2) << "\n";
    return kExitOk;
}

int cmd_validate(const std::string& report_path, const std::string& reference_path,
                 double cycle_tol, double util_tol) {
    using namespace cgraseg;
    const auto report = load_perf_csv_file(report_path);
    const auto reference = load_perf_csv_file(reference_path);
    const ComparisonResult result = compare_to_reference(report, reference, cycle_tol, util_tol);

    std::cout << "layer,rel_cycle_error,util_diff_pp,cycle_ok,util_ok\n";
    char buf[128];
    for (const auto& d : result.rows) {
        std::snprintf(buf, sizeof(buf), "%u,%.6f,%.4f,%d,%d\n", d.layer, d.rel_cycle_error,
                      d.util_diff_pp, d.cycle_ok ? 1 : 0, d.util_ok ? 1 : 0);
        std::cout << buf;
    }
    std::cout << "result," << (result.all_ok ? "pass" : "fail") << "\n";
    return result.all_ok ? kExitOk : kExitValidationFailure;
}

int cmd_schedule(const std::string& out_path) {
    using namespace cgraseg;
    if (out_path.empty()) {
        write_schedule_csv(std::cout);
    } else {
        std::ofstream os(out_path, std::ios::binary);
        if (!os) throw IoError("cannot open '" + out_path + "' for writing");
        write_schedule_csv(os);
        std::cout << "output," << out_path << "\n";
    }
    return kExitOk;
}

int cmd_genweights(const std::string& model_path, std::uint64_t seed,
                   const std::string& out_path) {
    using namespace cgraseg;
    const LayerGraph graph = load_model(model_path, 0);
    const WeightStore store = generate_weights(graph, seed);
    write_lmqw_file(out_path, store);
    std::cout << "output," << out_path << "\n";
    std::cout << "tensors," << store.tensors.size() << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    std::setlocale(LC_ALL, "C");

    CLI::App app{"Quantized LMIINet model and PE-array performance toolkit"};
    app.require_subcommand(1);

    // describe
    auto* describe = app.add_subcommand("describe", "Print the per-layer table of a model");
    std::string d_model, d_emit;
    unsigned d_scale = 0;
    describe->add_option("--model", d_model, "Model config or graph JSON")->required();
    describe->add_option("--scale", d_scale, "Override the config's scale divisor");
    describe->add_option("--emit", d_emit, "Also write the built graph JSON here");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Emit the performance report");
    std::string a_model, a_hw, a_calib, a_out;
    analyze->add_option("--model", a_model, "Model config or graph JSON")->required();
    analyze->add_option("--hw", a_hw, "Hardware config JSON")->required();
    analyze->add_option("--calib", a_calib, "Calibration CSV pinning per-layer cycles");
    analyze->add_option("--out", a_out, "Report path (.csv or .json)")->required();

    // infer
    auto* infer = app.add_subcommand("infer", "Run quantized inference on a PPM image");
    std::string i_model, i_weights, i_image, i_out;
    infer->add_option("--model", i_model, "Model config or graph JSON")->required();
    infer->add_option("--weights", i_weights, "LMQW weight file")->required();
    infer->add_option("--image", i_image, "Input image (binary PPM, P6)")->required();
    infer->add_option("--out", i_out, "Output class map (binary PGM, P5)")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
    std::string e_pred, e_gt;
    unsigned e_classes = 19, e_ignore = 255;
    eval->add_option("--pred", e_pred, "Directory of predicted .pgm maps")->required();
    eval->add_option("--gt", e_gt, "Directory of ground-truth .pgm maps")->required();
    eval->add_option("--classes", e_classes, "Number of evaluation classes");
    eval->add_option("--ignore", e_ignore, "Ignore label in ground truth");

    // validate
    auto* validate = app.add_subcommand("validate", "Compare a report against a reference");
    std::string v_report, v_reference;
    double v_cycle_tol = 0.10, v_util_tol = 0.15;
    validate->add_option("--report", v_report, "Report CSV")->required();
    validate->add_option("--reference", v_reference, "Reference CSV")->required();
    validate->add_option("--cycle-tol", v_cycle_tol, "Relative cycle tolerance");
    validate->add_option("--util-tol", v_util_tol, "Utilization tolerance (percentage points)");

    // schedule
    auto* schedule = app.add_subcommand("schedule", "Emit the training-schedule table");
    std::string s_out;
    schedule->add_option("--out", s_out, "CSV path (stdout when omitted)");

    // genweights
    auto* genweights = app.add_subcommand("genweights", "Write fixed-seed weights");
    std::string g_model, g_out;
    std::uint64_t g_seed = 1;
    genweights->add_option("--model", g_model, "Model config or graph JSON")->required();
    genweights->add_option("--seed", g_seed, "RNG seed");
    genweights->add_option("--out", g_out, "LMQW output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (describe->parsed()) return cmd_describe(d_model, d_scale, d_emit);
        if (analyze->parsed()) return cmd_analyze(a_model, a_hw, a_calib, a_out);
        if (infer->parsed()) return cmd_infer(i_model, i_weights, i_image, i_out);
        if (eval->parsed()) return cmd_eval(e_pred, e_gt, e_classes, e_ignore);
        if (validate->parsed()) return cmd_validate(v_report, v_reference, v_cycle_tol, v_util_tol);
        if (schedule->parsed()) return cmd_schedule(s_out);
        if (genweights->parsed()) return cmd_genweights(g_model, g_seed, g_out);
    } catch (const cgraseg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitUsage;
}
