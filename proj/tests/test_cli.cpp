#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cgraseg/image_io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(CGRASEG_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    EXPECT_NE(pipe, nullptr);
    RunResult r;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    EXPECT_TRUE(is.good()) << path;
    return std::string(std::istreambuf_iterator<char>(is), {});
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::path(::testing::TempDir()) / "cgraseg_cli";
        fs::create_directories(dir_);
        desk_config_ = (dir_ / "desk.json").string();
        std::ofstream(desk_config_) << R"({"scale_divisor": 8})";
        hw_config_ = (dir_ / "hw.json").string();
        std::ofstream(hw_config_) << "{}";
    }

    fs::path dir_;
    std::string desk_config_;
    std::string hw_config_;
    const std::string reference_ = CGRASEG_DATA_DIR "/table2_reference.csv";
};

} // namespace

TEST_F(CliTest, DescribePrintsLayerTable) {
    const RunResult r = run_cli("describe --model " + desk_config_);
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("name,kind,shape,macs,weights,biases"), std::string::npos);
    EXPECT_NE(r.out.find("stem,conv2d,128x64x3,"), std::string::npos);
    EXPECT_NE(r.out.find("total_macs,"), std::string::npos);
}

TEST_F(CliTest, DescribeEmitsGraphJsonUsableAsModel) {
    const std::string graph_path = (dir_ / "graph.json").string();
    ASSERT_EQ(run_cli("describe --model " + desk_config_ + " --emit " + graph_path).exit_code, 0);
    const RunResult r = run_cli("describe --model " + graph_path);
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("stem,conv2d"), std::string::npos);
}

TEST_F(CliTest, DescribeScaleOverride) {
    // Full-scale stem on the default config when --scale rescales to 4.
    const RunResult r = run_cli("describe --model " + desk_config_ + " --scale 4");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("stem,conv2d,256x128x6,"), std::string::npos);
}

TEST_F(CliTest, AnalyzeWithCalibrationReproducesTotals) {
    const std::string out_csv = (dir_ / "report.csv").string();
    const RunResult r = run_cli("analyze --model " + desk_config_ + " --hw " + hw_config_ +
                                " --calib " + reference_ + " --out " + out_csv);
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("total_cycles,10020784"), std::string::npos);
    EXPECT_NE(r.out.find("latency_ms,50.104"), std::string::npos);
    EXPECT_NE(r.out.find("fps,19.96"), std::string::npos);
    EXPECT_EQ(slurp(out_csv), r.out);

    const std::string out_json = (dir_ / "report.json").string();
    ASSERT_EQ(run_cli("analyze --model " + desk_config_ + " --hw " + hw_config_ + " --calib " +
                      reference_ + " --out " + out_json)
                  .exit_code,
              0);
    const nlohmann::json doc = nlohmann::json::parse(slurp(out_json));
    EXPECT_EQ(doc.at("total_cycles").get<std::uint64_t>(), 10020784ull);
}

TEST_F(CliTest, AnalyzeUncalibratedDeskModel) {
    const std::string out_csv = (dir_ / "desk_report.csv").string();
    const RunResult r = run_cli("analyze --model " + desk_config_ + " --hw " + hw_config_ +
                                " --out " + out_csv);
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("total_cycles,"), std::string::npos);
}

TEST_F(CliTest, ValidateExitCodesFollowTolerance) {
    EXPECT_EQ(run_cli("validate --report " + reference_ + " --reference " + reference_ +
                      " --cycle-tol 0.10 --util-tol 0.15")
                  .exit_code,
              0);

    // Perturb one row's cycles by 20%: flagged at the 10% tolerance.
    const auto rows_text = slurp(reference_);
    std::string perturbed = rows_text;
    const std::string needle = "0,339.7,327681,";
    const std::string replacement = "0,339.7,393217,";
    perturbed.replace(perturbed.find(needle), needle.size(), replacement);
    const std::string bad_path = (dir_ / "perturbed.csv").string();
    std::ofstream(bad_path) << perturbed;

    const RunResult r = run_cli("validate --report " + bad_path + " --reference " + reference_ +
                                " --cycle-tol 0.10 --util-tol 0.15");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.out.find("result,fail"), std::string::npos);
}

TEST_F(CliTest, ScheduleEmits240Epochs) {
    const RunResult r = run_cli("schedule");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("epoch,phase,frozen_dec,aux,dropout,aug,lr"), std::string::npos);
    EXPECT_NE(r.out.find("\n0,1,0,0,1,1,0.0007\n"), std::string::npos);
    EXPECT_NE(r.out.find("\n239,4,0,1,1,1,7e-06\n"), std::string::npos);

    const std::string out_path = (dir_ / "schedule.csv").string();
    ASSERT_EQ(run_cli("schedule --out " + out_path).exit_code, 0);
    EXPECT_NE(slurp(out_path).find("110,3,1,1,0,0,7e-05"), std::string::npos);
}

TEST_F(CliTest, InferIsByteDeterministic) {
    using namespace cgraseg;
    // Constant-color desk-scale image.
    Image img;
    img.width = 128;
    img.height = 256;
    img.channels = 3;
    img.data.assign(static_cast<std::size_t>(img.width) * img.height * 3, 96);
    const std::string image_path = (dir_ / "input.ppm").string();
    write_ppm(image_path, img);

    const std::string weights_path = (dir_ / "weights.lmqw").string();
    ASSERT_EQ(run_cli("genweights --model " + desk_config_ + " --seed 5 --out " + weights_path)
                  .exit_code,
              0);

    const std::string out_a = (dir_ / "a.pgm").string();
    const std::string out_b = (dir_ / "b.pgm").string();
    ASSERT_EQ(run_cli("infer --model " + desk_config_ + " --weights " + weights_path +
                      " --image " + image_path + " --out " + out_a)
                  .exit_code,
              0);
    ASSERT_EQ(run_cli("infer --model " + desk_config_ + " --weights " + weights_path +
                      " --image " + image_path + " --out " + out_b)
                  .exit_code,
              0);
    EXPECT_EQ(slurp(out_a), slurp(out_b));

    const LabelMap map = read_pgm(out_a);
    EXPECT_EQ(map.width, 128u);
    EXPECT_EQ(map.height, 256u);
    for (std::uint8_t v : map.data) EXPECT_LT(v, 19);
}

TEST_F(CliTest, EvalScoresTheWorkedExample) {
    using namespace cgraseg;
    const fs::path pred_dir = dir_ / "pred";
    const fs::path gt_dir = dir_ / "gt";
    fs::create_directories(pred_dir);
    fs::create_directories(gt_dir);

    LabelMap pred = LabelMap::filled(2, 2, 0);
    pred.data = {0, 1, 1, 1};
    LabelMap gt = LabelMap::filled(2, 2, 0);
    gt.data = {0, 0, 1, 1};
    write_pgm((pred_dir / "img0.pgm").string(), pred);
    write_pgm((gt_dir / "img0.pgm").string(), gt);

    const RunResult r = run_cli("eval --pred " + pred_dir.string() + " --gt " + gt_dir.string() +
                                " --classes 2 --ignore 255");
    EXPECT_EQ(r.exit_code, 0);
    const nlohmann::json doc = nlohmann::json::parse(r.out);
    EXPECT_DOUBLE_EQ(doc.at("pixel_accuracy").get<double>(), 0.75);
    EXPECT_NEAR(doc.at("miou").get<double>(), 7.0 / 12.0, 1e-12);
}

TEST_F(CliTest, UsageAndIoExitCodes) {
    EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
    EXPECT_EQ(run_cli("describe").exit_code, 2); // missing required --model
    EXPECT_EQ(run_cli("describe --model /nonexistent/model.json").exit_code, 3);
    EXPECT_EQ(run_cli("--help").exit_code, 0);
}
