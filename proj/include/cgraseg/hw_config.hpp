#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cgraseg/errors.hpp"

namespace cgraseg {

// Parameter record of the target PE array. Defaults describe the deployed
// configuration: a 16x96 grid (1,536 MAC units) at 200 MHz, 8-bit
// activations/weights with 32-bit accumulation and 16-bit bias, 256-deep
// weight RAM, 32,768-deep edge RAM, 128-bit AXI with 16-beat bursts, and
// support for kernels up to 9x9 and 256 input channels per filter.
struct HwConfig {
    std::uint32_t pe_rows = 16;
    std::uint32_t pe_cols = 96;
    double clock_hz = 200e6;
    std::uint32_t act_bits = 8;
    std::uint32_t weight_bits = 8;
    std::uint32_t bias_bits = 16;
    std::uint32_t acc_bits = 32;
    std::uint32_t max_batch = 2;
    std::uint32_t weight_ram_depth = 256;
    std::uint32_t edge_ram_depth = 32768;
    std::uint32_t max_channels = 256;
    std::uint32_t axi_bits = 128;
    std::uint32_t max_burst_beats = 16;
    std::uint32_t header_bits = 64;
    std::uint32_t max_kernel = 9;

    std::uint64_t pe_count() const {
        return static_cast<std::uint64_t>(pe_rows) * pe_cols;
    }

    double cycle_seconds() const { return 1.0 / clock_hz; }

    void validate() const {
        auto positive = [](std::uint64_t v, const char* name) {
            if (v < 1) throw ConfigError(std::string("HwConfig.") + name + " must be >= 1");
        };
        positive(pe_rows, "pe_rows");
        positive(pe_cols, "pe_cols");
        positive(act_bits, "act_bits");
        positive(weight_bits, "weight_bits");
        positive(bias_bits, "bias_bits");
        positive(acc_bits, "acc_bits");
        positive(max_batch, "max_batch");
        positive(weight_ram_depth, "weight_ram_depth");
        positive(edge_ram_depth, "edge_ram_depth");
        positive(max_channels, "max_channels");
        positive(axi_bits, "axi_bits");
        positive(max_burst_beats, "max_burst_beats");
        positive(header_bits, "header_bits");
        positive(max_kernel, "max_kernel");
        if (!(clock_hz > 0)) throw ConfigError("HwConfig.clock_hz must be positive");
    }
};

// Loads a HwConfig from JSON. Field names mirror the struct; every key is
// optional (defaults apply) but unknown keys are rejected.
inline HwConfig hw_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw IoError("hardware config must be a JSON object");
    HwConfig hw;
    for (const auto& [key, value] : doc.items()) {
        if (key == "pe_rows") hw.pe_rows = value.get<std::uint32_t>();
        else if (key == "pe_cols") hw.pe_cols = value.get<std::uint32_t>();
        else if (key == "clock_hz") hw.clock_hz = value.get<double>();
        else if (key == "act_bits") hw.act_bits = value.get<std::uint32_t>();
        else if (key == "weight_bits") hw.weight_bits = value.get<std::uint32_t>();
        else if (key == "bias_bits") hw.bias_bits = value.get<std::uint32_t>();
        else if (key == "acc_bits") hw.acc_bits = value.get<std::uint32_t>();
        else if (key == "max_batch") hw.max_batch = value.get<std::uint32_t>();
        else if (key == "weight_ram_depth") hw.weight_ram_depth = value.get<std::uint32_t>();
        else if (key == "edge_ram_depth") hw.edge_ram_depth = value.get<std::uint32_t>();
        else if (key == "max_channels") hw.max_channels = value.get<std::uint32_t>();
        else if (key == "axi_bits") hw.axi_bits = value.get<std::uint32_t>();
        else if (key == "max_burst_beats") hw.max_burst_beats = value.get<std::uint32_t>();
        else if (key == "header_bits") hw.header_bits = value.get<std::uint32_t>();
        else if (key == "max_kernel") hw.max_kernel = value.get<std::uint32_t>();
        else throw IoError("hardware config: unknown key '" + key + "'");
    }
    hw.validate();
    return hw;
}

inline nlohmann::json hw_config_to_json(const HwConfig& hw) {
    return nlohmann::json{
        {"pe_rows", hw.pe_rows},
        {"pe_cols", hw.pe_cols},
        {"clock_hz", hw.clock_hz},
        {"act_bits", hw.act_bits},
        {"weight_bits", hw.weight_bits},
        {"bias_bits", hw.bias_bits},
        {"acc_bits", hw.acc_bits},
        {"max_batch", hw.max_batch},
        {"weight_ram_depth", hw.weight_ram_depth},
        {"edge_ram_depth", hw.edge_ram_depth},
        {"max_channels", hw.max_channels},
        {"axi_bits", hw.axi_bits},
        {"max_burst_beats", hw.max_burst_beats},
        {"header_bits", hw.header_bits},
        {"max_kernel", hw.max_kernel},
    };
}

} // namespace cgraseg
