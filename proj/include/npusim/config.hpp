// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "npusim/common.hpp"

namespace npusim {

// ---------------------------------------------------------------------------
// Hardware
// ---------------------------------------------------------------------------

struct CoreConfig {
    int systolic_dim = 128;
    int vector_lanes = 64;  // 64 ALUs per lane
    Bytes sram_bytes = Bytes{32} << 20;
    // When sram_bw_scaled is set the SRAM port width follows the array:
    // systolic_dim * sram_bw_per_sa_lane bytes/cycle.
    bool sram_bw_scaled = true;
    double sram_bw_per_sa_lane = 4.0;
    double sram_bandwidth = 512.0;  // bytes/cycle, used when not scaled
    double hbm_bandwidth = 64.0;    // bytes/cycle
    Cycle hbm_latency = 100;
    Bytes hbm_capacity = Bytes{16} << 30;
    int max_outstanding = 16;
    Bytes dma_txn_bytes = 512;
    bool inject_per_tile = false;
    int softmax_passes = 4;

    double effective_sram_bandwidth() const {
        return sram_bw_scaled ? systolic_dim * sram_bw_per_sa_lane : sram_bandwidth;
    }
    std::uint64_t vector_alus() const { return static_cast<std::uint64_t>(vector_lanes) * 64; }

    bool operator==(const CoreConfig &) const = default;
};

struct AreaModel {
    double coeff_sa = 1.0;        // per systolic MAC
    double coeff_vec = 0.25;      // per vector ALU
    double coeff_sram = 2000.0;   // per MB of SRAM
    double coeff_hbm_if = 50.0;   // per GB/s of HBM bandwidth

    bool operator==(const AreaModel &) const = default;
};

struct ChipConfig {
    int mesh_rows = 8;
    int mesh_cols = 8;
    double core_frequency = 500e6;  // Hz
    CoreConfig default_core;
    std::map<CoreId, CoreConfig> core_overrides;
    // One flit per cycle per directed link, so this is also the flit size.
    Bytes noc_link_bandwidth = 32;
    Cycle noc_handshake_cycles = 1;
    Bytes noc_max_packet_bytes = 1024;
    AreaModel area;

    int num_cores() const { return mesh_rows * mesh_cols; }
    const CoreConfig &core(CoreId id) const {
        auto it = core_overrides.find(id);
        return it == core_overrides.end() ? default_core : it->second;
    }
    int row_of(CoreId id) const { return id / mesh_cols; }
    int col_of(CoreId id) const { return id % mesh_cols; }
    CoreId id_of(int row, int col) const { return row * mesh_cols + col; }

    bool operator==(const ChipConfig &) const = default;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct MoeConfig {
    int num_experts = 0;
    int active_experts = 0;
    int expert_intermediate = 0;

    bool operator==(const MoeConfig &) const = default;
};

struct ModelConfig {
    std::string name = "model";
    int num_layers = 0;
    int hidden_size = 0;
    int num_q_heads = 0;
    int num_kv_heads = 0;
    int head_dim = 0;
    int ffn_intermediate = 0;
    int vocab_size = 0;
    int dtype_bytes = 2;
    bool tie_embeddings = false;
    std::optional<MoeConfig> moe;

    int q_width() const { return num_q_heads * head_dim; }
    int kv_width() const { return num_kv_heads * head_dim; }
    /// Per-token FFN intermediate width actually computed (active experts only).
    int ffn_active_width() const {
        return moe ? moe->active_experts * moe->expert_intermediate : ffn_intermediate;
    }

    bool operator==(const ModelConfig &) const = default;
};

struct MemoryFootprint {
    Bytes weight_bytes = 0;         // all parameters, every expert
    Bytes active_weight_bytes = 0;  // parameters touched by one token
    Bytes kv_bytes_per_token = 0;
    Bytes activation_bytes_per_token = 0;
};

MemoryFootprint model_memory_footprint(const ModelConfig &model);

/// Parameters held by one decoder layer (all experts).
std::uint64_t layer_parameter_count(const ModelConfig &model);

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------

struct RequestSpec {
    double arrival_s = 0.0;
    std::uint32_t prompt = 1;
    std::uint32_t output = 1;

    bool operator==(const RequestSpec &) const = default;
};

struct LengthDist {
    double mean = 128.0;
    double sigma = 0.3;  // lognormal shape; 0 gives fixed lengths

    bool operator==(const LengthDist &) const = default;
};

struct GeneratorSpec {
    double rate = 1.0;  // requests/s, 0 = burst at t=0
    std::uint32_t count = 1;
    std::uint64_t seed = 0;
    LengthDist prompt;
    LengthDist output;
    std::uint32_t max_len = 8192;
    // When set the prompt mean is ratio * output mean and the sampled prompt
    // lengths are rescaled so the sample-mean ratio matches.
    std::optional<double> ratio;

    bool operator==(const GeneratorSpec &) const = default;
};

struct WorkloadSpec {
    std::vector<RequestSpec> requests;

    bool operator==(const WorkloadSpec &) const = default;
};

/// Materializes a generator deterministically from its seed.
WorkloadSpec generate_workload(const GeneratorSpec &gen);

struct TraceOptions {
    double output_mean = 64.0;
    double sigma = 0.3;
    std::uint32_t max_len = 8192;
};

/// Poisson arrivals at `rate` (0 = all at t=0) with lognormal lengths whose
/// sample-mean prompt:output ratio is `ratio`.
WorkloadSpec synthesize_trace(double ratio, std::uint32_t count, double rate, std::uint64_t seed,
                              const TraceOptions &opts = {});

/// JSON-Lines trace: {"arrival_s":float,"prompt":int,"output":int} per line.
WorkloadSpec read_trace_jsonl(const std::filesystem::path &path);
void write_trace_jsonl(const WorkloadSpec &workload, std::ostream &out);

// ---------------------------------------------------------------------------
// Serving and simulation
// ---------------------------------------------------------------------------

enum class ServingMode { kDisaggregated, kFused };
enum class PlacementFlavor { kDpPrioritized, kPpPrioritized };
enum class MemoryMode { kTlm, kAnalytic };
enum class PartitionStrategy { kInputOnly, kMn1d, kK1d, kMnk2d };
enum class PlacementStrategy { kLinearSeq, kLinearInterleave, kRing, kMesh2d };

struct Parallelism {
    int tp = 1;
    int pp = 1;

    bool operator==(const Parallelism &) const = default;
};

struct ServingConfig {
    ServingMode mode = ServingMode::kDisaggregated;
    PlacementFlavor flavor = PlacementFlavor::kPpPrioritized;
    int ratio_prefill = 2;
    int ratio_decode = 1;
    int dp = 4;  // groups for dp-prioritized placement
    Parallelism prefill{4, 1};
    Parallelism decode{4, 1};
    Parallelism fused{4, 1};
    int budget_per_core = 8;
    std::uint32_t chunk_size = 256;
    int prefill_cost_units = 4;
    int max_batch = 64;  // live decode requests per instance
    // Share of the SRAM left after activations and temporaries that KV may
    // take; unset gives KV priority up to its full working set.
    std::optional<double> kv_sram_fraction;
    // Unset: chosen per GEMM from its shape.
    std::optional<PartitionStrategy> partition;
    PlacementStrategy placement = PlacementStrategy::kRing;
    // Applied to every decode core after the P/D split; materialized into
    // chip.core_overrides at load time.
    std::optional<CoreConfig> decode_core;

    bool operator==(const ServingConfig &) const = default;
};

struct SimConfig {
    MemoryMode memory_mode = MemoryMode::kTlm;
    Cycle horizon_cycles = 1'000'000'000'000ULL;
    bool record_transactions = false;

    bool operator==(const SimConfig &) const = default;
};

struct Config {
    ChipConfig chip;
    ModelConfig model;
    WorkloadSpec workload;
    ServingConfig serving;
    SimConfig sim;

    bool operator==(const Config &) const = default;
};

// ---------------------------------------------------------------------------
// Loading, validation, serialization
// ---------------------------------------------------------------------------

/// Reads, validates and materializes a JSON config. Relative trace paths
/// resolve against the config file's directory.
Config load_config(const std::filesystem::path &path);
Config load_config_string(std::string_view text, const std::filesystem::path &base_dir = {});
Config config_from_json(const nlohmann::json &doc, const std::filesystem::path &base_dir = {});

/// Canonical JSON with every default filled and the workload materialized.
nlohmann::json serialize(const Config &config);

void validate(const Config &config);

/// 64-bit FNV-1a over the canonical serialization.
std::string config_fingerprint(const Config &config);

double chip_area(const ChipConfig &chip);
double core_area(const CoreConfig &core, const AreaModel &area, double core_frequency);

// Unit parsing. Sizes take KB/MB/GB (1024-based); bandwidths take GB/s or
// MB/s (decimal) converted to bytes/cycle at `frequency`, or a bare number
// already in bytes/cycle.
Bytes parse_size(const nlohmann::json &value, const std::string &field);
double parse_bandwidth(const nlohmann::json &value, double frequency, const std::string &field);
double parse_frequency(const nlohmann::json &value, const std::string &field);

std::string to_string(PartitionStrategy s);
std::string to_string(PlacementStrategy s);
std::string to_string(ServingMode m);
std::string to_string(PlacementFlavor f);
std::string to_string(MemoryMode m);
PartitionStrategy partition_strategy_from_string(std::string_view s);
PlacementStrategy placement_strategy_from_string(std::string_view s);
MemoryMode memory_mode_from_string(std::string_view s);

}  // namespace npusim
