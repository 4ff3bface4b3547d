// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "npusim/config.hpp"
#include "npusim/engine.hpp"
#include "npusim/executor.hpp"
#include "npusim/kv_memory.hpp"
#include "npusim/lowering.hpp"

namespace npusim {

// ---------------------------------------------------------------------------
// Core partitioning and parallelism
// ---------------------------------------------------------------------------

struct PdGroup {
    std::vector<CoreId> prefill_cores;  // locality order
    std::vector<CoreId> decode_cores;
};

struct PdPartition {
    ServingMode mode = ServingMode::kDisaggregated;
    PlacementFlavor flavor = PlacementFlavor::kPpPrioritized;
    Parallelism prefill;
    Parallelism decode;
    std::vector<PdGroup> groups;        // one per DP group (one for pp-prioritized)
    std::vector<CoreId> prefill_cores;  // union over groups
    std::vector<CoreId> decode_cores;
    std::vector<CoreId> fused_cores;    // fused mode: every core, snake order
    std::vector<CoreId> spare_cores;
};

/// Splits the mesh between prefill and decode. pp-prioritized puts prefill
/// rows at the top and bottom edges and decode rows in the middle;
/// dp-prioritized cuts the mesh into `dp` blocks and splits each by the
/// ratio. Throws ValidationError when either side cannot host one instance.
PdPartition partition_cores(const ServingConfig &serving, const ChipConfig &chip);

enum class StageKind { kPrefill, kDecode };

struct ParallelismChoice {
    int tp = 1;
    int pp = 1;
    int tbt_multiplier = 1;  // decode: every token waits for all pp stages
    std::string note;
};

/// Prefill: keeps the requested tp and picks the deepest pipeline whose
/// depth divides the layer count. Decode: tensor parallel first; a pp
/// candidate whose TBT multiplier exceeds `max_tbt_multiplier` is rejected.
ParallelismChoice decide_parallelism(StageKind stage, const ModelConfig &model, int cores, int tp_hint = 1,
                                     int pp_candidate = 1, int max_tbt_multiplier = 1 << 30);

// ---------------------------------------------------------------------------
// Fused budget accounting
// ---------------------------------------------------------------------------

struct FusionBudget {
    int budget = 8;  // units per iteration for the instance
    std::uint32_t chunk_size = 256;
    int prefill_cost_units = 4;
    int decode_cost_units = 1;
};

struct PrefillCandidate {
    RequestId request = 0;
    std::uint64_t remaining = 0;  // prompt tokens not yet processed
    std::uint64_t progress = 0;
};

struct PrefillChunk {
    RequestId request = 0;
    std::uint64_t offset = 0;
    std::uint64_t tokens = 0;
};

struct IterationPlan {
    int budget = 0;
    int units = 0;
    std::vector<RequestId> decodes;
    std::vector<RequestId> deferred;
    std::vector<PrefillChunk> chunks;

    bool empty() const { return decodes.empty() && chunks.empty(); }
};

/// Decodes first (one unit each, in the given order), then at most one
/// chunk per prefilling request while whole chunks fit the budget.
IterationPlan build_fused_iteration(const std::vector<RequestId> &decodes,
                                    const std::vector<PrefillCandidate> &prefills, const FusionBudget &budget);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ServingMetrics {
    std::size_t requests = 0;
    std::size_t completed = 0;
    std::uint64_t tokens = 0;
    Cycle makespan = 0;
    std::optional<double> ttft_mean;  // cycles
    std::optional<double> tbt_mean;   // cycles
    std::optional<double> e2e_mean;   // cycles
    std::optional<double> ttft_p99;
    std::optional<double> e2e_p99;
    double throughput = 0;           // tokens per cycle
    double throughput_per_area = 0;  // tokens per cycle per area unit
};

/// Mean inter-token gap of one request; nullopt with fewer than two tokens.
std::optional<double> request_tbt(const RequestRecord &r);

ServingMetrics record_metrics(const std::vector<RequestRecord> &requests, double area);

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

enum class RequestPhase { kQueued, kPrefilling, kAwaitingKvTransfer, kDecoding, kDone };
std::string to_string(RequestPhase p);

struct Request {
    RequestId id = 0;
    Cycle arrival = 0;
    std::uint32_t prompt_len = 0;
    std::uint32_t output_len = 0;
    RequestPhase phase = RequestPhase::kQueued;
    std::uint64_t progress = 0;   // prompt tokens processed
    std::uint32_t generated = 0;  // output tokens produced
    int instance = -1;            // prefill or fused instance
    int decode_instance = -1;
    int group = -1;
    std::uint64_t last_served = 0;  // fused: iteration that last ran its decode
    bool reserved = false;          // fused: HBM reservation held
};

struct FusedIterationLog {
    int instance = 0;
    Cycle start = 0;
    Cycle end = 0;
    int budget = 0;
    int units = 0;
    int decodes = 0;
    int deferred = 0;
    int chunks = 0;
    std::uint64_t chunk_tokens = 0;
};

struct InstanceInfo {
    std::string role;  // prefill, decode, fused
    int tp = 1;
    int pp = 1;
    std::vector<std::vector<CoreId>> stages;
    std::vector<SramLayout> layouts;
    std::vector<std::uint32_t> kv_blocks;
    std::vector<Bytes> kv_block_bytes;
    std::vector<std::uint32_t> kv_high_water_blocks;
    std::vector<Bytes> kv_spilled_bytes;  // per core
    std::vector<Bytes> hbm_kv_high_water;  // per core
    std::vector<double> weight_stream_fraction;
};

class ServingSimulator : public Component, public JobListener {
   public:
    explicit ServingSimulator(const Config &config);
    ~ServingSimulator() override;

    /// Runs the whole workload. Throws LivelockError past the horizon.
    void run();

    void handle(const SimEvent &ev) override;
    std::string name() const override { return "scheduler"; }
    std::string event_name(int kind) const override;
    void on_job_done(std::uint64_t job, Cycle t) override;

    Engine &engine() { return engine_; }
    const Engine &engine() const { return engine_; }
    Executor &executor() { return *executor_; }
    const Executor &executor() const { return *executor_; }
    const PdPartition &partition() const { return partition_; }
    const std::vector<Request> &requests() const { return requests_; }
    const std::vector<FusedIterationLog> &fused_log() const { return fused_log_; }
    std::vector<InstanceInfo> instances() const;
    /// Every (from, to) phase change observed.
    const std::set<std::pair<RequestPhase, RequestPhase>> &transitions() const { return transitions_; }
    /// Requests whose first decode token came before their KV landed.
    std::size_t early_tokens() const { return early_tokens_; }
    /// Sum of chunk tokens processed per request (fused mode).
    const std::map<RequestId, std::uint64_t> &chunk_tokens() const { return chunk_tokens_; }
    std::uint64_t kv_transfer_bytes() const { return kv_transfer_bytes_; }
    Cycle kv_transfer_cycles() const { return kv_transfer_cycles_; }
    void set_event_dump(std::ostream *out) { engine_.set_event_dump(out); }

   private:
    struct Stage;
    struct Instance;
    struct Item;
    enum Kind { kArrival };

    void build_instances();
    void make_instance(int role, const std::vector<CoreId> &cores, const Parallelism &par, int group);
    void on_arrival(RequestId id);
    void set_phase(Request &r, RequestPhase p);
    void try_start(int instance, int stage);
    void start_item(int instance, int stage, std::uint64_t item);
    void item_done(std::uint64_t item, Cycle t);
    void prefill_done(Item &item, Cycle t);
    void decode_done(Item &item, Cycle t);
    void fused_done(Item &item, Cycle t);
    void try_transfers();
    void transfer_done(std::uint64_t item, Cycle t);
    void start_group(int instance, int group);
    void kick_fused(int instance);
    void finish_request(Request &r, Cycle t);
    std::uint64_t new_item();
    std::vector<std::string> stuck_report() const;

    Config cfg_;
    Engine engine_;
    int id_;
    std::unique_ptr<Executor> executor_;
    StageLowerer lowerer_;
    PdPartition partition_;
    std::vector<std::unique_ptr<Instance>> instances_;
    std::vector<Request> requests_;
    std::map<std::uint64_t, Item> items_;
    std::map<std::uint64_t, std::uint64_t> job_items_;
    std::uint64_t next_item_ = 1;
    std::size_t next_arrival_ = 0;
    std::deque<RequestId> awaiting_transfer_;
    std::vector<FusedIterationLog> fused_log_;
    std::uint64_t fused_iterations_ = 0;
    std::set<std::pair<RequestPhase, RequestPhase>> transitions_;
    std::size_t early_tokens_ = 0;
    std::map<RequestId, std::uint64_t> chunk_tokens_;
    std::uint64_t kv_transfer_bytes_ = 0;
    Cycle kv_transfer_cycles_ = 0;
    FusionBudget budget_;
};

}  // namespace npusim
