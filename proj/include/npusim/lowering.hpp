// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "npusim/compute.hpp"
#include "npusim/config.hpp"
#include "npusim/executor.hpp"
#include "npusim/partition.hpp"

namespace npusim {

enum class LayerOpKind { kGemm, kAttention, kVector };

/// One step of a decoder layer as seen by a TP group.
struct LayerOp {
    LayerOpKind kind = LayerOpKind::kVector;
    std::string name;
    GemmShape gemm;                  // kGemm: the unpartitioned shape
    PartitionPlan plan;              // kGemm
    std::uint64_t elements = 0;      // kVector: per core
    int heads = 0;                   // kAttention: per core
    std::uint64_t flops_per_core = 0;
    int comm_steps = 0;              // collective steps of the GEMM
};

/// Picks the partition for one projection: the forced strategy when given
/// (InfeasibleError when its dims do not divide), else choose_strategy.
/// With tp > 1 and no partitionable dimension the error names the dimension
/// and the degree.
PartitionPlan projection_plan(const std::string &name, const GemmShape &gemm, int tp, int hidden_size,
                              std::optional<PartitionStrategy> forced);

/// Ordered ops of one decoder layer for `tokens` new tokens attending over
/// `kv_len` cached tokens, split over `tp` cores.
std::vector<LayerOp> layer_op_list(const ModelConfig &model, Phase phase, std::uint64_t tokens,
                                   std::uint64_t kv_len, int tp,
                                   std::optional<PartitionStrategy> strategy = std::nullopt);

/// Work of one sequence in an iteration.
struct SeqWork {
    RequestId request = 0;
    std::uint64_t new_tokens = 0;
    std::uint64_t kv_len = 0;   // context length after this step
    Phase phase = Phase::kDecode;
    Bytes hbm_kv_bytes = 0;     // spilled KV read per layer per core
    bool emits_token = false;   // contributes a row to the output projection
};

/// A pipeline stage: a TP group of cores owning a contiguous layer range.
struct StageSpec {
    const ModelConfig *model = nullptr;
    const ChipConfig *chip = nullptr;
    std::vector<CoreId> ranks;  // TP ring order
    int layers = 1;
    bool lm_head = false;
    double stream_fraction = 1.0;  // share of weights re-read from HBM per use
    std::optional<PartitionStrategy> strategy;
};

/// Expected number of distinct experts hit by `tokens` tokens routed to
/// `active` of `experts` experts each.
double expected_distinct_experts(int experts, int active, std::uint64_t tokens);

/// Lowers stage iterations onto executor task graphs, caching collective
/// schedules across iterations.
class StageLowerer {
   public:
    /// Appends the stage's work to `graph`. `entry[r]` lists tasks rank r
    /// waits for; returns, per rank, the task that closes the stage.
    std::vector<std::uint32_t> lower(TaskGraph &graph, const StageSpec &stage, const std::vector<SeqWork> &seqs,
                                     const std::vector<std::vector<std::uint32_t>> &entry);

    /// Lowers a single partitioned GEMM with weight loads of `weight_dma`
    /// bytes per rank. Updates `frontier` per rank.
    void lower_gemm(TaskGraph &graph, const ChipConfig &chip, const std::vector<CoreId> &ranks,
                    const CollectiveSchedule &sched, Bytes weight_dma, std::vector<std::vector<std::uint32_t>> &frontier);

    const CollectiveSchedule &schedule(const PartitionPlan &plan);

   private:
    using Key = std::tuple<int, int, int, int, std::uint64_t, std::uint64_t, std::uint64_t, int>;
    std::map<Key, CollectiveSchedule> cache_;
};

}  // namespace npusim
