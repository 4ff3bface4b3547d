// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npusim/compute.hpp"
#include "npusim/config.hpp"
#include "npusim/placement.hpp"

namespace npusim {

struct PartitionPlan {
    PartitionStrategy strategy = PartitionStrategy::kInputOnly;
    int num = 1;
    int r_num = 1;  // mnk-2d only
    int c_num = 1;
    GemmShape gemm;
};

/// Builds a plan and checks divisibility of the partitioned weight dims.
/// mnk-2d picks the most square r x c factorization with both sides >= 2
/// unless r_num/c_num are given. Throws InfeasibleError.
PartitionPlan make_plan(PartitionStrategy strategy, const GemmShape &gemm, int num, int r_num = 0, int c_num = 0);

/// Whether make_plan would succeed.
bool plan_feasible(PartitionStrategy strategy, const GemmShape &gemm, int num);

/// k-1d when M < K, else mnk-2d when a 2-D grid fits, else mn-1d; num = 1
/// is input-only. Falls back along that list when dims do not divide.
PartitionPlan choose_strategy(const GemmShape &gemm, int num, int hidden_size);

struct CostBreakdown {
    Bytes input_bytes = 0;   // per core
    Bytes weight_bytes = 0;  // per core
    Bytes output_bytes = 0;  // per core
    Bytes comm_bytes = 0;    // sent per core over the whole GEMM
    int max_hop = 0;
    int num_steps = 0;
};

/// Per-core memory and communication cost of a plan. Communication is in
/// elements times dtype; max_hop comes from the placement when given.
CostBreakdown analytic_cost(const PartitionPlan &plan, int dtype_bytes, const ChipConfig *chip = nullptr,
                            const std::vector<CoreId> *ranks = nullptr);

/// Exact communication volume in elements, as a rational evaluated in
/// long double (for reporting fractional cases).
long double comm_elements(const PartitionPlan &plan);

enum class CollOpKind { kCompute, kSend, kReduce };
enum class ChunkOp { kCopy, kReduce };

struct CollOp {
    CollOpKind kind = CollOpKind::kCompute;
    int rank = 0;   // executing rank (sender for kSend)
    int peer = -1;  // receiver for kSend
    GemmShape shape;             // kCompute
    Bytes bytes = 0;             // kSend
    std::uint64_t elements = 0;  // kReduce (vector adds)
    int step = 0;
    int chunk = -1;
    ChunkOp chunk_op = ChunkOp::kCopy;
    std::vector<int> deps;  // indices of earlier ops
};

/// Compute fragments and ring transfers for one partitioned GEMM, as a DAG
/// over ranks. Ops without deps may start as soon as the rank is free.
struct CollectiveSchedule {
    PartitionPlan plan;
    std::vector<CollOp> ops;

    Bytes bytes_sent_by(int rank) const;
    int sends_by(int rank) const;
    std::uint64_t flops_by(int rank) const;
};

CollectiveSchedule collective_schedule(const PartitionPlan &plan);

/// Schedule for a concrete pipe; throws InfeasibleError when the placement
/// degree does not match the plan.
CollectiveSchedule collective_schedule(const PartitionPlan &plan, const PlacementPlan &placement, int pipe = 0);

/// Replays a schedule's chunk metadata: every mn-1d rank must end up having
/// seen every weight shard, every k-1d/2-D rank must hold fully reduced
/// chunks. Throws std::logic_error on an incomplete result.
void check_schedule_completeness(const CollectiveSchedule &schedule);

}  // namespace npusim
