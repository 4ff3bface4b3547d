// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npusim/config.hpp"
#include "npusim/executor.hpp"
#include "npusim/partition.hpp"
#include "npusim/placement.hpp"

namespace npusim {

struct OracleResult {
    std::string scenario;
    double analytic = 0;
    double simulated = 0;

    double relative_error() const;
};

/// Outcome of running one task graph on a fresh engine.
struct GraphRun {
    Cycle cycles = 0;
    std::vector<Bytes> injected;  // NoC bytes injected per core
    std::vector<Bytes> received;
    std::uint64_t events = 0;
};

GraphRun run_graph(const ChipConfig &chip, TaskGraph graph, MemoryMode mode = MemoryMode::kAnalytic);

/// Runs the plan's collective schedule alone on the placed pipe and compares
/// NoC bytes injected by every rank with the analytic per-core volume. The
/// simulated value is the rank farthest from the analytic one.
OracleResult oracle_comm_volume(const PartitionPlan &plan, const PlacementPlan &placement, const ChipConfig &chip,
                                int pipe = 0);

/// Latency of one decoder layer's projection GEMMs back to back with
/// resident weights, every GEMM partitioned with `strategy` over `ranks`.
/// nullopt when a GEMM cannot be partitioned that way.
std::optional<Cycle> projection_latency(const ModelConfig &model, const ChipConfig &chip,
                                        const std::vector<CoreId> &ranks, PartitionStrategy strategy,
                                        std::uint64_t seq);

struct CrossoverRow {
    std::uint64_t seq = 0;
    std::optional<Cycle> k1d, mn1d, mnk2d;
};

struct CrossoverReport {
    std::vector<CrossoverRow> rows;
    /// First sequence length at which k-1d stops beating mn-1d.
    std::optional<std::uint64_t> crossover_seq;
};

/// 1-D strategies run on a ring placement, 2-D on a mesh-2d placement.
CrossoverReport oracle_crossover(const ModelConfig &model, const ChipConfig &chip, int tp,
                                 const std::vector<std::uint64_t> &seqs);

struct PlacementRow {
    int tp = 1;
    PlacementStrategy strategy = PlacementStrategy::kRing;
    int pipes = 1;
    Cycle cycles = 0;
};

/// Single-request prefill of `seq` tokens through min(layers, cores / tp)
/// pipeline stages placed with each strategy. Weights are resident. 1-D
/// placements use the 1-D chooser (k-1d when M < K, else mn-1d); mesh-2d
/// uses mnk-2d where the grid allows it.
std::vector<PlacementRow> oracle_placement(const ModelConfig &model, const ChipConfig &chip, int tp,
                                           std::uint64_t seq, const std::vector<PlacementStrategy> &strategies);

}  // namespace npusim
