// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <vector>

#include "npusim/common.hpp"
#include "npusim/config.hpp"

namespace npusim {

struct PlacementPlan {
    PlacementStrategy strategy = PlacementStrategy::kRing;
    int pipes = 1;
    int cores_per_pipe = 1;
    // For mesh-2d the rank grid shape (rank = i * grid_cols + j).
    int grid_rows = 1;
    int grid_cols = 1;
    std::vector<std::vector<CoreId>> mapping;  // [pipe][rank] -> core

    CoreId core(int pipe, int rank) const { return mapping.at(pipe).at(rank); }
};

int manhattan(const ChipConfig &chip, CoreId a, CoreId b);

/// Lays out `pipes` pipes of `cores_per_pipe` cores each. Consecutive pipes
/// are placed next to each other so pipeline traffic stays short.
/// Throws InfeasibleError when the strategy cannot embed the shape.
PlacementPlan place(PlacementStrategy strategy, const ChipConfig &chip, int pipes, int cores_per_pipe);

/// Largest distance between ring successors (rank r -> r+1 mod n) in a pipe.
int max_successor_hop(const ChipConfig &chip, const std::vector<CoreId> &ring);

/// Largest distance between neighbours along rows and columns of a
/// grid_rows x grid_cols rank grid (rings in both dimensions).
int max_grid_hop(const ChipConfig &chip, const std::vector<CoreId> &ranks, int grid_rows, int grid_cols);

/// Orders an arbitrary core set as a TP ring. kRing looks for a cycle with
/// unit hops and falls back to the interleaved order along a nearest-neighbour
/// path; kLinearInterleave uses that interleaved order directly; other
/// strategies keep the given order.
std::vector<CoreId> order_group(const ChipConfig &chip, std::vector<CoreId> cores, PlacementStrategy strategy);

/// Ring order 0, 2, 4, ..., 5, 3, 1 over positions of a line of n.
std::vector<int> interleaved_positions(int n);

/// Boustrophedon ordering of every core on the mesh.
std::vector<CoreId> snake_order(const ChipConfig &chip);

}  // namespace npusim
