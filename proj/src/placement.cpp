// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/placement.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>

#include <fmt/format.h>

namespace npusim {

namespace {

struct Block {
    int rows = 1;
    int cols = 1;
};

// Origins of blocks tiling the mesh, in snake order over the block grid.
std::vector<std::pair<int, int>> block_origins(const ChipConfig &chip, Block b) {
    std::vector<std::pair<int, int>> out;
    const int br = chip.mesh_rows / b.rows, bc = chip.mesh_cols / b.cols;
    for (int i = 0; i < br; ++i) {
        for (int k = 0; k < bc; ++k) {
            const int j = (i % 2 == 0) ? k : bc - 1 - k;
            out.emplace_back(i * b.rows, j * b.cols);
        }
    }
    return out;
}

// Unit-hop Hamiltonian cycle of an a x b rectangle, a even (rows).
std::vector<std::pair<int, int>> rect_cycle(int a, int b) {
    std::vector<std::pair<int, int>> cyc;
    if (a * b == 2) {
        cyc.emplace_back(0, 0);
        cyc.emplace_back(a == 2 ? 1 : 0, a == 2 ? 0 : 1);
        return cyc;
    }
    cyc.emplace_back(0, 0);
    for (int r = 0; r < a; ++r) {
        if (r % 2 == 0)
            for (int c = 1; c < b; ++c) cyc.emplace_back(r, c);
        else
            for (int c = b - 1; c >= 1; --c) cyc.emplace_back(r, c);
    }
    for (int r = a - 1; r >= 1; --r) cyc.emplace_back(r, 0);
    return cyc;
}

}  // namespace

int manhattan(const ChipConfig &chip, CoreId a, CoreId b) {
    return std::abs(chip.row_of(a) - chip.row_of(b)) + std::abs(chip.col_of(a) - chip.col_of(b));
}

std::vector<int> interleaved_positions(int n) {
    std::vector<int> out;
    for (int p = 0; p < n; p += 2) out.push_back(p);
    for (int p = (n % 2 == 0) ? n - 1 : n - 2; p >= 1; p -= 2) out.push_back(p);
    return out;
}

std::vector<CoreId> snake_order(const ChipConfig &chip) {
    std::vector<CoreId> out;
    for (int r = 0; r < chip.mesh_rows; ++r)
        for (int k = 0; k < chip.mesh_cols; ++k) out.push_back(chip.id_of(r, r % 2 == 0 ? k : chip.mesh_cols - 1 - k));
    return out;
}

int max_successor_hop(const ChipConfig &chip, const std::vector<CoreId> &ring) {
    if (ring.size() < 2) return 0;
    int best = 0;
    for (std::size_t i = 0; i < ring.size(); ++i) best = std::max(best, manhattan(chip, ring[i], ring[(i + 1) % ring.size()]));
    return best;
}

int max_grid_hop(const ChipConfig &chip, const std::vector<CoreId> &ranks, int gr, int gc) {
    int best = 0;
    for (int i = 0; i < gr; ++i) {
        for (int j = 0; j < gc; ++j) {
            const CoreId me = ranks[i * gc + j];
            if (gc > 1) best = std::max(best, manhattan(chip, me, ranks[i * gc + (j + 1) % gc]));
            if (gr > 1) best = std::max(best, manhattan(chip, me, ranks[((i + 1) % gr) * gc + j]));
        }
    }
    return best;
}

PlacementPlan place(PlacementStrategy strategy, const ChipConfig &chip, int pipes, int cpp) {
    if (pipes < 1 || cpp < 1) throw InfeasibleError("placement needs pipes >= 1 and cores_per_pipe >= 1");
    if (static_cast<long>(pipes) * cpp > chip.num_cores())
        throw InfeasibleError(fmt::format("{} pipes x {} cores exceed the {}-core mesh", pipes, cpp, chip.num_cores()));
    PlacementPlan plan;
    plan.strategy = strategy;
    plan.pipes = pipes;
    plan.cores_per_pipe = cpp;
    plan.grid_cols = cpp;
    const auto snake = snake_order(chip);

    if (cpp == 1) {
        for (int p = 0; p < pipes; ++p) plan.mapping.push_back({snake[p]});
        return plan;
    }

    switch (strategy) {
        case PlacementStrategy::kLinearSeq:
        case PlacementStrategy::kLinearInterleave: {
            const auto order = interleaved_positions(cpp);
            for (int p = 0; p < pipes; ++p) {
                std::vector<CoreId> seg(snake.begin() + p * cpp, snake.begin() + (p + 1) * cpp);
                if (strategy == PlacementStrategy::kLinearSeq) {
                    plan.mapping.push_back(seg);
                } else {
                    std::vector<CoreId> ring;
                    for (int pos : order) ring.push_back(seg[pos]);
                    plan.mapping.push_back(ring);
                }
            }
            return plan;
        }
        case PlacementStrategy::kRing: {
            std::vector<Block> options;
            for (int a = 1; a <= cpp; ++a) {
                if (cpp % a) continue;
                const int b = cpp / a;
                const bool cycle = cpp == 2 || (a >= 2 && b >= 2 && (a % 2 == 0 || b % 2 == 0));
                if (!cycle || chip.mesh_rows % a || chip.mesh_cols % b) continue;
                if ((chip.mesh_rows / a) * (chip.mesh_cols / b) < pipes) continue;
                options.push_back({a, b});
            }
            if (options.empty())
                throw InfeasibleError(fmt::format("no even-sided rectangle of {} cores tiles the {}x{} mesh for {} rings",
                                                  cpp, chip.mesh_rows, chip.mesh_cols, pipes));
            const Block blk = *std::min_element(options.begin(), options.end(), [](Block x, Block y) {
                const int dx = std::abs(x.rows - x.cols), dy = std::abs(y.rows - y.cols);
                return dx != dy ? dx < dy : x.rows < y.rows;
            });
            const bool rows_even = blk.rows % 2 == 0;
            auto cyc = rows_even ? rect_cycle(blk.rows, blk.cols) : rect_cycle(blk.cols, blk.rows);
            const auto origins = block_origins(chip, blk);
            for (int p = 0; p < pipes; ++p) {
                std::vector<CoreId> ring;
                for (auto [r, c] : cyc) {
                    if (!rows_even) std::swap(r, c);
                    ring.push_back(chip.id_of(origins[p].first + r, origins[p].second + c));
                }
                plan.mapping.push_back(ring);
            }
            return plan;
        }
        case PlacementStrategy::kMesh2d: {
            // most square factorization, rows <= cols
            int gr = 1;
            for (int a = 1; a * a <= cpp; ++a)
                if (cpp % a == 0) gr = a;
            int gc = cpp / gr;
            Block blk{gr, gc};
            bool transposed = false;
            auto fits = [&](Block b) {
                return chip.mesh_rows % b.rows == 0 && chip.mesh_cols % b.cols == 0 &&
                       (chip.mesh_rows / b.rows) * (chip.mesh_cols / b.cols) >= pipes;
            };
            if (!fits(blk)) {
                blk = {gc, gr};
                transposed = true;
                if (!fits(blk))
                    throw InfeasibleError(fmt::format("a {}x{} core grid does not tile the {}x{} mesh", gr, gc,
                                                      chip.mesh_rows, chip.mesh_cols));
            }
            plan.grid_rows = gr;
            plan.grid_cols = gc;
            const auto pr = interleaved_positions(blk.rows);
            const auto pc = interleaved_positions(blk.cols);
            const auto origins = block_origins(chip, blk);
            for (int p = 0; p < pipes; ++p) {
                std::vector<CoreId> ranks(cpp);
                for (int i = 0; i < gr; ++i) {
                    for (int j = 0; j < gc; ++j) {
                        const int r = transposed ? pr[j] : pr[i];
                        const int c = transposed ? pc[i] : pc[j];
                        ranks[i * gc + j] = chip.id_of(origins[p].first + r, origins[p].second + c);
                    }
                }
                plan.mapping.push_back(ranks);
            }
            return plan;
        }
    }
    throw InfeasibleError("unknown placement strategy");
}

std::vector<CoreId> order_group(const ChipConfig &chip, std::vector<CoreId> cores, PlacementStrategy strategy) {
    const int n = static_cast<int>(cores.size());
    if (n <= 2) return cores;
    auto interleave = [&] {
        std::vector<CoreId> out;
        for (int pos : interleaved_positions(n)) out.push_back(cores[pos]);
        return out;
    };
    if (strategy == PlacementStrategy::kLinearInterleave) return interleave();
    if (strategy != PlacementStrategy::kRing) return cores;

    // Depth-first search for a unit-hop Hamiltonian cycle, bounded effort.
    std::vector<int> path{0};
    std::vector<char> used(n, 0);
    used[0] = 1;
    long budget = 200000;
    std::function<bool()> dfs = [&]() -> bool {
        if (--budget < 0) return false;
        if (static_cast<int>(path.size()) == n) return manhattan(chip, cores[path.back()], cores[0]) == 1;
        for (int k = 0; k < n; ++k) {
            if (used[k] || manhattan(chip, cores[path.back()], cores[k]) != 1) continue;
            used[k] = 1;
            path.push_back(k);
            if (dfs()) return true;
            path.pop_back();
            used[k] = 0;
        }
        return false;
    };
    if (dfs()) {
        std::vector<CoreId> out;
        for (int k : path) out.push_back(cores[k]);
        return out;
    }
    return interleave();
}

}  // namespace npusim
