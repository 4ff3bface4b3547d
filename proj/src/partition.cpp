// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/partition.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace npusim {

namespace {

// Rows owned by `rank` when `total` rows are split as evenly as possible.
std::uint64_t split_rows(std::uint64_t total, int parts, int rank) {
    return total / parts + (static_cast<std::uint64_t>(rank) < total % parts ? 1 : 0);
}

int mod(int a, int n) { return ((a % n) + n) % n; }

std::pair<int, int> square_grid(int num) {
    int best_r = 0;
    for (int r = 2; r * r <= num; ++r)
        if (num % r == 0) best_r = r;
    if (best_r == 0) return {0, 0};
    return {best_r, num / best_r};
}

void require(bool ok, const std::string &what) {
    if (!ok) throw InfeasibleError(what);
}

}  // namespace

PartitionPlan make_plan(PartitionStrategy strategy, const GemmShape &g, int num, int r_num, int c_num) {
    require(num >= 1, "partition degree must be >= 1");
    require(g.M >= 1 && g.K >= 1 && g.N >= 1, "GEMM dims must be >= 1");
    PartitionPlan p;
    p.strategy = strategy;
    p.num = num;
    p.gemm = g;
    switch (strategy) {
        case PartitionStrategy::kInputOnly: break;
        case PartitionStrategy::kMn1d:
            require(g.N % num == 0, fmt::format("mn-1d: N={} not divisible by {}", g.N, num));
            break;
        case PartitionStrategy::kK1d:
            require(g.K % num == 0, fmt::format("k-1d: K={} not divisible by {}", g.K, num));
            require(g.N % num == 0, fmt::format("k-1d: N={} not divisible by {}", g.N, num));
            break;
        case PartitionStrategy::kMnk2d: {
            if (r_num <= 0 || c_num <= 0) std::tie(r_num, c_num) = square_grid(num);
            require(r_num >= 2 && c_num >= 2 && r_num * c_num == num,
                    fmt::format("mnk-2d: no grid with both sides >= 2 for {} cores", num));
            require(g.K % c_num == 0, fmt::format("mnk-2d: K={} not divisible by {}", g.K, c_num));
            require(g.N % r_num == 0, fmt::format("mnk-2d: N={} not divisible by {}", g.N, r_num));
            p.r_num = r_num;
            p.c_num = c_num;
            break;
        }
    }
    return p;
}

bool plan_feasible(PartitionStrategy strategy, const GemmShape &gemm, int num) {
    try {
        make_plan(strategy, gemm, num);
        return true;
    } catch (const InfeasibleError &) {
        return false;
    }
}

PartitionPlan choose_strategy(const GemmShape &gemm, int num, int /*hidden_size*/) {
    if (num <= 1) return make_plan(PartitionStrategy::kInputOnly, gemm, 1);
    std::vector<PartitionStrategy> order;
    if (gemm.M < gemm.K)
        order = {PartitionStrategy::kK1d, PartitionStrategy::kMnk2d, PartitionStrategy::kMn1d};
    else
        order = {PartitionStrategy::kMnk2d, PartitionStrategy::kMn1d, PartitionStrategy::kK1d};
    for (auto s : order)
        if (plan_feasible(s, gemm, num)) return make_plan(s, gemm, num);
    return make_plan(PartitionStrategy::kInputOnly, gemm, num);
}

long double comm_elements(const PartitionPlan &p) {
    const long double M = p.gemm.M, K = p.gemm.K, N = p.gemm.N, n = p.num;
    switch (p.strategy) {
        case PartitionStrategy::kInputOnly: return 0;
        case PartitionStrategy::kMn1d: return (n - 1) / n * (K * N);
        case PartitionStrategy::kK1d: return 2 * (n - 1) / n * (M * N);
        case PartitionStrategy::kMnk2d: {
            const long double R = p.r_num, C = p.c_num;
            return (R - 1) * (2 * (C - 1) / C * (M * N / (C * C)) + K * N / (C * R));
        }
    }
    return 0;
}

CostBreakdown analytic_cost(const PartitionPlan &p, int dtype, const ChipConfig *chip,
                            const std::vector<CoreId> *ranks) {
    CostBreakdown c;
    const auto &g = p.gemm;
    const std::uint64_t in = g.M * g.K, w = g.K * g.N, out = g.M * g.N;
    const std::uint64_t parts = p.strategy == PartitionStrategy::kMnk2d ? std::uint64_t(p.r_num) * p.c_num : p.num;
    c.input_bytes = ceil_div(in, parts) * dtype;
    c.weight_bytes = (p.strategy == PartitionStrategy::kInputOnly ? w : ceil_div(w, parts)) * dtype;
    c.output_bytes = ceil_div(out, parts) * dtype;
    c.comm_bytes = static_cast<Bytes>(std::llround(comm_elements(p) * dtype));
    switch (p.strategy) {
        case PartitionStrategy::kInputOnly: c.num_steps = 0; break;
        case PartitionStrategy::kMn1d: c.num_steps = p.num - 1; break;
        case PartitionStrategy::kK1d: c.num_steps = 2 * (p.num - 1); break;
        case PartitionStrategy::kMnk2d: c.num_steps = (p.r_num - 1) * (1 + 2 * (p.c_num - 1)); break;
    }
    if (c.num_steps == 0) {
        c.max_hop = 0;
    } else if (chip && ranks) {
        const auto sched = collective_schedule(p);
        for (const auto &op : sched.ops)
            if (op.kind == CollOpKind::kSend)
                c.max_hop = std::max(c.max_hop, manhattan(*chip, ranks->at(op.rank), ranks->at(op.peer)));
    } else {
        c.max_hop = 1;
    }
    return c;
}

Bytes CollectiveSchedule::bytes_sent_by(int rank) const {
    Bytes b = 0;
    for (const auto &op : ops)
        if (op.kind == CollOpKind::kSend && op.rank == rank) b += op.bytes;
    return b;
}

int CollectiveSchedule::sends_by(int rank) const {
    int n = 0;
    for (const auto &op : ops)
        if (op.kind == CollOpKind::kSend && op.rank == rank) ++n;
    return n;
}

std::uint64_t CollectiveSchedule::flops_by(int rank) const {
    std::uint64_t f = 0;
    for (const auto &op : ops)
        if (op.kind == CollOpKind::kCompute && op.rank == rank) f += op.shape.flops();
    return f;
}

namespace {

int add(CollectiveSchedule &s, CollOp op) {
    s.ops.push_back(std::move(op));
    return static_cast<int>(s.ops.size()) - 1;
}

CollOp compute(int rank, GemmShape shape, int step, int chunk, std::vector<int> deps) {
    CollOp op;
    op.kind = CollOpKind::kCompute;
    op.rank = rank;
    op.shape = shape;
    op.step = step;
    op.chunk = chunk;
    op.deps = std::move(deps);
    return op;
}

CollOp send(int rank, int peer, Bytes bytes, int step, int chunk, ChunkOp cop, std::vector<int> deps) {
    CollOp op;
    op.kind = CollOpKind::kSend;
    op.rank = rank;
    op.peer = peer;
    op.bytes = bytes;
    op.step = step;
    op.chunk = chunk;
    op.chunk_op = cop;
    op.deps = std::move(deps);
    return op;
}

CollOp reduce(int rank, std::uint64_t elements, int step, int chunk, std::vector<int> deps) {
    CollOp op;
    op.kind = CollOpKind::kReduce;
    op.rank = rank;
    op.elements = elements;
    op.step = step;
    op.chunk = chunk;
    op.chunk_op = ChunkOp::kReduce;
    op.deps = std::move(deps);
    return op;
}

// Ring AllReduce (reduce-scatter then all-gather) over `members` (ranks in
// ring order). partial[k] is the op producing member k's partial for chunk c
// (indexed partial[k][c]). Chunk ids are offset by `chunk_base`.
void ring_allreduce(CollectiveSchedule &s, const std::vector<int> &members,
                    const std::vector<std::vector<int>> &partial, Bytes chunk_bytes, std::uint64_t chunk_elems,
                    int chunk_base, int step_base) {
    const int n = static_cast<int>(members.size());
    std::vector<std::vector<int>> rs_send(n, std::vector<int>(n - 1, -1));
    std::vector<std::vector<int>> rs_reduce(n, std::vector<int>(n - 1, -1));
    for (int st = 0; st < n - 1; ++st) {
        for (int k = 0; k < n; ++k) {
            const int c = mod(k - st, n);
            std::vector<int> deps{partial[k][c]};
            if (st > 0) deps.push_back(rs_reduce[k][st - 1]);
            rs_send[k][st] = add(s, send(members[k], members[(k + 1) % n], chunk_bytes, step_base + st,
                                         chunk_base + c, ChunkOp::kReduce, deps));
        }
        for (int k = 0; k < n; ++k) {
            const int from = mod(k - 1, n);
            const int c = mod(from - st, n);
            rs_reduce[k][st] =
                add(s, reduce(members[k], chunk_elems, step_base + st, chunk_base + c, {rs_send[from][st], partial[k][c]}));
        }
    }
    std::vector<std::vector<int>> ag_send(n, std::vector<int>(n - 1, -1));
    for (int st = 0; st < n - 1; ++st) {
        for (int k = 0; k < n; ++k) {
            const int c = mod(k + 1 - st, n);
            std::vector<int> deps;
            if (st == 0)
                deps.push_back(rs_reduce[k][n - 2]);
            else
                deps.push_back(ag_send[mod(k - 1, n)][st - 1]);
            ag_send[k][st] = add(s, send(members[k], members[(k + 1) % n], chunk_bytes, step_base + n - 1 + st,
                                         chunk_base + c, ChunkOp::kCopy, deps));
        }
    }
}

}  // namespace

CollectiveSchedule collective_schedule(const PartitionPlan &p) {
    CollectiveSchedule s;
    s.plan = p;
    const auto &g = p.gemm;
    const int dt = g.dtype_bytes;
    const int n = p.num;
    switch (p.strategy) {
        case PartitionStrategy::kInputOnly: {
            for (int r = 0; r < n; ++r) {
                const auto rows = split_rows(g.M, n, r);
                if (rows) add(s, compute(r, {rows, g.K, g.N, dt}, 0, -1, {}));
            }
            break;
        }
        case PartitionStrategy::kMn1d: {
            const std::uint64_t ns = g.N / n;
            const Bytes shard = g.K * ns * dt;
            std::vector<std::vector<int>> snd(n, std::vector<int>(std::max(n - 1, 0), -1));
            std::vector<int> last_compute(n, -1);
            for (int st = 0; st < n; ++st) {
                for (int r = 0; r < n; ++r) {
                    const int have = mod(r - st, n);
                    std::vector<int> deps;
                    if (st > 0) deps.push_back(snd[mod(r - 1, n)][st - 1]);
                    const auto rows = split_rows(g.M, n, r);
                    if (rows) last_compute[r] = add(s, compute(r, {rows, g.K, ns, dt}, st, have, deps));
                    if (st < n - 1) {
                        std::vector<int> sdeps;
                        if (st > 0) sdeps.push_back(snd[mod(r - 1, n)][st - 1]);
                        snd[r][st] = add(s, send(r, (r + 1) % n, shard, st, have, ChunkOp::kCopy, sdeps));
                    }
                }
            }
            break;
        }
        case PartitionStrategy::kK1d: {
            const std::uint64_t ks = g.K / n, ns = g.N / n;
            // partial[r][c]: compute of output column chunk c on rank r, in
            // the order r, r-1, r-2, ... so the first send is ready first.
            std::vector<std::vector<int>> partial(n, std::vector<int>(n, -1));
            for (int k = 0; k < n; ++k) {
                for (int r = 0; r < n; ++r) {
                    const int c = mod(r - k, n);
                    partial[r][c] = add(s, compute(r, {g.M, ks, ns, dt}, k, c, {}));
                }
            }
            if (n > 1) {
                std::vector<int> members(n);
                for (int r = 0; r < n; ++r) members[r] = r;
                ring_allreduce(s, members, partial, g.M * ns * dt, g.M * ns, 0, 0);
            }
            break;
        }
        case PartitionStrategy::kMnk2d: {
            const int R = p.r_num, C = p.c_num;
            const std::uint64_t ks = g.K / C, ns = g.N / R;
            const Bytes shard = ceil_div(g.K * g.N, std::uint64_t(C) * R) * dt;
            const std::uint64_t chunk_elems = ceil_div(g.M * g.N, std::uint64_t(C) * C * C);
            auto rank = [C](int i, int j) { return i * C + j; };
            std::vector<std::vector<int>> col_send(n, std::vector<int>(R, -1));
            std::vector<std::vector<int>> frag(n, std::vector<int>(R, -1));
            for (int m = 0; m < R; ++m) {
                for (int i = 0; i < R; ++i) {
                    for (int j = 0; j < C; ++j) {
                        const int me = rank(i, j);
                        const int pred = rank(mod(i - 1, R), j);
                        std::vector<int> deps;
                        if (m > 0) deps.push_back(col_send[pred][m - 1]);
                        const auto rows = split_rows(g.M, R, i);
                        frag[me][m] = add(s, compute(me, {rows, ks, ns, dt}, m,
                                                     mod(i - m, R), deps));
                        if (m < R - 1) {
                            std::vector<int> sdeps;
                            if (m > 0) sdeps.push_back(col_send[pred][m - 1]);
                            col_send[me][m] = add(s, send(me, rank((i + 1) % R, j), shard, m * (2 * C - 1),
                                                          mod(i - m, R), ChunkOp::kCopy, sdeps));
                        }
                    }
                }
                if (m < R - 1) {
                    for (int i = 0; i < R; ++i) {
                        std::vector<int> members(C);
                        std::vector<std::vector<int>> partial(C, std::vector<int>(C));
                        for (int j = 0; j < C; ++j) {
                            members[j] = rank(i, j);
                            for (int c = 0; c < C; ++c) partial[j][c] = frag[rank(i, j)][m];
                        }
                        ring_allreduce(s, members, partial, chunk_elems * dt, chunk_elems, R + m * C,
                                       m * (2 * C - 1) + 1);
                    }
                }
            }
            break;
        }
    }
    return s;
}

CollectiveSchedule collective_schedule(const PartitionPlan &plan, const PlacementPlan &placement, int pipe) {
    const int degree = plan.strategy == PartitionStrategy::kMnk2d ? plan.r_num * plan.c_num : plan.num;
    if (pipe < 0 || pipe >= placement.pipes) throw InfeasibleError("placement has no such pipe");
    if (placement.cores_per_pipe != degree)
        throw InfeasibleError(fmt::format("placement has {} cores per pipe but the plan needs {}",
                                          placement.cores_per_pipe, degree));
    return collective_schedule(plan);
}

void check_schedule_completeness(const CollectiveSchedule &s) {
    const auto &p = s.plan;
    const int n = p.strategy == PartitionStrategy::kMnk2d ? p.r_num * p.c_num : p.num;
    for (std::size_t i = 0; i < s.ops.size(); ++i)
        for (int d : s.ops[i].deps)
            if (d < 0 || static_cast<std::size_t>(d) >= i)
                throw std::logic_error(fmt::format("op {} depends on non-earlier op {}", i, d));

    if (p.strategy == PartitionStrategy::kInputOnly) return;

    if (p.strategy == PartitionStrategy::kMn1d) {
        // held[r][shard]: rank r has the weight shard in its buffer
        std::vector<std::vector<char>> held(n, std::vector<char>(n, 0)), used(n, std::vector<char>(n, 0));
        for (int r = 0; r < n; ++r) held[r][r] = 1;
        for (const auto &op : s.ops) {
            if (op.kind == CollOpKind::kSend) {
                if (!held[op.rank][op.chunk])
                    throw std::logic_error(fmt::format("rank {} forwards shard {} it never received", op.rank, op.chunk));
                held[op.peer][op.chunk] = 1;
            } else if (op.kind == CollOpKind::kCompute) {
                if (!held[op.rank][op.chunk])
                    throw std::logic_error(fmt::format("rank {} computes with missing shard {}", op.rank, op.chunk));
                used[op.rank][op.chunk] = 1;
            }
        }
        for (int r = 0; r < n; ++r) {
            if (split_rows(p.gemm.M, n, r) == 0) continue;
            for (int c = 0; c < n; ++c)
                if (!used[r][c]) throw std::logic_error(fmt::format("rank {} never used weight shard {}", r, c));
        }
        return;
    }

    // Reduction tracking: contrib[rank][chunk] = set of source ranks summed in.
    int chunks = n;
    int group = n;
    if (p.strategy == PartitionStrategy::kMnk2d) {
        chunks = p.r_num + (p.r_num - 1) * p.c_num;
        group = p.c_num;
    }
    std::vector<std::vector<std::vector<char>>> contrib(
        n, std::vector<std::vector<char>>(chunks, std::vector<char>(n, 0)));
    std::vector<std::vector<std::vector<char>>> in_flight = contrib;
    for (const auto &op : s.ops) {
        if (op.kind == CollOpKind::kCompute) {
            if (p.strategy == PartitionStrategy::kK1d) {
                contrib[op.rank][op.chunk][op.rank] = 1;
            } else {
                // a 2-D fragment produces this macro-step's partial for all row chunks
                const int m = op.step;
                if (m < p.r_num - 1)
                    for (int c = 0; c < p.c_num; ++c) contrib[op.rank][p.r_num + m * p.c_num + c][op.rank] = 1;
            }
        } else if (op.kind == CollOpKind::kSend) {
            if (p.strategy == PartitionStrategy::kMnk2d && op.chunk < p.r_num) continue;  // weight shard
            if (op.chunk_op == ChunkOp::kCopy)
                contrib[op.peer][op.chunk] = contrib[op.rank][op.chunk];
            else
                in_flight[op.peer][op.chunk] = contrib[op.rank][op.chunk];
        } else if (op.kind == CollOpKind::kReduce) {
            auto &mine = contrib[op.rank][op.chunk];
            auto &inc = in_flight[op.rank][op.chunk];
            for (int k = 0; k < n; ++k) {
                if (mine[k] && inc[k])
                    throw std::logic_error(fmt::format("rank {} chunk {}: source {} summed twice", op.rank, op.chunk, k));
                mine[k] = mine[k] || inc[k];
            }
            std::fill(inc.begin(), inc.end(), 0);
        }
    }
    for (int r = 0; r < n; ++r) {
        const int first_chunk = p.strategy == PartitionStrategy::kMnk2d ? p.r_num : 0;
        for (int c = first_chunk; c < chunks; ++c) {
            int count = 0;
            for (int k = 0; k < n; ++k) count += contrib[r][c][k];
            if (count != group)
                throw std::logic_error(
                    fmt::format("rank {} chunk {} holds {} of {} contributions", r, c, count, group));
        }
    }
}

}  // namespace npusim
