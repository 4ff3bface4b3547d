// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/lowering.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace npusim {

namespace {

struct Projection {
    const char *name;
    std::uint64_t K;
    std::uint64_t N;
    bool ffn;
};

std::vector<Projection> projections(const ModelConfig &m) {
    const std::uint64_t h = m.hidden_size;
    const std::uint64_t qkv = std::uint64_t(m.q_width()) + 2ULL * m.kv_width();
    const std::uint64_t f = m.ffn_active_width();
    return {{"qkv_proj", h, qkv, false},
            {"o_proj", std::uint64_t(m.q_width()), h, false},
            {"gate_up_proj", h, 2 * f, true},
            {"down_proj", f, h, true}};
}

}  // namespace

PartitionPlan projection_plan(const std::string &name, const GemmShape &gemm, int tp, int hidden_size,
                              std::optional<PartitionStrategy> forced) {
    if (tp <= 1) return make_plan(PartitionStrategy::kInputOnly, gemm, 1);
    if (forced) {
        if (!plan_feasible(*forced, gemm, tp)) {
            try {
                make_plan(*forced, gemm, tp);
            } catch (const InfeasibleError &e) {
                throw InfeasibleError(fmt::format("{}: {}", name, e.what()));
            }
        }
        return make_plan(*forced, gemm, tp);
    }
    auto plan = choose_strategy(gemm, tp, hidden_size);
    if (plan.strategy == PartitionStrategy::kInputOnly)
        throw InfeasibleError(fmt::format("{}: neither K={} nor N={} is divisible by tp={}", name, gemm.K, gemm.N, tp));
    return plan;
}

std::vector<LayerOp> layer_op_list(const ModelConfig &m, Phase phase, std::uint64_t tokens, std::uint64_t kv_len,
                                   int tp, std::optional<PartitionStrategy> strategy) {
    if (tp < 1) throw InfeasibleError(fmt::format("tp={} must be positive", tp));
    if (m.num_q_heads % tp != 0)
        throw InfeasibleError(fmt::format("num_q_heads={} not divisible by tp={}", m.num_q_heads, tp));
    if (tp > 1 && m.hidden_size % tp != 0)
        throw InfeasibleError(fmt::format("hidden_size={} not divisible by tp={}", m.hidden_size, tp));
    const std::uint64_t T = phase == Phase::kDecode ? std::max<std::uint64_t>(tokens, 1) : tokens;
    const auto projs = projections(m);
    std::vector<LayerOp> ops;
    auto vec = [&](const char *name, std::uint64_t width) {
        LayerOp op;
        op.kind = LayerOpKind::kVector;
        op.name = name;
        op.elements = ceil_div(T * width, std::uint64_t(tp));
        ops.push_back(op);
    };
    auto gemm = [&](const Projection &p) {
        LayerOp op;
        op.kind = LayerOpKind::kGemm;
        op.name = p.name;
        op.gemm = GemmShape{T, p.K, p.N, m.dtype_bytes};
        op.plan = projection_plan(p.name, op.gemm, tp, m.hidden_size, strategy);
        op.flops_per_core = op.gemm.flops() / tp;
        op.comm_steps = analytic_cost(op.plan, m.dtype_bytes).num_steps;
        ops.push_back(op);
    };
    vec("input_norm", m.hidden_size);
    gemm(projs[0]);
    {
        LayerOp op;
        op.kind = LayerOpKind::kAttention;
        op.name = "attention";
        op.heads = m.num_q_heads / tp;
        const std::uint64_t q = phase == Phase::kDecode ? 1 : T;
        op.flops_per_core = 4ULL * q * kv_len * m.head_dim * op.heads;
        ops.push_back(op);
    }
    gemm(projs[1]);
    vec("post_norm", m.hidden_size);
    gemm(projs[2]);
    vec("activation", m.ffn_active_width());
    gemm(projs[3]);
    return ops;
}

double expected_distinct_experts(int experts, int active, std::uint64_t tokens) {
    if (experts <= 0 || active <= 0) return 0.0;
    if (active >= experts) return experts;
    const double miss = std::pow(1.0 - double(active) / experts, double(tokens));
    return experts * (1.0 - miss);
}

const CollectiveSchedule &StageLowerer::schedule(const PartitionPlan &p) {
    const Key key{static_cast<int>(p.strategy), p.num,   p.r_num, p.c_num, p.gemm.M,
                  p.gemm.K,                     p.gemm.N, p.gemm.dtype_bytes};
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(key, collective_schedule(p)).first->second;
}

void StageLowerer::lower_gemm(TaskGraph &g, const ChipConfig &chip, const std::vector<CoreId> &ranks,
                              const CollectiveSchedule &sched, Bytes weight_dma,
                              std::vector<std::vector<std::uint32_t>> &frontier) {
    const int n = static_cast<int>(ranks.size());
    std::vector<std::int64_t> dma(n, -1);
    if (weight_dma > 0)
        for (int r = 0; r < n; ++r) dma[r] = g.dma(ranks[r], MemKind::kRead, weight_dma, {});

    std::vector<std::uint32_t> ids(sched.ops.size());
    std::vector<std::vector<std::uint32_t>> closing(n);
    for (std::size_t i = 0; i < sched.ops.size(); ++i) {
        const CollOp &op = sched.ops[i];
        std::vector<std::uint32_t> deps;
        for (int d : op.deps) deps.push_back(ids[d]);
        if (op.deps.empty()) deps.insert(deps.end(), frontier[op.rank].begin(), frontier[op.rank].end());
        const CoreId core = ranks[op.rank];
        switch (op.kind) {
            case CollOpKind::kCompute: {
                if (dma[op.rank] >= 0) deps.push_back(static_cast<std::uint32_t>(dma[op.rank]));
                const auto est = matmul_cycles(op.shape, chip.core(core));
                ids[i] = g.matrix(core, est.cycles, std::move(deps), est.sram_bytes_read + est.sram_bytes_written);
                closing[op.rank].push_back(ids[i]);
                break;
            }
            case CollOpKind::kSend:
                ids[i] = g.send(core, ranks[op.peer], op.bytes, NocTag::kCollectiveStep, std::move(deps));
                closing[op.peer].push_back(ids[i]);
                break;
            case CollOpKind::kReduce:
                ids[i] = g.vector(core, vector_cycles(op.elements, chip.core(core)), std::move(deps),
                                  op.elements * 3 * sched.plan.gemm.dtype_bytes);
                closing[op.rank].push_back(ids[i]);
                break;
        }
    }
    for (int r = 0; r < n; ++r) {
        if (closing[r].empty()) continue;
        if (closing[r].size() == 1) {
            frontier[r] = {closing[r].front()};
        } else {
            frontier[r] = {g.barrier(std::move(closing[r]), ranks[r])};
        }
    }
}

std::vector<std::uint32_t> StageLowerer::lower(TaskGraph &g, const StageSpec &st, const std::vector<SeqWork> &seqs,
                                               const std::vector<std::vector<std::uint32_t>> &entry) {
    const ModelConfig &m = *st.model;
    const ChipConfig &chip = *st.chip;
    const int tp = static_cast<int>(st.ranks.size());
    const int dt = m.dtype_bytes;
    std::vector<std::vector<std::uint32_t>> frontier = entry;
    frontier.resize(tp);

    std::uint64_t T = 0, rows_out = 0;
    Bytes kv_read = 0;
    for (const auto &s : seqs) {
        T += s.new_tokens;
        if (s.emits_token) ++rows_out;
        kv_read += s.hbm_kv_bytes;
    }
    if (T > 0) {
        const auto projs = projections(m);
        struct Lowered {
            const CollectiveSchedule *sched;
            Bytes dma;
        };
        std::vector<Lowered> gemms;
        double moe_factor = 1.0;
        if (m.moe)
            moe_factor = expected_distinct_experts(m.moe->num_experts, m.moe->active_experts, T) /
                         std::max(1, m.moe->active_experts);
        for (const auto &p : projs) {
            const GemmShape shape{T, p.K, p.N, dt};
            const auto plan = projection_plan(p.name, shape, tp, m.hidden_size, st.strategy);
            const auto cost = analytic_cost(plan, dt);
            const double f = st.stream_fraction * (p.ffn ? moe_factor : 1.0);
            gemms.push_back({&schedule(plan), static_cast<Bytes>(std::llround(double(cost.weight_bytes) * f))});
        }

        // Attention work is the same on every rank: heads split evenly.
        const int heads = m.num_q_heads / tp;
        std::vector<Cycle> attn(tp, 0);
        std::vector<Bytes> attn_sram(tp, 0);
        for (int r = 0; r < tp; ++r) {
            const CoreConfig &core = chip.core(st.ranks[r]);
            for (const auto &s : seqs) {
                if (s.new_tokens == 0) continue;
                const auto est = attention_cycles(s.phase, s.new_tokens, s.kv_len, heads, m.head_dim, core, dt);
                attn[r] += est.cycles;
                attn_sram[r] += est.sram_bytes_read + est.sram_bytes_written;
            }
        }

        auto vec = [&](std::uint64_t width) {
            const std::uint64_t elems = ceil_div(T * width, std::uint64_t(tp));
            for (int r = 0; r < tp; ++r) {
                auto id = g.vector(st.ranks[r], vector_cycles(elems, chip.core(st.ranks[r])), frontier[r],
                                   elems * 2 * dt);
                frontier[r] = {id};
            }
        };

        for (int layer = 0; layer < st.layers; ++layer) {
            vec(m.hidden_size);
            lower_gemm(g, chip, st.ranks, *gemms[0].sched, gemms[0].dma, frontier);
            for (int r = 0; r < tp; ++r) {
                auto deps = frontier[r];
                if (kv_read > 0) deps.push_back(g.dma(st.ranks[r], MemKind::kRead, kv_read, {}));
                frontier[r] = {g.matrix(st.ranks[r], attn[r], std::move(deps), attn_sram[r])};
            }
            lower_gemm(g, chip, st.ranks, *gemms[1].sched, gemms[1].dma, frontier);
            vec(m.hidden_size);
            lower_gemm(g, chip, st.ranks, *gemms[2].sched, gemms[2].dma, frontier);
            vec(m.ffn_active_width());
            lower_gemm(g, chip, st.ranks, *gemms[3].sched, gemms[3].dma, frontier);
        }
    }

    if (st.lm_head && rows_out > 0) {
        for (int r = 0; r < tp; ++r) {
            const std::uint64_t elems = ceil_div(rows_out * std::uint64_t(m.hidden_size), std::uint64_t(tp));
            frontier[r] = {g.vector(st.ranks[r], vector_cycles(elems, chip.core(st.ranks[r])), frontier[r])};
        }
        const GemmShape shape{rows_out, std::uint64_t(m.hidden_size), std::uint64_t(m.vocab_size), dt};
        PartitionPlan plan = tp > 1 ? choose_strategy(shape, tp, m.hidden_size)
                                    : make_plan(PartitionStrategy::kInputOnly, shape, 1);
        const auto cost = analytic_cost(plan, dt);
        lower_gemm(g, chip, st.ranks, schedule(plan),
                   static_cast<Bytes>(std::llround(double(cost.weight_bytes) * st.stream_fraction)), frontier);
    }

    std::vector<std::uint32_t> exits(tp);
    for (int r = 0; r < tp; ++r) {
        if (frontier[r].size() == 1) {
            exits[r] = frontier[r].front();
        } else {
            exits[r] = g.barrier(frontier[r], st.ranks[r]);
        }
    }
    return exits;
}

}  // namespace npusim
