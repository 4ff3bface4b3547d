// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/validation.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "npusim/lowering.hpp"

namespace npusim {

double OracleResult::relative_error() const {
    return std::abs(simulated - analytic) / std::max(analytic, 1.0);
}

namespace {

struct DoneFlag : JobListener {
    Cycle t = 0;
    bool done = false;
    void on_job_done(std::uint64_t, Cycle at) override {
        t = at;
        done = true;
    }
};

}  // namespace

GraphRun run_graph(const ChipConfig &chip, TaskGraph graph, MemoryMode mode) {
    Engine engine;
    engine.metrics().resize_cores(chip.num_cores());
    Executor ex(engine, chip, mode);
    DoneFlag flag;
    ex.submit(std::move(graph), &flag);
    engine.run();
    if (!flag.done) throw std::logic_error("task graph did not complete");
    GraphRun run;
    run.cycles = flag.t;
    run.events = engine.events_processed();
    for (CoreId c = 0; c < chip.num_cores(); ++c) {
        run.injected.push_back(ex.noc().injected(c));
        run.received.push_back(ex.noc().received(c));
    }
    return run;
}

OracleResult oracle_comm_volume(const PartitionPlan &plan, const PlacementPlan &placement, const ChipConfig &chip,
                                int pipe) {
    const auto sched = collective_schedule(plan, placement, pipe);
    const auto &ranks = placement.mapping.at(pipe);
    TaskGraph g;
    StageLowerer low;
    std::vector<std::vector<std::uint32_t>> frontier(ranks.size());
    low.lower_gemm(g, chip, ranks, sched, 0, frontier);
    const auto run = run_graph(chip, std::move(g));
    const auto cost = analytic_cost(plan, plan.gemm.dtype_bytes);
    OracleResult res;
    res.scenario = fmt::format("{} M={} K={} N={} num={}", to_string(plan.strategy), plan.gemm.M, plan.gemm.K,
                               plan.gemm.N, plan.num);
    res.analytic = double(cost.comm_bytes);
    res.simulated = res.analytic;
    double worst = -1;
    for (CoreId c : ranks) {
        const double diff = std::abs(double(run.injected[c]) - res.analytic);
        if (diff > worst) {
            worst = diff;
            res.simulated = double(run.injected[c]);
        }
    }
    return res;
}

std::optional<Cycle> projection_latency(const ModelConfig &m, const ChipConfig &chip, const std::vector<CoreId> &ranks,
                                        PartitionStrategy strategy, std::uint64_t seq) {
    const int tp = static_cast<int>(ranks.size());
    const std::uint64_t h = m.hidden_size;
    const std::uint64_t f = m.ffn_active_width();
    const std::pair<std::uint64_t, std::uint64_t> shapes[] = {
        {h, std::uint64_t(m.q_width()) + 2ULL * m.kv_width()}, {std::uint64_t(m.q_width()), h}, {h, 2 * f}, {f, h}};
    TaskGraph g;
    StageLowerer low;
    std::vector<std::vector<std::uint32_t>> frontier(tp);
    for (auto [K, N] : shapes) {
        const GemmShape gemm{seq, K, N, m.dtype_bytes};
        const int n = strategy == PartitionStrategy::kInputOnly ? 1 : tp;
        if (!plan_feasible(strategy, gemm, n)) return std::nullopt;
        const auto plan = make_plan(strategy, gemm, n);
        std::vector<CoreId> used(ranks.begin(), ranks.begin() + n);
        low.lower_gemm(g, chip, used, low.schedule(plan), 0, frontier);
    }
    return run_graph(chip, std::move(g)).cycles;
}

CrossoverReport oracle_crossover(const ModelConfig &m, const ChipConfig &chip, int tp,
                                 const std::vector<std::uint64_t> &seqs) {
    CrossoverReport rep;
    const auto ring = place(PlacementStrategy::kRing, chip, 1, tp).mapping[0];
    const auto mesh = place(PlacementStrategy::kMesh2d, chip, 1, tp).mapping[0];
    for (auto seq : seqs) {
        CrossoverRow row;
        row.seq = seq;
        row.k1d = projection_latency(m, chip, ring, PartitionStrategy::kK1d, seq);
        row.mn1d = projection_latency(m, chip, ring, PartitionStrategy::kMn1d, seq);
        row.mnk2d = projection_latency(m, chip, mesh, PartitionStrategy::kMnk2d, seq);
        if (!rep.crossover_seq && row.k1d && row.mn1d && *row.k1d >= *row.mn1d) rep.crossover_seq = seq;
        rep.rows.push_back(row);
    }
    return rep;
}

std::vector<PlacementRow> oracle_placement(const ModelConfig &m, const ChipConfig &chip, int tp, std::uint64_t seq,
                                           const std::vector<PlacementStrategy> &strategies) {
    std::vector<PlacementRow> out;
    int pipes = std::min(m.num_layers, chip.num_cores() / tp);
    while (pipes > 1 && m.num_layers % pipes != 0) --pipes;
    for (auto strategy : strategies) {
        const auto pl = place(strategy, chip, pipes, tp);
        std::optional<PartitionStrategy> forced;
        if (tp > 1 && strategy == PlacementStrategy::kMesh2d && pl.grid_rows >= 2 && pl.grid_cols >= 2)
            forced = PartitionStrategy::kMnk2d;
        else if (tp > 1)
            forced = seq < std::uint64_t(m.hidden_size) ? PartitionStrategy::kK1d : PartitionStrategy::kMn1d;
        TaskGraph g;
        StageLowerer low;
        std::vector<std::vector<std::uint32_t>> entry(tp);
        const SeqWork work{0, seq, seq, Phase::kPrefill, 0, true};
        for (int p = 0; p < pipes; ++p) {
            StageSpec st;
            st.model = &m;
            st.chip = &chip;
            st.ranks = pl.mapping[p];
            st.layers = m.num_layers / pipes;
            st.lm_head = false;
            st.stream_fraction = 0.0;
            st.strategy = forced;
            const auto exits = low.lower(g, st, {work}, entry);
            if (p + 1 == pipes) break;
            const Bytes bytes = ceil_div(seq * std::uint64_t(m.hidden_size) * m.dtype_bytes, std::uint64_t(tp));
            for (int r = 0; r < tp; ++r)
                entry[r] = {g.send(pl.mapping[p][r], pl.mapping[p + 1][r], bytes, NocTag::kActivation, {exits[r]})};
        }
        out.push_back({tp, strategy, pipes, run_graph(chip, std::move(g)).cycles});
    }
    return out;
}

}  // namespace npusim
