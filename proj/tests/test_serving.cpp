// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "npusim/serving.hpp"

using namespace npusim;

namespace {

Config smoke(const std::string &name) {
    Config c = load_config(std::string(NPUSIM_CONFIG_DIR) + "/" + name);
    c.sim.memory_mode = MemoryMode::kAnalytic;
    return c;
}

ChipConfig mesh(int rows, int cols) {
    ChipConfig c;
    c.mesh_rows = rows;
    c.mesh_cols = cols;
    return c;
}

const std::set<std::pair<RequestPhase, RequestPhase>> &legal() {
    using P = RequestPhase;
    static const std::set<std::pair<P, P>> s{{P::kQueued, P::kPrefilling},
                                             {P::kPrefilling, P::kAwaitingKvTransfer},
                                             {P::kAwaitingKvTransfer, P::kDecoding},
                                             {P::kPrefilling, P::kDecoding},
                                             {P::kPrefilling, P::kDone},
                                             {P::kDecoding, P::kDone}};
    return s;
}

}  // namespace

TEST(FusedBudget, DecodesFirstThenWholeChunks) {
    const FusionBudget b{8, 256, 4, 1};
    const auto plan = build_fused_iteration({1, 2, 3}, {{10, 600, 0}, {11, 100, 0}}, b);
    EXPECT_EQ(plan.decodes, (std::vector<RequestId>{1, 2, 3}));
    ASSERT_EQ(plan.chunks.size(), 1u);
    EXPECT_EQ(plan.chunks[0].request, 10u);
    EXPECT_EQ(plan.chunks[0].tokens, 256u);
    EXPECT_EQ(plan.units, 7);
}

TEST(FusedBudget, OverflowingDecodesBlockPrefill) {
    const FusionBudget b{4, 256, 4, 1};
    const auto plan = build_fused_iteration({1, 2, 3, 4, 5, 6}, {{10, 600, 0}}, b);
    EXPECT_EQ(plan.decodes.size(), 4u);
    EXPECT_EQ(plan.deferred, (std::vector<RequestId>{5, 6}));
    EXPECT_TRUE(plan.chunks.empty());
}

TEST(FusedBudget, LastChunkIsTheRemainder) {
    const FusionBudget b{16, 256, 4, 1};
    const auto plan = build_fused_iteration({}, {{1, 40, 512}, {2, 0, 10}, {3, 300, 0}}, b);
    ASSERT_EQ(plan.chunks.size(), 2u);
    EXPECT_EQ(plan.chunks[0].tokens, 40u);
    EXPECT_EQ(plan.chunks[0].offset, 512u);
    EXPECT_EQ(plan.chunks[1].request, 3u);
}

TEST(FusedBudget, RandomPlansRespectBudget) {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 2000; ++i) {
        const FusionBudget b{1 + int(rng() % 64), std::uint32_t(1 + rng() % 512), 1 + int(rng() % 8), 1};
        std::vector<RequestId> decodes;
        for (std::uint64_t d = rng() % 40; d > 0; --d) decodes.push_back(d);
        std::vector<PrefillCandidate> prefills;
        for (std::uint64_t p = rng() % 10; p > 0; --p) prefills.push_back({100 + p, 1 + rng() % 2000, 0});
        const auto plan = build_fused_iteration(decodes, prefills, b);
        ASSERT_LE(plan.units, b.budget);
        ASSERT_EQ(plan.units, int(plan.decodes.size()) + b.prefill_cost_units * int(plan.chunks.size()));
        ASSERT_EQ(plan.decodes.size() + plan.deferred.size(), decodes.size());
        if (!plan.deferred.empty()) ASSERT_TRUE(plan.chunks.empty());
        std::set<RequestId> seen;
        for (const auto &c : plan.chunks) {
            ASSERT_TRUE(seen.insert(c.request).second);
            ASSERT_LE(c.tokens, b.chunk_size);
        }
    }
}

TEST(Partitioning, RatioSplitsTheMesh) {
    ServingConfig s;
    s.prefill = {4, 1};
    s.decode = {4, 1};
    for (auto [p, d] : {std::pair{3, 1}, {1, 1}, {1, 2}}) {
        s.ratio_prefill = p;
        s.ratio_decode = d;
        const auto part = partition_cores(s, mesh(8, 8));
        const double want = 64.0 * p / (p + d);
        EXPECT_NEAR(double(part.prefill_cores.size()), want, 4.0) << p << ":" << d;
        EXPECT_LE(part.prefill_cores.size() + part.decode_cores.size(), 64u);
        EXPECT_GE(part.decode_cores.size(), 4u);
        std::set<CoreId> all(part.prefill_cores.begin(), part.prefill_cores.end());
        for (CoreId c : part.decode_cores) EXPECT_TRUE(all.insert(c).second);
    }
}

TEST(Partitioning, DpFlavorBuildsGroups) {
    ServingConfig s;
    s.flavor = PlacementFlavor::kDpPrioritized;
    s.dp = 4;
    s.ratio_prefill = 1;
    s.ratio_decode = 1;
    s.prefill = {4, 1};
    s.decode = {4, 1};
    const auto part = partition_cores(s, mesh(8, 8));
    ASSERT_EQ(part.groups.size(), 4u);
    for (const auto &g : part.groups) {
        EXPECT_EQ(g.prefill_cores.size(), 8u);
        EXPECT_EQ(g.decode_cores.size(), 8u);
    }
}

TEST(Partitioning, TooFewCoresIsAnError) {
    ServingConfig s;
    s.prefill = {16, 1};
    s.decode = {16, 1};
    s.ratio_prefill = 3;
    s.ratio_decode = 1;
    EXPECT_THROW(partition_cores(s, mesh(4, 4)), ValidationError);
}

TEST(Parallelism, PrefillDeepensPipeline) {
    ModelConfig m;
    m.num_layers = 4;
    const auto p = decide_parallelism(StageKind::kPrefill, m, 16, 4);
    EXPECT_EQ(p.tp, 4);
    EXPECT_EQ(p.pp, 4);
    // Three TP groups fit, but the depth must divide the layer count.
    const auto q = decide_parallelism(StageKind::kPrefill, m, 12, 4);
    EXPECT_EQ(q.pp, 2);
}

TEST(Parallelism, DecodeRejectsSlowPipelines) {
    ModelConfig m;
    m.num_layers = 4;
    const auto d = decide_parallelism(StageKind::kDecode, m, 8, 4, 2, 1);
    EXPECT_EQ(d.pp, 1);
    EXPECT_FALSE(d.note.empty());
    const auto e = decide_parallelism(StageKind::kDecode, m, 8, 4, 2, 4);
    EXPECT_EQ(e.pp, 2);
    EXPECT_EQ(e.tbt_multiplier, 2);
}

TEST(Metrics, HandComputedValues) {
    std::vector<RequestRecord> rs(2);
    rs[0] = {0, 0, 10, 3, {100, 110, 130}, 130};
    rs[1] = {1, 50, 10, 1, {250}, 250};
    const auto m = record_metrics(rs, 2.0);
    EXPECT_EQ(m.requests, 2u);
    EXPECT_EQ(m.completed, 2u);
    EXPECT_EQ(m.tokens, 4u);
    EXPECT_DOUBLE_EQ(*m.ttft_mean, (100.0 + 200.0) / 2);
    EXPECT_DOUBLE_EQ(*m.e2e_mean, (130.0 + 200.0) / 2);
    EXPECT_DOUBLE_EQ(*m.tbt_mean, 15.0);
    EXPECT_EQ(m.makespan, 250u);
    EXPECT_DOUBLE_EQ(m.throughput, 4.0 / 250);
    EXPECT_DOUBLE_EQ(m.throughput_per_area, 2.0 / 250);
    EXPECT_EQ(request_tbt(rs[1]), std::nullopt);
    EXPECT_FALSE(record_metrics({}, 1.0).e2e_mean.has_value());
}

TEST(Simulator, FusedRunIsLegal) {
    Config c = smoke("smoke_fused.json");
    ServingSimulator sim(c);
    sim.run();
    for (const auto &r : sim.requests()) {
        EXPECT_EQ(r.phase, RequestPhase::kDone);
        EXPECT_EQ(r.generated, r.output_len);
        EXPECT_EQ(sim.chunk_tokens().at(r.id), r.prompt_len);
    }
    for (const auto &t : sim.transitions()) EXPECT_TRUE(legal().count(t)) << to_string(t.first) << "->" << to_string(t.second);
    for (const auto &it : sim.fused_log()) {
        EXPECT_LE(it.units, it.budget);
        if (it.deferred > 0) EXPECT_EQ(it.chunks, 0);
        EXPECT_LE(it.start, it.end);
    }
    EXPECT_FALSE(sim.fused_log().empty());
}

TEST(Simulator, DisaggregatedRunTransfersKv) {
    Config c = smoke("smoke_disagg.json");
    ServingSimulator sim(c);
    sim.run();
    std::uint64_t prompt_tokens = 0;
    for (const auto &r : sim.requests()) {
        EXPECT_EQ(r.phase, RequestPhase::kDone);
        prompt_tokens += r.prompt_len;
    }
    for (const auto &t : sim.transitions()) EXPECT_TRUE(legal().count(t));
    EXPECT_TRUE(sim.transitions().count({RequestPhase::kAwaitingKvTransfer, RequestPhase::kDecoding}));
    EXPECT_EQ(sim.early_tokens(), 0u);
    const Bytes per_token = 2ULL * c.model.num_layers * c.model.num_kv_heads * c.model.head_dim * c.model.dtype_bytes;
    EXPECT_EQ(sim.kv_transfer_bytes(), prompt_tokens * per_token);
}

TEST(Simulator, HorizonStopsRunawayRuns) {
    Config c = smoke("smoke_fused.json");
    c.sim.horizon_cycles = 1000;
    ServingSimulator sim(c);
    EXPECT_THROW(sim.run(), LivelockError);
}
