// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include <gtest/gtest.h>

#include <cmath>

#include "npusim/lowering.hpp"
#include "npusim/validation.hpp"

using namespace npusim;

namespace {

ModelConfig desk() {
    ModelConfig m;
    m.num_layers = 4;
    m.hidden_size = 1024;
    m.num_q_heads = 8;
    m.num_kv_heads = 4;
    m.head_dim = 128;
    m.ffn_intermediate = 2816;
    m.vocab_size = 8192;
    return m;
}

ChipConfig chip4x4() {
    ChipConfig c;
    c.mesh_rows = 4;
    c.mesh_cols = 4;
    c.default_core.systolic_dim = 128;
    return c;
}

// Dense projection FLOPs of one layer, written out from the model shape.
std::uint64_t dense_layer_flops(const ModelConfig &m, std::uint64_t t) {
    const std::uint64_t h = m.hidden_size, q = m.num_q_heads * m.head_dim, kv = m.num_kv_heads * m.head_dim,
                        f = m.ffn_intermediate;
    return 2 * t * (h * (q + 2 * kv) + q * h + h * 2 * f + f * h);
}

Cycle run_stage(const ModelConfig &m, const ChipConfig &chip, std::vector<SeqWork> seqs, double stream,
                MemoryMode mode = MemoryMode::kAnalytic) {
    StageSpec st;
    st.model = &m;
    st.chip = &chip;
    st.ranks = {0, 1, 5, 4};
    st.layers = m.num_layers;
    st.stream_fraction = stream;
    TaskGraph g;
    StageLowerer low;
    low.lower(g, st, seqs, std::vector<std::vector<std::uint32_t>>(4));
    return run_graph(chip, std::move(g), mode).cycles;
}

}  // namespace

TEST(Lowering, GemmFlopsConserved) {
    const ModelConfig m = desk();
    for (int tp : {1, 2, 4, 8}) {
        for (auto [phase, t] : {std::pair{Phase::kPrefill, std::uint64_t{512}}, std::pair{Phase::kDecode, std::uint64_t{16}}}) {
            std::uint64_t total = 0, per_core = 0;
            for (const auto &op : layer_op_list(m, phase, t, 600, tp)) {
                if (op.kind != LayerOpKind::kGemm) continue;
                total += op.gemm.flops();
                per_core += op.flops_per_core;
                const auto sched = collective_schedule(op.plan);
                std::uint64_t sched_flops = 0;
                for (int r = 0; r < op.plan.num; ++r) sched_flops += sched.flops_by(r);
                EXPECT_EQ(sched_flops, op.gemm.flops()) << op.name;
            }
            EXPECT_EQ(total, dense_layer_flops(m, t));
            EXPECT_EQ(per_core * tp, total);
        }
    }
}

TEST(Lowering, AttentionScalesWithContext) {
    const ModelConfig m = desk();
    auto attn = [&](std::uint64_t kv) {
        for (const auto &op : layer_op_list(m, Phase::kDecode, 1, kv, 4))
            if (op.kind == LayerOpKind::kAttention) return op.flops_per_core;
        return std::uint64_t{0};
    };
    EXPECT_EQ(attn(1000), 4ULL * 1000 * 128 * 2);
    EXPECT_EQ(attn(2000), 2 * attn(1000));
}

TEST(Lowering, IndivisibleHiddenNamesTheDimension) {
    ModelConfig m = desk();
    m.hidden_size = 250;
    m.num_q_heads = 4;
    m.head_dim = 125;
    m.num_kv_heads = 2;
    m.ffn_intermediate = 250;
    try {
        layer_op_list(m, Phase::kPrefill, 64, 64, 4);
        FAIL() << "expected InfeasibleError";
    } catch (const InfeasibleError &e) {
        const std::string msg = e.what();
        EXPECT_TRUE(msg.find("250") != std::string::npos) << msg;
        EXPECT_TRUE(msg.find("4") != std::string::npos) << msg;
    }
    EXPECT_THROW(projection_plan("qkv", {16, 250, 250, 2}, 8, 250, std::nullopt), InfeasibleError);
    EXPECT_THROW(projection_plan("qkv", {16, 1024, 1000, 2}, 16, 1024, PartitionStrategy::kK1d), InfeasibleError);
}

TEST(Lowering, ForcedStrategyIsUsed) {
    const ModelConfig m = desk();
    for (const auto &op : layer_op_list(m, Phase::kPrefill, 2048, 2048, 4, PartitionStrategy::kMn1d))
        if (op.kind == LayerOpKind::kGemm) EXPECT_EQ(op.plan.strategy, PartitionStrategy::kMn1d);
}

TEST(Lowering, ExpectedDistinctExperts) {
    EXPECT_DOUBLE_EQ(expected_distinct_experts(8, 2, 0), 0.0);
    EXPECT_DOUBLE_EQ(expected_distinct_experts(8, 2, 1), 2.0);
    EXPECT_NEAR(expected_distinct_experts(128, 8, 4096), 128.0, 1e-6);
    EXPECT_NEAR(expected_distinct_experts(64, 4, 3), 64.0 * (1 - std::pow(60.0 / 64.0, 3)), 1e-9);
    EXPECT_DOUBLE_EQ(expected_distinct_experts(4, 4, 1), 4.0);
}

TEST(Lowering, StageCostGrowsWithWork) {
    const ModelConfig m = desk();
    const ChipConfig chip = chip4x4();
    const Cycle one = run_stage(m, chip, {{1, 1, 100, Phase::kDecode, 0, true}}, 0.0);
    const Cycle many = run_stage(
        m, chip, {{1, 1, 100, Phase::kDecode, 0, true}, {2, 1, 900, Phase::kDecode, 0, true}}, 0.0);
    const Cycle prefill = run_stage(m, chip, {{3, 512, 512, Phase::kPrefill, 0, true}}, 0.0);
    EXPECT_GT(one, 0u);
    EXPECT_GE(many, one);
    EXPECT_GT(prefill, many);
}

TEST(Lowering, StreamingWeightsCostsHbmTime) {
    const ModelConfig m = desk();
    const ChipConfig chip = chip4x4();
    const std::vector<SeqWork> seqs{{1, 1, 100, Phase::kDecode, 0, true}};
    const Cycle resident = run_stage(m, chip, seqs, 0.0, MemoryMode::kTlm);
    const Cycle streamed = run_stage(m, chip, seqs, 1.0, MemoryMode::kTlm);
    // Every weight byte of the shard crosses the core's HBM channel.
    const std::uint64_t h = 1024, q = 1024, kv = 512, f = 2816;
    const double shard = double(h * (q + 2 * kv) + q * h + 3 * h * f) * 2 / 4 * m.num_layers;
    EXPECT_GE(double(streamed), shard / chip.default_core.hbm_bandwidth);
    EXPECT_GT(streamed, resident);
}
