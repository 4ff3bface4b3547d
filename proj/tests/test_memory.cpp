// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include <gtest/gtest.h>

#include <random>

#include "npusim/memory.hpp"

using namespace npusim;

namespace {

struct Done : MemoryListener {
    std::vector<std::pair<std::uint64_t, Cycle>> calls;
    void on_memory_done(std::uint64_t cookie, Cycle t) override { calls.emplace_back(cookie, t); }
};

// Submits transactions at chosen cycles through a small driver component.
struct Driver : Component {
    MemChannel *ch = nullptr;
    std::vector<Bytes> sizes;
    std::string name() const override { return "driver"; }
    void handle(const SimEvent &ev) override { ch->submit(MemKind::kRead, sizes.at(ev.payload)); }
};

ChannelConfig cfg(double bw, Cycle lat, int outstanding, Bytes txn = 512) { return {bw, lat, outstanding, txn}; }

}  // namespace

TEST(Memory, LoneTransactionLatency) {
    Engine e;
    MemChannel ch(e, 0, cfg(64, 100, 16), MemoryMode::kTlm);
    ch.set_record(true);
    ch.submit(MemKind::kRead, 512);
    e.run();
    ASSERT_EQ(ch.log().size(), 1u);
    const auto &t = ch.log()[0];
    EXPECT_EQ(t.begin_req, 0u);
    EXPECT_EQ(t.begin_resp, 100u);
    EXPECT_EQ(t.end_resp, 108u);
    EXPECT_NO_THROW(check_phase_order(t));
}

TEST(Memory, PhaseOrderCheckerRejectsMisorder) {
    MemTransaction t;
    t.phase = MemPhase::kEndResp;
    t.begin_req = 0;
    t.end_req = 1;
    t.begin_resp = 10;
    t.end_resp = 9;
    EXPECT_THROW(check_phase_order(t), std::logic_error);
    t.end_resp = 12;
    EXPECT_NO_THROW(check_phase_order(t));
    t.phase = MemPhase::kBeginResp;
    EXPECT_THROW(check_phase_order(t), std::logic_error);
}

TEST(Memory, OutstandingLimitQueuesFifo) {
    Engine e;
    MemChannel ch(e, 0, cfg(64, 100, 2), MemoryMode::kTlm);
    ch.set_record(true);
    for (int i = 0; i < 4; ++i) ch.submit(MemKind::kRead, 512);
    EXPECT_EQ(ch.in_flight(), 2u);
    EXPECT_EQ(ch.waiting(), 2u);
    e.run();
    ASSERT_EQ(ch.log().size(), 4u);
    std::map<std::uint64_t, MemTransaction> by_id;
    for (const auto &t : ch.log()) by_id[t.id] = t;
    std::vector<MemTransaction> txns;
    for (auto &[id, t] : by_id) txns.push_back(t);
    EXPECT_GE(txns[2].end_req, txns[0].end_resp);
    EXPECT_GE(txns[3].end_req, txns[1].end_resp);
    for (std::size_t i = 1; i < txns.size(); ++i) EXPECT_LT(txns[i - 1].end_resp, txns[i].end_resp);
}

TEST(Memory, RandomTrafficRespectsPhasesAndBandwidth) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Engine e;
        MemChannel ch(e, 0, cfg(32, 80, 8), MemoryMode::kTlm);
        ch.set_record(true);
        Driver d;
        d.ch = &ch;
        const int id = e.add_component(&d);
        std::mt19937_64 rng(seed);
        Cycle t = 0;
        for (int i = 0; i < 500; ++i) {
            t += rng() % 20;
            d.sizes.push_back(1 + rng() % 1024);
            e.schedule(t, id, 0, i);
        }
        e.run();
        ASSERT_EQ(ch.log().size(), 500u);
        for (const auto &tx : ch.log()) check_phase_order(tx);
        EXPECT_TRUE(bandwidth_bound_holds(ch.log(), 32, 500));
        EXPECT_TRUE(bandwidth_bound_holds(ch.log(), 32, 50));
        Bytes sum = 0;
        for (Bytes b : d.sizes) sum += b;
        EXPECT_EQ(ch.bytes_read(), sum);
    }
}

TEST(Memory, SustainedProbeNearConfiguredBandwidth) {
    for (const auto &c : {cfg(64, 100, 16), cfg(32, 200, 32), cfg(128, 50, 16, 1024)}) {
        const double got = sustained_throughput_probe(c, 200000);
        EXPECT_GE(got, 0.95 * c.bandwidth);
        EXPECT_LE(got, 1.0 * c.bandwidth);
    }
}

TEST(Memory, ProbeLimitedByOutstandingWindow) {
    const ChannelConfig c = cfg(64, 100, 1);
    const double expect = 512.0 / (100 + 8);
    EXPECT_NEAR(sustained_bandwidth(c), expect, 1e-9);
    const double got = sustained_throughput_probe(c, 200000);
    EXPECT_NEAR(got / expect, 1.0, 0.01);
}

TEST(Memory, AnalyticMatchesTlmForLoneTransaction) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const Bytes bytes = 1 + rng() % 512;
        const ChannelConfig c = cfg(1 + static_cast<double>(rng() % 128), rng() % 300, 1 + rng() % 16);
        Cycle ends[2];
        int k = 0;
        for (MemoryMode mode : {MemoryMode::kTlm, MemoryMode::kAnalytic}) {
            Engine e;
            Done done;
            MemChannel ch(e, 0, c, mode, &done);
            ch.submit_bulk(MemKind::kRead, bytes, 9);
            e.run();
            ASSERT_EQ(done.calls.size(), 1u);
            ends[k++] = done.calls[0].second;
        }
        EXPECT_EQ(ends[0], ends[1]) << "bytes " << bytes << " bw " << c.bandwidth;
        EXPECT_EQ(ends[0], c.access_latency + transfer_cycles(bytes, c.bandwidth));
    }
}

TEST(Memory, BulkTransferSplitsAndCompletesOnce) {
    Engine e;
    Done done;
    MemChannel ch(e, 0, cfg(64, 100, 16), MemoryMode::kTlm, &done);
    ch.submit_bulk(MemKind::kWrite, 65536 + 100, 4);
    ch.submit_bulk(MemKind::kRead, 0, 5);
    e.run();
    ASSERT_EQ(done.calls.size(), 2u);
    EXPECT_EQ(done.calls[0].first, 5u);
    EXPECT_EQ(done.calls[1].first, 4u);
    EXPECT_EQ(ch.transactions(), 129u);
    EXPECT_EQ(ch.bytes_written(), 65636u);
    // Bus-bound: the latency of the first piece plus streaming at 64 B/cycle.
    EXPECT_GE(done.calls[1].second, 100 + 65636 / 64);
    EXPECT_LE(done.calls[1].second, 100 + 65636 / 64 + 16);
}

TEST(Memory, AnalyticBulkTracksTlm) {
    for (Bytes bytes : {Bytes{4096}, Bytes{1} << 20, Bytes{3} << 22}) {
        for (const auto &c : {cfg(64, 100, 16), cfg(64, 300, 4)}) {
            Cycle ends[2];
            int k = 0;
            for (MemoryMode mode : {MemoryMode::kTlm, MemoryMode::kAnalytic}) {
                Engine e;
                Done done;
                MemChannel ch(e, 0, c, mode, &done);
                ch.submit_bulk(MemKind::kRead, bytes, 1);
                e.run();
                ends[k++] = done.calls.at(0).second;
            }
            EXPECT_NEAR(static_cast<double>(ends[1]) / ends[0], 1.0, 0.02) << bytes;
        }
    }
}

TEST(Memory, ZeroByteTransactionRejected) {
    Engine e;
    MemChannel ch(e, 0, cfg(64, 100, 16), MemoryMode::kTlm);
    EXPECT_THROW(ch.submit(MemKind::kRead, 0), std::logic_error);
}
