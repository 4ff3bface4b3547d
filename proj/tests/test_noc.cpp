// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "npusim/noc.hpp"
#include "oracles.hpp"

using namespace npusim;

namespace {

ChipConfig mesh(int rows, int cols, Bytes flit = 32, Bytes packet = 4096) {
    ChipConfig c;
    c.mesh_rows = rows;
    c.mesh_cols = cols;
    c.noc_link_bandwidth = flit;
    c.noc_max_packet_bytes = packet;
    return c;
}

struct Count : NocListener {
    std::vector<std::pair<std::uint64_t, Cycle>> seen;
    void on_message_delivered(std::uint64_t cookie, Cycle t) override { seen.emplace_back(cookie, t); }
};

struct Sender : Component {
    Noc *noc = nullptr;
    struct Msg {
        CoreId src, dst;
        Bytes bytes;
    };
    std::vector<Msg> msgs;
    std::string name() const override { return "sender"; }
    void handle(const SimEvent &ev) override {
        const Msg &m = msgs.at(ev.payload);
        noc->send(m.src, m.dst, m.bytes, NocTag::kActivation, ev.payload);
    }
};

void random_traffic(int rows, int cols, std::uint64_t seed) {
    const ChipConfig chip = mesh(rows, cols);
    Engine e;
    Count count;
    Noc noc(e, chip, &count);
    noc.set_record_intervals(true);
    noc.set_record_packets(true);
    Sender s;
    s.noc = &noc;
    const int id = e.add_component(&s);
    std::mt19937_64 rng(seed);
    const int n = chip.num_cores();
    Bytes total = 0;
    for (int i = 0; i < 1000; ++i) {
        const CoreId src = rng() % n;
        CoreId dst = rng() % n;
        if (dst == src) dst = (dst + 1) % n;
        const Bytes bytes = (1 + rng() % 64) * chip.noc_link_bandwidth - rng() % chip.noc_link_bandwidth;
        s.msgs.push_back({src, dst, bytes});
        total += bytes;
        // Dense injection so links saturate.
        e.schedule(i / 8, id, 0, i);
    }
    e.run();
    ASSERT_EQ(count.seen.size(), 1000u);
    EXPECT_EQ(noc.messages_in_flight(), 0u);
    EXPECT_EQ(noc.total_injected(), total);
    EXPECT_EQ(noc.total_delivered(), total);
    for (CoreId c = 0; c < n; ++c) {
        Bytes in = 0, out = 0;
        for (const auto &m : s.msgs) {
            if (m.src == c) in += m.bytes;
            if (m.dst == c) out += m.bytes;
        }
        EXPECT_EQ(noc.injected(c), in);
        EXPECT_EQ(noc.received(c), out);
    }
    EXPECT_NO_THROW(check_link_exclusivity(noc.intervals()));
    Cycle busy = 0, expect_busy = 0;
    for (const auto &p : noc.delivered_packets()) {
        const int hops = oracle::manhattan(cols, p.src, p.dst);
        EXPECT_EQ(p.hops(), hops);
        EXPECT_GE(p.delivered - p.inject_time, static_cast<Cycle>(hops) + p.flits());
        expect_busy += hops * p.flits();
    }
    for (int l = 0; l < n * 4; ++l) busy += noc.link_busy(l);
    EXPECT_EQ(busy, expect_busy);
}

}  // namespace

TEST(Noc, AdjacentFourFlitPacketTakesFiveCycles) {
    Engine e;
    Count count;
    Noc noc(e, mesh(2, 2), &count);
    noc.send(0, 1, 4 * 32, NocTag::kControl, 3);
    e.run();
    ASSERT_EQ(count.seen.size(), 1u);
    EXPECT_EQ(count.seen[0].first, 3u);
    EXPECT_EQ(count.seen[0].second, 5u);
}

TEST(Noc, MultiHopLatencyPipelinesAcrossHops) {
    Engine e;
    Count count;
    Noc noc(e, mesh(4, 4), &count);
    noc.set_record_packets(true);
    noc.send(0, 3, 4 * 32, NocTag::kControl);
    e.run();
    // Three handshakes, four flits, two extra pipeline stages.
    EXPECT_EQ(count.seen.at(0).second, 3u + 4u + 2u);
    Cycle busy = 0;
    for (int l = 0; l < 64; ++l) busy += noc.link_busy(l);
    EXPECT_EQ(busy, 12u);
}

TEST(Noc, XyRouteGoesAlongRowFirst) {
    Engine e;
    Noc noc(e, mesh(4, 4));
    const auto r = noc.route(0, 15);
    ASSERT_EQ(r.size(), 6u);
    EXPECT_EQ(r[0], link_index(0, Dir::kEast));
    EXPECT_EQ(r[1], link_index(1, Dir::kEast));
    EXPECT_EQ(r[2], link_index(2, Dir::kEast));
    EXPECT_EQ(r[3], link_index(3, Dir::kSouth));
    EXPECT_EQ(noc.hops(0, 15), 6);
    EXPECT_EQ(noc.hops(15, 0), 6);
}

TEST(Noc, SharedLinkSerializes) {
    Engine e;
    Count count;
    Noc noc(e, mesh(1, 4), &count);
    noc.set_record_intervals(true);
    noc.send(0, 2, 3 * 32, NocTag::kActivation, 1);
    noc.send(1, 3, 5 * 32, NocTag::kActivation, 2);
    e.run();
    ASSERT_EQ(count.seen.size(), 2u);
    EXPECT_NO_THROW(check_link_exclusivity(noc.intervals()));
    const int shared = link_index(1, Dir::kEast);
    EXPECT_EQ(noc.link_busy(shared), 3u + 5u);
    // The second packet cannot start before the first lands.
    EXPECT_GT(count.seen[1].second, count.seen[0].second);
}

TEST(Noc, LongMessageIsPacketized) {
    Engine e;
    Count count;
    Noc noc(e, mesh(2, 2, 32, 256), &count);
    noc.set_record_packets(true);
    noc.send(0, 1, 1000, NocTag::kKvTransfer, 8);
    e.run();
    ASSERT_EQ(count.seen.size(), 1u);
    ASSERT_EQ(noc.delivered_packets().size(), 4u);
    EXPECT_EQ(noc.delivered_packets().back().payload_bytes, 1000u - 3 * 256);
    EXPECT_EQ(noc.received(1), 1000u);
}

TEST(Noc, LocalAndEmptySendsDeliverImmediately) {
    Engine e;
    Count count;
    Noc noc(e, mesh(2, 2), &count);
    noc.send(2, 2, 4096, NocTag::kControl, 1);
    noc.send(0, 3, 0, NocTag::kControl, 2);
    e.run();
    ASSERT_EQ(count.seen.size(), 2u);
    EXPECT_EQ(count.seen[0].second, 0u);
    EXPECT_EQ(count.seen[1].second, 0u);
}

TEST(Noc, NoTrafficMeansZeroCounters) {
    Engine e;
    Noc noc(e, mesh(3, 3));
    for (const auto &s : noc.link_utilization_report()) EXPECT_EQ(s.busy_cycles, 0u);
    EXPECT_EQ(noc.total_injected(), 0u);
}

TEST(Noc, SymmetricTrafficGivesSymmetricCounters) {
    Engine e;
    Noc noc(e, mesh(1, 2));
    noc.send(0, 1, 320, NocTag::kActivation);
    noc.send(1, 0, 320, NocTag::kActivation);
    e.run();
    EXPECT_EQ(noc.link_busy(link_index(0, Dir::kEast)), noc.link_busy(link_index(1, Dir::kWest)));
    std::stringstream csv;
    noc.write_link_csv(csv);
    EXPECT_NE(csv.str().find("busy"), std::string::npos);
}

TEST(Noc, ExclusivityCheckerCatchesOverlap) {
    std::vector<LinkInterval> iv{{0, 1, 0, 10}, {0, 2, 9, 12}};
    EXPECT_THROW(check_link_exclusivity(iv), std::logic_error);
    iv[1].begin = 10;
    EXPECT_NO_THROW(check_link_exclusivity(iv));
}

TEST(Noc, RandomTraffic8x8AllDelivered) {
    random_traffic(8, 8, 1);
    random_traffic(8, 8, 2);
}

TEST(Noc, RandomTraffic16x16AllDelivered) { random_traffic(16, 16, 3); }
