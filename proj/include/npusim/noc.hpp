// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "npusim/common.hpp"
#include "npusim/config.hpp"
#include "npusim/engine.hpp"

namespace npusim {

enum class Dir { kNorth = 0, kSouth = 1, kEast = 2, kWest = 3 };
enum class NocTag { kActivation, kKvTransfer, kCollectiveStep, kControl };
enum class PacketState { kRequestingPath, kStreaming, kDelivered };

std::string to_string(Dir d);
std::string to_string(NocTag t);

/// Directed link leaving `core` towards `dir`.
inline int link_index(CoreId core, Dir dir) { return core * 4 + static_cast<int>(dir); }

struct NocPacket {
    std::uint64_t id = 0;
    CoreId src = 0;
    CoreId dst = 0;
    Bytes payload_bytes = 0;
    Bytes flit_bytes = 0;
    NocTag tag = NocTag::kControl;
    PacketState state = PacketState::kRequestingPath;
    std::vector<int> route;  // link indices in traversal order
    std::size_t acquired = 0;
    Cycle inject_time = 0;
    Cycle established = kNever;
    Cycle delivered = kNever;
    std::uint64_t message = 0;

    std::uint64_t flits() const { return ceil_div(payload_bytes, flit_bytes); }
    int hops() const { return static_cast<int>(route.size()); }
};

struct LinkStat {
    int x = 0;  // column of the source router
    int y = 0;  // row of the source router
    Dir dir = Dir::kNorth;
    Cycle busy_cycles = 0;
};

/// Streaming interval of one packet on one directed link, [begin, end).
struct LinkInterval {
    int link = 0;
    std::uint64_t packet = 0;
    Cycle begin = 0;
    Cycle end = 0;
};

class NocListener {
   public:
    virtual ~NocListener() = default;
    virtual void on_message_delivered(std::uint64_t cookie, Cycle t) = 0;
};

/// 2D mesh with XY routing and circuit-style path locking. A packet acquires
/// the links of its route one by one (handshake cycles per hop), holding what
/// it has while it waits, FIFO per link. Once the path is up the payload
/// streams one flit per cycle, pipelined across hops, and every link is
/// released on delivery. Messages larger than the packet limit go out as a
/// sequence of packets, each starting after the previous one lands.
class Noc : public Component {
   public:
    Noc(Engine &engine, const ChipConfig &chip, NocListener *listener = nullptr);

    /// Returns the message id. src == dst delivers at the current cycle.
    std::uint64_t send(CoreId src, CoreId dst, Bytes bytes, NocTag tag, std::uint64_t cookie = 0);

    int hops(CoreId a, CoreId b) const;
    std::vector<int> route(CoreId src, CoreId dst) const;

    void handle(const SimEvent &ev) override;
    std::string name() const override { return "noc"; }
    std::string event_name(int kind) const override;

    void set_listener(NocListener *l) { listener_ = l; }
    void set_record_intervals(bool on) { record_intervals_ = on; }
    const std::vector<LinkInterval> &intervals() const { return intervals_; }
    /// Every delivered packet (route, timestamps) when recording is on.
    void set_record_packets(bool on) { record_packets_ = on; }
    const std::vector<NocPacket> &delivered_packets() const { return delivered_log_; }

    std::vector<LinkStat> link_utilization_report() const;
    void write_link_csv(std::ostream &out) const;
    Cycle link_busy(int link) const { return link_busy_.at(link); }

    Bytes injected(CoreId c) const { return injected_.at(c); }
    Bytes received(CoreId c) const { return received_.at(c); }
    Bytes total_injected() const;
    Bytes total_delivered() const;
    std::uint64_t packets_delivered() const { return packets_delivered_; }
    std::size_t messages_in_flight() const { return messages_.size() - free_messages_.size(); }
    Bytes packet_bytes() const { return max_packet_; }

   private:
    enum Kind { kAcquire, kDeliver, kLocalDeliver };

    struct Message {
        CoreId src = 0, dst = 0;
        Bytes remaining = 0;
        NocTag tag = NocTag::kControl;
        std::uint64_t cookie = 0;
        bool live = false;
    };

    struct Link {
        std::optional<std::uint64_t> owner;
        std::deque<std::uint64_t> waiters;
    };

    void start_packet(std::uint64_t msg);
    void try_acquire(std::uint64_t pkt_slot);
    void grant(std::uint64_t pkt_slot, Cycle at);
    void deliver(std::uint64_t pkt_slot);

    Engine &engine_;
    const ChipConfig chip_;
    NocListener *listener_;
    int id_;
    Bytes flit_;
    Bytes max_packet_;
    Cycle handshake_;

    std::vector<Link> links_;
    std::vector<Cycle> link_busy_;
    std::vector<Bytes> injected_;
    std::vector<Bytes> received_;

    std::vector<Message> messages_;
    std::vector<std::uint64_t> free_messages_;
    std::vector<NocPacket> packets_;
    std::vector<std::uint64_t> packet_msg_;
    std::vector<std::uint64_t> free_packets_;
    std::uint64_t next_packet_id_ = 0;
    std::uint64_t packets_delivered_ = 0;

    bool record_intervals_ = false;
    bool record_packets_ = false;
    std::vector<LinkInterval> intervals_;
    std::vector<NocPacket> delivered_log_;
};

/// Throws std::logic_error if two intervals on the same link overlap.
void check_link_exclusivity(std::vector<LinkInterval> intervals);

}  // namespace npusim
