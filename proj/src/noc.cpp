// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/noc.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace npusim {

std::string to_string(Dir d) {
    switch (d) {
        case Dir::kNorth: return "N";
        case Dir::kSouth: return "S";
        case Dir::kEast: return "E";
        case Dir::kWest: return "W";
    }
    return "?";
}

std::string to_string(NocTag t) {
    switch (t) {
        case NocTag::kActivation: return "activation";
        case NocTag::kKvTransfer: return "kv-transfer";
        case NocTag::kCollectiveStep: return "collective-step";
        case NocTag::kControl: return "control";
    }
    return "?";
}

Noc::Noc(Engine &engine, const ChipConfig &chip, NocListener *listener)
    : engine_(engine),
      chip_(chip),
      listener_(listener),
      flit_(chip.noc_link_bandwidth),
      max_packet_(chip.noc_max_packet_bytes),
      handshake_(chip.noc_handshake_cycles) {
    if (flit_ < 1) throw ValidationError("chip.noc_link_bandwidth", "bandwidth must be > 0");
    if (max_packet_ < 1) max_packet_ = flit_;
    const int n = chip.num_cores();
    links_.resize(static_cast<std::size_t>(n) * 4);
    link_busy_.assign(links_.size(), 0);
    injected_.assign(n, 0);
    received_.assign(n, 0);
    id_ = engine_.add_component(this);
}

std::string Noc::event_name(int kind) const {
    switch (kind) {
        case kAcquire: return "acquire";
        case kDeliver: return "deliver";
        case kLocalDeliver: return "local_deliver";
    }
    return std::to_string(kind);
}

int Noc::hops(CoreId a, CoreId b) const {
    return std::abs(chip_.row_of(a) - chip_.row_of(b)) + std::abs(chip_.col_of(a) - chip_.col_of(b));
}

std::vector<int> Noc::route(CoreId src, CoreId dst) const {
    std::vector<int> out;
    int r = chip_.row_of(src), c = chip_.col_of(src);
    const int tr = chip_.row_of(dst), tc = chip_.col_of(dst);
    while (c != tc) {
        const Dir d = tc > c ? Dir::kEast : Dir::kWest;
        out.push_back(link_index(chip_.id_of(r, c), d));
        c += tc > c ? 1 : -1;
    }
    while (r != tr) {
        const Dir d = tr > r ? Dir::kSouth : Dir::kNorth;
        out.push_back(link_index(chip_.id_of(r, c), d));
        r += tr > r ? 1 : -1;
    }
    return out;
}

std::uint64_t Noc::send(CoreId src, CoreId dst, Bytes bytes, NocTag tag, std::uint64_t cookie) {
    const int n = chip_.num_cores();
    if (src < 0 || src >= n || dst < 0 || dst >= n)
        throw std::logic_error(fmt::format("noc send between invalid cores {} -> {}", src, dst));
    std::uint64_t m;
    if (!free_messages_.empty()) {
        m = free_messages_.back();
        free_messages_.pop_back();
    } else {
        m = messages_.size();
        messages_.emplace_back();
    }
    messages_[m] = Message{src, dst, bytes, tag, cookie, true};
    injected_[src] += bytes;
    if (src == dst || bytes == 0) {
        received_[dst] += bytes;
        messages_[m].remaining = 0;
        engine_.schedule(engine_.now(), id_, kLocalDeliver, m);
        return m;
    }
    start_packet(m);
    return m;
}

void Noc::start_packet(std::uint64_t m) {
    Message &msg = messages_[m];
    const Bytes part = std::min(max_packet_, msg.remaining);
    msg.remaining -= part;
    std::uint64_t slot;
    if (!free_packets_.empty()) {
        slot = free_packets_.back();
        free_packets_.pop_back();
    } else {
        slot = packets_.size();
        packets_.emplace_back();
        packet_msg_.push_back(0);
    }
    NocPacket &p = packets_[slot];
    p = NocPacket{};
    p.id = next_packet_id_++;
    p.src = msg.src;
    p.dst = msg.dst;
    p.payload_bytes = part;
    p.flit_bytes = flit_;
    p.tag = msg.tag;
    p.route = route(msg.src, msg.dst);
    p.inject_time = engine_.now();
    p.message = m;
    packet_msg_[slot] = m;
    try_acquire(slot);
}

void Noc::try_acquire(std::uint64_t slot) {
    NocPacket &p = packets_[slot];
    Link &link = links_[p.route[p.acquired]];
    if (!link.owner) {
        grant(slot, engine_.now());
    } else {
        link.waiters.push_back(slot);
    }
}

void Noc::grant(std::uint64_t slot, Cycle at) {
    NocPacket &p = packets_[slot];
    const int li = p.route[p.acquired];
    if (links_[li].owner) throw std::logic_error("noc: granting a locked link");
    links_[li].owner = slot;
    ++p.acquired;
    if (p.acquired < p.route.size()) {
        engine_.schedule(at + handshake_, id_, kAcquire, slot);
        return;
    }
    p.state = PacketState::kStreaming;
    p.established = at + handshake_;
    const std::uint64_t flits = p.flits();
    const Cycle delivery = p.established + flits + p.route.size() - 1;
    if (record_intervals_) {
        for (std::size_t i = 0; i < p.route.size(); ++i)
            intervals_.push_back(LinkInterval{p.route[i], p.id, p.established + i, p.established + i + flits});
    }
    engine_.schedule(delivery, id_, kDeliver, slot);
}

void Noc::deliver(std::uint64_t slot) {
    NocPacket &p = packets_[slot];
    p.state = PacketState::kDelivered;
    p.delivered = engine_.now();
    const std::uint64_t flits = p.flits();
    for (int li : p.route) {
        Link &link = links_[li];
        if (link.owner != slot) throw std::logic_error("noc: releasing a link the packet does not hold");
        link.owner.reset();
        link_busy_[li] += flits;
    }
    received_[p.dst] += p.payload_bytes;
    ++packets_delivered_;
    if (record_packets_) delivered_log_.push_back(p);
    const std::uint64_t m = packet_msg_[slot];
    const std::vector<int> route_copy = p.route;
    free_packets_.push_back(slot);
    // Hand released links to the oldest waiter of each.
    for (int li : route_copy) {
        Link &link = links_[li];
        if (!link.owner && !link.waiters.empty()) {
            const std::uint64_t w = link.waiters.front();
            link.waiters.pop_front();
            grant(w, engine_.now());
        }
    }
    Message &msg = messages_[m];
    if (msg.remaining > 0) {
        start_packet(m);
        return;
    }
    msg.live = false;
    const std::uint64_t cookie = msg.cookie;
    free_messages_.push_back(m);
    if (listener_) listener_->on_message_delivered(cookie, engine_.now());
}

void Noc::handle(const SimEvent &ev) {
    switch (ev.kind) {
        case kAcquire: try_acquire(ev.payload); break;
        case kDeliver: deliver(ev.payload); break;
        case kLocalDeliver: {
            Message &msg = messages_[ev.payload];
            msg.live = false;
            const std::uint64_t cookie = msg.cookie;
            free_messages_.push_back(ev.payload);
            if (listener_) listener_->on_message_delivered(cookie, engine_.now());
            break;
        }
        default: throw std::logic_error("noc: unknown event");
    }
}

std::vector<LinkStat> Noc::link_utilization_report() const {
    std::vector<LinkStat> out;
    for (CoreId c = 0; c < chip_.num_cores(); ++c) {
        for (int d = 0; d < 4; ++d) {
            const Dir dir = static_cast<Dir>(d);
            const int r = chip_.row_of(c), col = chip_.col_of(c);
            const bool exists = (dir == Dir::kNorth && r > 0) || (dir == Dir::kSouth && r + 1 < chip_.mesh_rows) ||
                                (dir == Dir::kWest && col > 0) || (dir == Dir::kEast && col + 1 < chip_.mesh_cols);
            if (!exists) continue;
            out.push_back(LinkStat{col, r, dir, link_busy_[link_index(c, dir)]});
        }
    }
    return out;
}

void Noc::write_link_csv(std::ostream &out) const {
    out << "core_x,core_y,dir,busy_cycles\n";
    for (const auto &s : link_utilization_report())
        out << s.x << ',' << s.y << ',' << to_string(s.dir) << ',' << s.busy_cycles << '\n';
}

Bytes Noc::total_injected() const {
    Bytes t = 0;
    for (Bytes b : injected_) t += b;
    return t;
}

Bytes Noc::total_delivered() const {
    Bytes t = 0;
    for (Bytes b : received_) t += b;
    return t;
}

void check_link_exclusivity(std::vector<LinkInterval> iv) {
    std::sort(iv.begin(), iv.end(), [](const LinkInterval &a, const LinkInterval &b) {
        return a.link != b.link ? a.link < b.link : a.begin < b.begin;
    });
    for (std::size_t i = 1; i < iv.size(); ++i) {
        if (iv[i].link == iv[i - 1].link && iv[i].begin < iv[i - 1].end)
            throw std::logic_error(fmt::format("link {} streams packets {} and {} in the same cycle", iv[i].link,
                                               iv[i - 1].packet, iv[i].packet));
    }
}

}  // namespace npusim
