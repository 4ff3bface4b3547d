// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/memory.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace npusim {

namespace {

constexpr std::uint64_t kNoBulk = ~std::uint64_t{0};
constexpr double kDepthAlpha = 0.1;

}  // namespace

std::string to_string(MemPhase p) {
    switch (p) {
        case MemPhase::kBeginReq: return "Begin_Req";
        case MemPhase::kEndReq: return "End_Req";
        case MemPhase::kBeginResp: return "Begin_Resp";
        case MemPhase::kEndResp: return "End_Resp";
    }
    return "?";
}

double sustained_bandwidth(const ChannelConfig &cfg) {
    const double txn = static_cast<double>(cfg.txn_bytes);
    const double round_trip = static_cast<double>(cfg.access_latency) + txn / cfg.bandwidth;
    return std::min(cfg.bandwidth, cfg.max_outstanding * txn / round_trip);
}

Cycle bulk_transfer_cycles(Bytes bytes, const ChannelConfig &cfg) {
    const Cycle bus = transfer_cycles(bytes, cfg.bandwidth);
    const std::uint64_t pieces = ceil_div(bytes, cfg.txn_bytes);
    if (pieces <= 1) return bus;
    // Each window of max_outstanding pieces waits one round trip for the
    // previous window; the last window streams behind the bus.
    const double piece = static_cast<double>(cfg.txn_bytes) / cfg.bandwidth;
    const std::uint64_t window = static_cast<std::uint64_t>(cfg.max_outstanding);
    const double round_trip = static_cast<double>(cfg.access_latency) + piece;
    const double latency_bound = static_cast<double>((pieces - 1) / window) * round_trip +
                                 static_cast<double>((pieces - 1) % window + 1) * piece;
    return std::max(bus, static_cast<Cycle>(std::ceil(latency_bound - 1e-9)));
}

Cycle analytic_latency(Bytes bytes, double depth, const ChannelConfig &cfg, double mean_service) {
    const double queueing = std::max(0.0, depth) * std::max(0.0, mean_service);
    return cfg.access_latency + bulk_transfer_cycles(bytes, cfg) + static_cast<Cycle>(std::llround(queueing));
}

MemChannel::MemChannel(Engine &engine, CoreId core, ChannelConfig cfg, MemoryMode mode, MemoryListener *listener)
    : engine_(engine), core_(core), cfg_(cfg), mode_(mode), listener_(listener) {
    if (!(cfg_.bandwidth > 0)) throw ValidationError("hbm_bandwidth", "bandwidth must be > 0");
    if (cfg_.max_outstanding < 1) throw ValidationError("max_outstanding", "must be >= 1");
    if (cfg_.txn_bytes < 1) cfg_.txn_bytes = 512;
    id_ = engine_.add_component(this);
}

std::string MemChannel::event_name(int kind) const {
    switch (kind) {
        case kEndReq: return "End_Req";
        case kBeginResp: return "Begin_Resp";
        case kEndResp: return "End_Resp";
        case kAnalyticDone: return "analytic_done";
        case kEmptyBulk: return "empty_bulk";
    }
    return std::to_string(kind);
}

void MemChannel::advance(MemTransaction &t, MemPhase next, Cycle at) {
    if (static_cast<int>(next) != static_cast<int>(t.phase) + 1)
        throw std::logic_error(fmt::format("txn {}: phase {} after {}", t.id, to_string(next), to_string(t.phase)));
    t.phase = next;
    switch (next) {
        case MemPhase::kEndReq: t.end_req = at; break;
        case MemPhase::kBeginResp: t.begin_resp = at; break;
        case MemPhase::kEndResp: t.end_resp = at; break;
        default: break;
    }
}

std::uint64_t MemChannel::submit(MemKind kind, Bytes bytes, std::uint64_t /*cookie*/) {
    if (bytes < 1) throw std::logic_error("memory transaction with zero bytes");
    std::uint64_t slot;
    if (!free_slots_.empty()) {
        slot = free_slots_.back();
        free_slots_.pop_back();
    } else {
        slot = slots_.size();
        slots_.emplace_back();
        slot_bulk_.push_back(kNoBulk);
    }
    MemTransaction &t = slots_[slot];
    t = MemTransaction{};
    t.id = next_id_++;
    t.core = core_;
    t.kind = kind;
    t.bytes = bytes;
    t.issue_time = engine_.now();
    t.begin_req = engine_.now();
    slot_bulk_[slot] = kNoBulk;
    last_slot_ = slot;

    if (mode_ == MemoryMode::kAnalytic) {
        const double depth = static_cast<double>(analytic_in_flight_);
        ewma_depth_ = kDepthAlpha * depth + (1 - kDepthAlpha) * ewma_depth_;
        const double service = static_cast<double>(bulk_transfer_cycles(bytes, cfg_));
        ewma_service_ = have_service_ ? kDepthAlpha * service + (1 - kDepthAlpha) * ewma_service_ : service;
        have_service_ = true;
        const Cycle lat = analytic_latency(bytes, ewma_depth_, cfg_, ewma_service_);
        const Cycle xfer = bulk_transfer_cycles(bytes, cfg_);
        advance(t, MemPhase::kEndReq, engine_.now());
        advance(t, MemPhase::kBeginResp, engine_.now() + lat - xfer);
        ++analytic_in_flight_;
        engine_.schedule(engine_.now() + lat, id_, kAnalyticDone, slot);
        return t.id;
    }
    pending_.push_back(slot);
    try_accept();
    return t.id;
}

void MemChannel::submit_bulk(MemKind kind, Bytes bytes, std::uint64_t cookie) {
    std::uint64_t b;
    if (!free_bulks_.empty()) {
        b = free_bulks_.back();
        free_bulks_.pop_back();
    } else {
        b = bulks_.size();
        bulks_.emplace_back();
    }
    bulks_[b] = Bulk{kind, bytes, 0, cookie, true};
    if (bytes == 0) {
        ++bulks_[b].outstanding;
        engine_.schedule(engine_.now(), id_, kEmptyBulk, b);
        return;
    }
    if (mode_ == MemoryMode::kAnalytic) {
        bulks_[b].remaining_to_issue = 0;
        bulks_[b].outstanding = 1;
        submit(kind, bytes);
        slot_bulk_[last_slot_] = b;
        return;
    }
    bulk_queue_.push_back(b);
    issue_from_bulks();
}

void MemChannel::issue_from_bulks() {
    while (!bulk_queue_.empty() && accepted_ + pending_.size() < static_cast<std::size_t>(cfg_.max_outstanding)) {
        const std::uint64_t b = bulk_queue_.front();
        Bulk &bulk = bulks_[b];
        const Bytes part = std::min<Bytes>(cfg_.txn_bytes, bulk.remaining_to_issue);
        bulk.remaining_to_issue -= part;
        ++bulk.outstanding;
        if (bulk.remaining_to_issue == 0) bulk_queue_.pop_front();
        submit(bulk.kind, part);
        slot_bulk_[last_slot_] = b;
    }
}

void MemChannel::try_accept() {
    while (!pending_.empty() && accepted_ < static_cast<std::size_t>(cfg_.max_outstanding)) {
        const std::uint64_t slot = pending_.front();
        pending_.pop_front();
        accept(slot);
    }
}

void MemChannel::accept(std::uint64_t slot) {
    MemTransaction &t = slots_[slot];
    const Cycle now = engine_.now();
    advance(t, MemPhase::kEndReq, now);
    ++accepted_;
    const Cycle begin_resp = std::max(now + cfg_.access_latency, bus_free_);
    const Cycle end_resp = begin_resp + transfer_cycles(t.bytes, cfg_.bandwidth);
    bus_free_ = end_resp;
    engine_.schedule(begin_resp, id_, kBeginResp, slot);
    engine_.schedule(end_resp, id_, kEndResp, slot);
}

void MemChannel::finish(MemTransaction &t) {
    check_phase_order(t);
    ++completed_;
    const Cycle xfer = transfer_cycles(t.bytes, cfg_.bandwidth);
    busy_cycles_ += xfer;
    if (t.kind == MemKind::kRead)
        bytes_read_ += t.bytes;
    else
        bytes_written_ += t.bytes;
    if (record_) log_.push_back(t);
}

void MemChannel::bulk_part_done(std::uint64_t b) {
    if (b == kNoBulk) return;
    Bulk &bulk = bulks_[b];
    if (--bulk.outstanding == 0 && bulk.remaining_to_issue == 0) {
        const std::uint64_t cookie = bulk.cookie;
        free_bulks_.push_back(b);
        if (listener_) listener_->on_memory_done(cookie, engine_.now());
    }
}

void MemChannel::handle(const SimEvent &ev) {
    switch (ev.kind) {
        case kBeginResp: {
            advance(slots_[ev.payload], MemPhase::kBeginResp, engine_.now());
            break;
        }
        case kEndResp: {
            MemTransaction &t = slots_[ev.payload];
            advance(t, MemPhase::kEndResp, engine_.now());
            finish(t);
            --accepted_;
            free_slots_.push_back(ev.payload);
            const std::uint64_t b = slot_bulk_[ev.payload];
            try_accept();
            issue_from_bulks();
            bulk_part_done(b);
            break;
        }
        case kEmptyBulk: bulk_part_done(ev.payload); break;
        case kAnalyticDone: {
            MemTransaction &t = slots_[ev.payload];
            advance(t, MemPhase::kEndResp, engine_.now());
            finish(t);
            --analytic_in_flight_;
            // Sample depth on departures too, so the estimate decays once the
            // queue drains instead of carrying a burst into the next one.
            ewma_depth_ = kDepthAlpha * static_cast<double>(analytic_in_flight_) + (1 - kDepthAlpha) * ewma_depth_;
            free_slots_.push_back(ev.payload);
            bulk_part_done(slot_bulk_[ev.payload]);
            break;
        }
        default: throw std::logic_error("memory channel: unknown event");
    }
}

void check_phase_order(const MemTransaction &t) {
    const bool ordered = t.phase == MemPhase::kEndResp && t.begin_req != kNever && t.begin_req <= t.end_req &&
                         t.end_req <= t.begin_resp && t.begin_resp <= t.end_resp && t.end_resp != kNever;
    if (!ordered)
        throw std::logic_error(fmt::format("txn {}: phases out of order ({} {} {} {}, last {})", t.id, t.begin_req,
                                           t.end_req, t.begin_resp, t.end_resp, to_string(t.phase)));
}

bool bandwidth_bound_holds(const std::vector<MemTransaction> &log, double bandwidth, Cycle window) {
    if (log.empty()) return true;
    std::vector<std::pair<Cycle, Bytes>> done;
    Bytes largest = 0;
    for (const auto &t : log) {
        done.emplace_back(t.end_resp, t.bytes);
        largest = std::max(largest, t.bytes);
    }
    std::sort(done.begin(), done.end());
    const double limit = bandwidth * static_cast<double>(window) + static_cast<double>(largest);
    Bytes in_window = 0;
    std::size_t lo = 0;
    for (std::size_t hi = 0; hi < done.size(); ++hi) {
        in_window += done[hi].second;
        while (done[hi].first - done[lo].first >= window) in_window -= done[lo++].second;
        if (static_cast<double>(in_window) > limit) return false;
    }
    return true;
}

namespace {

class ProbeSink : public MemoryListener {
   public:
    void on_memory_done(std::uint64_t, Cycle) override {}
};

}  // namespace

double sustained_throughput_probe(const ChannelConfig &cfg_in, Cycle duration, Bytes txn_bytes) {
    if (duration == 0) return 0.0;
    ChannelConfig cfg = cfg_in;
    if (txn_bytes > 0) cfg.txn_bytes = txn_bytes;
    Engine engine;
    ProbeSink sink;
    MemChannel ch(engine, 0, cfg, MemoryMode::kTlm, &sink);
    ch.set_record(true);
    const auto demand = static_cast<Bytes>(cfg.bandwidth * static_cast<double>(duration)) * 2 + cfg.txn_bytes;
    ch.submit_bulk(MemKind::kRead, demand, 1);
    engine.run(duration);
    Bytes delivered = 0;
    for (const auto &t : ch.log())
        if (t.end_resp <= duration) delivered += t.bytes;
    return static_cast<double>(delivered) / static_cast<double>(duration);
}

}  // namespace npusim
