// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "npusim/common.hpp"
#include "npusim/config.hpp"
#include "npusim/engine.hpp"

namespace npusim {

enum class MemTarget { kSram, kHbm };
enum class MemKind { kRead, kWrite };
enum class MemPhase { kBeginReq, kEndReq, kBeginResp, kEndResp };

std::string to_string(MemPhase p);

struct MemTransaction {
    std::uint64_t id = 0;
    CoreId core = 0;
    MemTarget target = MemTarget::kHbm;
    MemKind kind = MemKind::kRead;
    Bytes bytes = 0;
    Cycle issue_time = 0;
    MemPhase phase = MemPhase::kBeginReq;
    // Timestamp of each phase, kNever until reached.
    Cycle begin_req = kNever;
    Cycle end_req = kNever;
    Cycle begin_resp = kNever;
    Cycle end_resp = kNever;
};

struct ChannelConfig {
    double bandwidth = 64.0;  // bytes/cycle
    Cycle access_latency = 100;
    int max_outstanding = 16;
    Bytes txn_bytes = 512;  // bulk transfers are split into this size in TLM mode

    static ChannelConfig hbm(const CoreConfig &core) {
        return {core.hbm_bandwidth, core.hbm_latency, core.max_outstanding, core.dma_txn_bytes};
    }
};

inline Cycle transfer_cycles(Bytes bytes, double bandwidth) {
    if (bytes == 0) return 0;
    return static_cast<Cycle>(std::ceil(static_cast<double>(bytes) / bandwidth - 1e-9));
}

/// Streaming rate a bulk transfer reaches in TLM mode: the bus bandwidth, or
/// less when max_outstanding transactions cannot cover the access latency.
double sustained_bandwidth(const ChannelConfig &cfg);

/// Data-bus cycles of a bulk transfer as the performance model sees it.
Cycle bulk_transfer_cycles(Bytes bytes, const ChannelConfig &cfg);

/// Performance-model latency: access + transfer + queueing estimate. The
/// transfer is the larger of the bus time and the outstanding-window bound,
/// so a lone transaction of up to txn_bytes matches TLM mode exactly.
Cycle analytic_latency(Bytes bytes, double queue_depth_estimate, const ChannelConfig &cfg,
                       double mean_service_cycles);

/// Receives completion of bulk requests submitted with a cookie.
class MemoryListener {
   public:
    virtual ~MemoryListener() = default;
    virtual void on_memory_done(std::uint64_t cookie, Cycle t) = 0;
};

/// One HBM channel. In TLM mode every transaction walks the four phases as
/// engine events; at most max_outstanding are accepted, the rest wait in a
/// FIFO. Accepted transactions overlap their access latency, but the data bus
/// carries one transaction at a time. In analytic mode a bulk request is a
/// single event at now + analytic_latency.
class MemChannel : public Component {
   public:
    MemChannel(Engine &engine, CoreId core, ChannelConfig cfg, MemoryMode mode, MemoryListener *listener = nullptr);

    /// Queues a bulk transfer; the listener fires once when all of it is done.
    void submit_bulk(MemKind kind, Bytes bytes, std::uint64_t cookie);

    /// Single transaction (Begin_Req at now). Returns its id.
    std::uint64_t submit(MemKind kind, Bytes bytes, std::uint64_t cookie = 0);

    void handle(const SimEvent &ev) override;
    std::string name() const override { return "hbm" + std::to_string(core_); }
    std::string event_name(int kind) const override;

    void set_listener(MemoryListener *l) { listener_ = l; }
    /// Keeps every finished transaction (with phase timestamps).
    void set_record(bool on) { record_ = on; }
    const std::vector<MemTransaction> &log() const { return log_; }

    const ChannelConfig &config() const { return cfg_; }
    MemoryMode mode() const { return mode_; }
    Bytes bytes_read() const { return bytes_read_; }
    Bytes bytes_written() const { return bytes_written_; }
    Cycle busy_cycles() const { return busy_cycles_; }
    std::uint64_t transactions() const { return completed_; }
    std::size_t in_flight() const { return accepted_; }
    std::size_t waiting() const { return pending_.size(); }
    double depth_estimate() const { return ewma_depth_; }

   private:
    enum Kind { kEndReq, kBeginResp, kEndResp, kAnalyticDone, kEmptyBulk };

    struct Bulk {
        MemKind kind;
        Bytes remaining_to_issue;
        std::uint64_t outstanding = 0;
        std::uint64_t cookie;
        bool has_listener;
    };

    void try_accept();
    void accept(std::uint64_t slot);
    void finish(MemTransaction &t);
    void advance(MemTransaction &t, MemPhase next, Cycle at);
    void issue_from_bulks();
    void bulk_part_done(std::uint64_t bulk_id);

    Engine &engine_;
    CoreId core_;
    ChannelConfig cfg_;
    MemoryMode mode_;
    MemoryListener *listener_;
    int id_;

    // Transactions live in `slots_` until End_Resp; pending_ holds slot
    // indices that have issued Begin_Req but were not yet accepted.
    std::vector<MemTransaction> slots_;
    std::vector<std::uint64_t> slot_bulk_;
    std::vector<std::uint64_t> free_slots_;
    std::deque<std::uint64_t> pending_;
    std::uint64_t last_slot_ = 0;
    std::size_t accepted_ = 0;
    Cycle bus_free_ = 0;
    std::uint64_t next_id_ = 0;

    std::vector<Bulk> bulks_;
    std::vector<std::uint64_t> free_bulks_;
    std::deque<std::uint64_t> bulk_queue_;

    std::size_t analytic_in_flight_ = 0;
    double ewma_depth_ = 0.0;
    double ewma_service_ = 0.0;
    bool have_service_ = false;

    bool record_ = false;
    std::vector<MemTransaction> log_;
    Bytes bytes_read_ = 0;
    Bytes bytes_written_ = 0;
    Cycle busy_cycles_ = 0;
    std::uint64_t completed_ = 0;
};

/// Throws std::logic_error unless the transaction went through the four
/// phases in order with non-decreasing timestamps.
void check_phase_order(const MemTransaction &t);

/// Largest bytes delivered (End_Resp) in any window of `window` cycles,
/// compared against bandwidth * window + largest transaction.
bool bandwidth_bound_holds(const std::vector<MemTransaction> &log, double bandwidth, Cycle window);

/// Saturates a fresh channel with back-to-back reads for `duration` cycles
/// and returns delivered bytes / duration.
double sustained_throughput_probe(const ChannelConfig &cfg, Cycle duration, Bytes txn_bytes = 0);

}  // namespace npusim
