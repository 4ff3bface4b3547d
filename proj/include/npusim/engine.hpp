// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <queue>
#include <string>
#include <vector>

#include "npusim/common.hpp"

namespace npusim {

struct SimEvent {
    Cycle time = 0;
    std::uint64_t seq = 0;
    int target = -1;
    int kind = 0;
    std::uint64_t payload = 0;
};

/// Anything that receives events from the engine.
class Component {
   public:
    virtual ~Component() = default;
    virtual void handle(const SimEvent &ev) = 0;
    virtual std::string name() const = 0;
    virtual std::string event_name(int kind) const { return std::to_string(kind); }
};

struct RequestRecord {
    RequestId id = 0;
    Cycle arrival = 0;
    std::uint32_t prompt = 0;
    std::uint32_t output = 0;
    std::vector<Cycle> token_times;  // first entry is the first token
    Cycle finish = kNever;

    bool done() const { return finish != kNever; }
    Cycle first_token() const { return token_times.empty() ? kNever : token_times.front(); }

    bool operator==(const RequestRecord &) const = default;
};

struct CoreCounters {
    Cycle matrix_busy = 0;
    Cycle vector_busy = 0;
    Bytes noc_injected = 0;
    Bytes noc_received = 0;
    Bytes sram_bytes = 0;
    Bytes hbm_read = 0;
    Bytes hbm_write = 0;
    Cycle hbm_busy = 0;
    Bytes kv_sram_high_water = 0;
    Bytes kv_spill_bytes = 0;
    Bytes hbm_kv_high_water = 0;

    bool operator==(const CoreCounters &) const = default;
};

class MetricsSink {
   public:
    void resize_cores(int n) { cores_.resize(n); }
    CoreCounters &core(CoreId id) { return cores_.at(id); }
    const std::vector<CoreCounters> &cores() const { return cores_; }

    RequestRecord &add_request(RequestId id, Cycle arrival, std::uint32_t prompt, std::uint32_t output);
    RequestRecord &request(RequestId id) { return requests_.at(id); }
    const std::vector<RequestRecord> &requests() const { return requests_; }

    /// Appends a token completion; enforces strictly increasing times.
    void record_token(RequestId id, Cycle t);
    void record_finish(RequestId id, Cycle t);

    bool operator==(const MetricsSink &) const = default;

   private:
    std::vector<CoreCounters> cores_;
    std::vector<RequestRecord> requests_;  // indexed by id
};

/// Deterministic discrete-event loop. Events fire in (time, seq) order where
/// seq is the insertion counter, so equal-time events keep insertion order.
class Engine {
   public:
    Engine() = default;
    Engine(const Engine &) = delete;
    Engine &operator=(const Engine &) = delete;

    int add_component(Component *c);
    const Component &component(int id) const { return *components_.at(id); }

    /// Throws std::logic_error when `time` lies in the past.
    void schedule(Cycle time, int target, int kind, std::uint64_t payload = 0);
    void schedule_in(Cycle delay, int target, int kind, std::uint64_t payload = 0) {
        schedule(now_ + delay, target, kind, payload);
    }

    Cycle now() const { return now_; }

    /// Processes events until the queue drains or the next event lies past
    /// `until`. Passing the horizon raises LivelockError with the output of
    /// the stuck-request probe.
    MetricsSink &run(Cycle until = kNever);
    /// Processes a single event; false if the queue is empty.
    bool step();

    void set_horizon(Cycle horizon) { horizon_ = horizon; }
    Cycle horizon() const { return horizon_; }
    void set_stuck_probe(std::function<std::vector<std::string>()> probe) { stuck_probe_ = std::move(probe); }

    /// JSON-Lines dump of every processed event.
    void set_event_dump(std::ostream *out) { dump_ = out; }

    std::size_t pending() const { return queue_.size(); }
    std::uint64_t events_scheduled() const { return next_seq_; }
    std::uint64_t events_processed() const { return processed_; }

    MetricsSink &metrics() { return metrics_; }
    const MetricsSink &metrics() const { return metrics_; }

   private:
    struct Later {
        bool operator()(const SimEvent &a, const SimEvent &b) const {
            return a.time != b.time ? a.time > b.time : a.seq > b.seq;
        }
    };

    std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
    std::vector<Component *> components_;
    Cycle now_ = 0;
    std::uint64_t next_seq_ = 0;
    std::uint64_t processed_ = 0;
    Cycle horizon_ = 1'000'000'000'000ULL;
    std::function<std::vector<std::string>()> stuck_probe_;
    std::ostream *dump_ = nullptr;
    MetricsSink metrics_;
};

}  // namespace npusim
