// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/engine.hpp"

#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace npusim {

RequestRecord &MetricsSink::add_request(RequestId id, Cycle arrival, std::uint32_t prompt, std::uint32_t output) {
    if (id >= requests_.size()) requests_.resize(id + 1);
    auto &r = requests_[id];
    r.id = id;
    r.arrival = arrival;
    r.prompt = prompt;
    r.output = output;
    return r;
}

void MetricsSink::record_token(RequestId id, Cycle t) {
    auto &r = requests_.at(id);
    if (r.token_times.empty() ? t < r.arrival : t <= r.token_times.back())
        throw std::logic_error(fmt::format("request {}: token time {} not after previous", id, t));
    r.token_times.push_back(t);
}

void MetricsSink::record_finish(RequestId id, Cycle t) { requests_.at(id).finish = t; }

int Engine::add_component(Component *c) {
    components_.push_back(c);
    return static_cast<int>(components_.size()) - 1;
}

void Engine::schedule(Cycle time, int target, int kind, std::uint64_t payload) {
    if (time < now_)
        throw std::logic_error(fmt::format("event scheduled in the past: t={} now={} target={} kind={}", time, now_,
                                           target, kind));
    if (target < 0 || target >= static_cast<int>(components_.size()))
        throw std::logic_error(fmt::format("event for unknown component {}", target));
    queue_.push(SimEvent{time, next_seq_++, target, kind, payload});
}

bool Engine::step() {
    if (queue_.empty()) return false;
    const SimEvent ev = queue_.top();
    if (ev.time > horizon_) {
        std::string stuck;
        if (stuck_probe_) {
            for (const auto &s : stuck_probe_()) stuck += (stuck.empty() ? "" : ", ") + s;
        }
        throw LivelockError(fmt::format("clock passed horizon {} cycles (next event at {}); unfinished: {}", horizon_,
                                        ev.time, stuck.empty() ? "none reported" : stuck));
    }
    queue_.pop();
    now_ = ev.time;
    ++processed_;
    Component *c = components_[ev.target];
    if (dump_) {
        *dump_ << fmt::format(R"({{"t":{},"seq":{},"target":"{}","kind":"{}","payload":{}}})", ev.time, ev.seq,
                              c->name(), c->event_name(ev.kind), ev.payload)
               << '\n';
    }
    c->handle(ev);
    return true;
}

MetricsSink &Engine::run(Cycle until) {
    while (!queue_.empty() && queue_.top().time <= until) step();
    return metrics_;
}

}  // namespace npusim
