// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/executor.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace npusim {

std::uint32_t TaskGraph::add(Task t) {
    for (auto d : t.deps)
        if (d >= tasks.size()) throw std::logic_error(fmt::format("task depends on unknown task {}", d));
    tasks.push_back(std::move(t));
    return static_cast<std::uint32_t>(tasks.size() - 1);
}

std::uint32_t TaskGraph::matrix(CoreId core, Cycle cycles, std::vector<std::uint32_t> deps, Bytes sram) {
    Task t;
    t.kind = TaskKind::kMatrix;
    t.core = core;
    t.cycles = cycles;
    t.sram_bytes = sram;
    t.deps = std::move(deps);
    return add(std::move(t));
}

std::uint32_t TaskGraph::vector(CoreId core, Cycle cycles, std::vector<std::uint32_t> deps, Bytes sram) {
    Task t;
    t.kind = TaskKind::kVector;
    t.core = core;
    t.cycles = cycles;
    t.sram_bytes = sram;
    t.deps = std::move(deps);
    return add(std::move(t));
}

std::uint32_t TaskGraph::dma(CoreId core, MemKind kind, Bytes bytes, std::vector<std::uint32_t> deps) {
    Task t;
    t.kind = TaskKind::kDma;
    t.core = core;
    t.dma = kind;
    t.bytes = bytes;
    t.deps = std::move(deps);
    return add(std::move(t));
}

std::uint32_t TaskGraph::send(CoreId src, CoreId dst, Bytes bytes, NocTag tag, std::vector<std::uint32_t> deps) {
    Task t;
    t.kind = TaskKind::kSend;
    t.core = src;
    t.dst = dst;
    t.bytes = bytes;
    t.tag = tag;
    t.deps = std::move(deps);
    return add(std::move(t));
}

std::uint32_t TaskGraph::barrier(std::vector<std::uint32_t> deps, CoreId core) {
    Task t;
    t.kind = TaskKind::kBarrier;
    t.core = core;
    t.deps = std::move(deps);
    return add(std::move(t));
}

Executor::Executor(Engine &engine, const ChipConfig &chip, MemoryMode mode, bool record_transactions)
    : engine_(engine), chip_(chip) {
    id_ = engine_.add_component(this);
    noc_ = std::make_unique<Noc>(engine_, chip_, this);
    for (CoreId c = 0; c < chip_.num_cores(); ++c) {
        channels_.push_back(std::make_unique<MemChannel>(engine_, c, ChannelConfig::hbm(chip_.core(c)), mode, this));
        channels_.back()->set_record(record_transactions);
    }
    matrix_.resize(chip_.num_cores());
    vector_.resize(chip_.num_cores());
    if (engine_.metrics().cores().size() < static_cast<std::size_t>(chip_.num_cores()))
        engine_.metrics().resize_cores(chip_.num_cores());
}

std::string Executor::event_name(int kind) const { return kind == kTaskDone ? "task_done" : std::to_string(kind); }

Executor::Stream &Executor::stream_of(const Task &t) {
    return t.kind == TaskKind::kMatrix ? matrix_.at(t.core) : vector_.at(t.core);
}

std::uint64_t Executor::submit(TaskGraph graph, JobListener *listener) {
    const std::uint64_t id = next_job_++;
    const int n_cores = chip_.num_cores();
    Job job;
    job.listener = listener;
    job.remaining = graph.tasks.size();
    job.waiting.resize(graph.tasks.size());
    job.dependents.resize(graph.tasks.size());
    for (std::uint32_t i = 0; i < graph.tasks.size(); ++i) {
        const Task &t = graph.tasks[i];
        if (t.core < 0 || t.core >= n_cores || (t.kind == TaskKind::kSend && (t.dst < 0 || t.dst >= n_cores)))
            throw std::logic_error(fmt::format("task {} references a core outside the mesh", i));
        job.waiting[i] = static_cast<std::uint32_t>(t.deps.size());
        for (auto d : t.deps) job.dependents[d].push_back(i);
    }
    job.graph = std::move(graph);
    auto &stored = jobs_.emplace(id, std::move(job)).first->second;
    if (stored.remaining == 0) {
        jobs_.erase(id);
        // Empty job: report completion through the event queue.
        engine_.schedule(engine_.now(), id_, kTaskDone, cookie(0, 0));
        empty_done_.push_back({id, listener});
        return id;
    }
    for (std::uint32_t i = 0; i < stored.graph.tasks.size(); ++i) {
        const Task &t = stored.graph.tasks[i];
        if (t.kind == TaskKind::kMatrix || t.kind == TaskKind::kVector) stream_of(t).queue.push_back(cookie(id, i));
    }
    const std::size_t n = stored.graph.tasks.size();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto it = jobs_.find(id);
        if (it == jobs_.end()) break;
        if (it->second.waiting[i] == 0) ready(id, i);
    }
    return id;
}

void Executor::ready(std::uint64_t job_id, std::uint32_t task) {
    Job &job = jobs_.at(job_id);
    const Task &t = job.graph.tasks[task];
    switch (t.kind) {
        case TaskKind::kMatrix:
        case TaskKind::kVector: pump(stream_of(t)); break;
        case TaskKind::kDma: channels_.at(t.core)->submit_bulk(t.dma, t.bytes, cookie(job_id, task)); break;
        case TaskKind::kSend: noc_->send(t.core, t.dst, t.bytes, t.tag, cookie(job_id, task)); break;
        case TaskKind::kBarrier: engine_.schedule(engine_.now(), id_, kTaskDone, cookie(job_id, task)); break;
    }
}

void Executor::pump(Stream &s) {
    if (s.busy || s.queue.empty()) return;
    const std::uint64_t c = s.queue.front();
    const std::uint64_t job_id = c >> 32;
    const auto task = static_cast<std::uint32_t>(c & 0xffffffffu);
    const Job &job = jobs_.at(job_id);
    if (job.waiting[task] != 0) return;
    const Task &t = job.graph.tasks[task];
    s.busy = true;
    auto &ctr = engine_.metrics().core(t.core);
    if (t.kind == TaskKind::kMatrix)
        ctr.matrix_busy += t.cycles;
    else
        ctr.vector_busy += t.cycles;
    ctr.sram_bytes += t.sram_bytes;
    engine_.schedule(engine_.now() + t.cycles, id_, kTaskDone, c);
}

void Executor::handle(const SimEvent &ev) {
    if (ev.kind != kTaskDone) throw std::logic_error("executor: unknown event");
    const std::uint64_t job_id = ev.payload >> 32;
    if (job_id == 0) {
        auto [id, listener] = empty_done_.front();
        empty_done_.pop_front();
        if (listener) listener->on_job_done(id, engine_.now());
        return;
    }
    const auto task = static_cast<std::uint32_t>(ev.payload & 0xffffffffu);
    const Task &t = jobs_.at(job_id).graph.tasks[task];
    if (t.kind == TaskKind::kMatrix || t.kind == TaskKind::kVector) {
        Stream &s = stream_of(t);
        s.busy = false;
        s.queue.pop_front();
        complete(job_id, task);
        pump(s);
        return;
    }
    complete(job_id, task);
}

void Executor::on_memory_done(std::uint64_t c, Cycle) { complete(c >> 32, static_cast<std::uint32_t>(c & 0xffffffffu)); }

void Executor::on_message_delivered(std::uint64_t c, Cycle) {
    complete(c >> 32, static_cast<std::uint32_t>(c & 0xffffffffu));
}

void Executor::complete(std::uint64_t job_id, std::uint32_t task) {
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw std::logic_error(fmt::format("completion for unknown job {}", job_id));
    Job &job = it->second;
    --job.remaining;
    for (auto d : job.dependents[task]) {
        if (--job.waiting[d] == 0) ready(job_id, d);
    }
    if (job.remaining == 0) {
        JobListener *l = job.listener;
        jobs_.erase(job_id);
        if (l) l->on_job_done(job_id, engine_.now());
    }
}

}  // namespace npusim
