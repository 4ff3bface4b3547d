// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "npusim/common.hpp"
#include "npusim/config.hpp"
#include "npusim/engine.hpp"
#include "npusim/memory.hpp"
#include "npusim/noc.hpp"

namespace npusim {

enum class TaskKind { kMatrix, kVector, kDma, kSend, kBarrier };

struct Task {
    TaskKind kind = TaskKind::kBarrier;
    CoreId core = 0;
    Cycle cycles = 0;  // matrix / vector
    Bytes sram_bytes = 0;
    MemKind dma = MemKind::kRead;
    Bytes bytes = 0;  // dma / send
    CoreId dst = 0;   // send
    NocTag tag = NocTag::kCollectiveStep;
    std::vector<std::uint32_t> deps;
};

struct TaskGraph {
    std::vector<Task> tasks;

    std::uint32_t add(Task t);
    std::uint32_t matrix(CoreId core, Cycle cycles, std::vector<std::uint32_t> deps, Bytes sram = 0);
    std::uint32_t vector(CoreId core, Cycle cycles, std::vector<std::uint32_t> deps, Bytes sram = 0);
    std::uint32_t dma(CoreId core, MemKind kind, Bytes bytes, std::vector<std::uint32_t> deps);
    std::uint32_t send(CoreId src, CoreId dst, Bytes bytes, NocTag tag, std::vector<std::uint32_t> deps);
    std::uint32_t barrier(std::vector<std::uint32_t> deps, CoreId core = 0);
    std::size_t size() const { return tasks.size(); }
};

class JobListener {
   public:
    virtual ~JobListener() = default;
    virtual void on_job_done(std::uint64_t job, Cycle t) = 0;
};

/// Runs task graphs on the chip. Matrix and vector tasks use per-core
/// in-order streams shared by every job; DMA tasks go to the core's HBM
/// channel, sends to the NoC, as soon as their dependencies finish.
class Executor : public Component, public MemoryListener, public NocListener {
   public:
    Executor(Engine &engine, const ChipConfig &chip, MemoryMode mode, bool record_transactions = false);

    std::uint64_t submit(TaskGraph graph, JobListener *listener);

    void handle(const SimEvent &ev) override;
    std::string name() const override { return "executor"; }
    std::string event_name(int kind) const override;
    void on_memory_done(std::uint64_t cookie, Cycle t) override;
    void on_message_delivered(std::uint64_t cookie, Cycle t) override;

    Noc &noc() { return *noc_; }
    const Noc &noc() const { return *noc_; }
    MemChannel &channel(CoreId c) { return *channels_.at(c); }
    const MemChannel &channel(CoreId c) const { return *channels_.at(c); }
    std::size_t jobs_in_flight() const { return jobs_.size(); }
    Engine &engine() { return engine_; }

   private:
    enum Kind { kTaskDone };

    struct Job {
        TaskGraph graph;
        std::vector<std::uint32_t> waiting;  // unfinished deps per task
        std::vector<std::vector<std::uint32_t>> dependents;
        std::size_t remaining = 0;
        JobListener *listener = nullptr;
    };

    struct Stream {
        std::deque<std::uint64_t> queue;  // task cookies in submission order
        bool busy = false;
    };

    static std::uint64_t cookie(std::uint64_t job, std::uint32_t task) { return (job << 32) | task; }
    void ready(std::uint64_t job, std::uint32_t task);
    void complete(std::uint64_t job, std::uint32_t task);
    void pump(Stream &s);
    Stream &stream_of(const Task &t);

    Engine &engine_;
    ChipConfig chip_;
    int id_;
    std::unique_ptr<Noc> noc_;
    std::vector<std::unique_ptr<MemChannel>> channels_;
    std::vector<Stream> matrix_;
    std::vector<Stream> vector_;
    std::map<std::uint64_t, Job> jobs_;
    std::uint64_t next_job_ = 1;
    std::deque<std::pair<std::uint64_t, JobListener *>> empty_done_;
};

}  // namespace npusim
