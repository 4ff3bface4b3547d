// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "npusim/common.hpp"
#include "npusim/config.hpp"

namespace npusim {

inline constexpr std::uint32_t kDefaultBlockTokens = 16;

/// Coarse-grained per-request KV reservations on HBM laid out as a ring.
/// New entries go at the head (wrapping to offset 0 when the end does not
/// fit); the tail only advances over retired entries, so a released entry
/// in the middle is reclaimed once everything older is gone.
class HbmRing {
   public:
    struct Entry {
        RequestId request = 0;
        Bytes offset = 0;
        Bytes reserved = 0;
        bool retired = false;
    };

    explicit HbmRing(Bytes capacity = 0) : capacity_(capacity) {}

    /// Reserves `bytes` for `request`; nullopt when it does not fit.
    std::optional<Bytes> reserve(RequestId request, Bytes bytes);
    bool can_reserve(Bytes bytes) const;
    void retire(RequestId request);
    bool has(RequestId request) const;

    Bytes capacity() const { return capacity_; }
    Bytes reserved_bytes() const;  // live (non-retired) reservations
    Bytes occupied_bytes() const;  // including retired entries not yet reclaimed
    const std::deque<Entry> &entries() const { return entries_; }
    Bytes high_water_bytes() const { return high_water_; }
    /// Throws std::logic_error when entries overlap or exceed capacity.
    void check_invariants() const;

   private:
    std::optional<Bytes> place(Bytes bytes) const;
    void reclaim();

    Bytes capacity_;
    std::deque<Entry> entries_;  // oldest first
    Bytes head_ = 0;             // next free offset
    Bytes high_water_ = 0;
};

/// Block-granularity KV cache in SRAM with an intrusive free list and one
/// ordered block chain per request. Blocks that do not fit are spilled to
/// the request's HBM reservation.
class KvBlockTable {
   public:
    struct Chain {
        std::list<std::uint32_t> sram_blocks;  // token order, oldest first
        std::uint64_t tokens = 0;              // all tokens, SRAM + HBM
        std::uint64_t hbm_tokens = 0;          // oldest tokens, spilled
        bool finished = false;
    };

    struct SpillRecord {
        RequestId request = 0;
        std::uint32_t blocks = 0;
        Bytes bytes = 0;
    };

    struct AppendResult {
        std::vector<std::uint32_t> blocks;  // newly allocated SRAM blocks
        std::vector<SpillRecord> spills;    // write-backs triggered
        Bytes hbm_write_bytes = 0;          // new tokens written straight to HBM
    };

    KvBlockTable(std::uint32_t total_blocks, std::uint32_t block_tokens, Bytes bytes_per_token, Bytes hbm_capacity);

    /// Registers a request and reserves (prompt + output) tokens on HBM.
    /// Throws AdmissionError when the ring has no room.
    void admit(RequestId request, std::uint64_t max_tokens);
    bool can_admit(std::uint64_t max_tokens) const;
    bool has(RequestId request) const { return chains_.count(request) != 0; }

    /// Appends tokens, spilling other blocks first when the free list is
    /// short. Throws std::logic_error for unknown or finished requests.
    AppendResult kv_append(RequestId request, std::uint64_t tokens);

    /// Returns every SRAM block and retires the HBM entry.
    void kv_release(RequestId request);

    /// Frees up to `blocks` SRAM blocks: oldest blocks of the request with
    /// the most resident blocks (lowest id on ties), repeatedly.
    std::vector<SpillRecord> spill_to_hbm(std::uint32_t blocks);

    std::uint32_t total_blocks() const { return total_blocks_; }
    std::uint32_t free_blocks() const { return free_count_; }
    std::uint32_t block_tokens() const { return block_tokens_; }
    Bytes block_bytes() const { return block_tokens_ * bytes_per_token_; }
    Bytes bytes_per_token() const { return bytes_per_token_; }
    const Chain &chain(RequestId request) const { return chains_.at(request); }
    const std::map<RequestId, Chain> &chains() const { return chains_; }
    const HbmRing &ring() const { return ring_; }
    Bytes hbm_bytes(RequestId request) const;  // spilled KV of a request
    std::uint32_t high_water_blocks() const { return high_water_; }
    Bytes spilled_bytes() const { return spilled_bytes_; }

    /// Block conservation and no-aliasing check; throws std::logic_error.
    void check_invariants() const;

   private:
    std::optional<std::uint32_t> pop_free();
    void push_free(std::uint32_t block);

    std::uint32_t total_blocks_;
    std::uint32_t block_tokens_;
    Bytes bytes_per_token_;
    // Intrusive free list: next_free_[b] links free blocks.
    std::vector<std::int64_t> next_free_;
    std::int64_t free_head_ = -1;
    std::uint32_t free_count_ = 0;
    std::vector<std::int64_t> owner_;  // -1 when free
    std::map<RequestId, Chain> chains_;
    std::set<RequestId> released_;  // for double-release detection
    HbmRing ring_;
    std::uint32_t high_water_ = 0;
    Bytes spilled_bytes_ = 0;
};

struct SramLayout {
    Bytes activation_bytes = 0;
    Bytes temp_buffer_bytes = 0;
    Bytes kv_bytes = 0;
    Bytes weight_resident_bytes = 0;

    Bytes total() const { return activation_bytes + temp_buffer_bytes + kv_bytes + weight_resident_bytes; }
};

/// What one core of a pipeline stage has to hold.
struct StageShape {
    int tp = 1;
    int layers = 1;          // layers in this stage
    bool lm_head = false;    // stage holds the output projection
    std::uint32_t micro_batch = 1;  // sequences in flight
    std::uint32_t max_seq = 1;      // tokens per sequence
    std::uint32_t rows = 0;         // activation rows in flight, 0 = micro_batch
    std::optional<double> kv_fraction;  // cap on KV's share of the remainder
};

/// Bytes of weights one core of the stage holds (its TP shard).
Bytes stage_weight_bytes(const ModelConfig &model, const StageShape &stage);
/// KV bytes per token on one core of the stage.
Bytes stage_kv_bytes_per_token(const ModelConfig &model, const StageShape &stage);

/// Activation and temporaries first, then KV up to its working set, then
/// resident weights up to the full shard. Throws ConfigError (with the
/// shortfall) when activation and temporaries alone do not fit.
SramLayout plan_sram_layout(const ModelConfig &model, const CoreConfig &core, const StageShape &stage);

}  // namespace npusim
