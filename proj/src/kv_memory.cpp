// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/kv_memory.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "npusim/partition.hpp"

namespace npusim {

// ---------------------------------------------------------------------------
// HbmRing
// ---------------------------------------------------------------------------

std::optional<Bytes> HbmRing::place(Bytes bytes) const {
    if (bytes > capacity_) return std::nullopt;
    if (entries_.empty()) return Bytes{0};
    const Bytes tail = entries_.front().offset;
    const Bytes head = head_;
    const bool wrapped = entries_.back().offset < tail;
    if (!wrapped) {
        if (head + bytes <= capacity_) return head;
        if (bytes <= tail) return Bytes{0};
        return std::nullopt;
    }
    if (head + bytes <= tail) return head;
    return std::nullopt;
}

bool HbmRing::can_reserve(Bytes bytes) const { return place(bytes).has_value(); }

std::optional<Bytes> HbmRing::reserve(RequestId request, Bytes bytes) {
    if (has(request)) throw std::logic_error(fmt::format("request {} already holds an HBM reservation", request));
    auto off = place(bytes);
    if (!off) return std::nullopt;
    entries_.push_back(Entry{request, *off, bytes, false});
    head_ = *off + bytes;
    high_water_ = std::max(high_water_, occupied_bytes());
    return off;
}

bool HbmRing::has(RequestId request) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry &e) { return e.request == request && !e.retired; });
}

void HbmRing::retire(RequestId request) {
    for (auto &e : entries_) {
        if (e.request == request && !e.retired) {
            e.retired = true;
            reclaim();
            return;
        }
    }
    throw std::logic_error(fmt::format("request {} has no live HBM reservation", request));
}

void HbmRing::reclaim() {
    while (!entries_.empty() && entries_.front().retired) entries_.pop_front();
    if (entries_.empty()) head_ = 0;
}

Bytes HbmRing::reserved_bytes() const {
    Bytes t = 0;
    for (const auto &e : entries_)
        if (!e.retired) t += e.reserved;
    return t;
}

Bytes HbmRing::occupied_bytes() const {
    Bytes t = 0;
    for (const auto &e : entries_) t += e.reserved;
    return t;
}

void HbmRing::check_invariants() const {
    std::vector<std::pair<Bytes, Bytes>> iv;
    Bytes total = 0;
    for (const auto &e : entries_) {
        iv.emplace_back(e.offset, e.offset + e.reserved);
        total += e.reserved;
        if (e.offset + e.reserved > capacity_)
            throw std::logic_error(fmt::format("HBM entry of request {} runs past capacity", e.request));
    }
    if (total > capacity_) throw std::logic_error("HBM reservations exceed capacity");
    std::sort(iv.begin(), iv.end());
    for (std::size_t i = 1; i < iv.size(); ++i)
        if (iv[i].first < iv[i - 1].second) throw std::logic_error("HBM ring entries overlap");
}

// ---------------------------------------------------------------------------
// KvBlockTable
// ---------------------------------------------------------------------------

KvBlockTable::KvBlockTable(std::uint32_t total_blocks, std::uint32_t block_tokens, Bytes bytes_per_token,
                           Bytes hbm_capacity)
    : total_blocks_(total_blocks),
      block_tokens_(std::max<std::uint32_t>(block_tokens, 1)),
      bytes_per_token_(bytes_per_token),
      next_free_(total_blocks, -1),
      owner_(total_blocks, -1),
      ring_(hbm_capacity) {
    for (std::int64_t b = static_cast<std::int64_t>(total_blocks) - 1; b >= 0; --b) push_free(static_cast<std::uint32_t>(b));
}

std::optional<std::uint32_t> KvBlockTable::pop_free() {
    if (free_head_ < 0) return std::nullopt;
    const auto b = static_cast<std::uint32_t>(free_head_);
    free_head_ = next_free_[b];
    next_free_[b] = -1;
    --free_count_;
    return b;
}

void KvBlockTable::push_free(std::uint32_t b) {
    next_free_[b] = free_head_;
    free_head_ = b;
    owner_[b] = -1;
    ++free_count_;
}

bool KvBlockTable::can_admit(std::uint64_t max_tokens) const {
    return ring_.can_reserve(max_tokens * bytes_per_token_);
}

void KvBlockTable::admit(RequestId request, std::uint64_t max_tokens) {
    if (chains_.count(request) || released_.count(request))
        throw std::logic_error(fmt::format("request {} admitted twice", request));
    if (!ring_.reserve(request, max_tokens * bytes_per_token_))
        throw AdmissionError(fmt::format("HBM ring full: cannot reserve {} bytes for request {}",
                                         max_tokens * bytes_per_token_, request));
    chains_[request] = Chain{};
}

Bytes KvBlockTable::hbm_bytes(RequestId request) const { return chains_.at(request).hbm_tokens * bytes_per_token_; }

std::vector<KvBlockTable::SpillRecord> KvBlockTable::spill_to_hbm(std::uint32_t blocks) {
    std::vector<SpillRecord> out;
    for (std::uint32_t done = 0; done < blocks; ++done) {
        RequestId victim = 0;
        std::size_t most = 0;
        for (const auto &[id, c] : chains_) {
            if (c.sram_blocks.size() > most) {
                most = c.sram_blocks.size();
                victim = id;
            }
        }
        if (most == 0) break;
        Chain &c = chains_.at(victim);
        const std::uint32_t b = c.sram_blocks.front();
        c.sram_blocks.pop_front();
        const std::uint64_t moved = std::min<std::uint64_t>(block_tokens_, c.tokens - c.hbm_tokens);
        c.hbm_tokens += moved;
        push_free(b);
        const Bytes bytes = moved * bytes_per_token_;
        spilled_bytes_ += bytes;
        if (!out.empty() && out.back().request == victim) {
            ++out.back().blocks;
            out.back().bytes += bytes;
        } else {
            out.push_back(SpillRecord{victim, 1, bytes});
        }
    }
    return out;
}

KvBlockTable::AppendResult KvBlockTable::kv_append(RequestId request, std::uint64_t tokens) {
    if (released_.count(request)) throw std::logic_error(fmt::format("append to finished request {}", request));
    auto it = chains_.find(request);
    if (it == chains_.end()) throw std::logic_error(fmt::format("append to unknown request {}", request));
    AppendResult res;
    std::uint64_t left = tokens;
    while (left > 0) {
        Chain &c = chains_.at(request);
        const std::uint64_t resident = c.tokens - c.hbm_tokens;
        const std::uint64_t spare = c.sram_blocks.size() * block_tokens_ - resident;
        if (spare > 0) {
            const std::uint64_t take = std::min(spare, left);
            c.tokens += take;
            left -= take;
            continue;
        }
        if (total_blocks_ == 0) {
            // No SRAM KV region: tokens go straight to the HBM reservation.
            c.tokens += left;
            c.hbm_tokens += left;
            res.hbm_write_bytes += left * bytes_per_token_;
            left = 0;
            break;
        }
        auto b = pop_free();
        if (!b) {
            auto sp = spill_to_hbm(1);
            res.spills.insert(res.spills.end(), sp.begin(), sp.end());
            b = pop_free();
            if (!b) throw std::logic_error("KV spill freed no block");
        }
        Chain &c2 = chains_.at(request);
        owner_[*b] = request;
        c2.sram_blocks.push_back(*b);
        res.blocks.push_back(*b);
    }
    high_water_ = std::max(high_water_, total_blocks_ - free_count_);
    return res;
}

void KvBlockTable::kv_release(RequestId request) {
    if (released_.count(request)) throw std::logic_error(fmt::format("request {} released twice", request));
    auto it = chains_.find(request);
    if (it == chains_.end()) throw std::logic_error(fmt::format("release of unknown request {}", request));
    for (auto b : it->second.sram_blocks) push_free(b);
    chains_.erase(it);
    released_.insert(request);
    ring_.retire(request);
}

void KvBlockTable::check_invariants() const {
    std::size_t allocated = 0;
    std::vector<char> seen(total_blocks_, 0);
    for (const auto &[id, c] : chains_) {
        for (auto b : c.sram_blocks) {
            if (b >= total_blocks_ || seen[b]) throw std::logic_error(fmt::format("block {} aliased", b));
            if (owner_[b] != static_cast<std::int64_t>(id)) throw std::logic_error("block owner mismatch");
            seen[b] = 1;
            ++allocated;
        }
        const std::uint64_t resident = c.tokens - c.hbm_tokens;
        if (resident > c.sram_blocks.size() * block_tokens_ ||
            (c.sram_blocks.size() > 0 && resident <= (c.sram_blocks.size() - 1) * block_tokens_))
            throw std::logic_error(fmt::format("request {}: {} resident tokens in {} blocks", id, resident,
                                               c.sram_blocks.size()));
    }
    std::size_t free = 0;
    for (std::int64_t b = free_head_; b >= 0; b = next_free_[b]) {
        if (seen[b]) throw std::logic_error(fmt::format("block {} both free and allocated", b));
        seen[b] = 1;
        if (++free > total_blocks_) throw std::logic_error("free list cycle");
    }
    if (free != free_count_ || free + allocated != total_blocks_)
        throw std::logic_error(fmt::format("block conservation broken: {} free + {} allocated != {}", free, allocated,
                                           total_blocks_));
    ring_.check_invariants();
}

// ---------------------------------------------------------------------------
// SRAM layout
// ---------------------------------------------------------------------------

Bytes stage_weight_bytes(const ModelConfig &m, const StageShape &st) {
    std::uint64_t params = std::uint64_t(st.layers) * layer_parameter_count(m);
    if (st.lm_head) params += std::uint64_t(m.vocab_size) * m.hidden_size;
    return ceil_div(params, st.tp) * m.dtype_bytes;
}

Bytes stage_kv_bytes_per_token(const ModelConfig &m, const StageShape &st) {
    return 2ULL * st.layers * ceil_div(m.num_kv_heads, st.tp) * m.head_dim * m.dtype_bytes;
}

SramLayout plan_sram_layout(const ModelConfig &m, const CoreConfig &core, const StageShape &st) {
    const int dt = m.dtype_bytes;
    const std::uint64_t widths[] = {std::uint64_t(m.hidden_size), std::uint64_t(m.q_width()) + 2ULL * m.kv_width(),
                                    2ULL * m.ffn_active_width()};
    const std::uint64_t width = *std::max_element(std::begin(widths), std::end(widths));
    SramLayout L;
    L.activation_bytes = std::uint64_t(st.rows ? st.rows : st.micro_batch) * ceil_div(width, st.tp) * dt * 2;

    const std::uint64_t d = core.systolic_dim;
    const Bytes tile = 3 * d * d * dt;
    const std::uint64_t h = m.hidden_size;
    const std::pair<std::uint64_t, std::uint64_t> gemms[] = {
        {h, std::uint64_t(m.q_width()) + 2ULL * m.kv_width()},
        {std::uint64_t(m.q_width()), h},
        {h, 2ULL * m.ffn_active_width()},
        {std::uint64_t(m.ffn_active_width()), h}};
    Bytes shard = 0;
    for (auto [K, N] : gemms) {
        const GemmShape g{std::max<std::uint64_t>(st.rows ? st.rows : st.micro_batch, 1), K, N, dt};
        const auto plan = choose_strategy(g, st.tp, m.hidden_size);
        std::uint64_t elems = 0;
        switch (plan.strategy) {
            case PartitionStrategy::kInputOnly: break;
            case PartitionStrategy::kMn1d: elems = K * N / plan.num; break;
            case PartitionStrategy::kK1d: elems = g.M * N / plan.num; break;
            case PartitionStrategy::kMnk2d:
                elems = std::max<std::uint64_t>(K * N / plan.num, ceil_div(g.M * N, std::uint64_t(plan.c_num) * plan.c_num * plan.c_num));
                break;
        }
        shard = std::max<Bytes>(shard, elems * dt);
    }
    L.temp_buffer_bytes = 2 * tile + shard;

    const Bytes minimum = L.activation_bytes + L.temp_buffer_bytes;
    if (minimum > core.sram_bytes)
        throw ConfigError("chip.core.sram", fmt::format("activation and temporary buffers need {} bytes but SRAM has {} "
                                                       "(short by {})",
                                                       minimum, core.sram_bytes, minimum - core.sram_bytes));
    Bytes rest = core.sram_bytes - minimum;
    const Bytes kv_target = std::uint64_t(st.max_seq) * st.micro_batch * stage_kv_bytes_per_token(m, st);
    const Bytes kv_cap = st.kv_fraction ? Bytes(double(rest) * *st.kv_fraction) : rest;
    L.kv_bytes = std::min(kv_cap, kv_target);
    rest -= L.kv_bytes;
    L.weight_resident_bytes = std::min(rest, stage_weight_bytes(m, st));
    rest -= L.weight_resident_bytes;
    // Whatever the weights leave over goes back to KV.
    L.kv_bytes += std::min(rest, kv_target - L.kv_bytes);
    return L;
}

}  // namespace npusim
