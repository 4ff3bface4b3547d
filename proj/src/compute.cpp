// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/compute.hpp"

#include <cmath>

namespace npusim {

ComputeEstimate matmul_cycles(const GemmShape &s, const CoreConfig &core) {
    ComputeEstimate est;
    if (s.M == 0 || s.K == 0 || s.N == 0) return est;
    const std::uint64_t d = core.systolic_dim;
    const std::uint64_t tiles = ceil_div(s.K, d) * ceil_div(s.N, d);
    const std::uint64_t t_cycles = s.M + d - 1;
    const std::uint64_t t_inject = core.inject_per_tile ? tiles * d : d;
    Cycle cycles = tiles * t_cycles + t_inject;

    // Each streaming cycle reads one d-wide activation row and writes one
    // d-wide output row.
    const double needed = 2.0 * static_cast<double>(d) * s.dtype_bytes;
    const double have = core.effective_sram_bandwidth();
    if (have < needed) cycles = static_cast<Cycle>(std::ceil(static_cast<double>(cycles) * needed / have));

    est.cycles = cycles;
    est.sram_bytes_read = (s.M * s.K * ceil_div(s.N, d) + s.K * s.N) * s.dtype_bytes;
    est.sram_bytes_written = s.M * s.N * ceil_div(s.K, d) * s.dtype_bytes;
    return est;
}

Cycle vector_cycles(std::uint64_t elements, const CoreConfig &core) {
    if (elements == 0) return 0;
    return ceil_div(elements, core.vector_alus());
}

ComputeEstimate attention_cycles(Phase phase, std::uint64_t seq_len, std::uint64_t kv_len, int heads, int head_dim,
                                 const CoreConfig &core, int dtype_bytes) {
    if (phase == Phase::kDecode) seq_len = 1;
    ComputeEstimate total;
    if (heads <= 0 || seq_len == 0 || kv_len == 0) return total;
    const GemmShape qk{seq_len, static_cast<std::uint64_t>(head_dim), kv_len, dtype_bytes};
    const GemmShape pv{seq_len, kv_len, static_cast<std::uint64_t>(head_dim), dtype_bytes};
    ComputeEstimate head = matmul_cycles(qk, core);
    ComputeEstimate softmax;
    softmax.cycles = static_cast<Cycle>(core.softmax_passes) * vector_cycles(seq_len * kv_len, core);
    softmax.sram_bytes_read = seq_len * kv_len * dtype_bytes;
    softmax.sram_bytes_written = seq_len * kv_len * dtype_bytes;
    head += softmax;
    head += matmul_cycles(pv, core);
    total.cycles = head.cycles * heads;
    total.sram_bytes_read = head.sram_bytes_read * heads;
    total.sram_bytes_written = head.sram_bytes_written * heads;
    return total;
}

}  // namespace npusim
