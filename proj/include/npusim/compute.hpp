// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>

#include "npusim/common.hpp"
#include "npusim/config.hpp"

namespace npusim {

struct GemmShape {
    std::uint64_t M = 1;
    std::uint64_t K = 1;
    std::uint64_t N = 1;
    int dtype_bytes = 2;

    std::uint64_t flops() const { return 2 * M * K * N; }
    Bytes input_bytes() const { return M * K * dtype_bytes; }
    Bytes weight_bytes() const { return K * N * dtype_bytes; }
    Bytes output_bytes() const { return M * N * dtype_bytes; }

    bool operator==(const GemmShape &) const = default;
};

struct ComputeEstimate {
    Cycle cycles = 0;
    Bytes sram_bytes_read = 0;
    Bytes sram_bytes_written = 0;

    ComputeEstimate &operator+=(const ComputeEstimate &o) {
        cycles += o.cycles;
        sram_bytes_read += o.sram_bytes_read;
        sram_bytes_written += o.sram_bytes_written;
        return *this;
    }
};

enum class Phase { kPrefill, kDecode };

/// Weight-stationary systolic array: each of the ceil(K/d)*ceil(N/d) tiles
/// streams M rows and drains d-1, plus one d-cycle weight fill per GEMM (per
/// tile when core.inject_per_tile). Inflated when the SRAM port cannot feed
/// the array.
ComputeEstimate matmul_cycles(const GemmShape &shape, const CoreConfig &core);

Cycle vector_cycles(std::uint64_t elements, const CoreConfig &core);

/// Heads run back to back. Per head: QK^T (M=seq, K=head_dim, N=kv_len),
/// softmax over seq*kv_len scores, PV (M=seq, K=kv_len, N=head_dim).
ComputeEstimate attention_cycles(Phase phase, std::uint64_t seq_len, std::uint64_t kv_len, int heads, int head_dim,
                                 const CoreConfig &core, int dtype_bytes = 2);

}  // namespace npusim
