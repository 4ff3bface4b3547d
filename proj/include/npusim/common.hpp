// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace npusim {

using Cycle = std::uint64_t;
using Bytes = std::uint64_t;
using CoreId = int;
using RequestId = std::uint32_t;

inline constexpr Cycle kNever = ~Cycle{0};

constexpr std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

/// Base class for every error surfaced by the simulator.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad JSON, unknown suffix, wrong type. Carries the
/// offending field path and, for parse errors, the 1-based line.
class ConfigError : public Error {
   public:
    ConfigError(std::string field, const std::string &what, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + field + ": " + what
                         : field + ": " + what),
          field_(std::move(field)),
          line_(line) {}

    const std::string &field() const { return field_; }
    int line() const { return line_; }

   private:
    std::string field_;
    int line_;
};

/// Well-formed input that violates an invariant (empty mesh, bandwidth 0, ...).
class ValidationError : public ConfigError {
   public:
    using ConfigError::ConfigError;
};

/// A requested plan cannot be realized on the given hardware.
class InfeasibleError : public Error {
   public:
    using Error::Error;
};

/// KV admission failed because both SRAM and the HBM ring are full.
class AdmissionError : public Error {
   public:
    using Error::Error;
};

/// The clock passed the configured horizon with unfinished requests.
class LivelockError : public Error {
   public:
    using Error::Error;
};

}  // namespace npusim
