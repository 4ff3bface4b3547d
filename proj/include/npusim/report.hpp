// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npusim/config.hpp"
#include "npusim/engine.hpp"
#include "npusim/noc.hpp"
#include "npusim/serving.hpp"

namespace npusim {

struct RunReport {
    std::string fingerprint;
    Config config;
    ServingMetrics metrics;
    std::vector<RequestRecord> requests;
    std::vector<CoreCounters> cores;
    std::vector<LinkStat> links;
    std::vector<FusedIterationLog> fused_log;
    std::vector<InstanceInfo> instances;
    std::uint64_t events = 0;
    Cycle end_cycle = 0;
    Bytes kv_transfer_bytes = 0;
    double wall_seconds = 0;  // excluded from summary.json
};

/// Simulates a validated config to completion.
RunReport run_simulation(const Config &config, std::ostream *event_dump = nullptr);

/// Deterministic summary: depends only on the config.
nlohmann::json summary_json(const RunReport &report);

/// Per-request row as written to requests.jsonl (times in seconds).
struct RequestResult {
    RequestId id = 0;
    double arrival = 0;
    std::optional<double> ttft;
    std::optional<double> tbt_mean;
    std::optional<double> e2e;
    std::uint32_t prompt = 0;
    std::uint32_t output = 0;

    bool operator==(const RequestResult &) const = default;
};

std::vector<RequestResult> request_results(const RunReport &report);

/// summary.json, requests.jsonl, counters.csv, links.csv, timing.json.
void write_report(const RunReport &report, const std::filesystem::path &dir);

void write_requests_jsonl(const std::vector<RequestResult> &rows, std::ostream &out);
std::vector<RequestResult> read_requests_jsonl(std::istream &in);
void write_counters_csv(const std::vector<CoreCounters> &cores, std::ostream &out);
std::vector<CoreCounters> read_counters_csv(std::istream &in);
void write_links_csv(const std::vector<LinkStat> &links, std::ostream &out);
std::vector<LinkStat> read_links_csv(std::istream &in);
nlohmann::json read_json_file(const std::filesystem::path &path);

/// Minimal CSV with double-quote escaping.
std::string csv_escape(const std::string &field);
std::vector<std::string> csv_split(const std::string &line);

/// Dotted-path assignment into a JSON document, creating objects on the way.
void set_json_path(nlohmann::json &doc, const std::string &path, const nlohmann::json &value);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepAxis {
    std::string key;  // dotted config path, e.g. chip.core.systolic_dim
    std::vector<nlohmann::json> values;
};

struct SweepSpec {
    nlohmann::json base;
    std::filesystem::path base_dir;
    std::vector<SweepAxis> axes;
    int parallel_runs = 1;

    std::size_t points() const;
};

/// {"base": path-or-object, "axes": [{"key", "values"}], "parallel_runs"}.
SweepSpec load_sweep(const std::filesystem::path &path);
SweepSpec sweep_from_json(const nlohmann::json &doc, const std::filesystem::path &base_dir = {});

struct SweepRow {
    std::size_t index = 0;
    std::vector<std::string> values;  // one per axis, JSON text
    std::string fingerprint;
    bool ok = false;
    std::string error;
    nlohmann::json summary;
};

struct SweepResult {
    std::vector<std::string> keys;
    std::vector<SweepRow> rows;  // cartesian order, last axis fastest
};

/// Config of one cartesian point; throws ConfigError for unknown keys.
Config sweep_point_config(const SweepSpec &spec, std::size_t index);

/// Runs every point on `jobs` worker threads (0 = spec.parallel_runs).
/// Failed points are recorded and the sweep continues. When `out_dir` is
/// set each point's report goes to out_dir/<index>-<fingerprint>.
SweepResult run_sweep(const SweepSpec &spec, int jobs = 0,
                      const std::optional<std::filesystem::path> &out_dir = std::nullopt);

void write_sweep_csv(const SweepResult &result, std::ostream &out);
SweepResult read_sweep_csv(std::istream &in);

}  // namespace npusim
