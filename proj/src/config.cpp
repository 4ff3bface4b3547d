// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "npusim/placement.hpp"
#include "npusim/serving.hpp"

namespace npusim {

using json = nlohmann::json;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

// Splits "32MB" into (32, "mb"). Whitespace between number and unit is allowed.
std::pair<double, std::string> split_quantity(const std::string &text, const std::string &field) {
    std::size_t pos = 0;
    double value = 0;
    try {
        value = std::stod(text, &pos);
    } catch (const std::exception &) {
        throw ConfigError(field, "expected a number with optional unit, got \"" + text + "\"");
    }
    std::string unit = text.substr(pos);
    unit.erase(std::remove_if(unit.begin(), unit.end(), [](unsigned char c) { return std::isspace(c); }),
               unit.end());
    return {value, lower(unit)};
}

void reject_unknown(const json &obj, const std::string &section, std::initializer_list<std::string_view> keys) {
    if (!obj.is_object()) throw ConfigError(section, "expected an object");
    for (const auto &[k, _] : obj.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw ConfigError(section.empty() ? k : section + "." + k, "unknown key");
    }
}

template <typename T>
T get_or(const json &obj, const char *key, T fallback, const std::string &section) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    try {
        return it->template get<T>();
    } catch (const json::exception &e) {
        throw ConfigError(section + "." + key, e.what());
    }
}

int get_int(const json &obj, const char *key, int fallback, const std::string &section) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    if (!it->is_number_integer() && !(it->is_number_float() && std::floor(it->get<double>()) == it->get<double>()))
        throw ConfigError(section + "." + key, "expected an integer");
    return static_cast<int>(it->get<double>());
}

std::uint64_t mix_seed(std::uint64_t seed) {
    // splitmix64 so small seeds still give well-spread engine states
    seed += 0x9E3779B97F4A7C15ULL;
    seed = (seed ^ (seed >> 30)) * 0xBF58476D1CE4E5B9ULL;
    seed = (seed ^ (seed >> 27)) * 0x94D049BB133111EBULL;
    return seed ^ (seed >> 31);
}

// Portable draws from the raw engine output.
double uniform01(std::mt19937_64 &rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

double standard_normal(std::mt19937_64 &rng) {
    const double u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t draw_length(std::mt19937_64 &rng, const LengthDist &d, std::uint32_t max_len) {
    double v = d.mean;
    if (d.sigma > 0) {
        // lognormal with the requested arithmetic mean
        const double mu = std::log(d.mean) - 0.5 * d.sigma * d.sigma;
        v = std::exp(mu + d.sigma * standard_normal(rng));
    }
    const double clamped = std::clamp(std::round(v), 1.0, static_cast<double>(max_len));
    return static_cast<std::uint32_t>(clamped);
}

std::vector<double> poisson_arrivals(std::mt19937_64 &rng, std::uint32_t count, double rate) {
    std::vector<double> out(count, 0.0);
    if (rate <= 0) return out;
    double t = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        out[i] = t;
        t += -std::log(1.0 - uniform01(rng)) / rate;
    }
    return out;
}

void rescale_prompts(WorkloadSpec &wl, double ratio, std::uint32_t max_len) {
    double sum_p = 0, sum_o = 0;
    for (const auto &r : wl.requests) {
        sum_p += r.prompt;
        sum_o += r.output;
    }
    if (sum_p == 0 || sum_o == 0) return;
    const double scale = ratio * sum_o / sum_p;
    for (auto &r : wl.requests) {
        r.prompt = static_cast<std::uint32_t>(
            std::clamp(std::round(r.prompt * scale), 1.0, static_cast<double>(max_len)));
    }
}

// ---------------------------------------------------------------------------
// Section parsers
// ---------------------------------------------------------------------------

CoreConfig parse_core(const json &obj, CoreConfig core, double freq, const std::string &section) {
    reject_unknown(obj, section,
                   {"systolic_dim", "vector_lanes", "sram", "sram_bandwidth", "sram_bw_per_sa_lane", "hbm_bandwidth",
                    "hbm_latency", "hbm_capacity", "max_outstanding", "dma_txn_bytes", "inject_per_tile",
                    "softmax_passes"});
    core.systolic_dim = get_int(obj, "systolic_dim", core.systolic_dim, section);
    core.vector_lanes = get_int(obj, "vector_lanes", core.vector_lanes, section);
    if (obj.contains("sram")) core.sram_bytes = parse_size(obj["sram"], section + ".sram");
    if (obj.contains("sram_bw_per_sa_lane"))
        core.sram_bw_per_sa_lane = get_or<double>(obj, "sram_bw_per_sa_lane", 0, section);
    if (obj.contains("sram_bandwidth")) {
        const auto &v = obj["sram_bandwidth"];
        if (v.is_string() && lower(v.get<std::string>()) == "scaled") {
            core.sram_bw_scaled = true;
        } else {
            core.sram_bw_scaled = false;
            core.sram_bandwidth = parse_bandwidth(v, freq, section + ".sram_bandwidth");
        }
    }
    if (obj.contains("hbm_bandwidth"))
        core.hbm_bandwidth = parse_bandwidth(obj["hbm_bandwidth"], freq, section + ".hbm_bandwidth");
    core.hbm_latency = get_or<Cycle>(obj, "hbm_latency", core.hbm_latency, section);
    if (obj.contains("hbm_capacity")) core.hbm_capacity = parse_size(obj["hbm_capacity"], section + ".hbm_capacity");
    core.max_outstanding = get_int(obj, "max_outstanding", core.max_outstanding, section);
    if (obj.contains("dma_txn_bytes")) core.dma_txn_bytes = parse_size(obj["dma_txn_bytes"], section + ".dma_txn_bytes");
    core.inject_per_tile = get_or<bool>(obj, "inject_per_tile", core.inject_per_tile, section);
    core.softmax_passes = get_int(obj, "softmax_passes", core.softmax_passes, section);
    return core;
}

json core_to_json(const CoreConfig &c) {
    json j;
    j["systolic_dim"] = c.systolic_dim;
    j["vector_lanes"] = c.vector_lanes;
    j["sram"] = c.sram_bytes;
    j["sram_bw_per_sa_lane"] = c.sram_bw_per_sa_lane;
    if (c.sram_bw_scaled)
        j["sram_bandwidth"] = "scaled";
    else
        j["sram_bandwidth"] = c.sram_bandwidth;
    j["hbm_bandwidth"] = c.hbm_bandwidth;
    j["hbm_latency"] = c.hbm_latency;
    j["hbm_capacity"] = c.hbm_capacity;
    j["max_outstanding"] = c.max_outstanding;
    j["dma_txn_bytes"] = c.dma_txn_bytes;
    j["inject_per_tile"] = c.inject_per_tile;
    j["softmax_passes"] = c.softmax_passes;
    return j;
}

ChipConfig parse_chip(const json &obj, int dtype_bytes) {
    const std::string s = "chip";
    reject_unknown(obj, s,
                   {"mesh_rows", "mesh_cols", "cores", "core_frequency", "core", "core_overrides",
                    "noc_link_bandwidth", "noc_handshake_cycles", "noc_max_packet_bytes", "area"});
    ChipConfig chip;
    chip.mesh_rows = get_int(obj, "mesh_rows", chip.mesh_rows, s);
    chip.mesh_cols = get_int(obj, "mesh_cols", chip.mesh_cols, s);
    if (obj.contains("cores") && !obj.contains("mesh_rows") && !obj.contains("mesh_cols")) {
        // square-ish mesh from a core count: 64 -> 8x8, 256 -> 16x16, 32 -> 4x8
        const int n = get_int(obj, "cores", 0, s);
        if (n < 1) throw ValidationError(s + ".cores", "must be >= 1");
        int rows = static_cast<int>(std::sqrt(static_cast<double>(n)));
        while (rows > 1 && n % rows != 0) --rows;
        chip.mesh_rows = rows;
        chip.mesh_cols = n / rows;
    }
    if (obj.contains("core_frequency")) chip.core_frequency = parse_frequency(obj["core_frequency"], s + ".core_frequency");
    chip.default_core.sram_bw_per_sa_lane = 2.0 * dtype_bytes;
    if (obj.contains("core")) chip.default_core = parse_core(obj["core"], chip.default_core, chip.core_frequency, s + ".core");
    if (obj.contains("noc_link_bandwidth")) {
        const double bw = parse_bandwidth(obj["noc_link_bandwidth"], chip.core_frequency, s + ".noc_link_bandwidth");
        if (bw < 1.0 || std::floor(bw) != bw)
            throw ValidationError(s + ".noc_link_bandwidth", "must be a whole number of bytes/cycle >= 1 (flit size)");
        chip.noc_link_bandwidth = static_cast<Bytes>(bw);
    }
    chip.noc_handshake_cycles = get_or<Cycle>(obj, "noc_handshake_cycles", chip.noc_handshake_cycles, s);
    if (obj.contains("noc_max_packet_bytes"))
        chip.noc_max_packet_bytes = parse_size(obj["noc_max_packet_bytes"], s + ".noc_max_packet_bytes");
    if (obj.contains("core_overrides")) {
        const auto &ov = obj["core_overrides"];
        if (!ov.is_object()) throw ConfigError(s + ".core_overrides", "expected an object keyed by core id");
        for (const auto &[key, patch] : ov.items()) {
            int id = -1;
            try {
                std::size_t pos = 0;
                id = std::stoi(key, &pos);
                if (pos != key.size()) id = -1;
            } catch (const std::exception &) {
            }
            if (id < 0) throw ConfigError(s + ".core_overrides." + key, "key must be a core id");
            chip.core_overrides[id] =
                parse_core(patch, chip.default_core, chip.core_frequency, s + ".core_overrides." + key);
        }
    }
    if (obj.contains("area")) {
        const auto &a = obj["area"];
        reject_unknown(a, s + ".area", {"coeff_sa", "coeff_vec", "coeff_sram", "coeff_hbm_if"});
        chip.area.coeff_sa = get_or<double>(a, "coeff_sa", chip.area.coeff_sa, s + ".area");
        chip.area.coeff_vec = get_or<double>(a, "coeff_vec", chip.area.coeff_vec, s + ".area");
        chip.area.coeff_sram = get_or<double>(a, "coeff_sram", chip.area.coeff_sram, s + ".area");
        chip.area.coeff_hbm_if = get_or<double>(a, "coeff_hbm_if", chip.area.coeff_hbm_if, s + ".area");
    }
    return chip;
}

ModelConfig parse_model(const json &obj) {
    const std::string s = "model";
    reject_unknown(obj, s,
                   {"name", "num_layers", "hidden_size", "num_q_heads", "num_kv_heads", "head_dim", "ffn_intermediate",
                    "vocab_size", "dtype_bytes", "tie_embeddings", "moe"});
    ModelConfig m;
    m.name = get_or<std::string>(obj, "name", m.name, s);
    m.num_layers = get_int(obj, "num_layers", 0, s);
    m.hidden_size = get_int(obj, "hidden_size", 0, s);
    m.num_q_heads = get_int(obj, "num_q_heads", 0, s);
    m.num_kv_heads = get_int(obj, "num_kv_heads", m.num_q_heads, s);
    m.head_dim = get_int(obj, "head_dim", m.num_q_heads > 0 ? m.hidden_size / m.num_q_heads : 0, s);
    m.ffn_intermediate = get_int(obj, "ffn_intermediate", 0, s);
    m.vocab_size = get_int(obj, "vocab_size", 0, s);
    m.dtype_bytes = get_int(obj, "dtype_bytes", m.dtype_bytes, s);
    m.tie_embeddings = get_or<bool>(obj, "tie_embeddings", false, s);
    if (obj.contains("moe") && !obj["moe"].is_null()) {
        const auto &mo = obj["moe"];
        reject_unknown(mo, s + ".moe", {"num_experts", "active_experts", "expert_intermediate"});
        MoeConfig moe;
        moe.num_experts = get_int(mo, "num_experts", 0, s + ".moe");
        moe.active_experts = get_int(mo, "active_experts", 0, s + ".moe");
        moe.expert_intermediate = get_int(mo, "expert_intermediate", 0, s + ".moe");
        m.moe = moe;
    }
    return m;
}

LengthDist parse_length(const json &obj, LengthDist d, const std::string &section) {
    if (obj.is_number()) {
        d.mean = obj.get<double>();
        d.sigma = 0;
        return d;
    }
    reject_unknown(obj, section, {"mean", "sigma"});
    d.mean = get_or<double>(obj, "mean", d.mean, section);
    d.sigma = get_or<double>(obj, "sigma", d.sigma, section);
    return d;
}

WorkloadSpec parse_workload(const json &obj, const std::filesystem::path &base_dir) {
    const std::string s = "workload";
    reject_unknown(obj, s, {"requests", "generator", "trace_file"});
    const int sources = int(obj.contains("requests")) + int(obj.contains("generator")) + int(obj.contains("trace_file"));
    if (sources != 1) throw ConfigError(s, "exactly one of requests, generator, trace_file is required");
    if (obj.contains("requests")) {
        WorkloadSpec wl;
        const auto &arr = obj["requests"];
        if (!arr.is_array()) throw ConfigError(s + ".requests", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string f = fmt::format("{}.requests[{}]", s, i);
            reject_unknown(arr[i], f, {"arrival_s", "prompt", "output"});
            RequestSpec r;
            r.arrival_s = get_or<double>(arr[i], "arrival_s", 0.0, f);
            const int p = get_int(arr[i], "prompt", 0, f);
            const int o = get_int(arr[i], "output", 0, f);
            if (p < 1) throw ValidationError(f + ".prompt", "length must be >= 1");
            if (o < 1) throw ValidationError(f + ".output", "length must be >= 1");
            r.prompt = static_cast<std::uint32_t>(p);
            r.output = static_cast<std::uint32_t>(o);
            wl.requests.push_back(r);
        }
        return wl;
    }
    if (obj.contains("trace_file")) {
        std::filesystem::path p = obj["trace_file"].get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        return read_trace_jsonl(p);
    }
    const auto &g = obj["generator"];
    const std::string f = s + ".generator";
    reject_unknown(g, f, {"rate", "count", "seed", "prompt", "output", "max_len", "ratio"});
    GeneratorSpec gen;
    gen.rate = get_or<double>(g, "rate", gen.rate, f);
    gen.count = static_cast<std::uint32_t>(get_int(g, "count", 1, f));
    gen.seed = get_or<std::uint64_t>(g, "seed", 0, f);
    gen.max_len = static_cast<std::uint32_t>(get_int(g, "max_len", static_cast<int>(gen.max_len), f));
    if (g.contains("prompt")) gen.prompt = parse_length(g["prompt"], gen.prompt, f + ".prompt");
    if (g.contains("output")) gen.output = parse_length(g["output"], gen.output, f + ".output");
    if (g.contains("ratio")) gen.ratio = g["ratio"].get<double>();
    if (gen.count < 1) throw ValidationError(f + ".count", "must be >= 1");
    if (gen.rate < 0) throw ValidationError(f + ".rate", "must be >= 0");
    if (gen.ratio && *gen.ratio <= 0) throw ValidationError(f + ".ratio", "must be > 0");
    if (gen.prompt.mean < 1 || gen.output.mean < 1) throw ValidationError(f, "length means must be >= 1");
    return generate_workload(gen);
}

Parallelism parse_parallelism(const json &obj, Parallelism p, const std::string &section) {
    reject_unknown(obj, section, {"tp", "pp"});
    p.tp = get_int(obj, "tp", p.tp, section);
    p.pp = get_int(obj, "pp", p.pp, section);
    return p;
}

json parallelism_to_json(const Parallelism &p) { return json{{"tp", p.tp}, {"pp", p.pp}}; }

ServingConfig parse_serving(const json &obj, const ChipConfig &chip) {
    const std::string s = "serving";
    reject_unknown(obj, s,
                   {"mode", "flavor", "ratio", "dp", "prefill", "decode", "fused", "budget_per_core", "chunk_size",
                    "prefill_cost_units", "max_batch", "kv_sram_fraction", "partition", "placement", "decode_core"});
    ServingConfig sv;
    if (obj.contains("mode")) {
        const auto m = lower(obj["mode"].get<std::string>());
        if (m == "disaggregated" || m == "disagg")
            sv.mode = ServingMode::kDisaggregated;
        else if (m == "fused" || m == "fusion")
            sv.mode = ServingMode::kFused;
        else
            throw ConfigError(s + ".mode", "expected disaggregated|fused");
    }
    if (obj.contains("flavor")) {
        const auto f = lower(obj["flavor"].get<std::string>());
        if (f == "dp-prioritized" || f == "dp")
            sv.flavor = PlacementFlavor::kDpPrioritized;
        else if (f == "pp-prioritized" || f == "pp")
            sv.flavor = PlacementFlavor::kPpPrioritized;
        else
            throw ConfigError(s + ".flavor", "expected dp-prioritized|pp-prioritized");
    }
    if (obj.contains("ratio")) {
        const auto &r = obj["ratio"];
        if (r.is_string()) {
            const auto text = r.get<std::string>();
            const auto colon = text.find(':');
            if (colon == std::string::npos) throw ConfigError(s + ".ratio", "expected \"P:D\"");
            try {
                sv.ratio_prefill = std::stoi(text.substr(0, colon));
                sv.ratio_decode = std::stoi(text.substr(colon + 1));
            } catch (const std::exception &) {
                throw ConfigError(s + ".ratio", "expected \"P:D\"");
            }
        } else if (r.is_array() && r.size() == 2) {
            sv.ratio_prefill = r[0].get<int>();
            sv.ratio_decode = r[1].get<int>();
        } else {
            throw ConfigError(s + ".ratio", "expected \"P:D\" or [P, D]");
        }
    }
    sv.dp = get_int(obj, "dp", sv.dp, s);
    if (obj.contains("prefill")) sv.prefill = parse_parallelism(obj["prefill"], sv.prefill, s + ".prefill");
    if (obj.contains("decode")) sv.decode = parse_parallelism(obj["decode"], sv.decode, s + ".decode");
    if (obj.contains("fused")) sv.fused = parse_parallelism(obj["fused"], sv.fused, s + ".fused");
    sv.budget_per_core = get_int(obj, "budget_per_core", sv.budget_per_core, s);
    sv.chunk_size = static_cast<std::uint32_t>(get_int(obj, "chunk_size", static_cast<int>(sv.chunk_size), s));
    sv.prefill_cost_units = get_int(obj, "prefill_cost_units", sv.prefill_cost_units, s);
    sv.max_batch = get_int(obj, "max_batch", sv.max_batch, s);
    if (obj.contains("kv_sram_fraction") && !obj["kv_sram_fraction"].is_null()) {
        if (!obj["kv_sram_fraction"].is_number())
            throw ConfigError(s + ".kv_sram_fraction", "expected a number");
        sv.kv_sram_fraction = obj["kv_sram_fraction"].get<double>();
    }
    if (obj.contains("partition")) {
        const auto p = lower(obj["partition"].get<std::string>());
        if (p != "auto") {
            try {
                sv.partition = partition_strategy_from_string(p);
            } catch (const Error &e) {
                throw ConfigError(s + ".partition", e.what());
            }
        }
    }
    if (obj.contains("placement")) {
        try {
            sv.placement = placement_strategy_from_string(lower(obj["placement"].get<std::string>()));
        } catch (const Error &e) {
            throw ConfigError(s + ".placement", e.what());
        }
    }
    if (obj.contains("decode_core") && !obj["decode_core"].is_null())
        sv.decode_core = parse_core(obj["decode_core"], chip.default_core, chip.core_frequency, s + ".decode_core");
    return sv;
}

SimConfig parse_sim(const json &obj) {
    const std::string s = "sim";
    reject_unknown(obj, s, {"memory_mode", "horizon_cycles", "record_transactions"});
    SimConfig sim;
    if (obj.contains("memory_mode")) {
        try {
            sim.memory_mode = memory_mode_from_string(lower(obj["memory_mode"].get<std::string>()));
        } catch (const Error &e) {
            throw ConfigError(s + ".memory_mode", e.what());
        }
    }
    if (obj.contains("horizon_cycles")) sim.horizon_cycles = static_cast<Cycle>(obj["horizon_cycles"].get<double>());
    sim.record_transactions = get_or<bool>(obj, "record_transactions", false, s);
    return sim;
}

void check(bool ok, const std::string &field, const std::string &what) {
    if (!ok) throw ValidationError(field, what);
}

void validate_core(const CoreConfig &c, const std::string &f) {
    const bool pow2 = c.systolic_dim >= 8 && (c.systolic_dim & (c.systolic_dim - 1)) == 0;
    check(pow2, f + ".systolic_dim", "must be a power of two >= 8");
    check(c.vector_lanes >= 1, f + ".vector_lanes", "must be >= 1");
    check(c.effective_sram_bandwidth() > 0, f + ".sram_bandwidth", "bandwidth must be > 0");
    check(c.hbm_bandwidth > 0, f + ".hbm_bandwidth", "bandwidth must be > 0");
    check(c.max_outstanding >= 1, f + ".max_outstanding", "must be >= 1");
    check(c.dma_txn_bytes >= 1, f + ".dma_txn_bytes", "must be >= 1");
    check(c.softmax_passes >= 0, f + ".softmax_passes", "must be >= 0");
}

}  // namespace

// ---------------------------------------------------------------------------
// Units
// ---------------------------------------------------------------------------

Bytes parse_size(const json &value, const std::string &field) {
    if (value.is_number()) {
        if (value.get<double>() < 0) throw ValidationError(field, "size must be >= 0");
        return static_cast<Bytes>(value.get<double>());
    }
    if (!value.is_string()) throw ConfigError(field, "expected a size");
    auto [v, unit] = split_quantity(value.get<std::string>(), field);
    double mult = 1;
    if (unit.empty() || unit == "b")
        mult = 1;
    else if (unit == "kb" || unit == "kib")
        mult = 1024.0;
    else if (unit == "mb" || unit == "mib")
        mult = 1024.0 * 1024.0;
    else if (unit == "gb" || unit == "gib")
        mult = 1024.0 * 1024.0 * 1024.0;
    else
        throw ConfigError(field, "unknown size suffix \"" + unit + "\"");
    if (v < 0) throw ValidationError(field, "size must be >= 0");
    return static_cast<Bytes>(std::llround(v * mult));
}

double parse_bandwidth(const json &value, double frequency, const std::string &field) {
    if (value.is_number()) return value.get<double>();
    if (!value.is_string()) throw ConfigError(field, "expected a bandwidth");
    auto [v, unit] = split_quantity(value.get<std::string>(), field);
    if (unit.empty() || unit == "b/cycle" || unit == "b/cy") return v;
    double per_second = 0;
    if (unit == "gb/s")
        per_second = v * 1e9;
    else if (unit == "mb/s")
        per_second = v * 1e6;
    else if (unit == "tb/s")
        per_second = v * 1e12;
    else
        throw ConfigError(field, "unknown bandwidth unit \"" + unit + "\"");
    return per_second / frequency;
}

double parse_frequency(const json &value, const std::string &field) {
    if (value.is_number()) return value.get<double>();
    if (!value.is_string()) throw ConfigError(field, "expected a frequency");
    auto [v, unit] = split_quantity(value.get<std::string>(), field);
    if (unit.empty() || unit == "hz") return v;
    if (unit == "khz") return v * 1e3;
    if (unit == "mhz") return v * 1e6;
    if (unit == "ghz") return v * 1e9;
    throw ConfigError(field, "unknown frequency unit \"" + unit + "\"");
}

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

std::string to_string(PartitionStrategy s) {
    switch (s) {
        case PartitionStrategy::kInputOnly: return "input-only";
        case PartitionStrategy::kMn1d: return "mn-1d";
        case PartitionStrategy::kK1d: return "k-1d";
        case PartitionStrategy::kMnk2d: return "mnk-2d";
    }
    return "?";
}

std::string to_string(PlacementStrategy s) {
    switch (s) {
        case PlacementStrategy::kLinearSeq: return "linear-seq";
        case PlacementStrategy::kLinearInterleave: return "linear-interleave";
        case PlacementStrategy::kRing: return "ring";
        case PlacementStrategy::kMesh2d: return "mesh-2d";
    }
    return "?";
}

std::string to_string(ServingMode m) { return m == ServingMode::kFused ? "fused" : "disaggregated"; }
std::string to_string(PlacementFlavor f) {
    return f == PlacementFlavor::kDpPrioritized ? "dp-prioritized" : "pp-prioritized";
}
std::string to_string(MemoryMode m) { return m == MemoryMode::kTlm ? "tlm" : "analytic"; }

PartitionStrategy partition_strategy_from_string(std::string_view s) {
    if (s == "input-only") return PartitionStrategy::kInputOnly;
    if (s == "mn-1d" || s == "mn") return PartitionStrategy::kMn1d;
    if (s == "k-1d" || s == "k") return PartitionStrategy::kK1d;
    if (s == "mnk-2d" || s == "2d") return PartitionStrategy::kMnk2d;
    throw Error("unknown partition strategy \"" + std::string(s) + "\" (input-only|mn-1d|k-1d|mnk-2d)");
}

PlacementStrategy placement_strategy_from_string(std::string_view s) {
    if (s == "linear-seq") return PlacementStrategy::kLinearSeq;
    if (s == "linear-interleave") return PlacementStrategy::kLinearInterleave;
    if (s == "ring") return PlacementStrategy::kRing;
    if (s == "mesh-2d") return PlacementStrategy::kMesh2d;
    throw Error("unknown placement \"" + std::string(s) + "\" (linear-seq|linear-interleave|ring|mesh-2d)");
}

MemoryMode memory_mode_from_string(std::string_view s) {
    if (s == "tlm" || s == "cycle-accurate") return MemoryMode::kTlm;
    if (s == "analytic" || s == "performance-model") return MemoryMode::kAnalytic;
    throw Error("unknown memory mode \"" + std::string(s) + "\" (tlm|analytic)");
}

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------

WorkloadSpec generate_workload(const GeneratorSpec &gen) {
    std::mt19937_64 rng(mix_seed(gen.seed));
    WorkloadSpec wl;
    const auto arrivals = poisson_arrivals(rng, gen.count, gen.rate);
    LengthDist prompt = gen.prompt;
    if (gen.ratio) prompt.mean = *gen.ratio * gen.output.mean;
    for (std::uint32_t i = 0; i < gen.count; ++i) {
        RequestSpec r;
        r.arrival_s = arrivals[i];
        r.prompt = draw_length(rng, prompt, gen.max_len);
        r.output = draw_length(rng, gen.output, gen.max_len);
        wl.requests.push_back(r);
    }
    if (gen.ratio) rescale_prompts(wl, *gen.ratio, gen.max_len);
    return wl;
}

WorkloadSpec synthesize_trace(double ratio, std::uint32_t count, double rate, std::uint64_t seed,
                              const TraceOptions &opts) {
    if (!(ratio > 0)) throw ValidationError("ratio", "must be > 0");
    if (count < 1) throw ValidationError("count", "must be >= 1");
    if (rate < 0) throw ValidationError("rate", "must be >= 0");
    GeneratorSpec gen;
    gen.rate = rate;
    gen.count = count;
    gen.seed = seed;
    gen.output = {opts.output_mean, opts.sigma};
    gen.prompt = {ratio * opts.output_mean, opts.sigma};
    gen.max_len = opts.max_len;
    gen.ratio = ratio;
    return generate_workload(gen);
}

WorkloadSpec read_trace_jsonl(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("workload.trace_file", "cannot open " + path.string());
    WorkloadSpec wl;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error &e) {
            throw ConfigError(path.string(), e.what(), lineno);
        }
        RequestSpec r;
        r.arrival_s = j.value("arrival_s", 0.0);
        const auto p = j.value("prompt", 0);
        const auto o = j.value("output", 0);
        if (p < 1 || o < 1) throw ValidationError(path.string(), "lengths must be >= 1", lineno);
        r.prompt = static_cast<std::uint32_t>(p);
        r.output = static_cast<std::uint32_t>(o);
        wl.requests.push_back(r);
    }
    return wl;
}

void write_trace_jsonl(const WorkloadSpec &workload, std::ostream &out) {
    for (const auto &r : workload.requests)
        out << json{{"arrival_s", r.arrival_s}, {"prompt", r.prompt}, {"output", r.output}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Footprint and area
// ---------------------------------------------------------------------------

std::uint64_t layer_parameter_count(const ModelConfig &m) {
    const std::uint64_t h = m.hidden_size;
    const std::uint64_t attn = h * m.q_width() + 2 * h * m.kv_width() + std::uint64_t(m.q_width()) * h;
    std::uint64_t ffn = 0;
    if (m.moe)
        ffn = std::uint64_t(m.moe->num_experts) * 3 * h * m.moe->expert_intermediate + h * m.moe->num_experts;
    else
        ffn = 3 * h * m.ffn_intermediate;
    return attn + ffn + 2 * h;
}

MemoryFootprint model_memory_footprint(const ModelConfig &m) {
    const std::uint64_t h = m.hidden_size;
    const std::uint64_t embed = std::uint64_t(m.vocab_size) * h * (m.tie_embeddings ? 1 : 2);
    const std::uint64_t layers = m.num_layers;
    const std::uint64_t params = layers * layer_parameter_count(m) + embed + h;

    std::uint64_t active_layer = layer_parameter_count(m);
    if (m.moe) {
        active_layer -= std::uint64_t(m.moe->num_experts) * 3 * h * m.moe->expert_intermediate;
        active_layer += std::uint64_t(m.moe->active_experts) * 3 * h * m.moe->expert_intermediate;
    }
    MemoryFootprint fp;
    fp.weight_bytes = params * m.dtype_bytes;
    fp.active_weight_bytes = (layers * active_layer + embed + h) * m.dtype_bytes;
    fp.kv_bytes_per_token = 2ULL * layers * m.num_kv_heads * m.head_dim * m.dtype_bytes;
    const std::uint64_t widths = h + m.q_width() + 2ULL * m.kv_width() + 2ULL * m.ffn_active_width();
    fp.activation_bytes_per_token = widths * m.dtype_bytes;
    return fp;
}

double core_area(const CoreConfig &core, const AreaModel &area, double core_frequency) {
    const double macs = double(core.systolic_dim) * core.systolic_dim;
    const double alus = double(core.vector_alus());
    const double sram_mb = double(core.sram_bytes) / (1024.0 * 1024.0);
    const double hbm_gbps = core.hbm_bandwidth * core_frequency / 1e9;
    return area.coeff_sa * macs + area.coeff_vec * alus + area.coeff_sram * sram_mb + area.coeff_hbm_if * hbm_gbps;
}

double chip_area(const ChipConfig &chip) {
    double total = 0;
    for (CoreId c = 0; c < chip.num_cores(); ++c) total += core_area(chip.core(c), chip.area, chip.core_frequency);
    return total;
}

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

void validate(const Config &cfg) {
    const auto &chip = cfg.chip;
    check(chip.mesh_rows >= 1, "chip.mesh_rows", "mesh_rows x mesh_cols must be >= 1");
    check(chip.mesh_cols >= 1, "chip.mesh_cols", "mesh_rows x mesh_cols must be >= 1");
    check(chip.core_frequency > 0, "chip.core_frequency", "must be > 0");
    check(chip.noc_link_bandwidth >= 1, "chip.noc_link_bandwidth", "bandwidth must be > 0");
    check(chip.noc_max_packet_bytes >= 1, "chip.noc_max_packet_bytes", "must be >= 1");
    check(chip.noc_handshake_cycles >= 1, "chip.noc_handshake_cycles", "must be >= 1");
    validate_core(chip.default_core, "chip.core");
    for (const auto &[id, c] : chip.core_overrides) {
        check(id >= 0 && id < chip.num_cores(), fmt::format("chip.core_overrides.{}", id),
              "override references a core outside the mesh");
        validate_core(c, fmt::format("chip.core_overrides.{}", id));
    }
    const auto &a = chip.area;
    check(a.coeff_sa >= 0 && a.coeff_vec >= 0 && a.coeff_sram >= 0 && a.coeff_hbm_if >= 0, "chip.area",
          "coefficients must be >= 0");

    const auto &m = cfg.model;
    check(m.num_layers > 0, "model.num_layers", "must be > 0");
    check(m.hidden_size > 0, "model.hidden_size", "must be > 0");
    check(m.num_q_heads > 0, "model.num_q_heads", "must be > 0");
    check(m.num_kv_heads > 0, "model.num_kv_heads", "must be > 0");
    check(m.head_dim > 0, "model.head_dim", "must be > 0");
    check(m.ffn_intermediate > 0 || m.moe, "model.ffn_intermediate", "must be > 0");
    check(m.vocab_size >= 0, "model.vocab_size", "must be >= 0");
    check(m.dtype_bytes > 0, "model.dtype_bytes", "must be > 0");
    check(m.hidden_size == m.num_q_heads * m.head_dim, "model.hidden_size", "must equal num_q_heads x head_dim");
    check(m.num_q_heads % m.num_kv_heads == 0, "model.num_kv_heads", "must divide num_q_heads");
    if (m.moe) {
        check(m.moe->num_experts > 0, "model.moe.num_experts", "must be > 0");
        check(m.moe->active_experts > 0 && m.moe->active_experts <= m.moe->num_experts, "model.moe.active_experts",
              "must be in [1, num_experts]");
        check(m.moe->expert_intermediate > 0, "model.moe.expert_intermediate", "must be > 0");
    }

    double prev = 0;
    for (std::size_t i = 0; i < cfg.workload.requests.size(); ++i) {
        const auto &r = cfg.workload.requests[i];
        const auto f = fmt::format("workload.requests[{}]", i);
        check(r.arrival_s >= prev, f + ".arrival_s", "arrival times must be non-decreasing");
        check(r.prompt >= 1 && r.output >= 1, f, "lengths must be >= 1");
        prev = r.arrival_s;
    }

    const auto &s = cfg.serving;
    check(s.ratio_prefill >= 0 && s.ratio_decode >= 0, "serving.ratio", "must be non-negative");
    check(s.budget_per_core >= 1, "serving.budget_per_core", "must be >= 1");
    check(s.chunk_size >= 1, "serving.chunk_size", "must be >= 1");
    check(s.prefill_cost_units >= 1, "serving.prefill_cost_units", "must be >= 1");
    check(s.max_batch >= 1, "serving.max_batch", "must be >= 1");
    check(s.dp >= 1, "serving.dp", "must be >= 1");
    if (s.kv_sram_fraction)
        check(*s.kv_sram_fraction >= 0 && *s.kv_sram_fraction <= 1, "serving.kv_sram_fraction", "must be in [0, 1]");
    for (const auto &[name, p] : {std::pair{"prefill", s.prefill}, {"decode", s.decode}, {"fused", s.fused}}) {
        check(p.tp >= 1 && p.pp >= 1, fmt::format("serving.{}", name), "tp and pp must be >= 1");
        check(m.num_layers % p.pp == 0, fmt::format("serving.{}.pp", name), "must divide model.num_layers");
        check(m.hidden_size % p.tp == 0 && m.num_q_heads % p.tp == 0, fmt::format("serving.{}.tp", name),
              "must divide hidden_size and num_q_heads");
    }
    if (s.decode_core) validate_core(*s.decode_core, "serving.decode_core");
    check(cfg.sim.horizon_cycles > 0, "sim.horizon_cycles", "must be > 0");
}

Config config_from_json(const json &doc, const std::filesystem::path &base_dir) {
    reject_unknown(doc, "", {"chip", "model", "workload", "serving", "sim"});
    for (const char *k : {"chip", "model", "workload"})
        if (!doc.contains(k)) throw ConfigError(k, "section is required");
    Config cfg;
    cfg.model = parse_model(doc["model"]);
    cfg.chip = parse_chip(doc["chip"], cfg.model.dtype_bytes > 0 ? cfg.model.dtype_bytes : 2);
    cfg.workload = parse_workload(doc["workload"], base_dir);
    if (doc.contains("serving")) cfg.serving = parse_serving(doc["serving"], cfg.chip);
    if (doc.contains("sim")) cfg.sim = parse_sim(doc["sim"]);
    validate(cfg);
    if (cfg.serving.decode_core && cfg.serving.mode == ServingMode::kDisaggregated) {
        const auto pd = partition_cores(cfg.serving, cfg.chip);
        for (CoreId c : pd.decode_cores) cfg.chip.core_overrides[c] = *cfg.serving.decode_core;
    }
    return cfg;
}

Config load_config_string(std::string_view text, const std::filesystem::path &base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error &e) {
        const auto upto = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
        throw ConfigError("json", e.what(), line);
    }
    return config_from_json(doc, base_dir);
}

Config load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open file");
    std::stringstream ss;
    ss << in.rdbuf();
    return load_config_string(ss.str(), path.parent_path());
}

json serialize(const Config &cfg) {
    json doc;
    const auto &c = cfg.chip;
    json chip;
    chip["mesh_rows"] = c.mesh_rows;
    chip["mesh_cols"] = c.mesh_cols;
    chip["core_frequency"] = c.core_frequency;
    chip["core"] = core_to_json(c.default_core);
    json ov = json::object();
    for (const auto &[id, core] : c.core_overrides) ov[std::to_string(id)] = core_to_json(core);
    chip["core_overrides"] = ov;
    chip["noc_link_bandwidth"] = c.noc_link_bandwidth;
    chip["noc_handshake_cycles"] = c.noc_handshake_cycles;
    chip["noc_max_packet_bytes"] = c.noc_max_packet_bytes;
    chip["area"] = {{"coeff_sa", c.area.coeff_sa},
                    {"coeff_vec", c.area.coeff_vec},
                    {"coeff_sram", c.area.coeff_sram},
                    {"coeff_hbm_if", c.area.coeff_hbm_if}};
    doc["chip"] = chip;

    const auto &m = cfg.model;
    json model{{"name", m.name},
               {"num_layers", m.num_layers},
               {"hidden_size", m.hidden_size},
               {"num_q_heads", m.num_q_heads},
               {"num_kv_heads", m.num_kv_heads},
               {"head_dim", m.head_dim},
               {"ffn_intermediate", m.ffn_intermediate},
               {"vocab_size", m.vocab_size},
               {"dtype_bytes", m.dtype_bytes},
               {"tie_embeddings", m.tie_embeddings}};
    if (m.moe)
        model["moe"] = {{"num_experts", m.moe->num_experts},
                        {"active_experts", m.moe->active_experts},
                        {"expert_intermediate", m.moe->expert_intermediate}};
    doc["model"] = model;

    json reqs = json::array();
    for (const auto &r : cfg.workload.requests)
        reqs.push_back({{"arrival_s", r.arrival_s}, {"prompt", r.prompt}, {"output", r.output}});
    doc["workload"] = {{"requests", reqs}};

    const auto &s = cfg.serving;
    json serving{{"mode", to_string(s.mode)},
                 {"flavor", to_string(s.flavor)},
                 {"ratio", fmt::format("{}:{}", s.ratio_prefill, s.ratio_decode)},
                 {"dp", s.dp},
                 {"prefill", parallelism_to_json(s.prefill)},
                 {"decode", parallelism_to_json(s.decode)},
                 {"fused", parallelism_to_json(s.fused)},
                 {"budget_per_core", s.budget_per_core},
                 {"chunk_size", s.chunk_size},
                 {"prefill_cost_units", s.prefill_cost_units},
                 {"max_batch", s.max_batch},
                 {"partition", s.partition ? to_string(*s.partition) : std::string("auto")},
                 {"placement", to_string(s.placement)}};
    if (s.kv_sram_fraction) serving["kv_sram_fraction"] = *s.kv_sram_fraction;
    if (s.decode_core) serving["decode_core"] = core_to_json(*s.decode_core);
    doc["serving"] = serving;

    doc["sim"] = {{"memory_mode", to_string(cfg.sim.memory_mode)},
                  {"horizon_cycles", cfg.sim.horizon_cycles},
                  {"record_transactions", cfg.sim.record_transactions}};
    return doc;
}

std::string config_fingerprint(const Config &config) {
    const std::string text = serialize(config).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

}  // namespace npusim
