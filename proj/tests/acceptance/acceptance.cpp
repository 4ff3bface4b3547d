// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

// Acceptance checks, one line per criterion. Usage: npusim_acceptance [N...]
// runs the listed criteria (all by default); exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "../oracles.hpp"
#include "npusim/compute.hpp"
#include "npusim/kv_memory.hpp"
#include "npusim/lowering.hpp"
#include "npusim/memory.hpp"
#include "npusim/noc.hpp"
#include "npusim/report.hpp"
#include "npusim/serving.hpp"
#include "npusim/validation.hpp"

using namespace npusim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::json desk_json(const std::string &name) { return read_json_file(fs::path(NPUSIM_CONFIG_DIR) / name); }

RunReport run_json(const nlohmann::json &doc) { return run_simulation(config_from_json(doc)); }

// ---------------------------------------------------------------------------

Outcome communication_volume() {
    ChipConfig chip;
    chip.mesh_rows = 8;
    chip.mesh_cols = 8;
    std::mt19937_64 rng(2024);
    const PartitionStrategy strategies[] = {PartitionStrategy::kInputOnly, PartitionStrategy::kMn1d,
                                            PartitionStrategy::kK1d, PartitionStrategy::kMnk2d};
    int cases = 0, mismatches = 0;
    std::map<PartitionStrategy, int> per_strategy;
    std::string first_bad;
    while (cases < 240) {
        const PartitionStrategy s = strategies[rng() % 4];
        const int num = s == PartitionStrategy::kInputOnly ? 1 : std::vector<int>{2, 4, 8, 16}[rng() % 4];
        const GemmShape g{64 * (1 + rng() % 8), 64 * (1 + rng() % 8), 64 * (1 + rng() % 8), 2};
        if (!plan_feasible(s, g, num)) continue;
        const PartitionPlan plan = make_plan(s, g, num);

        oracle::Fraction f;
        switch (s) {
            case PartitionStrategy::kInputOnly: f = {0, 1}; break;
            case PartitionStrategy::kMn1d: f = oracle::allgather_volume(g.K, g.N, num); break;
            case PartitionStrategy::kK1d: f = oracle::allreduce_volume(g.M, g.N, num); break;
            case PartitionStrategy::kMnk2d: f = oracle::two_d_volume(g.M, g.K, g.N, plan.r_num, plan.c_num); break;
        }
        const auto elems = f.integer();
        if (!elems) return {false, fmt::format("oracle volume not integral for {} M={} K={} N={}", to_string(s), g.M, g.K, g.N)};
        const Bytes expect = *elems * g.dtype_bytes;

        const PlacementStrategy ps =
            s == PartitionStrategy::kMnk2d ? PlacementStrategy::kMesh2d : PlacementStrategy::kRing;
        const PlacementPlan placement = place(ps, chip, 1, num);
        TaskGraph graph;
        StageLowerer low;
        std::vector<std::vector<std::uint32_t>> frontier(num);
        low.lower_gemm(graph, chip, placement.mapping[0], collective_schedule(plan, placement), 0, frontier);
        const GraphRun run = run_graph(chip, std::move(graph));
        for (CoreId c : placement.mapping[0]) {
            if (run.injected[c] != expect) {
                ++mismatches;
                if (first_bad.empty())
                    first_bad = fmt::format("{} M={} K={} N={} num={}: core {} sent {} B, oracle {} B", to_string(s),
                                            g.M, g.K, g.N, num, c, run.injected[c], expect);
            }
        }
        ++per_strategy[s];
        ++cases;
    }
    std::string mix;
    for (auto [s, n] : per_strategy) mix += fmt::format(" {}={}", to_string(s), n);
    if (mismatches) return {false, fmt::format("{} rank mismatches; first: {}", mismatches, first_bad)};
    return {true, fmt::format("{} cases, every rank exact ({})", cases, mix.substr(1))};
}

// ---------------------------------------------------------------------------

Outcome kv_conservation() {
    std::uint64_t ops_done = 0;
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        std::mt19937_64 rng(seed);
        KvBlockTable t(96, 16, 512, Bytes{1} << 24);
        std::vector<RequestId> live;
        RequestId next = 0;
        for (int op = 0; op < 10000; ++op, ++ops_done) {
            const int kind = live.empty() ? 0 : int(rng() % 10);
            if (kind == 0 && live.size() < 32) {
                const std::uint64_t max_tokens = 32 + rng() % 1024;
                if (t.can_admit(max_tokens)) {
                    t.admit(next, max_tokens);
                    live.push_back(next);
                }
                ++next;
            } else if (kind <= 6) {
                t.kv_append(live[rng() % live.size()], 1 + rng() % 48);
            } else if (kind == 7) {
                t.spill_to_hbm(1 + rng() % 8);
            } else {
                const std::size_t i = rng() % live.size();
                t.kv_release(live[i]);
                live.erase(live.begin() + i);
            }
            std::uint64_t in_chains = 0;
            std::vector<int> owners(t.total_blocks(), 0);
            for (const auto &[id, c] : t.chains()) {
                in_chains += c.sram_blocks.size();
                for (auto b : c.sram_blocks) {
                    if (b >= t.total_blocks() || ++owners[b] > 1)
                        return {false, fmt::format("seed {} op {}: block {} aliased", seed, op, b)};
                }
            }
            if (t.free_blocks() + in_chains != t.total_blocks())
                return {false, fmt::format("seed {} op {}: free {} + chained {} != {}", seed, op, t.free_blocks(),
                                           in_chains, t.total_blocks())};
            std::vector<std::pair<Bytes, Bytes>> spans;
            for (const auto &e : t.ring().entries())
                if (e.reserved) spans.emplace_back(e.offset, e.offset + e.reserved);
            std::sort(spans.begin(), spans.end());
            for (std::size_t i = 0; i < spans.size(); ++i) {
                if (spans[i].second > t.ring().capacity() || (i && spans[i - 1].second > spans[i].first))
                    return {false, fmt::format("seed {} op {}: HBM ring entries overlap", seed, op)};
            }
        }
    }
    return {true, fmt::format("{} random ops over 3 sequences, conservation and ring disjointness held", ops_done)};
}

// ---------------------------------------------------------------------------

Outcome memory_protocol() {
    // Every transaction of a TLM serving run, recorded.
    auto doc = desk_json("desk/mix_1to4_disagg.json");
    doc["workload"]["generator"]["count"] = 100;
    doc["sim"]["memory_mode"] = "tlm";
    doc["sim"]["record_transactions"] = true;
    const Config cfg = config_from_json(doc);
    ServingSimulator sim(cfg);
    sim.run();
    const ChipConfig &chip = cfg.chip;
    std::uint64_t txns = 0;
    for (CoreId c = 0; c < chip.num_cores(); ++c) {
        const MemChannel &ch = sim.executor().channel(c);
        for (const auto &t : ch.log()) {
            try {
                check_phase_order(t);
            } catch (const std::exception &e) {
                return {false, e.what()};
            }
        }
        for (Cycle w : {Cycle{64}, Cycle{1000}, Cycle{100000}})
            if (!bandwidth_bound_holds(ch.log(), ch.config().bandwidth, w))
                return {false, fmt::format("core {} exceeds bandwidth in a {}-cycle window", c, w)};
        txns += ch.log().size();
    }
    if (txns == 0) return {false, "serving run issued no memory transactions"};

    std::string probes;
    const ChannelConfig channels[] = {ChannelConfig::hbm(CoreConfig{}), ChannelConfig::hbm(chip.default_core),
                                      ChannelConfig{32.0, 200, 32, 512}};
    for (const auto &cfg : channels) {
        // Back-to-back large reads, so the outstanding window never limits the rate.
        const double frac = sustained_throughput_probe(cfg, 500000, Bytes{64} << 10) / cfg.bandwidth;
        probes += fmt::format(" {:.4f}", frac);
        if (frac < 0.95 || frac > 1.0) return {false, fmt::format("sustained probe at {:.4f} of bandwidth", frac)};
    }
    return {true, fmt::format("{} transactions checked; probe/bandwidth ={}", txns, probes)};
}

// ---------------------------------------------------------------------------

struct Burst : Component {
    Noc *noc = nullptr;
    std::vector<std::tuple<CoreId, CoreId, Bytes>> msgs;
    std::string name() const override { return "burst"; }
    void handle(const SimEvent &ev) override {
        auto [s, d, b] = msgs.at(ev.payload);
        noc->send(s, d, b, NocTag::kActivation, ev.payload);
    }
};

struct Delivered : NocListener {
    std::uint64_t count = 0;
    void on_message_delivered(std::uint64_t, Cycle) override { ++count; }
};

Outcome noc_deadlock_freedom() {
    std::string detail;
    for (int side : {8, 16}) {
        ChipConfig chip;
        chip.mesh_rows = side;
        chip.mesh_cols = side;
        chip.noc_max_packet_bytes = 64 * chip.noc_link_bandwidth;
        Engine e;
        Delivered done;
        Noc noc(e, chip, &done);
        noc.set_record_intervals(true);
        noc.set_record_packets(true);
        Burst b;
        b.noc = &noc;
        const int id = e.add_component(&b);
        std::mt19937_64 rng(side);
        const int n = chip.num_cores();
        Bytes sent = 0;
        for (int i = 0; i < 1000; ++i) {
            const CoreId s = rng() % n;
            CoreId d = rng() % n;
            if (d == s) d = (d + 1) % n;
            const Bytes bytes = (1 + rng() % 64) * chip.noc_link_bandwidth;
            b.msgs.emplace_back(s, d, bytes);
            sent += bytes;
            e.schedule(i / 16, id, 0, i);
        }
        e.run();
        if (done.count != 1000) return {false, fmt::format("{}x{}: {} of 1000 delivered", side, side, done.count)};
        try {
            check_link_exclusivity(noc.intervals());
        } catch (const std::exception &ex) {
            return {false, ex.what()};
        }
        if (noc.total_injected() != sent || noc.total_delivered() != sent)
            return {false, fmt::format("{}x{}: sent {} injected {} delivered {}", side, side, sent,
                                       noc.total_injected(), noc.total_delivered())};
        for (const auto &p : noc.delivered_packets())
            if (p.delivered - p.inject_time < Cycle(p.hops()) + p.flits())
                return {false, fmt::format("packet {} beat the hops + flits bound", p.id)};
        detail += fmt::format(" {}x{}: 1000/1000 delivered, {} link intervals exclusive, {} B conserved;", side, side,
                              noc.intervals().size(), sent);
    }
    return {true, detail.substr(1, detail.size() - 2)};
}

// ---------------------------------------------------------------------------

std::string file_bytes(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "npusim_acceptance_det";
    fs::remove_all(root);
    std::string detail;
    for (const char *name : {"smoke_fused.json", "smoke_disagg.json", "desk/pd_ratio.json"}) {
        auto doc = desk_json(name);
        doc["workload"]["generator"]["count"] = 24;
        const Config cfg = config_from_json(doc);
        std::string texts[2];
        for (int i = 0; i < 2; ++i) {
            const fs::path dir = root / fmt::format("{}_{}", fs::path(name).stem().string(), i);
            write_report(run_simulation(cfg), dir);
            texts[i] = file_bytes(dir / "summary.json");
        }
        if (texts[0].empty() || texts[0] != texts[1]) return {false, fmt::format("{}: summary.json differs", name)};
        detail += fmt::format(" {} ({} B)", name, texts[0].size());
    }
    fs::remove_all(root);
    return {true, "byte-identical summary.json:" + detail};
}

// ---------------------------------------------------------------------------

Outcome fusion_budget() {
    auto doc = desk_json("smoke_fused.json");
    doc["workload"]["generator"]["count"] = 500;
    doc["sim"]["memory_mode"] = "analytic";
    ServingSimulator sim(config_from_json(doc));
    sim.run();
    std::size_t iterations = 0, with_chunks = 0, with_deferred = 0;
    for (const auto &it : sim.fused_log()) {
        ++iterations;
        if (it.units > it.budget)
            return {false, fmt::format("iteration at {} used {} of {} units", it.start, it.units, it.budget)};
        if (it.deferred > 0 && it.chunks > 0)
            return {false, fmt::format("iteration at {} ran prefill while deferring {} decodes", it.start, it.deferred)};
        with_chunks += it.chunks > 0;
        with_deferred += it.deferred > 0;
    }
    std::size_t done = 0;
    for (const auto &r : sim.requests()) {
        done += r.phase == RequestPhase::kDone;
        auto ct = sim.chunk_tokens().find(r.id);
        if (ct == sim.chunk_tokens().end() || ct->second != r.prompt_len)
            return {false, fmt::format("request {} prefilled a different token count than its prompt", r.id)};
    }
    if (done != 500) return {false, fmt::format("{} of 500 requests completed", done)};
    return {true, fmt::format("500 requests, {} iterations ({} with prefill chunks, {} deferring decodes), no violation",
                              iterations, with_chunks, with_deferred)};
}

// ---------------------------------------------------------------------------

Outcome compute_formula() {
    std::mt19937_64 rng(7);
    const int dims[] = {8, 16, 32, 64, 128, 256};
    for (int i = 0; i < 1000; ++i) {
        CoreConfig core;
        core.systolic_dim = dims[rng() % 6];
        const GemmShape g{1 + rng() % 4096, 1 + rng() % 8192, 1 + rng() % 8192, 2};
        const Cycle got = matmul_cycles(g, core).cycles;
        const Cycle want = oracle::matmul_cycles(g.M, g.K, g.N, core.systolic_dim);
        if (got != want)
            return {false, fmt::format("M={} K={} N={} dim={}: {} vs oracle {}", g.M, g.K, g.N, core.systolic_dim, got, want)};
    }
    return {true, "1000 random shapes, all exact"};
}

// ---------------------------------------------------------------------------

Outcome partition_crossover() {
    ChipConfig chip;
    chip.mesh_rows = 4;
    chip.mesh_cols = 4;
    chip.core_frequency = 500e6;
    chip.default_core.systolic_dim = 128;
    chip.default_core.vector_lanes = 32;
    chip.noc_link_bandwidth = 32;
    ModelConfig m;
    m.num_layers = 1;
    m.hidden_size = 1024;
    m.num_q_heads = 8;
    m.num_kv_heads = 8;
    m.head_dim = 128;
    m.ffn_intermediate = 2816;
    m.vocab_size = 8192;
    const std::vector<std::uint64_t> seqs{128, 256, 512, 1024, 2048, 4096, 8192};
    const auto rep = oracle_crossover(m, chip, 4, seqs);
    std::string table;
    double long_sum = 0;
    int long_n = 0;
    double short_speedup = 0;
    bool k_loses_at_8192 = false;
    for (const auto &r : rep.rows) {
        if (!r.k1d || !r.mn1d || !r.mnk2d) return {false, fmt::format("seq {}: a strategy was infeasible", r.seq)};
        const double k_vs_mn = double(*r.mn1d) / double(*r.k1d);
        const double two_d = double(*r.mn1d) / double(*r.mnk2d);
        table += fmt::format(" {}:{:.2f}/{:.2f}", r.seq, k_vs_mn, two_d);
        if (r.seq == 128) short_speedup = k_vs_mn;
        if (r.seq == 8192) k_loses_at_8192 = *r.k1d > *r.mn1d;
        if (r.seq >= std::uint64_t(m.hidden_size)) {
            long_sum += two_d;
            ++long_n;
        }
    }
    const double long_avg = long_sum / long_n;
    const bool ok = short_speedup >= 2.0 && k_loses_at_8192 && long_avg >= 1.1;
    return {ok, fmt::format("k-1d speedup over mn-1d at seq 128 = {:.2f}x (need >= 2), k-1d loses at 8192: {}, "
                            "2-D over mn-1d averaged over seq >= hidden = {:.3f}x (need >= 1.1); "
                            "seq:mn/k,mn/2d{}; crossover at {}",
                            short_speedup, k_loses_at_8192 ? "yes" : "no", long_avg, table,
                            rep.crossover_seq ? std::to_string(*rep.crossover_seq) : "none")};
}

// ---------------------------------------------------------------------------

Outcome placement() {
    ChipConfig chip;
    chip.mesh_rows = 16;
    chip.mesh_cols = 16;
    chip.core_frequency = 500e6;
    chip.default_core.systolic_dim = 64;
    chip.default_core.vector_lanes = 32;
    chip.noc_link_bandwidth = 16;
    chip.noc_handshake_cycles = 1;
    chip.noc_max_packet_bytes = 256;
    ModelConfig m;
    m.num_layers = 4;
    m.hidden_size = 1024;
    m.num_q_heads = 16;
    m.num_kv_heads = 8;
    m.head_dim = 64;
    m.ffn_intermediate = 2816;
    m.vocab_size = 8192;
    const std::vector<PlacementStrategy> all{PlacementStrategy::kLinearSeq, PlacementStrategy::kLinearInterleave,
                                             PlacementStrategy::kRing, PlacementStrategy::kMesh2d};
    const auto tp1 = oracle_placement(m, chip, 1, 512, all);
    bool equal = true;
    for (const auto &r : tp1) equal = equal && r.cycles == tp1[0].cycles;
    const auto tp16 = oracle_placement(m, chip, 16, 512, all);
    std::map<PlacementStrategy, Cycle> c16;
    std::string table;
    for (const auto &r : tp16) {
        c16[r.strategy] = r.cycles;
        table += fmt::format(" {}={}", to_string(r.strategy), r.cycles);
    }
    const double ring_gain = double(c16[PlacementStrategy::kLinearInterleave]) / double(c16[PlacementStrategy::kRing]);
    const bool ok = equal && ring_gain >= 1.1;
    return {ok, fmt::format("TP=1 all equal: {} ({} cycles); TP=16 ring speedup over linear-interleave = {:.3f}x "
                            "(need >= 1.1); TP=16 cycles:{}",
                            equal ? "yes" : "no", tp1[0].cycles, ring_gain, table)};
}

// ---------------------------------------------------------------------------

Outcome pd_ratio() {
    const std::vector<std::string> ratios{"3:1", "2:1", "1:1", "1:2"};
    std::vector<double> ttft, e2e;
    std::string table;
    for (const auto &ratio : ratios) {
        auto doc = desk_json("desk/pd_ratio.json");
        doc["serving"]["ratio"] = ratio;
        const auto rep = run_json(doc);
        if (!rep.metrics.ttft_mean || !rep.metrics.e2e_mean) return {false, ratio + ": no completed requests"};
        ttft.push_back(*rep.metrics.ttft_mean);
        e2e.push_back(*rep.metrics.e2e_mean);
        const double f = rep.config.chip.core_frequency;
        table += fmt::format(" P{}: ttft {:.3f} ms e2e {:.2f} ms;", ratio, 1e3 * ttft.back() / f, 1e3 * e2e.back() / f);
    }
    bool monotone = true;
    for (std::size_t i = 1; i < ttft.size(); ++i) monotone = monotone && ttft[i] > ttft[i - 1];
    const double drop = 1.0 - e2e.back() / e2e.front();
    const bool ok = monotone && drop >= 0.30;
    return {ok, fmt::format("TTFT rises monotonically as prefill cores shrink: {}; e2e drop from P3:D1 to P1:D2 = "
                            "{:.1f}% (need >= 30%);{}",
                            monotone ? "yes" : "no", 100 * drop, table.substr(0, table.size() - 1))};
}

// ---------------------------------------------------------------------------

Outcome fidelity() {
    double e2e[2], wall[2];
    int i = 0;
    for (const char *mode : {"analytic", "tlm"}) {
        auto doc = desk_json("desk/fidelity.json");
        doc["sim"]["memory_mode"] = mode;
        const Config cfg = config_from_json(doc);
        const auto t0 = std::chrono::steady_clock::now();
        const auto rep = run_simulation(cfg);
        wall[i] = seconds_since(t0);
        if (!rep.metrics.e2e_mean) return {false, fmt::format("{}: no completed requests", mode)};
        e2e[i] = *rep.metrics.e2e_mean;
        ++i;
    }
    const double err = std::abs(e2e[0] - e2e[1]) / e2e[1];
    const double speed = wall[1] / wall[0];
    const bool ok = err <= 0.05 && speed >= 2.0;
    return {ok, fmt::format("e2e analytic vs TLM differs by {:.2f}% (need <= 5%); wall {:.2f}s vs {:.2f}s = {:.2f}x "
                            "faster (need >= 2x)",
                            100 * err, wall[0], wall[1], speed)};
}

// ---------------------------------------------------------------------------

Outcome fusion_vs_disaggregation() {
    const auto fus14 = run_json(desk_json("desk/mix_1to4_fused.json"));
    const auto dis14 = run_json(desk_json("desk/mix_1to4_disagg.json"));
    const double thr_gain = fus14.metrics.throughput / dis14.metrics.throughput;
    const auto fus101 = run_json(desk_json("desk/mix_10to1_fused.json"));
    const auto dis101 = run_json(desk_json("desk/mix_10to1_disagg.json"));
    if (!fus101.metrics.tbt_mean || !dis101.metrics.tbt_mean) return {false, "10:1 runs produced no decode gaps"};
    const double tbt_f = *fus101.metrics.tbt_mean, tbt_d = *dis101.metrics.tbt_mean;
    const double f = fus101.config.chip.core_frequency;
    const bool ok = thr_gain >= 1.5 && tbt_d <= tbt_f;
    return {ok, fmt::format("1:4 fused/disaggregated throughput = {:.3f}x (need >= 1.5); 10:1 TBT disaggregated "
                            "{:.4f} ms vs fused {:.4f} ms (need disaggregated <= fused, fused/disaggregated = {:.2f}x)",
                            thr_gain, 1e3 * tbt_d / f, 1e3 * tbt_f / f, tbt_f / tbt_d)};
}

// ---------------------------------------------------------------------------

Outcome sram_sensitivity() {
    const auto base = desk_json("desk/sram_sweep.json");
    auto with_sram = [&](Bytes mb) {
        auto doc = base;
        doc["chip"]["core"]["sram"] = fmt::format("{}MB", mb);
        return run_json(doc);
    };
    // Probe the layout with room for everything to size the sweep.
    const auto roomy = with_sram(1024);
    const SramLayout &full = roomy.instances.at(0).layouts.at(0);
    const Bytes working = full.activation_bytes + full.temp_buffer_bytes + full.kv_bytes;
    const Bytes everything = working + full.weight_resident_bytes;
    const Bytes mb = Bytes{1} << 20;
    const Bytes low = 4;
    const Bytes fit = ceil_div(everything, 16 * mb) * 16;
    const Bytes beyond = 2 * fit;
    if (low * mb >= working) return {false, "low SRAM point is not below the activation + KV working set"};
    const auto r_low = with_sram(low), r_fit = with_sram(fit), r_beyond = with_sram(beyond);
    if (!r_low.metrics.e2e_mean || !r_fit.metrics.e2e_mean || !r_beyond.metrics.e2e_mean)
        return {false, "a sweep point completed no requests"};
    const double speedup = *r_low.metrics.e2e_mean / *r_fit.metrics.e2e_mean;
    const double change = std::abs(*r_beyond.metrics.e2e_mean - *r_fit.metrics.e2e_mean) / *r_fit.metrics.e2e_mean;
    const bool ok = speedup >= 1.5 && change <= 0.05;
    return {ok, fmt::format("activation+KV working set {:.1f} MB, with weights {:.1f} MB; e2e speedup {} MB -> {} MB = "
                            "{:.2f}x (need >= 1.5); {} MB -> {} MB changes e2e by {:.2f}% (need <= 5%)",
                            double(working) / mb, double(everything) / mb, low, fit, speedup, fit, beyond,
                            100 * change)};
}

}  // namespace

int main(int argc, char **argv) {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, communication_volume},  {2, kv_conservation},   {3, memory_protocol},
        {4, noc_deadlock_freedom},  {5, determinism},       {6, fusion_budget},
        {7, compute_formula},       {8, partition_crossover}, {9, placement},
        {10, pd_ratio},             {11, fidelity},         {12, fusion_vs_disaggregation},
        {13, sram_sensitivity}};
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const auto &[n, fn] : criteria) {
        if (!wanted.empty() && !wanted.count(n)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %2d: %s [%.1fs] %s\n", n, o.pass ? "PASS" : "FAIL", seconds_since(t0), o.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
