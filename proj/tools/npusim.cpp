// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "npusim/config.hpp"
#include "npusim/partition.hpp"
#include "npusim/placement.hpp"
#include "npusim/report.hpp"

using namespace npusim;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kInfeasible = 3, kLivelock = 4 };

Config load_with_overrides(const std::string &path, std::optional<std::uint64_t> seed,
                           std::optional<std::string> memory_mode) {
    json doc;
    {
        std::ifstream in(path);
        if (!in) throw ConfigError(path, "cannot open file");
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string text = ss.str();
        try {
            doc = json::parse(text);
        } catch (const json::parse_error &) {
            (void)load_config_string(text);  // rethrows with the line number
        }
    }
    if (seed) {
        if (doc.contains("workload") && doc["workload"].contains("generator"))
            doc["workload"]["generator"]["seed"] = *seed;
        else
            spdlog::warn("--seed ignored: the workload has no generator");
    }
    if (memory_mode) set_json_path(doc, "sim.memory_mode", *memory_mode);
    return config_from_json(doc, std::filesystem::path(path).parent_path());
}

void print_plan(std::uint64_t M, std::uint64_t K, std::uint64_t N, int num, int dtype, const std::string &config,
                bool csv) {
    const GemmShape g{M, K, N, dtype};
    std::optional<Config> cfg;
    if (!config.empty()) cfg = load_config(config);
    if (csv) {
        std::cout << "strategy,feasible,input_bytes,weight_bytes,output_bytes,comm_bytes,max_hop,num_steps\n";
    } else {
        std::cout << fmt::format("GEMM M={} K={} N={} num={} dtype={}B\n", M, K, N, num, dtype);
        std::cout << fmt::format("{:<11} {:>12} {:>12} {:>12} {:>14} {:>7} {:>9}\n", "strategy", "input", "weight",
                                 "output", "comm", "max_hop", "steps");
    }
    for (auto s : {PartitionStrategy::kInputOnly, PartitionStrategy::kMn1d, PartitionStrategy::kK1d,
                   PartitionStrategy::kMnk2d}) {
        const int n = s == PartitionStrategy::kInputOnly ? 1 : num;
        if (!plan_feasible(s, g, n)) {
            if (csv)
                std::cout << to_string(s) << ",0,,,,,,\n";
            else
                std::cout << fmt::format("{:<11} infeasible\n", to_string(s));
            continue;
        }
        const auto plan = make_plan(s, g, n);
        CostBreakdown c;
        if (cfg && n > 1) {
            const auto strat = s == PartitionStrategy::kMnk2d ? PlacementStrategy::kMesh2d : PlacementStrategy::kRing;
            const auto pl = place(strat, cfg->chip, 1, n);
            c = analytic_cost(plan, dtype, &cfg->chip, &pl.mapping[0]);
        } else {
            c = analytic_cost(plan, dtype);
        }
        if (csv)
            std::cout << fmt::format("{},1,{},{},{},{},{},{}\n", to_string(s), c.input_bytes, c.weight_bytes,
                                     c.output_bytes, c.comm_bytes, c.max_hop, c.num_steps);
        else
            std::cout << fmt::format("{:<11} {:>12} {:>12} {:>12} {:>14} {:>7} {:>9}\n", to_string(s), c.input_bytes,
                                     c.weight_bytes, c.output_bytes, c.comm_bytes, c.max_hop, c.num_steps);
    }
}

}  // namespace

int main(int argc, char **argv) {
    if (const char *lvl = std::getenv("NPUSIM_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
    else spdlog::set_level(spdlog::level::warn);

    CLI::App app{"Discrete-event simulator for LLM serving on multi-core NPUs"};
    app.require_subcommand(1);

    std::string config, out = "out", memory_mode, dump_events;
    std::optional<std::uint64_t> seed;
    auto *run = app.add_subcommand("run", "simulate one config");
    run->add_option("--config", config, "config JSON")->required();
    run->add_option("--out", out, "output directory");
    run->add_option("--seed", seed, "override the workload generator seed");
    run->add_option("--memory-mode", memory_mode, "tlm or analytic")->check(CLI::IsMember({"tlm", "analytic"}));
    run->add_option("--dump-events", dump_events, "write every event as JSON lines to this file");

    int jobs = 0;
    auto *sweep = app.add_subcommand("sweep", "run the cartesian product of a sweep spec");
    sweep->add_option("--config", config, "sweep spec JSON")->required();
    sweep->add_option("--out", out, "output directory");
    sweep->add_option("--jobs", jobs, "worker threads (default: parallel_runs)");
    sweep->add_option("--memory-mode", memory_mode, "tlm or analytic")->check(CLI::IsMember({"tlm", "analytic"}));

    std::uint64_t M = 0, K = 0, N = 0;
    int num = 4, dtype = 2;
    bool csv = false;
    auto *plan = app.add_subcommand("plan", "print partition cost tables for a GEMM");
    plan->add_option("-M,--M", M)->required();
    plan->add_option("-K,--K", K)->required();
    plan->add_option("-N,--N", N)->required();
    plan->add_option("--num", num, "partition degree");
    plan->add_option("--dtype", dtype, "bytes per element");
    plan->add_option("--config", config, "chip config used for max_hop");
    plan->add_flag("--csv", csv, "machine-readable output");

    auto *val = app.add_subcommand("validate", "check a config and print its fingerprint");
    val->add_option("--config", config, "config JSON")->required();

    double ratio = 1.0, rate = 0.0, output_mean = 64.0, sigma = 0.3;
    std::uint32_t count = 100, max_len = 8192;
    std::uint64_t trace_seed = 0;
    std::string trace_out;
    auto *tg = app.add_subcommand("trace-gen", "write a synthetic JSON-Lines trace");
    tg->add_option("--ratio", ratio, "prompt:output mean ratio")->required();
    tg->add_option("--count", count, "requests");
    tg->add_option("--rate", rate, "arrivals per second, 0 = all at t=0");
    tg->add_option("--seed", trace_seed);
    tg->add_option("--output-mean", output_mean);
    tg->add_option("--sigma", sigma);
    tg->add_option("--max-len", max_len);
    tg->add_option("--out", trace_out, "file (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const Config cfg = load_with_overrides(config, seed,
                                                   memory_mode.empty() ? std::nullopt : std::optional(memory_mode));
            std::ofstream dump;
            if (!dump_events.empty()) dump.open(dump_events);
            const auto rep = run_simulation(cfg, dump_events.empty() ? nullptr : &dump);
            write_report(rep, out);
            const auto s = summary_json(rep);
            std::cout << fmt::format("{} requests, {} tokens, makespan {:.6f} s, throughput {:.1f} tok/s -> {}\n",
                                     s["metrics"]["completed"].get<std::size_t>(),
                                     s["metrics"]["tokens"].get<std::uint64_t>(),
                                     s["metrics"]["makespan_s"].get<double>(),
                                     s["metrics"]["throughput_tokens_per_s"].get<double>(), out);
        } else if (*sweep) {
            auto spec = load_sweep(config);
            if (!memory_mode.empty()) set_json_path(spec.base, "sim.memory_mode", memory_mode);
            for (std::size_t i = 0; i < spec.points(); ++i) sweep_point_config(spec, i);
            std::cout << fmt::format("sweep: {} points\n", spec.points());
            const auto res = run_sweep(spec, jobs, std::filesystem::path(out));
            std::filesystem::create_directories(out);
            std::ofstream csv_out(std::filesystem::path(out) / "sweep.csv");
            write_sweep_csv(res, csv_out);
            std::size_t failed = 0;
            for (const auto &r : res.rows) failed += r.ok ? 0 : 1;
            std::cout << fmt::format("{} ok, {} failed -> {}/sweep.csv\n", res.rows.size() - failed, failed, out);
            return failed ? kFailure : kOk;
        } else if (*plan) {
            print_plan(M, K, N, num, dtype, config, csv);
        } else if (*val) {
            const Config cfg = load_config(config);
            std::cout << fmt::format("ok {}\n", config_fingerprint(cfg));
        } else if (*tg) {
            TraceOptions opts;
            opts.output_mean = output_mean;
            opts.sigma = sigma;
            opts.max_len = max_len;
            const auto wl = synthesize_trace(ratio, count, rate, trace_seed, opts);
            if (trace_out.empty()) {
                write_trace_jsonl(wl, std::cout);
            } else {
                std::ofstream f(trace_out);
                write_trace_jsonl(wl, f);
            }
        }
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const InfeasibleError &e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kInfeasible;
    } catch (const AdmissionError &e) {
        std::cerr << "admission: " << e.what() << '\n';
        return kInfeasible;
    } catch (const LivelockError &e) {
        std::cerr << "livelock: " << e.what() << '\n';
        return kLivelock;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
