// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "npusim/report.hpp"

using namespace npusim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
    const fs::path p = fs::temp_directory_path() / ("npusim_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

nlohmann::json small_fused() {
    auto doc = read_json_file(fs::path(NPUSIM_CONFIG_DIR) / "smoke_fused.json");
    doc["workload"]["generator"]["count"] = 6;
    doc["sim"]["memory_mode"] = "analytic";
    return doc;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string &args) {
    const std::string cmd = std::string(NPUSIM_CLI) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Report, CsvEscapeRoundTrip) {
    const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", ""};
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv_escape(fields[i]);
    EXPECT_EQ(csv_split(line), fields);
}

TEST(Report, JsonPathCreatesObjects) {
    nlohmann::json doc = nlohmann::json::object();
    set_json_path(doc, "chip.core.systolic_dim", 64);
    set_json_path(doc, "chip.mesh_rows", 2);
    EXPECT_EQ(doc["chip"]["core"]["systolic_dim"], 64);
    EXPECT_EQ(doc["chip"]["mesh_rows"], 2);
}

TEST(Report, RequestsJsonlRoundTrip) {
    std::vector<RequestResult> rows{{0, 0.0, 0.001, 0.0002, 0.01, 128, 16}, {1, 0.5, std::nullopt, std::nullopt, std::nullopt, 7, 1}};
    std::stringstream ss;
    write_requests_jsonl(rows, ss);
    EXPECT_EQ(read_requests_jsonl(ss), rows);
}

TEST(Report, CountersAndLinksCsvRoundTrip) {
    std::vector<CoreCounters> cores(3);
    cores[1].matrix_busy = 5;
    cores[2].hbm_read = 1ULL << 40;
    cores[0].kv_spill_bytes = 77;
    std::stringstream a;
    write_counters_csv(cores, a);
    EXPECT_EQ(read_counters_csv(a), cores);

    std::vector<LinkStat> links{{0, 0, Dir::kEast, 12}, {1, 2, Dir::kNorth, 0}};
    std::stringstream b;
    write_links_csv(links, b);
    const auto back = read_links_csv(b);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].busy_cycles, 12u);
    EXPECT_EQ(back[1].dir, Dir::kNorth);
    EXPECT_EQ(back[1].y, 2);
}

TEST(Report, SummaryIsDeterministic) {
    const Config cfg = config_from_json(small_fused());
    const auto a = summary_json(run_simulation(cfg));
    const auto b = summary_json(run_simulation(cfg));
    EXPECT_EQ(a.dump(2), b.dump(2));
    EXPECT_EQ(a["fingerprint"], b["fingerprint"]);
    EXPECT_EQ(a["metrics"]["completed"], 6);
}

TEST(Report, WriteReportProducesAllFiles) {
    const auto dir = scratch("report");
    const auto rep = run_simulation(config_from_json(small_fused()));
    write_report(rep, dir);
    for (const char *f : {"summary.json", "requests.jsonl", "counters.csv", "links.csv", "timing.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    std::ifstream in(dir / "requests.jsonl");
    EXPECT_EQ(read_requests_jsonl(in), request_results(rep));
    std::ifstream cin(dir / "counters.csv");
    EXPECT_EQ(read_counters_csv(cin), rep.cores);
}

TEST(Sweep, NinePointsRerunIdentically) {
    nlohmann::json doc;
    doc["base"] = small_fused();
    doc["axes"] = {{{"key", "chip.core.systolic_dim"}, {"values", {32, 64, 128}}},
                   {{"key", "serving.chunk_size"}, {"values", {64, 128, 256}}}};
    const auto spec = sweep_from_json(doc);
    ASSERT_EQ(spec.points(), 9u);
    const auto first = run_sweep(spec, 1);
    ASSERT_EQ(first.rows.size(), 9u);
    for (const auto &r : first.rows) EXPECT_TRUE(r.ok) << r.error;
    EXPECT_EQ(first.rows[1].values, (std::vector<std::string>{"32", "128"}));
    const auto second = run_sweep(spec, 2);
    for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_EQ(first.rows[i].fingerprint, second.rows[i].fingerprint);
        EXPECT_EQ(first.rows[i].summary.dump(), second.rows[i].summary.dump());
    }
    std::stringstream csv;
    write_sweep_csv(first, csv);
    const auto back = read_sweep_csv(csv);
    ASSERT_EQ(back.rows.size(), 9u);
    EXPECT_EQ(back.keys, first.keys);
    EXPECT_EQ(back.rows[4].fingerprint, first.rows[4].fingerprint);
}

TEST(Sweep, UnknownKeyIsConfigError) {
    nlohmann::json doc;
    doc["base"] = small_fused();
    doc["axes"] = {{{"key", "chip.core.flux_capacitor"}, {"values", {1}}}};
    const auto spec = sweep_from_json(doc);
    EXPECT_THROW(sweep_point_config(spec, 0), ConfigError);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    auto doc = small_fused();
    std::ofstream(dir / "ok.json") << doc.dump(2);
    doc["chip"]["core"]["systolic_dim"] = 48;
    std::ofstream(dir / "bad.json") << doc.dump(2);
    std::ofstream(dir / "broken.json") << "{ \"chip\": ";

    EXPECT_EQ(cli("validate --config " + (dir / "ok.json").string()), 0);
    EXPECT_EQ(cli("validate --config " + (dir / "bad.json").string()), 2);
    EXPECT_EQ(cli("run --config " + (dir / "broken.json").string() + " --out " + (dir / "x").string()), 2);
    EXPECT_EQ(cli("plan -M 128 -K 1024 -N 1024 --num 4"), 0);

    const std::string run_a = "run --config " + (dir / "ok.json").string() + " --out " + (dir / "a").string();
    const std::string run_b = "run --config " + (dir / "ok.json").string() + " --out " + (dir / "b").string();
    ASSERT_EQ(cli(run_a), 0);
    ASSERT_EQ(cli(run_b), 0);
    EXPECT_EQ(slurp(dir / "a" / "summary.json"), slurp(dir / "b" / "summary.json"));
}
