// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/report.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace npusim {

using json = nlohmann::json;

RunReport run_simulation(const Config &config, std::ostream *event_dump) {
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.config = config;
    rep.fingerprint = config_fingerprint(config);
    ServingSimulator sim(config);
    if (event_dump) sim.set_event_dump(event_dump);
    sim.run();

    const Engine &eng = sim.engine();
    const Executor &ex = sim.executor();
    rep.requests = eng.metrics().requests();
    rep.metrics = record_metrics(rep.requests, chip_area(config.chip));
    rep.cores = eng.metrics().cores();
    for (CoreId c = 0; c < config.chip.num_cores(); ++c) {
        auto &cc = rep.cores[c];
        cc.noc_injected = ex.noc().injected(c);
        cc.noc_received = ex.noc().received(c);
        cc.hbm_read = ex.channel(c).bytes_read();
        cc.hbm_write = ex.channel(c).bytes_written();
        cc.hbm_busy = ex.channel(c).busy_cycles();
    }
    rep.instances = sim.instances();
    for (const auto &inst : rep.instances) {
        for (std::size_t s = 0; s < inst.stages.size(); ++s) {
            for (CoreId c : inst.stages[s]) {
                auto &cc = rep.cores[c];
                cc.kv_sram_high_water = Bytes(inst.kv_high_water_blocks[s]) * inst.kv_block_bytes[s];
                cc.kv_spill_bytes = inst.kv_spilled_bytes[s];
                cc.hbm_kv_high_water = inst.hbm_kv_high_water[s];
            }
        }
    }
    rep.links = ex.noc().link_utilization_report();
    rep.fused_log = sim.fused_log();
    rep.events = eng.events_processed();
    rep.end_cycle = eng.now();
    rep.kv_transfer_bytes = sim.kv_transfer_bytes();
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

namespace {

json opt(const std::optional<double> &v, double scale) { return v ? json(*v * scale) : json(nullptr); }

}  // namespace

json summary_json(const RunReport &rep) {
    const double f = rep.config.chip.core_frequency;
    const double sec = 1.0 / f;
    const auto &m = rep.metrics;
    json s;
    s["fingerprint"] = rep.fingerprint;
    s["mode"] = to_string(rep.config.serving.mode);
    s["memory_mode"] = to_string(rep.config.sim.memory_mode);
    s["metrics"] = {
        {"requests", m.requests},
        {"completed", m.completed},
        {"tokens", m.tokens},
        {"makespan_cycles", m.makespan},
        {"makespan_s", double(m.makespan) * sec},
        {"ttft_mean_s", opt(m.ttft_mean, sec)},
        {"ttft_p99_s", opt(m.ttft_p99, sec)},
        {"tbt_mean_s", opt(m.tbt_mean, sec)},
        {"e2e_mean_s", opt(m.e2e_mean, sec)},
        {"e2e_p99_s", opt(m.e2e_p99, sec)},
        {"throughput_tokens_per_s", m.throughput * f},
        {"throughput_per_area", m.throughput_per_area * f},
        {"chip_area", chip_area(rep.config.chip)},
    };
    Bytes noc = 0, rd = 0, wr = 0, spill = 0;
    for (const auto &c : rep.cores) {
        noc += c.noc_injected;
        rd += c.hbm_read;
        wr += c.hbm_write;
        spill += c.kv_spill_bytes;
    }
    s["traffic"] = {{"noc_bytes", noc},
                    {"hbm_read_bytes", rd},
                    {"hbm_write_bytes", wr},
                    {"kv_transfer_bytes", rep.kv_transfer_bytes},
                    {"kv_spill_bytes", spill}};
    json insts = json::array();
    for (const auto &inst : rep.instances) {
        json stages = json::array();
        for (std::size_t k = 0; k < inst.stages.size(); ++k) {
            const auto &L = inst.layouts[k];
            stages.push_back({{"cores", inst.stages[k]},
                              {"sram_activation_bytes", L.activation_bytes},
                              {"sram_temp_bytes", L.temp_buffer_bytes},
                              {"sram_kv_bytes", L.kv_bytes},
                              {"sram_weight_bytes", L.weight_resident_bytes},
                              {"kv_blocks", inst.kv_blocks[k]},
                              {"weight_stream_fraction", inst.weight_stream_fraction[k]}});
        }
        insts.push_back({{"role", inst.role}, {"tp", inst.tp}, {"pp", inst.pp}, {"stages", stages}});
    }
    s["instances"] = insts;
    s["fused_iterations"] = rep.fused_log.size();
    s["events"] = rep.events;
    s["end_cycle"] = rep.end_cycle;
    return s;
}

std::vector<RequestResult> request_results(const RunReport &rep) {
    const double sec = 1.0 / rep.config.chip.core_frequency;
    std::vector<RequestResult> out;
    for (const auto &r : rep.requests) {
        RequestResult row;
        row.id = r.id;
        row.arrival = double(r.arrival) * sec;
        if (!r.token_times.empty()) row.ttft = double(r.first_token() - r.arrival) * sec;
        if (auto t = request_tbt(r)) row.tbt_mean = *t * sec;
        if (r.done()) row.e2e = double(r.finish - r.arrival) * sec;
        row.prompt = r.prompt;
        row.output = r.output;
        out.push_back(row);
    }
    return out;
}

namespace {

void write_file(const std::filesystem::path &p, const std::string &text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write {}", p.string()));
    out << text;
}

std::optional<double> opt_num(const json &j, const char *k) {
    if (!j.contains(k) || j[k].is_null()) return std::nullopt;
    return j[k].get<double>();
}

}  // namespace

void write_requests_jsonl(const std::vector<RequestResult> &rows, std::ostream &out) {
    for (const auto &r : rows) {
        json j = {{"id", r.id},
                  {"arrival", r.arrival},
                  {"ttft", r.ttft ? json(*r.ttft) : json(nullptr)},
                  {"tbt_mean", r.tbt_mean ? json(*r.tbt_mean) : json(nullptr)},
                  {"e2e", r.e2e ? json(*r.e2e) : json(nullptr)},
                  {"prompt", r.prompt},
                  {"output", r.output}};
        out << j.dump() << '\n';
    }
}

std::vector<RequestResult> read_requests_jsonl(std::istream &in) {
    std::vector<RequestResult> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        RequestResult r;
        r.id = j.at("id").get<RequestId>();
        r.arrival = j.at("arrival").get<double>();
        r.ttft = opt_num(j, "ttft");
        r.tbt_mean = opt_num(j, "tbt_mean");
        r.e2e = opt_num(j, "e2e");
        r.prompt = j.at("prompt").get<std::uint32_t>();
        r.output = j.at("output").get<std::uint32_t>();
        rows.push_back(r);
    }
    return rows;
}

namespace {
const char *kCounterHeader =
    "core,matrix_busy,vector_busy,noc_injected,noc_received,sram_bytes,hbm_read,hbm_write,hbm_busy,"
    "kv_sram_high_water,kv_spill_bytes,hbm_kv_high_water";
}

void write_counters_csv(const std::vector<CoreCounters> &cores, std::ostream &out) {
    out << kCounterHeader << '\n';
    for (std::size_t i = 0; i < cores.size(); ++i) {
        const auto &c = cores[i];
        out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", i, c.matrix_busy, c.vector_busy, c.noc_injected,
                           c.noc_received, c.sram_bytes, c.hbm_read, c.hbm_write, c.hbm_busy, c.kv_sram_high_water,
                           c.kv_spill_bytes, c.hbm_kv_high_water);
    }
}

std::vector<CoreCounters> read_counters_csv(std::istream &in) {
    std::vector<CoreCounters> cores;
    std::string line;
    std::getline(in, line);
    if (line != kCounterHeader) throw Error("counters.csv: unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != 12) throw Error("counters.csv: expected 12 columns");
        auto u = [&](int i) { return std::stoull(f[i]); };
        CoreCounters c{u(1), u(2), u(3), u(4), u(5), u(6), u(7), u(8), u(9), u(10), u(11)};
        cores.push_back(c);
    }
    return cores;
}

void write_links_csv(const std::vector<LinkStat> &links, std::ostream &out) {
    out << "core_x,core_y,dir,busy_cycles\n";
    for (const auto &s : links) out << s.x << ',' << s.y << ',' << to_string(s.dir) << ',' << s.busy_cycles << '\n';
}

std::vector<LinkStat> read_links_csv(std::istream &in) {
    std::vector<LinkStat> links;
    std::string line;
    std::getline(in, line);
    if (line != "core_x,core_y,dir,busy_cycles") throw Error("links.csv: unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != 4) throw Error("links.csv: expected 4 columns");
        LinkStat s;
        s.x = std::stoi(f[0]);
        s.y = std::stoi(f[1]);
        const std::string d = f[2];
        s.dir = d == "N" ? Dir::kNorth : d == "S" ? Dir::kSouth : d == "E" ? Dir::kEast : Dir::kWest;
        if (d != "N" && d != "S" && d != "E" && d != "W") throw Error("links.csv: bad direction " + d);
        s.busy_cycles = std::stoull(f[3]);
        links.push_back(s);
    }
    return links;
}

json read_json_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open {}", path.string()));
    return json::parse(in);
}

void write_report(const RunReport &rep, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    write_file(dir / "summary.json", summary_json(rep).dump(2) + "\n");
    std::ostringstream req, cnt, lnk;
    write_requests_jsonl(request_results(rep), req);
    write_file(dir / "requests.jsonl", req.str());
    write_counters_csv(rep.cores, cnt);
    write_file(dir / "counters.csv", cnt.str());
    write_links_csv(rep.links, lnk);
    write_file(dir / "links.csv", lnk.str());
    const json timing = {{"wall_seconds", rep.wall_seconds}, {"events", rep.events}};
    write_file(dir / "timing.json", timing.dump(2) + "\n");
}

std::string csv_escape(const std::string &s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> csv_split(const std::string &line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

void set_json_path(json &doc, const std::string &path, const json &value) {
    json *node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError(path, "empty path component");
        if (!node->is_object()) throw ConfigError(path, "path crosses a non-object value");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

std::size_t SweepSpec::points() const {
    std::size_t n = 1;
    for (const auto &a : axes) n *= a.values.size();
    return n;
}

SweepSpec sweep_from_json(const json &doc, const std::filesystem::path &base_dir) {
    SweepSpec spec;
    spec.base_dir = base_dir;
    if (!doc.contains("base")) throw ConfigError("base", "sweep needs a base config");
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (it.key() != "base" && it.key() != "axes" && it.key() != "parallel_runs")
            throw ConfigError(it.key(), "unknown sweep key");
    if (doc["base"].is_string()) {
        std::filesystem::path p = doc["base"].get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        spec.base = read_json_file(p);
        spec.base_dir = p.parent_path();
    } else {
        spec.base = doc["base"];
    }
    if (doc.contains("axes")) {
        for (const auto &a : doc["axes"]) {
            SweepAxis axis;
            axis.key = a.at("key").get<std::string>();
            for (const auto &v : a.at("values")) axis.values.push_back(v);
            if (axis.values.empty()) throw ConfigError("axes." + axis.key, "needs at least one value");
            spec.axes.push_back(std::move(axis));
        }
    }
    spec.parallel_runs = doc.value("parallel_runs", 1);
    if (spec.parallel_runs < 1) throw ValidationError("parallel_runs", "must be >= 1");
    return spec;
}

SweepSpec load_sweep(const std::filesystem::path &path) {
    return sweep_from_json(read_json_file(path), path.parent_path());
}

namespace {

std::vector<std::size_t> point_digits(const SweepSpec &spec, std::size_t index) {
    std::vector<std::size_t> d(spec.axes.size());
    for (std::size_t k = spec.axes.size(); k-- > 0;) {
        d[k] = index % spec.axes[k].values.size();
        index /= spec.axes[k].values.size();
    }
    return d;
}

const char *kMetricColumns[] = {"completed",   "ttft_mean_s", "tbt_mean_s", "e2e_mean_s", "throughput_tokens_per_s",
                                "throughput_per_area", "makespan_s"};

}  // namespace

Config sweep_point_config(const SweepSpec &spec, std::size_t index) {
    json doc = spec.base;
    const auto d = point_digits(spec, index);
    for (std::size_t k = 0; k < spec.axes.size(); ++k) set_json_path(doc, spec.axes[k].key, spec.axes[k].values[d[k]]);
    return config_from_json(doc, spec.base_dir);
}

SweepResult run_sweep(const SweepSpec &spec, int jobs, const std::optional<std::filesystem::path> &out_dir) {
    SweepResult res;
    for (const auto &a : spec.axes) res.keys.push_back(a.key);
    const std::size_t n = spec.points();
    res.rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        res.rows[i].index = i;
        const auto d = point_digits(spec, i);
        for (std::size_t k = 0; k < spec.axes.size(); ++k) res.rows[i].values.push_back(spec.axes[k].values[d[k]].dump());
    }
    spdlog::info("sweep: {} points", n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            SweepRow &row = res.rows[i];
            try {
                const Config cfg = sweep_point_config(spec, i);
                row.fingerprint = config_fingerprint(cfg);
                const auto rep = run_simulation(cfg);
                row.summary = summary_json(rep);
                row.ok = true;
                if (out_dir) write_report(rep, *out_dir / fmt::format("{:04}-{}", i, row.fingerprint));
            } catch (const std::exception &e) {
                row.ok = false;
                row.error = e.what();
                spdlog::warn("sweep point {} failed: {}", i, e.what());
            }
        }
    };
    const int threads = std::max(1, jobs > 0 ? jobs : spec.parallel_runs);
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto &t : pool) t.join();
    return res;
}

void write_sweep_csv(const SweepResult &res, std::ostream &out) {
    std::vector<std::string> header{"index"};
    header.insert(header.end(), res.keys.begin(), res.keys.end());
    header.insert(header.end(), {"fingerprint", "status", "error"});
    for (const char *m : kMetricColumns) header.push_back(m);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_escape(header[i]);
    out << '\n';
    for (const auto &row : res.rows) {
        std::vector<std::string> f{std::to_string(row.index)};
        f.insert(f.end(), row.values.begin(), row.values.end());
        f.push_back(row.fingerprint);
        f.push_back(row.ok ? "ok" : "error");
        f.push_back(row.error);
        for (const char *m : kMetricColumns) {
            if (row.ok && row.summary["metrics"].contains(m) && !row.summary["metrics"][m].is_null())
                f.push_back(row.summary["metrics"][m].dump());
            else
                f.push_back("");
        }
        for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << csv_escape(f[i]);
        out << '\n';
    }
}

SweepResult read_sweep_csv(std::istream &in) {
    SweepResult res;
    std::string line;
    if (!std::getline(in, line)) throw Error("sweep csv: empty");
    const auto header = csv_split(line);
    const std::size_t metrics = std::size(kMetricColumns);
    if (header.size() < 4 + metrics) throw Error("sweep csv: short header");
    const std::size_t nkeys = header.size() - 4 - metrics;
    res.keys.assign(header.begin() + 1, header.begin() + 1 + nkeys);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != header.size()) throw Error("sweep csv: ragged row");
        SweepRow row;
        row.index = std::stoull(f[0]);
        row.values.assign(f.begin() + 1, f.begin() + 1 + nkeys);
        row.fingerprint = f[1 + nkeys];
        row.ok = f[2 + nkeys] == "ok";
        row.error = f[3 + nkeys];
        if (row.ok) {
            json m = json::object();
            for (std::size_t k = 0; k < metrics; ++k) {
                const auto &cell = f[4 + nkeys + k];
                m[kMetricColumns[k]] = cell.empty() ? json(nullptr) : json::parse(cell);
            }
            row.summary = {{"metrics", m}};
        }
        res.rows.push_back(std::move(row));
    }
    return res;
}

}  // namespace npusim
