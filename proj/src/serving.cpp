// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The npusim Authors

#include "npusim/serving.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "npusim/placement.hpp"

namespace npusim {

// ---------------------------------------------------------------------------
// Core partitioning
// ---------------------------------------------------------------------------

namespace {

// Cores of the given rows, boustrophedon so consecutive cores are adjacent.
std::vector<CoreId> snake_rows(const ChipConfig &chip, const std::vector<int> &rows, const std::set<CoreId> &keep) {
    std::vector<CoreId> out;
    bool reverse = false;
    for (int r : rows) {
        std::vector<CoreId> row;
        for (int c = 0; c < chip.mesh_cols; ++c)
            if (keep.count(chip.id_of(r, c))) row.push_back(chip.id_of(r, c));
        if (row.empty()) continue;
        if (reverse) std::reverse(row.begin(), row.end());
        out.insert(out.end(), row.begin(), row.end());
        reverse = !reverse;
    }
    return out;
}

std::pair<int, int> split_by_ratio(int total, int p, int d) {
    return {static_cast<int>(std::int64_t(total) * p / (p + d)), static_cast<int>(std::int64_t(total) * d / (p + d))};
}

}  // namespace

PdPartition partition_cores(const ServingConfig &s, const ChipConfig &chip) {
    PdPartition pd;
    pd.mode = s.mode;
    pd.flavor = s.flavor;
    pd.prefill = s.prefill;
    pd.decode = s.decode;
    if (s.mode == ServingMode::kFused) {
        pd.prefill = pd.decode = s.fused;
        pd.fused_cores = snake_order(chip);
        if (int(pd.fused_cores.size()) < s.fused.tp * s.fused.pp)
            throw ValidationError("serving.fused", fmt::format("tp x pp = {} exceeds the {} cores", s.fused.tp * s.fused.pp,
                                                               pd.fused_cores.size()));
        return pd;
    }
    if (s.ratio_prefill <= 0 || s.ratio_decode <= 0)
        throw ValidationError("serving.ratio", "disaggregated serving needs both prefill and decode cores");
    const int R = chip.mesh_rows, C = chip.mesh_cols;
    std::set<CoreId> used;

    if (s.flavor == PlacementFlavor::kPpPrioritized) {
        const auto [P, D] = split_by_ratio(R * C, s.ratio_prefill, s.ratio_decode);
        std::vector<int> order;
        for (int lo = 0, hi = R - 1; lo <= hi; ++lo, --hi) {
            order.push_back(lo);
            if (hi != lo) order.push_back(hi);
        }
        std::vector<CoreId> seq;
        for (int r : order)
            for (int c = 0; c < C; ++c) seq.push_back(chip.id_of(r, c));
        std::set<CoreId> pre(seq.begin(), seq.begin() + P), dec(seq.end() - D, seq.end());
        std::vector<int> top, bottom, all;
        for (int r = 0; r < R; ++r) (r < (R + 1) / 2 ? top : bottom).push_back(r);
        std::reverse(bottom.begin(), bottom.end());
        std::vector<int> pre_rows = top;
        pre_rows.insert(pre_rows.end(), bottom.begin(), bottom.end());
        for (int r = 0; r < R; ++r) all.push_back(r);
        PdGroup g;
        g.prefill_cores = snake_rows(chip, pre_rows, pre);
        g.decode_cores = snake_rows(chip, all, dec);
        pd.groups.push_back(std::move(g));
    } else {
        int gr = 0, gc = 0;
        for (int a = 1; a * a <= s.dp; ++a) {
            if (s.dp % a) continue;
            const int b = s.dp / a;
            if (R % a == 0 && C % b == 0) gr = a, gc = b;
            else if (R % b == 0 && C % a == 0) gr = b, gc = a;
        }
        if (gr == 0)
            throw ValidationError("serving.dp", fmt::format("dp={} does not tile a {}x{} mesh", s.dp, R, C));
        const int br = R / gr, bc = C / gc;
        for (int i = 0; i < gr; ++i) {
            for (int j = 0; j < gc; ++j) {
                std::vector<CoreId> cells;
                for (int r = 0; r < br; ++r) {
                    std::vector<CoreId> row;
                    for (int c = 0; c < bc; ++c) row.push_back(chip.id_of(i * br + r, j * bc + c));
                    if (r % 2) std::reverse(row.begin(), row.end());
                    cells.insert(cells.end(), row.begin(), row.end());
                }
                const auto [P, D] = split_by_ratio(static_cast<int>(cells.size()), s.ratio_prefill, s.ratio_decode);
                PdGroup g;
                g.prefill_cores.assign(cells.begin(), cells.begin() + P);
                g.decode_cores.assign(cells.end() - D, cells.end());
                pd.groups.push_back(std::move(g));
            }
        }
    }

    for (const auto &g : pd.groups) {
        pd.prefill_cores.insert(pd.prefill_cores.end(), g.prefill_cores.begin(), g.prefill_cores.end());
        pd.decode_cores.insert(pd.decode_cores.end(), g.decode_cores.begin(), g.decode_cores.end());
    }
    used.insert(pd.prefill_cores.begin(), pd.prefill_cores.end());
    used.insert(pd.decode_cores.begin(), pd.decode_cores.end());
    for (CoreId c = 0; c < chip.num_cores(); ++c)
        if (!used.count(c)) pd.spare_cores.push_back(c);

    auto instances = [&](bool prefill) {
        const Parallelism &p = prefill ? s.prefill : s.decode;
        int n = 0;
        for (const auto &g : pd.groups) n += int((prefill ? g.prefill_cores : g.decode_cores).size()) / (p.tp * p.pp);
        return n;
    };
    if (instances(true) == 0)
        throw ValidationError("serving.ratio", fmt::format("prefill cores cannot host one tp={} x pp={} instance",
                                                           s.prefill.tp, s.prefill.pp));
    if (instances(false) == 0)
        throw ValidationError("serving.ratio", fmt::format("decode cores cannot host one tp={} x pp={} instance",
                                                           s.decode.tp, s.decode.pp));
    return pd;
}

ParallelismChoice decide_parallelism(StageKind stage, const ModelConfig &model, int cores, int tp_hint,
                                     int pp_candidate, int max_tbt_multiplier) {
    ParallelismChoice c;
    if (cores <= 1) {
        c.note = "single core";
        return c;
    }
    auto tp_ok = [&](int tp) { return model.hidden_size % tp == 0 && model.num_q_heads % tp == 0; };
    if (stage == StageKind::kPrefill) {
        c.tp = std::clamp(tp_hint, 1, cores);
        while (c.tp > 1 && !tp_ok(c.tp)) --c.tp;
        for (int pp = 1; pp <= model.num_layers; ++pp)
            if (model.num_layers % pp == 0 && pp * c.tp <= cores) c.pp = pp;
        c.tbt_multiplier = 1;
        c.note = fmt::format("deepest layer-divisor pipeline with tp={}", c.tp);
        return c;
    }
    int pp = std::max(1, pp_candidate);
    if (model.num_layers % pp != 0 || pp > cores) pp = 1;
    if (pp > max_tbt_multiplier) {
        c.note = fmt::format("pp={} rejected: TBT multiplier {} exceeds {}", pp, pp, max_tbt_multiplier);
        pp = 1;
    }
    int tp = 1;
    for (int t = 1; t * pp <= cores; ++t)
        if (tp_ok(t)) tp = t;
    c.tp = tp;
    c.pp = pp;
    c.tbt_multiplier = pp;
    if (c.note.empty()) c.note = fmt::format("tensor parallel first, TBT multiplier {}", pp);
    return c;
}

// ---------------------------------------------------------------------------
// Fused budget
// ---------------------------------------------------------------------------

IterationPlan build_fused_iteration(const std::vector<RequestId> &decodes,
                                    const std::vector<PrefillCandidate> &prefills, const FusionBudget &b) {
    IterationPlan plan;
    plan.budget = b.budget;
    for (RequestId r : decodes) {
        if (plan.units + b.decode_cost_units <= b.budget) {
            plan.decodes.push_back(r);
            plan.units += b.decode_cost_units;
        } else {
            plan.deferred.push_back(r);
        }
    }
    if (!plan.deferred.empty()) return plan;
    for (const auto &p : prefills) {
        if (p.remaining == 0) continue;
        if (plan.units + b.prefill_cost_units > b.budget) break;
        plan.chunks.push_back({p.request, p.progress, std::min<std::uint64_t>(b.chunk_size, p.remaining)});
        plan.units += b.prefill_cost_units;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

std::optional<double> request_tbt(const RequestRecord &r) {
    if (r.token_times.size() < 2) return std::nullopt;
    return double(r.token_times.back() - r.token_times.front()) / double(r.token_times.size() - 1);
}

namespace {

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * double(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace

ServingMetrics record_metrics(const std::vector<RequestRecord> &requests, double area) {
    ServingMetrics m;
    m.requests = requests.size();
    std::vector<double> ttft, e2e;
    double gaps = 0, gap_count = 0;
    for (const auto &r : requests) {
        m.tokens += r.token_times.size();
        if (!r.token_times.empty()) {
            ttft.push_back(double(r.first_token() - r.arrival));
            m.makespan = std::max(m.makespan, r.token_times.back());
        }
        if (r.token_times.size() >= 2) {
            gaps += double(r.token_times.back() - r.token_times.front());
            gap_count += double(r.token_times.size() - 1);
        }
        if (r.done()) {
            ++m.completed;
            e2e.push_back(double(r.finish - r.arrival));
            m.makespan = std::max(m.makespan, r.finish);
        }
    }
    auto mean = [](const std::vector<double> &v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
    if (!ttft.empty()) {
        m.ttft_mean = mean(ttft);
        m.ttft_p99 = percentile(ttft, 0.99);
    }
    if (!e2e.empty()) {
        m.e2e_mean = mean(e2e);
        m.e2e_p99 = percentile(e2e, 0.99);
    }
    if (gap_count > 0) m.tbt_mean = gaps / gap_count;
    if (m.makespan > 0) m.throughput = double(m.tokens) / double(m.makespan);
    if (area > 0) m.throughput_per_area = m.throughput / area;
    return m;
}

std::string to_string(RequestPhase p) {
    switch (p) {
        case RequestPhase::kQueued: return "queued";
        case RequestPhase::kPrefilling: return "prefilling";
        case RequestPhase::kAwaitingKvTransfer: return "awaiting-kv-transfer";
        case RequestPhase::kDecoding: return "decoding";
        case RequestPhase::kDone: return "done";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

namespace {
enum Role { kPrefillRole, kDecodeRole, kFusedRole };
const char *role_name(int r) { return r == kPrefillRole ? "prefill" : r == kDecodeRole ? "decode" : "fused"; }
}  // namespace

struct ServingSimulator::Stage {
    std::vector<CoreId> ranks;
    int layers = 1;
    bool lm_head = false;
    SramLayout layout;
    Bytes kv_per_token = 0;  // per core
    double stream_fraction = 1.0;
    std::unique_ptr<KvBlockTable> kv;
    std::deque<std::uint64_t> queue;
    bool busy = false;
    Bytes pending_writes = 0;  // KV write-backs per core not yet issued
};

struct ServingSimulator::Instance {
    int role = kPrefillRole;
    int group = 0;
    int tp = 1, pp = 1;
    std::vector<Stage> stages;
    int load = 0;  // prefill: requests assigned and not finished
    // decode
    std::vector<std::vector<RequestId>> groups;
    std::vector<bool> group_busy;
    int live = 0;
    // fused
    std::vector<RequestId> decoding;
    std::deque<RequestId> prefilling;
    bool iterating = false;
};

struct ServingSimulator::Item {
    enum Type { kPrefill, kDecode, kFused, kTransfer } type = kPrefill;
    int instance = 0;
    int stage = 0;
    int group = -1;
    std::vector<RequestId> requests;
    IterationPlan plan;
    std::size_t log_index = 0;
    Cycle start = 0;
};

ServingSimulator::ServingSimulator(const Config &config) : cfg_(config) {
    id_ = engine_.add_component(this);
    executor_ = std::make_unique<Executor>(engine_, cfg_.chip, cfg_.sim.memory_mode, cfg_.sim.record_transactions);
    engine_.metrics().resize_cores(cfg_.chip.num_cores());
    engine_.set_horizon(cfg_.sim.horizon_cycles);
    engine_.set_stuck_probe([this] { return stuck_report(); });
    partition_ = partition_cores(cfg_.serving, cfg_.chip);
    build_instances();

    const double f = cfg_.chip.core_frequency;
    for (std::size_t i = 0; i < cfg_.workload.requests.size(); ++i) {
        const auto &spec = cfg_.workload.requests[i];
        Request r;
        r.id = static_cast<RequestId>(i);
        r.arrival = static_cast<Cycle>(std::llround(spec.arrival_s * f));
        r.prompt_len = spec.prompt;
        r.output_len = spec.output;
        requests_.push_back(r);
        engine_.metrics().add_request(r.id, r.arrival, r.prompt_len, r.output_len);
    }

    // Requests that could never be admitted would stall the run forever.
    for (const auto &r : requests_) {
        for (const auto &inst : instances_) {
            const std::uint64_t tokens = inst->role == kPrefillRole ? r.prompt_len : r.prompt_len + r.output_len;
            for (const auto &st : inst->stages) {
                if (tokens * st.kv_per_token > st.kv->ring().capacity())
                    throw InfeasibleError(fmt::format("request {} needs {} bytes of KV per core but the {} HBM ring "
                                                      "holds {}",
                                                      r.id, tokens * st.kv_per_token, role_name(inst->role),
                                                      st.kv->ring().capacity()));
            }
        }
    }
}

ServingSimulator::~ServingSimulator() = default;

void ServingSimulator::make_instance(int role, const std::vector<CoreId> &cores, const Parallelism &par, int group) {
    const ModelConfig &m = cfg_.model;
    auto inst = std::make_unique<Instance>();
    inst->role = role;
    inst->group = group;
    inst->tp = par.tp;
    inst->pp = par.pp;
    std::uint32_t max_prompt = 1, max_total = 1;
    for (const auto &r : cfg_.workload.requests) {
        max_prompt = std::max(max_prompt, r.prompt);
        max_total = std::max(max_total, r.prompt + r.output);
    }
    const auto &sv = cfg_.serving;
    for (int s = 0; s < par.pp; ++s) {
        Stage st;
        std::vector<CoreId> slice(cores.begin() + s * par.tp, cores.begin() + (s + 1) * par.tp);
        st.ranks = order_group(cfg_.chip, slice, sv.placement);
        st.layers = m.num_layers / par.pp;
        st.lm_head = s == par.pp - 1;
        StageShape shape;
        shape.tp = par.tp;
        shape.layers = st.layers;
        shape.lm_head = st.lm_head;
        if (role == kPrefillRole) {
            shape.micro_batch = 1;
            shape.max_seq = max_prompt;
            shape.rows = std::min<std::uint32_t>(max_prompt, sv.chunk_size);
        } else if (role == kDecodeRole) {
            shape.micro_batch = sv.max_batch;
            shape.max_seq = max_total;
            shape.rows = sv.max_batch;
        } else {
            shape.micro_batch = sv.max_batch;
            shape.max_seq = max_total;
            shape.rows = std::max<std::uint32_t>(sv.chunk_size, sv.max_batch);
        }
        shape.kv_fraction = sv.kv_sram_fraction;
        const CoreConfig &core = cfg_.chip.core(st.ranks.front());
        st.layout = plan_sram_layout(m, core, shape);
        st.kv_per_token = stage_kv_bytes_per_token(m, shape);
        const Bytes weights = stage_weight_bytes(m, shape);
        st.stream_fraction = weights ? 1.0 - double(st.layout.weight_resident_bytes) / double(weights) : 0.0;
        if (weights > core.hbm_capacity)
            throw InfeasibleError(fmt::format("stage weights of {} bytes per core exceed HBM capacity {}", weights,
                                              core.hbm_capacity));
        const Bytes block = Bytes(kDefaultBlockTokens) * st.kv_per_token;
        const auto blocks = static_cast<std::uint32_t>(block ? st.layout.kv_bytes / block : 0);
        st.kv = std::make_unique<KvBlockTable>(blocks, kDefaultBlockTokens, st.kv_per_token,
                                               core.hbm_capacity - weights);
        inst->stages.push_back(std::move(st));
    }
    if (role == kDecodeRole) {
        inst->groups.assign(par.pp, {});
        inst->group_busy.assign(par.pp, false);
    }
    instances_.push_back(std::move(inst));
}

void ServingSimulator::build_instances() {
    const auto &sv = cfg_.serving;
    if (partition_.mode == ServingMode::kFused) {
        const int per = sv.fused.tp * sv.fused.pp;
        for (std::size_t i = 0; i + per <= partition_.fused_cores.size(); i += per)
            make_instance(kFusedRole, {partition_.fused_cores.begin() + i, partition_.fused_cores.begin() + i + per},
                          sv.fused, 0);
        budget_.budget = sv.budget_per_core * per;
        budget_.chunk_size = sv.chunk_size;
        budget_.prefill_cost_units = sv.prefill_cost_units;
        if (budget_.budget < budget_.prefill_cost_units)
            throw ValidationError("serving.budget_per_core",
                                  fmt::format("instance budget {} cannot fit one prefill chunk of {} units",
                                              budget_.budget, budget_.prefill_cost_units));
        return;
    }
    for (int role : {kPrefillRole, kDecodeRole}) {
        const Parallelism &par = role == kPrefillRole ? sv.prefill : sv.decode;
        const int per = par.tp * par.pp;
        for (std::size_t g = 0; g < partition_.groups.size(); ++g) {
            const auto &cores = role == kPrefillRole ? partition_.groups[g].prefill_cores
                                                     : partition_.groups[g].decode_cores;
            for (std::size_t i = 0; i + per <= cores.size(); i += per)
                make_instance(role, {cores.begin() + i, cores.begin() + i + per}, par, static_cast<int>(g));
        }
    }
}

std::vector<InstanceInfo> ServingSimulator::instances() const {
    std::vector<InstanceInfo> out;
    for (const auto &inst : instances_) {
        InstanceInfo info;
        info.role = role_name(inst->role);
        info.tp = inst->tp;
        info.pp = inst->pp;
        for (const auto &st : inst->stages) {
            info.stages.push_back(st.ranks);
            info.layouts.push_back(st.layout);
            info.kv_blocks.push_back(st.kv->total_blocks());
            info.kv_block_bytes.push_back(st.kv->block_bytes());
            info.kv_high_water_blocks.push_back(st.kv->high_water_blocks());
            info.kv_spilled_bytes.push_back(st.kv->spilled_bytes());
            info.hbm_kv_high_water.push_back(st.kv->ring().high_water_bytes());
            info.weight_stream_fraction.push_back(st.stream_fraction);
        }
        out.push_back(std::move(info));
    }
    return out;
}

std::string ServingSimulator::event_name(int kind) const { return kind == kArrival ? "arrival" : std::to_string(kind); }

void ServingSimulator::run() {
    if (!requests_.empty()) engine_.schedule(requests_.front().arrival, id_, kArrival, 0);
    engine_.run();
    std::size_t unfinished = 0;
    for (const auto &r : requests_)
        if (r.phase != RequestPhase::kDone) ++unfinished;
    if (unfinished) {
        std::string msg = fmt::format("event queue drained with {} unfinished requests", unfinished);
        for (const auto &line : stuck_report()) msg += "\n  " + line;
        throw LivelockError(msg);
    }
}

std::vector<std::string> ServingSimulator::stuck_report() const {
    std::vector<std::string> out;
    for (const auto &r : requests_) {
        if (r.phase == RequestPhase::kDone) continue;
        out.push_back(fmt::format("request {} phase={} progress={}/{} generated={}/{}", r.id, to_string(r.phase),
                                  r.progress, r.prompt_len, r.generated, r.output_len));
        if (out.size() >= 16) break;
    }
    return out;
}

void ServingSimulator::handle(const SimEvent &ev) {
    if (ev.kind != kArrival) throw std::logic_error("scheduler: unknown event");
    const auto id = static_cast<RequestId>(ev.payload);
    if (id + 1 < requests_.size()) engine_.schedule(requests_[id + 1].arrival, id_, kArrival, id + 1);
    on_arrival(id);
}

void ServingSimulator::set_phase(Request &r, RequestPhase p) {
    if (static_cast<int>(p) <= static_cast<int>(r.phase))
        throw std::logic_error(fmt::format("request {}: illegal phase change {} -> {}", r.id, to_string(r.phase),
                                           to_string(p)));
    transitions_.insert({r.phase, p});
    r.phase = p;
}

std::uint64_t ServingSimulator::new_item() { return next_item_++; }

void ServingSimulator::on_arrival(RequestId id) {
    Request &r = requests_[id];
    int best = -1;
    auto load = [&](const Instance &in) {
        return in.role == kFusedRole ? int(in.decoding.size() + in.prefilling.size()) : in.load;
    };
    const int want = partition_.mode == ServingMode::kFused ? kFusedRole : kPrefillRole;
    for (int i = 0; i < int(instances_.size()); ++i) {
        if (instances_[i]->role != want) continue;
        if (best < 0 || load(*instances_[i]) < load(*instances_[best])) best = i;
    }
    r.instance = best;
    Instance &inst = *instances_[best];
    if (want == kFusedRole) {
        inst.prefilling.push_back(id);
        kick_fused(best);
        return;
    }
    ++inst.load;
    const auto item = new_item();
    Item it;
    it.type = Item::kPrefill;
    it.instance = best;
    it.requests = {id};
    items_[item] = std::move(it);
    inst.stages[0].queue.push_back(item);
    try_start(best, 0);
}

void ServingSimulator::try_start(int i, int s) {
    Stage &st = instances_[i]->stages[s];
    if (st.busy || st.queue.empty()) return;
    const Item &it = items_.at(st.queue.front());
    if (it.type == Item::kPrefill) {
        const Request &r = requests_[it.requests.front()];
        if (!st.kv->has(r.id) && !st.kv->can_admit(r.prompt_len)) return;  // waits for a transfer to free HBM
    }
    const auto item = st.queue.front();
    st.queue.pop_front();
    st.busy = true;
    start_item(i, s, item);
}

void ServingSimulator::start_item(int i, int s, std::uint64_t item_id) {
    Instance &inst = *instances_[i];
    Stage &st = inst.stages[s];
    Item &it = items_.at(item_id);
    it.stage = s;
    if (s == 0) it.start = engine_.now();
    const Bytes per_layer = st.kv_per_token / std::max(1, st.layers);

    std::vector<SeqWork> seqs;
    auto append = [&](RequestId id, std::uint64_t tokens) {
        const auto res = st.kv->kv_append(id, tokens);
        for (const auto &sp : res.spills) st.pending_writes += sp.bytes;
        st.pending_writes += res.hbm_write_bytes;
    };
    auto add_seq = [&](RequestId id, std::uint64_t tokens, std::uint64_t kv_len, Phase ph, bool emits) {
        SeqWork w;
        w.request = id;
        w.new_tokens = tokens;
        w.kv_len = kv_len;
        w.phase = ph;
        w.hbm_kv_bytes = st.kv->chain(id).hbm_tokens * per_layer;
        w.emits_token = emits;
        seqs.push_back(w);
    };

    switch (it.type) {
        case Item::kPrefill: {
            Request &r = requests_[it.requests.front()];
            if (s == 0) set_phase(r, RequestPhase::kPrefilling);
            st.kv->admit(r.id, r.prompt_len);
            append(r.id, r.prompt_len);
            add_seq(r.id, r.prompt_len, r.prompt_len, Phase::kPrefill, true);
            break;
        }
        case Item::kDecode:
            for (RequestId id : it.requests) {
                const Request &r = requests_[id];
                append(id, 1);
                add_seq(id, 1, std::uint64_t(r.prompt_len) + r.generated, Phase::kDecode, true);
            }
            break;
        case Item::kFused:
            for (RequestId id : it.plan.decodes) {
                const Request &r = requests_[id];
                append(id, 1);
                add_seq(id, 1, std::uint64_t(r.prompt_len) + r.generated, Phase::kDecode, true);
            }
            for (const auto &c : it.plan.chunks) {
                append(c.request, c.tokens);
                add_seq(c.request, c.tokens, c.offset + c.tokens, Phase::kPrefill,
                        c.offset + c.tokens == requests_[c.request].prompt_len);
            }
            break;
        case Item::kTransfer: throw std::logic_error("transfer items do not run on stages");
    }

    TaskGraph g;
    StageSpec spec;
    spec.model = &cfg_.model;
    spec.chip = &cfg_.chip;
    spec.ranks = st.ranks;
    spec.layers = st.layers;
    spec.lm_head = st.lm_head;
    spec.stream_fraction = st.stream_fraction;
    spec.strategy = cfg_.serving.partition;
    if (st.pending_writes > 0) {
        for (CoreId c : st.ranks) g.dma(c, MemKind::kWrite, st.pending_writes, {});
        st.pending_writes = 0;
    }
    const auto exits = lowerer_.lower(g, spec, seqs, std::vector<std::vector<std::uint32_t>>(st.ranks.size()));
    if (s + 1 < inst.pp) {
        std::uint64_t T = 0;
        for (const auto &w : seqs) T += w.new_tokens;
        const Bytes bytes = ceil_div(T * std::uint64_t(cfg_.model.hidden_size) * cfg_.model.dtype_bytes,
                                     st.ranks.size());
        const auto &next = inst.stages[s + 1].ranks;
        for (std::size_t r = 0; r < st.ranks.size(); ++r)
            g.send(st.ranks[r], next[r % next.size()], bytes, NocTag::kActivation, {exits[r]});
    }
    job_items_[executor_->submit(std::move(g), this)] = item_id;
}

void ServingSimulator::on_job_done(std::uint64_t job, Cycle t) {
    const auto item = job_items_.at(job);
    job_items_.erase(job);
    if (items_.at(item).type == Item::kTransfer) {
        transfer_done(item, t);
    } else {
        item_done(item, t);
    }
}

void ServingSimulator::item_done(std::uint64_t item_id, Cycle t) {
    Item &it = items_.at(item_id);
    const int i = it.instance;
    const int s = it.stage;
    Instance &inst = *instances_[i];
    inst.stages[s].busy = false;
    if (s + 1 < inst.pp) {
        inst.stages[s + 1].queue.push_back(item_id);
        try_start(i, s + 1);
    } else {
        switch (it.type) {
            case Item::kPrefill: prefill_done(it, t); break;
            case Item::kDecode: decode_done(it, t); break;
            case Item::kFused: fused_done(it, t); break;
            case Item::kTransfer: break;
        }
        items_.erase(item_id);
    }
    try_start(i, s);
}

void ServingSimulator::finish_request(Request &r, Cycle t) {
    engine_.metrics().record_finish(r.id, t);
    set_phase(r, RequestPhase::kDone);
}

void ServingSimulator::prefill_done(Item &it, Cycle t) {
    Request &r = requests_[it.requests.front()];
    Instance &inst = *instances_[it.instance];
    --inst.load;
    r.progress = r.prompt_len;
    r.generated = 1;
    engine_.metrics().record_token(r.id, t);
    if (r.output_len <= 1) {
        for (auto &st : inst.stages) st.kv->kv_release(r.id);
        finish_request(r, t);
        for (int s = 0; s < inst.pp; ++s) try_start(it.instance, s);
        return;
    }
    set_phase(r, RequestPhase::kAwaitingKvTransfer);
    awaiting_transfer_.push_back(r.id);
    try_transfers();
}

void ServingSimulator::try_transfers() {
    const ModelConfig &m = cfg_.model;
    while (!awaiting_transfer_.empty()) {
        Request &r = requests_[awaiting_transfer_.front()];
        const Instance &src = *instances_[r.instance];
        const std::uint64_t tokens = std::uint64_t(r.prompt_len) + r.output_len;
        int best = -1;
        auto better = [&](int a, int b) {
            const bool sa = instances_[a]->group == src.group, sb = instances_[b]->group == src.group;
            if (sa != sb) return sa;
            return instances_[a]->live < instances_[b]->live;
        };
        for (int i = 0; i < int(instances_.size()); ++i) {
            const Instance &d = *instances_[i];
            if (d.role != kDecodeRole || d.live >= cfg_.serving.max_batch) continue;
            bool fits = true;
            for (const auto &st : d.stages) fits = fits && st.kv->can_admit(tokens);
            if (!fits) continue;
            if (best < 0 || better(i, best)) best = i;
        }
        if (best < 0) return;  // waits; prefill-side KV stays put
        awaiting_transfer_.pop_front();
        Instance &dst = *instances_[best];
        ++dst.live;
        r.decode_instance = best;
        for (auto &st : dst.stages) st.kv->admit(r.id, tokens);

        // Per layer, shards move between the TP ranks of the owning stages,
        // split at the granularity of both sides.
        const int tp_p = src.tp, tp_d = dst.tp;
        const int L = std::lcm(tp_p, tp_d);
        const Bytes per_layer = std::uint64_t(r.prompt_len) * 2 * m.num_kv_heads * m.head_dim * m.dtype_bytes;
        std::map<std::pair<CoreId, CoreId>, Bytes> flows;
        for (int layer = 0; layer < m.num_layers; ++layer) {
            const Stage &ps = src.stages[layer / (m.num_layers / src.pp)];
            const Stage &ds = dst.stages[layer / (m.num_layers / dst.pp)];
            for (int piece = 0; piece < L; ++piece) {
                const Bytes bytes = per_layer / L + (Bytes(piece) < per_layer % L ? 1 : 0);
                flows[{ps.ranks[piece / (L / tp_p)], ds.ranks[piece / (L / tp_d)]}] += bytes;
            }
        }
        TaskGraph g;
        for (const auto &[pair, bytes] : flows) {
            g.send(pair.first, pair.second, bytes, NocTag::kKvTransfer, {});
            kv_transfer_bytes_ += bytes;
        }
        const auto item = new_item();
        Item it;
        it.type = Item::kTransfer;
        it.instance = best;
        it.requests = {r.id};
        it.start = engine_.now();
        items_[item] = std::move(it);
        job_items_[executor_->submit(std::move(g), this)] = item;
    }
}

void ServingSimulator::transfer_done(std::uint64_t item_id, Cycle t) {
    const Item it = items_.at(item_id);
    items_.erase(item_id);
    kv_transfer_cycles_ += t - it.start;
    Request &r = requests_[it.requests.front()];
    Instance &src = *instances_[r.instance];
    for (auto &st : src.stages) st.kv->kv_release(r.id);
    for (int s = 0; s < src.pp; ++s) try_start(r.instance, s);

    Instance &dst = *instances_[r.decode_instance];
    for (auto &st : dst.stages) {
        const auto res = st.kv->kv_append(r.id, r.prompt_len);
        for (const auto &sp : res.spills) st.pending_writes += sp.bytes;
        st.pending_writes += res.hbm_write_bytes;
    }
    set_phase(r, RequestPhase::kDecoding);
    int g = 0;
    for (int k = 1; k < int(dst.groups.size()); ++k)
        if (dst.groups[k].size() < dst.groups[g].size()) g = k;
    r.group = g;
    dst.groups[g].push_back(r.id);
    start_group(r.decode_instance, g);
}

void ServingSimulator::start_group(int i, int g) {
    Instance &inst = *instances_[i];
    if (inst.group_busy[g] || inst.groups[g].empty()) return;
    inst.group_busy[g] = true;
    const auto item = new_item();
    Item it;
    it.type = Item::kDecode;
    it.instance = i;
    it.group = g;
    it.requests = inst.groups[g];
    items_[item] = std::move(it);
    inst.stages[0].queue.push_back(item);
    try_start(i, 0);
}

void ServingSimulator::decode_done(Item &it, Cycle t) {
    Instance &inst = *instances_[it.instance];
    bool freed = false;
    for (RequestId id : it.requests) {
        Request &r = requests_[id];
        if (r.phase != RequestPhase::kDecoding) ++early_tokens_;
        engine_.metrics().record_token(id, t);
        if (++r.generated >= r.output_len) {
            for (auto &st : inst.stages) st.kv->kv_release(id);
            auto &grp = inst.groups[it.group];
            grp.erase(std::find(grp.begin(), grp.end(), id));
            --inst.live;
            finish_request(r, t);
            freed = true;
        }
    }
    inst.group_busy[it.group] = false;
    if (freed) try_transfers();
    start_group(it.instance, it.group);
}

void ServingSimulator::kick_fused(int i) {
    Instance &inst = *instances_[i];
    if (inst.iterating) return;
    std::vector<RequestId> decodes = inst.decoding;
    std::sort(decodes.begin(), decodes.end(), [&](RequestId a, RequestId b) {
        const auto la = requests_[a].last_served, lb = requests_[b].last_served;
        return la != lb ? la < lb : a < b;
    });
    std::vector<PrefillCandidate> prefills;
    for (RequestId id : inst.prefilling) {
        Request &r = requests_[id];
        if (!r.reserved) {
            const std::uint64_t tokens = std::uint64_t(r.prompt_len) + r.output_len;
            bool fits = true;
            for (const auto &st : inst.stages) fits = fits && st.kv->can_admit(tokens);
            if (!fits) break;
            for (auto &st : inst.stages) st.kv->admit(id, tokens);
            r.reserved = true;
        }
        prefills.push_back({id, r.prompt_len - r.progress, r.progress});
    }
    IterationPlan plan = build_fused_iteration(decodes, prefills, budget_);
    if (plan.empty()) return;
    inst.iterating = true;
    ++fused_iterations_;
    for (RequestId id : plan.decodes) requests_[id].last_served = fused_iterations_;
    for (const auto &c : plan.chunks)
        if (requests_[c.request].phase == RequestPhase::kQueued) set_phase(requests_[c.request], RequestPhase::kPrefilling);

    FusedIterationLog log;
    log.instance = i;
    log.start = engine_.now();
    log.budget = plan.budget;
    log.units = plan.units;
    log.decodes = static_cast<int>(plan.decodes.size());
    log.deferred = static_cast<int>(plan.deferred.size());
    log.chunks = static_cast<int>(plan.chunks.size());
    for (const auto &c : plan.chunks) log.chunk_tokens += c.tokens;
    fused_log_.push_back(log);

    const auto item = new_item();
    Item it;
    it.type = Item::kFused;
    it.instance = i;
    it.plan = std::move(plan);
    it.log_index = fused_log_.size() - 1;
    items_[item] = std::move(it);
    inst.stages[0].queue.push_back(item);
    try_start(i, 0);
}

void ServingSimulator::fused_done(Item &it, Cycle t) {
    Instance &inst = *instances_[it.instance];
    fused_log_[it.log_index].end = t;
    auto release = [&](Request &r) {
        for (auto &st : inst.stages) st.kv->kv_release(r.id);
        finish_request(r, t);
    };
    for (RequestId id : it.plan.decodes) {
        Request &r = requests_[id];
        engine_.metrics().record_token(id, t);
        if (++r.generated >= r.output_len) {
            inst.decoding.erase(std::find(inst.decoding.begin(), inst.decoding.end(), id));
            release(r);
        }
    }
    for (const auto &c : it.plan.chunks) {
        Request &r = requests_[c.request];
        if (c.offset != r.progress) throw std::logic_error(fmt::format("request {}: chunk out of order", r.id));
        r.progress += c.tokens;
        chunk_tokens_[r.id] += c.tokens;
        if (r.progress == r.prompt_len) {
            inst.prefilling.erase(std::find(inst.prefilling.begin(), inst.prefilling.end(), r.id));
            engine_.metrics().record_token(r.id, t);
            r.generated = 1;
            if (r.output_len <= 1) {
                release(r);
            } else {
                set_phase(r, RequestPhase::kDecoding);
                inst.decoding.push_back(r.id);
            }
        }
    }
    inst.iterating = false;
    kick_fused(it.instance);
}

}  // namespace npusim
