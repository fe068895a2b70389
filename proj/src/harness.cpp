#include "codriver/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace codriver {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Config ----

std::string resolve_path(const std::string& path, const std::string& base_dir) {
    if (path.empty()) return path;
    const fs::path p(path);
    if (p.is_absolute() || fs::exists(p)) return path;
    if (const fs::path b = fs::path(base_dir) / p; fs::exists(b)) return b.string();
    if (const fs::path r = fs::path(resource_dir()) / p; fs::exists(r)) return r.string();
    return path;
}

void ExperimentConfig::validate() const {
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (shots < 0) throw ConfigError("shots must be >= 0");
    if (reasoning_rounds < 1) throw ConfigError("reasoning_rounds must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (scenario.egos.empty()) throw ConfigError("at least one ego agent is required");
    if (scenario.kind == ScenarioKind::Highway && scenario.lanes < 2) throw ConfigError("highway needs >= 2 lanes");
    for (std::size_t i = 1; i < checkpoints.size(); ++i)
        if (checkpoints[i] <= checkpoints[i - 1]) throw ConfigError("checkpoints must be increasing");
}

namespace {

BackendBinding binding_from_json(const json& j, const std::string& base) {
    BackendBinding b;
    if (j.is_string()) {
        b.kind = j.get<std::string>();
        return b;
    }
    b.kind = j.value("kind", b.kind);
    b.script = resolve_path(j.value("script", std::string()), base);
    b.cache_dir = j.value("cache_dir", std::string());
    b.strict = j.value("strict", b.strict);
    b.delegate = j.value("delegate", b.delegate);
    return b;
}

json binding_to_json(const BackendBinding& b) {
    return {{"kind", b.kind}, {"script", b.script}, {"cache_dir", b.cache_dir}, {"strict", b.strict},
            {"delegate", b.delegate}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::string& base) {
    try {
        ExperimentConfig c;
        const json& sj = j.at("scenario");
        if (sj.is_string()) {
            const std::string name = sj.get<std::string>();
            const std::string file = resolve_path(name, base);
            if (fs::is_regular_file(file)) {
                c.scenario = scenario_from_json(json::parse(read_file(file)));
            } else {
                const ScenarioKind kind = scenario_kind_from_string(name);
                c = default_experiment(kind, j.value("agents", 1));
            }
        } else {
            c.scenario = scenario_from_json(sj);
        }
        if (j.contains("agents") && sj.is_object() && !sj.contains("ego_agents") && !sj.contains("agents")) {
            auto d = ScenarioConfig::defaults(c.scenario.kind, j["agents"].get<int>());
            c.scenario.egos = d.egos;
        }
        c.shots = j.value("shots", c.shots);
        if (j.contains("memory")) c.memory_path = resolve_path(j["memory"].get<std::string>(), base);
        c.episodes = j.value("episodes", c.episodes);
        c.base_seed = j.value("base_seed", c.base_seed);
        if (j.contains("backend")) c.backend = binding_from_json(j["backend"], base);
        if (j.contains("script")) c.backend.script = resolve_path(j["script"].get<std::string>(), base);
        if (j.contains("roles"))
            for (const auto& [role, b] : j["roles"].items()) c.role_backends[role_from_string(role)] = binding_from_json(b, base);
        c.model = j.value("model", c.model);
        c.reflection_on = j.value("reflection", c.reflection_on);
        c.comms_on = j.value("comms", c.comms_on);
        if (j.contains("gate")) c.gate = gate_mode_from_string(j["gate"].get<std::string>());
        c.reasoning_rounds = j.value("reasoning_rounds", c.reasoning_rounds);
        if (j.contains("evaluator")) c.evaluator = evaluator_mode_from_string(j["evaluator"].get<std::string>());
        c.goal = j.value("goal", c.goal);
        if (j.contains("templates")) c.templates_dir = resolve_path(j["templates"].get<std::string>(), base);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.log_latency = j.value("log_latency", c.log_latency);
        c.workers = j.value("workers", c.workers);
        if (j.contains("checkpoints")) c.checkpoints = j["checkpoints"].get<std::vector<int>>();
        c.training_budget = j.value("training_budget", c.training_budget);
        c.training_episodes = j.value("training_episodes", c.training_episodes);
        c.training_seed_offset = j.value("training_seed_offset", c.training_seed_offset);
        c.label = j.value("label", c.label);
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid experiment config: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
    return from_json(j, fs::path(path).parent_path().string());
}

json ExperimentConfig::to_json() const {
    json roles = json::object();
    for (const auto& [role, b] : role_backends) roles[codriver::to_string(role)] = binding_to_json(b);
    return {{"scenario", scenario_to_json(scenario)},
            {"shots", shots},
            {"memory", memory_path},
            {"episodes", episodes},
            {"base_seed", base_seed},
            {"backend", binding_to_json(backend)},
            {"roles", roles},
            {"model", model},
            {"reflection", reflection_on},
            {"comms", comms_on},
            {"gate", codriver::to_string(gate)},
            {"reasoning_rounds", reasoning_rounds},
            {"evaluator", codriver::to_string(evaluator)},
            {"goal", goal},
            {"templates", templates_dir},
            {"log_latency", log_latency},
            {"workers", workers},
            {"checkpoints", checkpoints},
            {"training_budget", training_budget},
            {"training_episodes", training_episodes},
            {"training_seed_offset", training_seed_offset},
            {"label", label}};
}

ExperimentConfig default_experiment(ScenarioKind kind, int agents) {
    ExperimentConfig c;
    c.scenario = ScenarioConfig::defaults(kind, agents);
    const std::string res = resource_dir();
    c.backend.script = (fs::path(res) / "scripts" / "default.json").string();
    c.memory_path = (fs::path(res) / "memory" / (kind == ScenarioKind::Highway ? "highway_seed.jsonl"
                                                                                : "intersection_seed.jsonl"))
                        .string();
    return c;
}

// ---- Statistics ----

double quantile_inclusive(std::vector<double> sorted, double p) {
    if (sorted.empty()) throw Error("quantile of an empty sample");
    std::sort(sorted.begin(), sorted.end());
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

SSStats ss_stats(const std::vector<int>& ss) {
    if (ss.empty()) throw Error("ss_stats of an empty result list");
    std::vector<double> v(ss.begin(), ss.end());
    std::sort(v.begin(), v.end());
    SSStats s;
    s.min = v.front();
    s.max = v.back();
    s.q1 = quantile_inclusive(v, 0.25);
    s.median = quantile_inclusive(v, 0.5);
    s.q3 = quantile_inclusive(v, 0.75);
    const long long sum = std::accumulate(ss.begin(), ss.end(), 0LL);
    s.mean = static_cast<double>(sum) / static_cast<double>(ss.size());
    return s;
}

SSStats ss_stats(const std::vector<EpisodeResult>& results) {
    std::vector<int> ss;
    for (const auto& r : results) ss.push_back(r.ss);
    return ss_stats(ss);
}

double success_rate(const std::vector<bool>& successes) {
    if (successes.empty()) throw Error("success_rate of an empty result list");
    const auto n = std::count(successes.begin(), successes.end(), true);
    return 100.0 * static_cast<double>(n) / static_cast<double>(successes.size());
}

double success_rate(const std::vector<EpisodeResult>& results) {
    std::vector<bool> s;
    for (const auto& r : results) s.push_back(r.success);
    return success_rate(s);
}

// ---- Reports ----

std::string Report::csv() const {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : rows)
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.scenario, r.agents, r.shots, r.stats.min, r.stats.q1,
                           r.stats.median, r.stats.q3, r.stats.max, r.stats.mean, r.sr_percent);
    return out;
}

std::vector<ReportRow> Report::parse_csv(const std::string& text) {
    std::vector<ReportRow> rows;
    const auto lines = split_lines(text);
    if (lines.empty() || trim(lines.front()) != kCsvHeader) throw ValidationError("unexpected CSV header");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(lines[i]);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 10) throw ValidationError(fmt::format("CSV line {}: expected 10 fields", i + 1));
        ReportRow r;
        r.scenario = f[0];
        r.agents = std::stoi(f[1]);
        r.shots = std::stoi(f[2]);
        r.stats = {std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7]),
                   std::stod(f[8])};
        r.sr_percent = std::stod(f[9]);
        rows.push_back(r);
    }
    return rows;
}

json Report::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"scenario", r.scenario},
                          {"agents", r.agents},
                          {"shots", r.shots},
                          {"label", r.label},
                          {"memory_size", r.memory_size},
                          {"ss_min", r.stats.min},
                          {"ss_q1", r.stats.q1},
                          {"ss_median", r.stats.median},
                          {"ss_q3", r.stats.q3},
                          {"ss_max", r.stats.max},
                          {"ss_mean", r.stats.mean},
                          {"sr_percent", r.sr_percent},
                          {"ss_values", r.ss_values}});
    json eps = json::array();
    for (const auto& e : episodes) {
        json ej{{"episode", e.episode_id}, {"seed", e.seed},           {"ss", e.ss},
                {"success", e.success},    {"fallbacks", e.fallback_count}, {"log", e.log_path}};
        ej["collision"] = e.collision ? json(*e.collision) : json(nullptr);
        eps.push_back(ej);
    }
    return {{"quantile_method", "linear interpolation, inclusive (position p*(n-1))"},
            {"rows", rows_j},
            {"episodes", eps},
            {"summary", summary},
            {"warnings", warnings}};
}

void write_report(const Report& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_file_atomic((fs::path(out_dir) / "results.csv").string(), report.csv());
    write_file_atomic((fs::path(out_dir) / "report.json").string(), report.to_json().dump(2) + "\n");
}

// ---- Backends / resources ----

namespace {

std::shared_ptr<TextGen> make_one(const BackendBinding& b) {
    if (b.kind == "scripted") {
        if (b.script.empty()) throw ConfigError("scripted backend needs a script");
        return std::make_shared<ScriptedBackend>(load_script(b.script));
    }
    if (b.kind == "live") return std::make_shared<LiveBackend>(LiveConfig::from_env());
    if (b.kind == "replay") {
        if (b.cache_dir.empty()) throw ConfigError("replay backend needs cache_dir");
        if (b.strict) return std::make_shared<ReplayBackend>(b.cache_dir, ReplayBackend::Mode::Strict);
        BackendBinding inner = b;
        inner.kind = b.delegate;
        return std::make_shared<ReplayBackend>(b.cache_dir, ReplayBackend::Mode::Record, make_one(inner));
    }
    throw ConfigError("unknown backend kind '" + b.kind + "'");
}

}  // namespace

BackendSet make_backends(const ExperimentConfig& config) {
    BackendSet set(make_one(config.backend));
    for (const auto& [role, b] : config.role_backends) set.bind(role, make_one(b));
    set.model = config.model;
    return set;
}

TemplateSet load_templates(const ExperimentConfig& config) {
    if (!config.templates_dir.empty()) return TemplateSet::load_dir(config.templates_dir);
    const fs::path shipped = fs::path(resource_dir()) / "templates";
    if (fs::is_directory(shipped)) return TemplateSet::load_dir(shipped.string());
    return TemplateSet::defaults();
}

MemoryStore load_memory(const ExperimentConfig& config) {
    MemoryStore store;
    if (!config.memory_path.empty()) store.seed_from(config.memory_path);
    return store;
}

// ---- Episode loop ----

namespace {

double nearest_distance(const Observation& obs) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& n : obs.neighbors) {
        const double d = obs.kind == ScenarioKind::Highway ? std::abs(n.lane_position - obs.ego.lane_position) : n.gap;
        best = std::min(best, d);
    }
    return best;
}

void flush_exchanges(ExchangeLog& sink, std::vector<std::string>& lines) {
    for (const auto& e : sink.take())
        lines.push_back(json{{"type", "gen"}, {"role", to_string(e.role)}, {"key", e.key}, {"text", e.text}}.dump());
}

BackendSet recording_set(const BackendSet& base, const std::shared_ptr<ExchangeLog>& sink) {
    BackendSet set;
    for (RoleTag r : {RoleTag::Driver, RoleTag::Evaluator, RoleTag::Reflector, RoleTag::Communicator})
        set.bind(r, std::make_shared<RecordingTextGen>(base.shared_for_role(r), sink));
    set.model = base.model;
    return set;
}

json memory_json(const MemoryStore& memory) {
    json items = json::array();
    for (const auto& it : memory.items()) items.push_back(memory_item_to_json(it));
    return items;
}

}  // namespace

EpisodeResult run_episode(const ExperimentConfig& config, int episode_id, std::uint64_t seed,
                          const MemoryStore& memory, const BackendSet& base_backends, const TemplateSet& templates,
                          const std::string& log_path) {
    auto sink = std::make_shared<ExchangeLog>();
    const BackendSet backends = recording_set(base_backends, sink);
    WorldState world = build_scenario(config.scenario, seed);
    const ActionTable table = ActionTable::for_scenario(world.network.kind, world.network.allowed_actions);
    const auto egos = world.ego_ids();
    MessageBus bus(egos);
    std::map<AgentId, CommContext> comm;
    for (const auto& id : egos) {
        comm[id].agent_id = id;
        comm[id].goal = config.goal;
    }
    ReasoningOptions ropts;
    ropts.rounds = config.reasoning_rounds;
    ropts.model = config.model;

    EpisodeResult result;
    result.episode_id = episode_id;
    result.seed = seed;
    result.log.episode = episode_id;
    result.log.kind = world.network.kind;
    result.log.actions = table;
    auto& lines = result.log_lines;
    lines.push_back(json{{"type", "episode"},
                         {"episode", episode_id},
                         {"seed", seed},
                         {"config", config.to_json()},
                         {"memory", memory_json(memory)}}
                        .dump());

    const int max_steps = config.scenario.max_steps;
    result.ss = max_steps;
    for (int t = 0; t < max_steps; ++t) {
        bus.begin_step(t);
        std::vector<std::pair<AgentId, MetaAction>> actions;
        json decisions = json::array();
        json messages = json::array();
        for (const auto& id : egos) {
            const Vehicle* v = world.find(id);
            if (v == nullptr || v->frozen) continue;
            AgentContext ctx;
            ctx.agent_id = id;
            ctx.step = t;
            ctx.kind = world.network.kind;
            ctx.inbox = bus.fetch_inbox(id, t);
            const Observation obs = observe(world, id);
            ctx.scene = describe(obs, templates);
            ctx.actions = table;
            ctx.memory = &memory;
            ctx.shots = config.shots;
            ctx.goal = config.goal;
            ctx.nearest_distance = nearest_distance(obs);
            auto& cc = comm[id];
            for (const auto& m : ctx.inbox) cc.push_message(m);

            DecisionRecord rec = decide(ctx, backends.for_role(RoleTag::Driver), ropts, templates);
            if (rec.fallback_used) ++result.fallback_count;
            actions.emplace_back(id, rec.action);
            decisions.push_back(decision_to_json(rec, config.log_latency));

            cc.step = t;
            cc.scene = ctx.scene;
            cc.last_decision = rec.action;
            cc.last_decision_text = decision_text(rec.action, table);
            cc.push_action(t, rec.action);
            if (config.comms_on && egos.size() > 1) {
                TextGen* gate_backend = config.gate == GateMode::Model ? &backends.for_role(RoleTag::Communicator) : nullptr;
                if (should_communicate(cc, config.gate, world, gate_backend, templates, config.model)) {
                    if (auto msg = compose_message(cc, backends.for_role(RoleTag::Communicator), templates,
                                                   config.model)) {
                        bus.post(*msg);
                        cc.push_message(*msg);
                        messages.push_back(*msg);
                    }
                }
            }
            result.log.decisions.push_back(std::move(rec));
        }
        AdvanceResult adv = codriver::advance(world, actions);
        world = std::move(adv.world);
        flush_exchanges(*sink, lines);

        json vehicles = json::array();
        for (const auto& v : world.vehicles) vehicles.push_back(v);
        lines.push_back(json{{"type", "tick"},
                             {"step", t},
                             {"decisions", decisions},
                             {"messages", messages},
                             {"collisions", adv.collisions},
                             {"edge_flags", adv.edge_flags},
                             {"vehicles", vehicles}}
                            .dump());
        for (const auto& c : adv.collisions) result.log.collisions.push_back(c);
        std::optional<CollisionEvent> hit;
        for (const auto& c : adv.collisions) {
            const Vehicle* a = world.find(c.vehicle_a);
            const Vehicle* b = world.find(c.vehicle_b);
            if ((a != nullptr && a->is_ego()) || (b != nullptr && b->is_ego())) {
                hit = c;
                break;
            }
        }
        if (hit) {
            result.collision = hit;
            result.ss = t;
            break;
        }
    }
    result.success = result.ss == max_steps;
    lines.push_back(json{{"type", "result"},
                         {"episode", episode_id},
                         {"seed", seed},
                         {"ss", result.ss},
                         {"success", result.success},
                         {"collision", result.collision ? json(*result.collision) : json(nullptr)},
                         {"fallback_count", result.fallback_count}}
                        .dump());
    if (!log_path.empty()) {
        std::string body;
        for (const auto& l : lines) body += l + "\n";
        fs::create_directories(fs::path(log_path).parent_path());
        write_file_atomic(log_path, body);
        result.log_path = log_path;
    }
    return result;
}

namespace {

std::string episode_log_path(const std::string& dir, int i) {
    if (dir.empty()) return {};
    return (fs::path(dir) / fmt::format("episode_{:03d}.jsonl", i)).string();
}

std::string row_label(const ExperimentConfig& c, const std::string& fallback) {
    return c.label.empty() ? fallback : c.label;
}

}  // namespace

ReportRow evaluate(const ExperimentConfig& config, const MemoryStore& memory, const BackendSet& backends,
                   const TemplateSet& templates, const std::string& log_dir, std::vector<EpisodeResult>* episodes) {
    config.validate();
    std::vector<EpisodeResult> results(static_cast<std::size_t>(config.episodes));
    auto run_one = [&](int i) {
        results[static_cast<std::size_t>(i)] =
            run_episode(config, i, config.base_seed + static_cast<std::uint64_t>(i), memory, backends, templates,
                        episode_log_path(log_dir, i));
    };
    if (config.workers <= 1) {
        for (int i = 0; i < config.episodes; ++i) run_one(i);
    } else {
        std::vector<std::future<void>> pending;
        for (int start = 0; start < config.episodes; start += config.workers) {
            pending.clear();
            for (int i = start; i < std::min(config.episodes, start + config.workers); ++i)
                pending.push_back(std::async(std::launch::async, run_one, i));
            for (auto& f : pending) f.get();
        }
    }
    ReportRow row;
    row.scenario = to_string(config.scenario.kind);
    row.agents = static_cast<int>(config.scenario.egos.size());
    row.shots = config.shots;
    row.stats = ss_stats(results);
    row.sr_percent = success_rate(results);
    row.label = row_label(config, "run");
    row.memory_size = static_cast<int>(memory.size());
    for (const auto& r : results) row.ss_values.push_back(r.ss);
    if (episodes != nullptr)
        for (auto& r : results) episodes->push_back(std::move(r));
    return row;
}

Report run_experiment(const ExperimentConfig& config) {
    const BackendSet backends = make_backends(config);
    const TemplateSet templates = load_templates(config);
    const MemoryStore memory = load_memory(config);
    fs::create_directories(config.out_dir);
    memory.save((fs::path(config.out_dir) / "memory_snapshot.jsonl").string());
    Report report;
    report.rows.push_back(
        evaluate(config, memory, backends, templates, (fs::path(config.out_dir) / "logs").string(), &report.episodes));
    if (config.reflection_on) {
        // Post-hoc reflection; the evaluation memory stays frozen.
        MemoryStore grown = memory;
        ReflectionConfig rc{config.evaluator, kBlameHorizon, true, config.model};
        for (const auto& e : report.episodes) run_reflection_pass(e.log, grown, rc, &backends, templates);
        grown.save((fs::path(config.out_dir) / "memory_reflected.jsonl").string());
    }
    write_report(report, config.out_dir);
    return report;
}

Report run_sweep(const ExperimentConfig& config, const std::vector<int>& shots) {
    const BackendSet backends = make_backends(config);
    const TemplateSet templates = load_templates(config);
    const MemoryStore memory = load_memory(config);
    fs::create_directories(config.out_dir);
    memory.save((fs::path(config.out_dir) / "memory_snapshot.jsonl").string());
    Report report;
    for (int k : shots) {
        ExperimentConfig c = config;
        c.shots = k;
        c.label = fmt::format("shots_{}", k);
        report.rows.push_back(evaluate(c, memory, backends, templates,
                                       (fs::path(config.out_dir) / "logs" / c.label).string(), &report.episodes));
    }
    write_report(report, config.out_dir);
    return report;
}

Report run_comms_ablation(const ExperimentConfig& config) {
    const BackendSet backends = make_backends(config);
    const TemplateSet templates = load_templates(config);
    const MemoryStore memory = load_memory(config);
    Report report;
    for (bool on : {false, true}) {
        ExperimentConfig c = config;
        c.comms_on = on;
        c.label = on ? "comms_on" : "comms_off";
        report.rows.push_back(evaluate(c, memory, backends, templates,
                                       (fs::path(config.out_dir) / "logs" / c.label).string(), &report.episodes));
    }
    report.summary["sr_delta_percent"] = report.rows[1].sr_percent - report.rows[0].sr_percent;
    write_report(report, config.out_dir);
    return report;
}

ReflectionPassResult train_episode(const ExperimentConfig& config, int index, MemoryStore& memory,
                                   const BackendSet& backends, const TemplateSet& templates,
                                   const std::string& log_path) {
    const std::uint64_t seed = config.base_seed + config.training_seed_offset + static_cast<std::uint64_t>(index);
    EpisodeResult ep = run_episode(config, index, seed, memory, backends, templates, "");
    auto sink = std::make_shared<ExchangeLog>();
    const BackendSet rec = recording_set(backends, sink);
    ReflectionConfig rc{config.evaluator, kBlameHorizon, true, config.model};
    ReflectionPassResult pass = run_reflection_pass(ep.log, memory, rc, &rec, templates);
    if (!log_path.empty()) {
        flush_exchanges(*sink, ep.log_lines);
        for (const auto& v : pass.verdicts) {
            json j = verdict_to_json(v);
            j["type"] = "verdict";
            ep.log_lines.push_back(j.dump());
        }
        for (const auto& r : pass.reflections) {
            json j = reflection_to_json(r);
            j["type"] = "reflection";
            ep.log_lines.push_back(j.dump());
        }
        std::string body;
        for (const auto& l : ep.log_lines) body += l + "\n";
        fs::create_directories(fs::path(log_path).parent_path());
        write_file_atomic(log_path, body);
    }
    return pass;
}

Report run_reflection_ablation(const ExperimentConfig& config) {
    const BackendSet backends = make_backends(config);
    const TemplateSet templates = load_templates(config);
    const MemoryStore seed_memory = load_memory(config);
    Report report;

    ExperimentConfig off = config;
    off.label = "no_reflection";
    report.rows.push_back(evaluate(off, seed_memory, backends, templates,
                                   (fs::path(config.out_dir) / "logs" / off.label).string(), &report.episodes));

    MemoryStore reflected = seed_memory;
    for (int j = 0; j < config.training_episodes; ++j)
        train_episode(config, j, reflected, backends, templates,
                      (fs::path(config.out_dir) / "logs" / "training" / fmt::format("episode_{:03d}.jsonl", j)).string());
    fs::create_directories(config.out_dir);
    reflected.save((fs::path(config.out_dir) / "memory_reflected.jsonl").string());

    ExperimentConfig on = config;
    on.label = "reflection";
    report.rows.push_back(evaluate(on, reflected, backends, templates,
                                   (fs::path(config.out_dir) / "logs" / on.label).string(), &report.episodes));
    report.summary["ss_mean_delta"] = report.rows[1].stats.mean - report.rows[0].stats.mean;
    write_report(report, config.out_dir);
    return report;
}

Report lifelong_run(const ExperimentConfig& config, const std::vector<int>& checkpoints) {
    if (!config.reflection_on) throw ConfigError("lifelong learning requires reflection to be enabled");
    for (std::size_t i = 1; i < checkpoints.size(); ++i)
        if (checkpoints[i] <= checkpoints[i - 1]) throw ConfigError("checkpoints must be increasing");
    const BackendSet backends = make_backends(config);
    const TemplateSet templates = load_templates(config);
    MemoryStore memory = load_memory(config);
    Report report;
    std::size_t next = 0;
    int trained = 0;
    while (next < checkpoints.size()) {
        if (static_cast<int>(memory.size()) >= checkpoints[next]) {
            ExperimentConfig c = config;
            c.label = fmt::format("memory_{}", checkpoints[next]);
            ReportRow row = evaluate(c, memory, backends, templates,
                                     (fs::path(config.out_dir) / "logs" / c.label).string(), &report.episodes);
            memory.save((fs::path(config.out_dir) / (c.label + ".jsonl")).string());
            report.rows.push_back(std::move(row));
            ++next;
            continue;
        }
        if (trained >= config.training_budget) {
            const std::string w = fmt::format("memory reached {} items after {} training episodes; checkpoint {} not reached",
                                              memory.size(), trained, checkpoints[next]);
            spdlog::warn("{}", w);
            report.warnings.push_back(w);
            break;
        }
        train_episode(config, trained, memory, backends, templates, "");
        ++trained;
    }
    write_report(report, config.out_dir);
    return report;
}

// ---- Replay ----

ReplayOutcome replay_log(const std::string& log_path, const std::string& out_dir) {
    std::ifstream in(log_path);
    if (!in) throw Error("cannot open log: " + log_path);
    std::vector<std::string> original;
    for (std::string line; std::getline(in, line);)
        if (!trim(line).empty()) original.push_back(line);
    if (original.empty()) throw ValidationError("empty log: " + log_path);
    const json header = json::parse(original.front());
    if (header.value("type", "") != "episode") throw ValidationError("log does not start with an episode record");

    const std::string cache = (fs::path(out_dir) / "replay_cache").string();
    fs::create_directories(cache);
    ReplayBackend strict(cache, ReplayBackend::Mode::Strict);
    for (const auto& l : original) {
        const json j = json::parse(l);
        if (j.value("type", "") != "gen") continue;
        const json entry{{"key", j["key"]}, {"role", j["role"]}, {"text", j["text"]}};
        write_file_atomic(strict.entry_path(j["key"].get<std::string>()), entry.dump() + "\n");
    }

    ExperimentConfig config = ExperimentConfig::from_json(header.at("config"));
    MemoryStore memory;
    for (const auto& item : header.at("memory")) {
        MemoryFields f = memory_fields_from_json(item);
        memory.add_item(f);
    }
    BackendSet backends(std::make_shared<ReplayBackend>(cache, ReplayBackend::Mode::Strict));
    backends.model = config.model;
    const TemplateSet templates = load_templates(config);

    ReplayOutcome outcome;
    outcome.new_log_path = (fs::path(out_dir) / fs::path(log_path).filename()).string();
    EpisodeResult r = run_episode(config, header.at("episode").get<int>(), header.at("seed").get<std::uint64_t>(),
                                  memory, backends, templates, outcome.new_log_path);
    // Compare the closed-loop part: everything up to and including the result record.
    std::size_t end = 0;
    while (end < original.size() && json::parse(original[end]).value("type", "") != "result") ++end;
    const std::vector<std::string> expected(original.begin(),
                                            original.begin() + static_cast<std::ptrdiff_t>(std::min(end + 1, original.size())));
    outcome.identical = expected == r.log_lines;
    outcome.compared_lines = expected.size();
    if (!outcome.identical) {
        for (std::size_t i = 0; i < std::max(expected.size(), r.log_lines.size()); ++i) {
            if (i >= expected.size() || i >= r.log_lines.size() || expected[i] != r.log_lines[i]) {
                outcome.first_difference = fmt::format("line {}", i + 1);
                break;
            }
        }
    }
    return outcome;
}

}  // namespace codriver
