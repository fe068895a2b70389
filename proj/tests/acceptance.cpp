// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "codriver/harness.hpp"
#include "golden_scenes.hpp"
#include "oracles.hpp"
#include "parser_fixtures.hpp"

using namespace codriver;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    enum class Status { Pass, Fail, Skip } status = Status::Fail;
    std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Status::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Status::Fail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("codriver_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// The configuration `run --scenario intersection --agents 2 --shots 3 --backend scripted --seed 7` builds.
ExperimentConfig determinism_config(const fs::path& out) {
    ExperimentConfig c = default_experiment(ScenarioKind::Intersection, 2);
    c.shots = 3;
    c.base_seed = 7;
    c.backend.kind = "scripted";
    c.role_backends.clear();
    c.out_dir = out.string();
    return c;
}

ExperimentConfig experiment(const std::string& name, const fs::path& out) {
    ExperimentConfig c = ExperimentConfig::load(resource_dir() + "/experiments/" + name);
    c.out_dir = out.string();
    return c;
}

Outcome metric_fidelity() {
    std::vector<bool> eight(10, true);
    eight[1] = eight[6] = false;
    if (success_rate(eight) != 80.0) return fail(fmt::format("SR of 8/10 = {}", success_rate(eight)));
    std::mt19937_64 rng(1);
    double worst = 0;
    for (int c = 0; c < 1000; ++c) {
        const int n = 1 + static_cast<int>(rng() % 60);
        std::vector<int> ss(static_cast<std::size_t>(n));
        for (auto& s : ss) s = static_cast<int>(rng() % 31);
        const std::vector<double> d(ss.begin(), ss.end());
        const SSStats s = ss_stats(ss);
        const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
        if (s.min != *std::min_element(d.begin(), d.end()) || s.max != *std::max_element(d.begin(), d.end()) ||
            s.mean != mean)
            return fail(fmt::format("sample {}: min/max/mean differ", c));
        worst = std::max({worst, std::fabs(s.q1 - oracles::quartile(d, 1)),
                          std::fabs(s.median - oracles::quartile(d, 2)), std::fabs(s.q3 - oracles::quartile(d, 3))});
    }
    return check(worst <= 1e-9, fmt::format("SR 8/10 = 80%, 1000 samples, worst quantile error {:.3g}", worst));
}

Outcome golden_text() {
    int ok = 0;
    const auto goldens = fixtures::golden_scenes();
    for (const auto& g : goldens) ok += describe(g.observation).text == g.expected;
    return check(ok == static_cast<int>(goldens.size()), fmt::format("{}/{} goldens byte-identical", ok, goldens.size()));
}

Outcome parser_fixtures() {
    int ok = 0;
    const auto all = fixtures::parser_fixtures();
    for (const auto& f : all) {
        const auto got = try_parse_decision(f.text, ActionTable::for_scenario(f.table));
        const bool good = got ? (f.expected && got->action.name == *f.expected && got->id_mismatch == f.id_mismatch)
                              : !f.expected.has_value();
        ok += good;
        if (!good) std::cerr << "  parser fixture failed: " << f.name << "\n";
    }
    return check(ok == static_cast<int>(all.size()) && all.size() >= 12, fmt::format("{}/{} fixtures", ok, all.size()));
}

Outcome recall_oracle() {
    static const std::vector<std::string> words{"car",   "lane",  "ahead", "left",  "right",  "slow",
                                                "fast",  "brake", "veh1",  "veh2",  "speed",  "gap",
                                                "merge", "yield", "turn",  "signal", "intersection"};
    std::mt19937_64 rng(500);
    auto text = [&](int n) {
        std::string s;
        for (int i = 0; i < n; ++i) s += words[rng() % words.size()] + " ";
        return s;
    };
    int mismatches = 0, prefix_failures = 0;
    for (int c = 0; c < 500; ++c) {
        MemoryStore store;
        const int n = 1 + static_cast<int>(rng() % 50);
        for (int i = 0; i < n; ++i) {
            MemoryFields f;
            f.kind = static_cast<MemoryKind>(rng() % 3);
            f.scenario_text = text(1 + static_cast<int>(rng() % 5));
            f.reasoning = "r";
            if (f.kind != MemoryKind::Commonsense) f.decision = MetaAction{MetaActionName::Idle, 1};
            if (f.kind == MemoryKind::Reflection) f.lessons = "l";
            store.add_item(f);
        }
        const std::string q = text(3);
        const int k = static_cast<int>(rng() % 11);
        std::vector<std::string> got, next;
        for (const auto& it : store.recall(q, k)) got.push_back(it.id);
        for (const auto& it : store.recall(q, k + 1)) next.push_back(it.id);
        mismatches += got != oracles::recall(store, q, k);
        prefix_failures += !(got.size() <= next.size() && std::equal(got.begin(), got.end(), next.begin()));
    }
    return check(mismatches == 0 && prefix_failures == 0,
                 fmt::format("500 cases, {} oracle mismatches, {} prefix failures", mismatches, prefix_failures));
}

struct DeterminismRun {
    fs::path out;
    Report report;
};

DeterminismRun run_determinism(const std::string& name) {
    const fs::path out = scratch(name);
    return {out, run_experiment(determinism_config(out))};
}

Outcome end_to_end_determinism(const DeterminismRun& a, const DeterminismRun& b) {
    std::size_t logs = 0;
    for (const auto& e : fs::directory_iterator(a.out / "logs")) {
        const fs::path other = b.out / "logs" / e.path().filename();
        if (!fs::exists(other) || slurp(e.path()) != slurp(other))
            return fail("log differs: " + e.path().filename().string());
        ++logs;
    }
    std::size_t other_logs = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(b.out / "logs")) ++other_logs;
    const bool csv = a.report.csv() == b.report.csv() && slurp(a.out / "results.csv") == slurp(b.out / "results.csv");
    return check(logs == 10 && logs == other_logs && csv,
                 fmt::format("{} logs byte-identical, CSV {}", logs, csv ? "identical" : "differs"));
}

Outcome background_safety() {
    int collisions = 0;
    for (ScenarioKind kind : {ScenarioKind::Highway, ScenarioKind::Intersection}) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            WorldState w = build_scenario(ScenarioConfig::defaults(kind, 0), seed);
            for (int t = 0; t < 30; ++t) {
                auto r = codriver::advance(w, {});
                collisions += static_cast<int>(r.collisions.size());
                w = std::move(r.world);
            }
        }
    }
    return check(collisions == 0, fmt::format("200 episodes, {} collisions", collisions));
}

Outcome comms_ablation() {
    const Report r = run_comms_ablation(experiment("comms_ablation.json", scratch("comms")));
    if (r.rows.size() != 2) return fail("expected two rows");
    const double off = r.rows[0].sr_percent, on = r.rows[1].sr_percent;
    return check(on - off >= 30.0 && on == 100.0 && r.episodes.size() == 40,
                 fmt::format("SR {}% -> {}% over 20 seeds (delta {:+}pp)", off, on, on - off));
}

Outcome reflection_ablation() {
    const Report r = run_reflection_ablation(experiment("reflection_ablation.json", scratch("reflection")));
    if (r.rows.size() != 2) return fail("expected two rows");
    const double without = r.rows[0].stats.mean, with = r.rows[1].stats.mean;
    return check(with > without && r.rows[1].shots == 5 && r.rows[1].ss_values.size() == 10,
                 fmt::format("SS_mean {} -> {} with 5 shots over 10 seeds", without, with));
}

Outcome lifelong() {
    ExperimentConfig c = experiment("lifelong.json", scratch("lifelong"));
    const Report r = lifelong_run(c, {10, 20, 30, 40});
    if (r.rows.size() != 4) return fail(fmt::format("{} rows", r.rows.size()));
    std::string srs;
    bool monotone = true;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        srs += fmt::format("{}{}", i ? " -> " : "", r.rows[i].sr_percent);
        if (i && r.rows[i].sr_percent < r.rows[i - 1].sr_percent) monotone = false;
    }
    return check(monotone, "SR " + srs + " at memory 10/20/30/40");
}

Outcome prompt_structure(const DeterminismRun& run) {
    const int k = 3;
    int records = 0, bad = 0;
    for (const auto& e : fs::directory_iterator(run.out / "logs")) {
        std::ifstream in(e.path());
        std::string line;
        int recallable = 0;
        while (std::getline(in, line)) {
            const json j = json::parse(line);
            const std::string type = j.value("type", "");
            if (type == "episode") {
                recallable = 0;
                for (const auto& m : j["memory"]) recallable += m.value("kind", "") != "commonsense";
            }
            if (type != "tick") continue;
            for (const auto& d : j["decisions"]) {
                ++records;
                const std::string prompt = d["prompt"];
                std::size_t pos = 0;
                bool ordered = true;
                for (SectionTag tag : kSectionOrder) {
                    const auto at = prompt.find("## " + section_title(tag) + "\n", pos);
                    if (at == std::string::npos) ordered = false;
                    pos = at == std::string::npos ? pos : at + 1;
                }
                const auto shots_at = prompt.find("## Few Shots\n");
                const auto goal_at = prompt.find("\n\n## Goal Description\n");
                const int blocks = (shots_at == std::string::npos || goal_at == std::string::npos)
                                       ? -1
                                       : count_shot_blocks(prompt.substr(shots_at, goal_at - shots_at));
                if (!ordered || blocks != std::min(k, recallable)) ++bad;
            }
        }
    }
    return check(records > 0 && bad == 0, fmt::format("{} decision records, {} malformed", records, bad));
}

Outcome live_smoke() {
    if (std::getenv("CODRIVER_API_KEY") == nullptr && std::getenv("OPENAI_API_KEY") == nullptr)
        return {Outcome::Status::Skip, "no API key in the environment"};
    ExperimentConfig c = default_experiment(ScenarioKind::Intersection, 2);
    c.backend.kind = "live";
    c.role_backends.clear();
    c.episodes = 1;
    c.out_dir = scratch("live").string();
    const Report r = run_experiment(c);
    const fs::path log = fs::path(c.out_dir) / "logs" / "episode_000.jsonl";
    std::ifstream in(log);
    std::string line, last_type;
    int ticks = 0;
    while (std::getline(in, line)) {
        last_type = json::parse(line).value("type", "");
        ticks += last_type == "tick";
    }
    return check(last_type == "result" && ticks == r.episodes.front().ss + (r.episodes.front().success ? 0 : 1),
                 fmt::format("SS {}, {} tick records", r.episodes.front().ss, ticks));
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const auto start = std::chrono::steady_clock::now();
    int failures = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = fail(std::string("exception: ") + e.what());
        }
        const char* tag = o.status == Outcome::Status::Pass ? "PASS" : o.status == Outcome::Status::Skip ? "SKIP" : "FAIL";
        failures += o.status == Outcome::Status::Fail;
        std::cout << fmt::format("{} [{:>2}] {}: {}", tag, id, name, o.detail) << std::endl;
    };

    report(1, "metric fidelity", metric_fidelity);
    report(2, "golden scenario text", golden_text);
    report(3, "decision parser fixtures", parser_fixtures);
    report(4, "recall oracle", recall_oracle);
    std::optional<DeterminismRun> first, second;
    report(5, "end-to-end determinism", [&] {
        first = run_determinism("determinism_a");
        second = run_determinism("determinism_b");
        return end_to_end_determinism(*first, *second);
    });
    report(6, "background safety", background_safety);
    report(7, "communication ablation", comms_ablation);
    report(8, "reflection ablation", reflection_ablation);
    report(9, "lifelong trend", lifelong);
    report(10, "prompt structure", [&] { return first ? prompt_structure(*first) : fail("no determinism run"); });
    report(11, "live protocol smoke", live_smoke);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << fmt::format("{} failed, {:.1f} s", failures, secs) << std::endl;
    return failures == 0 ? 0 : 1;
}
