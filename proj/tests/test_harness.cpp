#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "codriver/harness.hpp"
#include "oracles.hpp"

using namespace codriver;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("codriver_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

BackendSet constant_backend(const std::string& reply) {
    return BackendSet(std::make_shared<ScriptedBackend>(std::vector<ScriptRule>{}, reply));
}

ExperimentConfig small_config(ScenarioKind kind, int agents, int episodes) {
    ExperimentConfig c = default_experiment(kind, agents);
    c.episodes = episodes;
    c.base_seed = 7;
    return c;
}

}  // namespace

TEST(Stats, QuartilesMatchIntegerOracle) {
    std::mt19937_64 rng(5);
    for (int c = 0; c < 500; ++c) {
        const int n = 1 + static_cast<int>(rng() % 40);
        std::vector<int> ss;
        std::vector<double> d;
        for (int i = 0; i < n; ++i) {
            ss.push_back(static_cast<int>(rng() % 31));
            d.push_back(ss.back());
        }
        const SSStats s = ss_stats(ss);
        EXPECT_NEAR(s.q1, oracles::quartile(d, 1), 1e-12);
        EXPECT_NEAR(s.median, oracles::quartile(d, 2), 1e-12);
        EXPECT_NEAR(s.q3, oracles::quartile(d, 3), 1e-12);
        EXPECT_EQ(s.min, *std::min_element(d.begin(), d.end()));
        EXPECT_EQ(s.max, *std::max_element(d.begin(), d.end()));
        EXPECT_LE(s.min, s.q1);
        EXPECT_LE(s.q1, s.median);
        EXPECT_LE(s.median, s.q3);
        EXPECT_LE(s.q3, s.max);
    }
}

TEST(Stats, WorkedExamples) {
    const SSStats a = ss_stats(std::vector<int>{2, 2, 4, 7, 12});
    EXPECT_DOUBLE_EQ(a.mean, 5.4);
    EXPECT_DOUBLE_EQ(a.median, 4.0);
    EXPECT_DOUBLE_EQ(a.q1, 2.0);
    EXPECT_DOUBLE_EQ(a.q3, 7.0);
    const SSStats b = ss_stats(std::vector<int>{0, 30});
    EXPECT_DOUBLE_EQ(b.q1, 7.5);
    EXPECT_DOUBLE_EQ(b.median, 15.0);
    EXPECT_DOUBLE_EQ(b.q3, 22.5);
    EXPECT_THROW(ss_stats(std::vector<int>{}), Error);
    EXPECT_THROW(success_rate(std::vector<bool>{}), Error);
    std::vector<bool> eight(10, true);
    eight[3] = eight[8] = false;
    EXPECT_DOUBLE_EQ(success_rate(eight), 80.0);
}

TEST(Report, CsvRoundTrip) {
    Report r;
    ReportRow row;
    row.scenario = "intersection";
    row.agents = 2;
    row.shots = 3;
    row.stats = ss_stats(std::vector<int>{1, 4, 9, 30, 30, 17});
    row.sr_percent = 100.0 / 3.0;
    r.rows.push_back(row);
    row.shots = 5;
    row.stats = ss_stats(std::vector<int>{30});
    row.sr_percent = 100;
    r.rows.push_back(row);
    const std::string text = r.csv();
    EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
    const auto back = Report::parse_csv(text);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].stats, r.rows[i].stats);
        EXPECT_EQ(back[i].sr_percent, r.rows[i].sr_percent);
        EXPECT_EQ(back[i].shots, r.rows[i].shots);
        EXPECT_EQ(back[i].scenario, r.rows[i].scenario);
    }
    EXPECT_THROW(Report::parse_csv("bad,header\n"), ValidationError);
    EXPECT_THROW(Report::parse_csv(std::string(kCsvHeader) + "\nintersection,2\n"), ValidationError);
}

TEST(Config, JsonRoundTripAndValidation) {
    ExperimentConfig c = small_config(ScenarioKind::Highway, 3, 4);
    c.reflection_on = true;
    c.gate = GateMode::Model;
    const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    ExperimentConfig bad = c;
    bad.shots = -1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.episodes = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::parse(R"({"scenario": "roundabout"})")), ConfigError);
}

TEST(Episode, AlwaysAccelerateCollisionStepMatchesOracle) {
    for (const auto& [gap, lead_speed] : std::vector<std::pair<double, double>>{{20, 10}, {35, 12}, {60, 8}, {15, 18}}) {
        ExperimentConfig c = small_config(ScenarioKind::Highway, 1, 1);
        c.scenario.lanes = 4;
        c.scenario.background_vehicles = 0;
        c.scenario.egos[0].lane = 1;
        c.scenario.egos[0].speed = 20;
        c.scenario.egos[0].leader = LeaderSpawn{gap, gap, lead_speed, lead_speed};
        c.memory_path.clear();
        const BackendSet backends = constant_backend("Final Decision: accelerate, 3");
        const EpisodeResult r = run_episode(c, 0, 1, MemoryStore{}, backends, TemplateSet::defaults());

        // Ego at +2 m/s^2 capped at 30; the leader follows free-road IDM toward 25 m/s.
        double xe = 0, ve = 20, xl = 5 + gap, vl = lead_speed;
        int expected = c.scenario.max_steps;
        for (int tick = 0; tick < c.scenario.max_steps && expected == c.scenario.max_steps; ++tick) {
            for (int k = 0; k < 4; ++k) {
                const double al = std::clamp(2.0 * (1.0 - std::pow(vl / 25.0, 4.0)), -6.0, 2.0);
                const double ve1 = std::min(ve + 2.0 * 0.25, 30.0);
                const double vl1 = std::clamp(vl + al * 0.25, 0.0, 30.0);
                xe += 0.5 * (ve + ve1) * 0.25;
                xl += 0.5 * (vl + vl1) * 0.25;
                ve = ve1;
                vl = vl1;
                if (xl - xe - 5.0 < -1e-9) {
                    expected = tick;
                    break;
                }
            }
        }
        EXPECT_EQ(r.ss, expected) << "gap " << gap << " leader " << lead_speed;
        EXPECT_EQ(r.success, expected == c.scenario.max_steps);
        if (expected < c.scenario.max_steps) {
            ASSERT_TRUE(r.collision.has_value());
            EXPECT_EQ(r.collision->step, expected);
            EXPECT_TRUE(r.collision->involves("veh1"));
        }
    }
}

TEST(Episode, SeedScheduleIndependentOfOrder) {
    const ExperimentConfig c = small_config(ScenarioKind::Intersection, 2, 6);
    const BackendSet backends = make_backends(c);
    const TemplateSet templates = load_templates(c);
    const MemoryStore memory = load_memory(c);
    std::vector<int> order{0, 1, 2, 3, 4, 5};
    std::map<int, std::vector<std::string>> forward, shuffled;
    for (int i : order) forward[i] = run_episode(c, i, c.base_seed + i, memory, backends, templates).log_lines;
    std::shuffle(order.begin(), order.end(), std::mt19937(3));
    for (int i : order) shuffled[i] = run_episode(c, i, c.base_seed + i, memory, backends, templates).log_lines;
    EXPECT_EQ(forward, shuffled);

    std::vector<EpisodeResult> serial, parallel;
    const ReportRow a = evaluate(c, memory, backends, templates, "", &serial);
    ExperimentConfig p = c;
    p.workers = 3;
    const ReportRow b = evaluate(p, memory, backends, templates, "", &parallel);
    EXPECT_EQ(a, b);
    ASSERT_EQ(serial.size(), parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(serial[i].seed, c.base_seed + i);
        // The header records the worker count; every later record must match.
        ASSERT_EQ(serial[i].log_lines.size(), parallel[i].log_lines.size());
        EXPECT_TRUE(std::equal(serial[i].log_lines.begin() + 1, serial[i].log_lines.end(),
                               parallel[i].log_lines.begin() + 1));
        EXPECT_EQ(serial[i].success, serial[i].ss == c.scenario.max_steps);
    }
}

TEST(Experiment, WritesOutputsAndReplaysIdentically) {
    const fs::path out = temp_dir("run");
    ExperimentConfig c = small_config(ScenarioKind::Intersection, 2, 3);
    c.out_dir = out.string();
    const Report r = run_experiment(c);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.episodes.size(), 3u);
    EXPECT_TRUE(fs::exists(out / "results.csv"));
    EXPECT_TRUE(fs::exists(out / "report.json"));
    EXPECT_TRUE(fs::exists(out / "memory_snapshot.jsonl"));
    EXPECT_EQ(slurp(out / "results.csv"), r.csv());
    const fs::path log = out / "logs" / "episode_000.jsonl";
    ASSERT_TRUE(fs::exists(log));
    const ReplayOutcome replay = replay_log(log.string(), (out / "replay").string());
    EXPECT_TRUE(replay.identical) << replay.first_difference;
    EXPECT_GT(replay.compared_lines, 2u);
}

TEST(Experiment, SweepAndLifelongContracts) {
    const fs::path out = temp_dir("sweep");
    ExperimentConfig c = small_config(ScenarioKind::Intersection, 2, 2);
    c.out_dir = out.string();
    const Report sweep = run_sweep(c);
    ASSERT_EQ(sweep.rows.size(), 4u);
    const std::vector<int> shots{0, 1, 3, 5};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(sweep.rows[i].shots, shots[i]);
    c.reflection_on = false;
    EXPECT_THROW(lifelong_run(c, {10, 20}), ConfigError);
    c.reflection_on = true;
    EXPECT_THROW(lifelong_run(c, {20, 10}), ConfigError);
}
