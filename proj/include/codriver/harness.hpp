#pragma once

// Experiment orchestration: the closed per-tick loop, SS/SR statistics,
// protocol runners (sweep, ablations, lifelong) and report I/O.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codriver/comms.hpp"
#include "codriver/llm.hpp"
#include "codriver/memory.hpp"
#include "codriver/reasoning.hpp"
#include "codriver/reflection.hpp"
#include "codriver/sim.hpp"

namespace codriver {

struct BackendBinding {
    std::string kind = "scripted";  // scripted | replay | live
    std::string script;             // scripted, or the replay record delegate
    std::string cache_dir;          // replay
    bool strict = true;             // replay: strict misses vs. record through `script`/live
    std::string delegate = "scripted";

    bool operator==(const BackendBinding&) const = default;
};

struct ExperimentConfig {
    ScenarioConfig scenario;
    int shots = 3;
    std::string memory_path;  // JSONL seed or saved store; empty: empty memory
    int episodes = 10;
    std::uint64_t base_seed = 0;
    BackendBinding backend;
    std::map<RoleTag, BackendBinding> role_backends;
    std::string model = kDefaultModel;
    bool reflection_on = false;
    bool comms_on = true;
    GateMode gate = GateMode::Heuristic;
    int reasoning_rounds = 1;
    EvaluatorMode evaluator = EvaluatorMode::GroundTruth;
    std::string goal;           // empty: default goal
    std::string templates_dir;  // empty: shipped templates
    std::string out_dir = "out";
    bool log_latency = false;
    int workers = 1;
    std::vector<int> checkpoints{10, 20, 30, 40};
    int training_budget = 200;   // lifelong: max training episodes
    int training_episodes = 10;  // reflection ablation
    std::uint64_t training_seed_offset = 1000;
    std::string label;

    void validate() const;
    // Paths in the document resolve against base_dir first, then the resource root.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    static ExperimentConfig load(const std::string& path);
    // Without out_dir, so logs do not depend on where they are written.
    nlohmann::json to_json() const;
};

// Default experiment for a scenario: shipped script and seed memory.
ExperimentConfig default_experiment(ScenarioKind kind, int agents);

// Absolute path if it exists as given, relative to base_dir, or under the resource root.
std::string resolve_path(const std::string& path, const std::string& base_dir = ".");

struct EpisodeResult {
    int episode_id = 0;
    std::uint64_t seed = 0;
    int ss = 0;
    bool success = false;
    std::optional<CollisionEvent> collision;
    int fallback_count = 0;
    std::string log_path;
    EpisodeLog log;                    // decisions, for reflection
    std::vector<std::string> log_lines;  // JSONL records
};

struct SSStats {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
    bool operator==(const SSStats&) const = default;
};

// Linear interpolation at position p * (n - 1) of the sorted sample.
double quantile_inclusive(std::vector<double> sorted, double p);
SSStats ss_stats(const std::vector<int>& ss);
SSStats ss_stats(const std::vector<EpisodeResult>& results);
double success_rate(const std::vector<EpisodeResult>& results);
double success_rate(const std::vector<bool>& successes);

struct ReportRow {
    std::string scenario;
    int agents = 0;
    int shots = 0;
    SSStats stats;
    double sr_percent = 0;
    std::string label;
    int memory_size = 0;
    std::vector<int> ss_values;

    bool operator==(const ReportRow&) const = default;
};

struct Report {
    std::vector<ReportRow> rows;
    std::vector<std::string> warnings;
    std::map<std::string, double> summary;  // e.g. sr_delta_percent for paired ablations
    std::vector<EpisodeResult> episodes;

    std::string csv() const;
    static std::vector<ReportRow> parse_csv(const std::string& text);
    nlohmann::json to_json() const;
};

inline constexpr const char* kCsvHeader =
    "scenario,agents,shots,ss_min,ss_q1,ss_median,ss_q3,ss_max,ss_mean,sr_percent";

BackendSet make_backends(const ExperimentConfig& config);
TemplateSet load_templates(const ExperimentConfig& config);
MemoryStore load_memory(const ExperimentConfig& config);

// One closed-loop episode. Writes the JSONL log when log_path is non-empty.
EpisodeResult run_episode(const ExperimentConfig& config, int episode_id, std::uint64_t seed,
                          const MemoryStore& memory, const BackendSet& backends, const TemplateSet& templates,
                          const std::string& log_path = "");

// N episodes on a frozen memory snapshot; one report row.
ReportRow evaluate(const ExperimentConfig& config, const MemoryStore& memory, const BackendSet& backends,
                   const TemplateSet& templates, const std::string& log_dir, std::vector<EpisodeResult>* episodes);

// Writes logs, results.csv, report.json and memory_snapshot.jsonl under out_dir.
Report run_experiment(const ExperimentConfig& config);
Report run_sweep(const ExperimentConfig& config, const std::vector<int>& shots = {0, 1, 3, 5});
Report run_comms_ablation(const ExperimentConfig& config);       // rows: comms off, comms on
Report run_reflection_ablation(const ExperimentConfig& config);  // rows: without, with reflection
Report lifelong_run(const ExperimentConfig& config, const std::vector<int>& checkpoints);

// One training episode followed by a reflection pass into `memory`.
ReflectionPassResult train_episode(const ExperimentConfig& config, int index, MemoryStore& memory,
                                   const BackendSet& backends, const TemplateSet& templates,
                                   const std::string& log_path = "");

struct ReplayOutcome {
    bool identical = false;
    std::string new_log_path;
    std::size_t compared_lines = 0;
    std::string first_difference;
};

// Re-runs a logged episode against a strict replay cache built from its generation records.
ReplayOutcome replay_log(const std::string& log_path, const std::string& out_dir);

void write_report(const Report& report, const std::string& out_dir);

}  // namespace codriver
