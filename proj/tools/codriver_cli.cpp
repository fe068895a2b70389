#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "codriver/harness.hpp"

using namespace codriver;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string backend;
    std::string out_dir;
    std::string scenario;
    std::optional<int> agents;
    std::optional<int> shots;
    std::optional<int> episodes;
    std::string script;
    std::string memory;
    std::string cache_dir;
    bool verbose = false;
};

ExperimentConfig build_config(const Globals& g) {
    ExperimentConfig c;
    if (!g.config.empty()) {
        c = ExperimentConfig::load(g.config);
    } else {
        const ScenarioKind kind = g.scenario.empty() ? ScenarioKind::Intersection : scenario_kind_from_string(g.scenario);
        c = default_experiment(kind, g.agents.value_or(1));
    }
    if (!g.config.empty() && (!g.scenario.empty() || g.agents)) {
        const ScenarioKind kind = g.scenario.empty() ? c.scenario.kind : scenario_kind_from_string(g.scenario);
        const int agents = g.agents.value_or(static_cast<int>(c.scenario.egos.size()));
        c.scenario = ScenarioConfig::defaults(kind, agents);
    }
    if (g.seed) c.base_seed = *g.seed;
    if (!g.backend.empty()) {
        if (g.backend != "scripted" && g.backend != "replay" && g.backend != "live")
            throw ConfigError("unknown backend '" + g.backend + "'");
        c.backend.kind = g.backend;
        c.role_backends.clear();
    }
    if (!g.script.empty()) c.backend.script = resolve_path(g.script);
    if (!g.cache_dir.empty()) c.backend.cache_dir = g.cache_dir;
    if (c.backend.kind == "replay" && c.backend.cache_dir.empty())
        c.backend.cache_dir = (fs::path(g.out_dir.empty() ? c.out_dir : g.out_dir) / "cache").string();
    if (!g.memory.empty()) c.memory_path = resolve_path(g.memory);
    if (g.shots) c.shots = *g.shots;
    if (g.episodes) c.episodes = *g.episodes;
    if (!g.out_dir.empty()) c.out_dir = g.out_dir;
    c.validate();
    return c;
}

void print_report(const Report& r) {
    std::cout << r.csv();
    for (const auto& [key, value] : r.summary) std::cerr << key << ": " << value << "\n";
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-agent driving with language-model agents: experiments and tools"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Experiment config (JSON)");
    app.add_option("--seed", g.seed, "Base seed; episode i uses seed + i");
    app.add_option("--backend", g.backend, "scripted | replay | live");
    app.add_option("--out-dir", g.out_dir, "Output directory");
    app.add_option("--scenario", g.scenario, "highway | intersection");
    app.add_option("--agents", g.agents, "Number of ego agents");
    app.add_option("--shots", g.shots, "Few-shot count k");
    app.add_option("--episodes", g.episodes, "Episodes per row");
    app.add_option("--script", g.script, "Scripted backend rules (JSON)");
    app.add_option("--memory", g.memory, "Seed memory (JSONL)");
    app.add_option("--cache-dir", g.cache_dir, "Replay cache directory");
    app.add_flag("-v,--verbose", g.verbose, "Debug logging");

    auto* run = app.add_subcommand("run", "Run N seeded episodes");
    auto* sweep = app.add_subcommand("sweep", "Few-shot sweep over k = 0, 1, 3, 5");
    auto* ablate_refl = app.add_subcommand("ablate-reflection", "Compare memory with and without reflection");
    auto* ablate_comms = app.add_subcommand("ablate-comms", "Compare communication off and on");
    auto* lifelong = app.add_subcommand("lifelong", "Evaluate at growing memory sizes");
    std::vector<int> checkpoints;
    lifelong->add_option("--checkpoints", checkpoints, "Memory sizes to evaluate at");

    auto* replay = app.add_subcommand("replay", "Re-run a logged episode from its recorded generations");
    std::string log_path;
    replay->add_option("log", log_path, "Episode JSONL log")->required();

    auto* memory = app.add_subcommand("memory", "Memory store tools");
    memory->require_subcommand(1);
    auto* mem_seed = memory->add_subcommand("seed", "Validate a seed file and save it as a store");
    std::string seed_in, seed_out;
    mem_seed->add_option("input", seed_in, "Seed JSONL")->required();
    mem_seed->add_option("output", seed_out, "Store JSONL")->required();
    auto* mem_list = memory->add_subcommand("list", "List items in a store");
    std::string list_path;
    mem_list->add_option("store", list_path, "Store JSONL")->required();
    auto* mem_inspect = memory->add_subcommand("inspect", "Show one item, or recall for a query");
    std::string inspect_path, inspect_id, inspect_query;
    int inspect_k = 3;
    mem_inspect->add_option("store", inspect_path, "Store JSONL")->required();
    mem_inspect->add_option("--id", inspect_id, "Item id");
    mem_inspect->add_option("--query", inspect_query, "Recall query text");
    mem_inspect->add_option("-k", inspect_k, "Recall count");

    auto* templates = app.add_subcommand("templates", "Prompt and scene templates");
    templates->require_subcommand(1);
    auto* tpl_export = templates->add_subcommand("export", "Write the built-in templates as editable files");
    std::string export_dir;
    tpl_export->add_option("dir", export_dir, "Target directory")->required();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);

    try {
        if (run->parsed()) {
            print_report(run_experiment(build_config(g)));
        } else if (sweep->parsed()) {
            print_report(run_sweep(build_config(g)));
        } else if (ablate_refl->parsed()) {
            print_report(run_reflection_ablation(build_config(g)));
        } else if (ablate_comms->parsed()) {
            print_report(run_comms_ablation(build_config(g)));
        } else if (lifelong->parsed()) {
            ExperimentConfig c = build_config(g);
            c.reflection_on = c.reflection_on || g.config.empty();
            print_report(lifelong_run(c, checkpoints.empty() ? c.checkpoints : checkpoints));
        } else if (replay->parsed()) {
            const std::string out = g.out_dir.empty() ? std::string("out/replay") : g.out_dir;
            const ReplayOutcome r = replay_log(log_path, out);
            std::cout << fmt::format("{} ({} lines compared) -> {}\n", r.identical ? "identical" : "DIFFERENT",
                                     r.compared_lines, r.new_log_path);
            if (!r.identical) {
                std::cerr << "first difference at " << r.first_difference << "\n";
                return 3;
            }
        } else if (tpl_export->parsed()) {
            fs::create_directories(export_dir);
            const TemplateSet defaults = TemplateSet::defaults();
            for (const auto& [key, body] : defaults.all())
                write_file_atomic((fs::path(export_dir) / (key + ".txt")).string(), body + "\n");
            std::cout << fmt::format("{} templates -> {}\n", defaults.all().size(), export_dir);
        } else if (mem_seed->parsed()) {
            MemoryStore store;
            const std::size_t n = store.seed_from(resolve_path(seed_in));
            store.save(seed_out);
            std::cout << fmt::format("seeded {} items -> {}\n", n, seed_out);
        } else if (mem_list->parsed()) {
            LoadReport report;
            const MemoryStore store = MemoryStore::load(resolve_path(list_path), kDefaultEmbeddingDim, &report);
            for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
            for (const auto& it : store.items()) {
                std::string first = split_lines(it.scenario_text).empty() ? "" : split_lines(it.scenario_text).front();
                std::cout << fmt::format("{} {:<11} {:>3} {}\n", it.id, to_string(it.kind), it.created_at, first);
            }
        } else if (mem_inspect->parsed()) {
            const MemoryStore store = MemoryStore::load(resolve_path(inspect_path));
            if (!inspect_id.empty()) {
                const MemoryItem* it = store.find(inspect_id);
                if (it == nullptr) throw ValidationError("no item with id " + inspect_id);
                std::cout << memory_item_to_json(*it).dump(2) << "\n";
            } else if (!inspect_query.empty()) {
                for (const auto& [item, score] : store.recall_scored(inspect_query, inspect_k))
                    std::cout << fmt::format("{:.6f} {} {}\n", score, item.id, to_string(item.kind));
            } else {
                std::cout << fmt::format("{} items, dimension {}\n", store.size(), store.dim());
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
