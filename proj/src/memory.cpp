#include "codriver/memory.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace codriver {

using nlohmann::json;

std::string to_string(MemoryKind kind) {
    switch (kind) {
        case MemoryKind::Commonsense: return "commonsense";
        case MemoryKind::Experience: return "experience";
        case MemoryKind::Reflection: return "reflection";
    }
    return "experience";
}

MemoryKind memory_kind_from_string(std::string_view s) {
    if (iequals(s, "commonsense")) return MemoryKind::Commonsense;
    if (iequals(s, "experience")) return MemoryKind::Experience;
    if (iequals(s, "reflection")) return MemoryKind::Reflection;
    throw ValidationError(fmt::format("unknown memory kind '{}'", s));
}

std::vector<std::string> embedding_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        const bool numeric = std::all_of(cur.begin(), cur.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
        if (!numeric) tokens.push_back(cur);
        cur.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c) != 0)
            cur += static_cast<char>(std::tolower(c));
        else
            flush();
    }
    flush();
    return tokens;
}

Embedding embed(std::string_view text, int dim) {
    Embedding v(static_cast<std::size_t>(dim), 0.0);
    for (const auto& tok : embedding_tokens(text)) {
        const std::uint64_t h = fnv1a64(tok);
        const auto bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim));
        v[bucket] += (h >> 63) != 0 ? -1.0 : 1.0;
    }
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (n > 0.0)
        for (auto& x : v) x /= n;
    return v;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("embedding dimensions differ");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

std::optional<MetaAction> parse_decision_string(std::string_view s) {
    const auto comma = s.rfind(',');
    std::string name_part = trim(comma == std::string_view::npos ? s : s.substr(0, comma));
    auto name = meta_action_from_phrase(name_part);
    if (!name) return std::nullopt;
    MetaAction a{*name, std::nullopt};
    if (comma != std::string_view::npos) {
        const std::string id_part = trim(s.substr(comma + 1));
        try {
            std::size_t used = 0;
            const int id = std::stoi(id_part, &used);
            if (used != id_part.size()) return std::nullopt;
            a.declared_id = id;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    return a;
}

std::string decision_string(const MetaAction& a) {
    std::string name = to_lower(to_string(a.name));
    if (!a.declared_id) return name;
    return fmt::format("{}, {}", name, *a.declared_id);
}

std::string memory_item_id(const MemoryFields& f) {
    std::string key = to_string(f.kind);
    key += '\x1f';
    key += f.scenario_text;
    key += '\x1f';
    key += f.reasoning;
    key += '\x1f';
    if (f.decision) key += decision_string(*f.decision);
    return to_hex(fnv1a64(key));
}

namespace {

void validate(const MemoryFields& f) {
    if (f.kind != MemoryKind::Commonsense && trim(f.scenario_text).empty())
        throw ValidationError(to_string(f.kind) + " item needs a scenario description");
    switch (f.kind) {
        case MemoryKind::Commonsense:
            if (trim(f.scenario_text).empty()) throw ValidationError("commonsense item needs rule text");
            break;
        case MemoryKind::Experience:
            if (trim(f.reasoning).empty() || !f.decision)
                throw ValidationError("experience item needs reasoning and decision");
            break;
        case MemoryKind::Reflection:
            if (trim(f.lessons).empty()) throw ValidationError("reflection item needs lessons");
            break;
    }
}

std::string embedding_digest(const Embedding& e) {
    std::string bytes(e.size() * sizeof(double), '\0');
    std::memcpy(bytes.data(), e.data(), bytes.size());
    return to_hex(fnv1a64(bytes));
}

}  // namespace

MemoryItem MemoryStore::add_item(const MemoryFields& fields) {
    validate(fields);
    const std::string id = memory_item_id(fields);
    if (const auto* existing = find(id)) return *existing;
    MemoryItem item;
    item.id = id;
    item.kind = fields.kind;
    item.scenario_text = fields.scenario_text;
    item.reasoning = fields.reasoning;
    item.decision = fields.decision;
    item.lessons = fields.lessons;
    item.embedding = embed(fields.scenario_text, dim_);
    item.created_at = next_created_++;
    items_.push_back(item);
    return item;
}

const MemoryItem* MemoryStore::find(std::string_view id) const {
    for (const auto& it : items_)
        if (it.id == id) return &it;
    return nullptr;
}

std::vector<std::pair<MemoryItem, double>> MemoryStore::recall_scored(std::string_view query_text, int k) const {
    if (k <= 0) return {};
    const Embedding q = embed(query_text, dim_);
    std::vector<std::pair<const MemoryItem*, double>> scored;
    for (const auto& it : items_) {
        if (it.kind == MemoryKind::Commonsense) continue;
        scored.emplace_back(&it, cosine(q, it.embedding));
    }
    auto better = [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first->created_at < b.first->created_at;
    };
    const auto take = std::min(scored.size(), static_cast<std::size_t>(k));
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
    std::vector<std::pair<MemoryItem, double>> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.emplace_back(*scored[i].first, scored[i].second);
    return out;
}

std::vector<MemoryItem> MemoryStore::recall(std::string_view query_text, int k) const {
    std::vector<MemoryItem> out;
    for (auto& [item, score] : recall_scored(query_text, k)) out.push_back(std::move(item));
    return out;
}

std::vector<std::string> MemoryStore::commonsense_rules() const {
    std::vector<std::string> rules;
    for (const auto& it : items_)
        if (it.kind == MemoryKind::Commonsense) rules.push_back(it.scenario_text);
    return rules;
}

std::size_t MemoryStore::count(MemoryKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(items_.begin(), items_.end(), [&](const MemoryItem& it) { return it.kind == kind; }));
}

MemoryFields memory_fields_from_json(const json& j) {
    MemoryFields f;
    f.kind = memory_kind_from_string(j.at("kind").get<std::string>());
    f.scenario_text = j.value("scenario_text", std::string());
    f.reasoning = j.value("reasoning", std::string());
    f.lessons = j.value("lessons", std::string());
    if (j.contains("decision") && !j["decision"].is_null()) {
        const auto& d = j["decision"];
        if (d.is_string()) {
            f.decision = parse_decision_string(d.get<std::string>());
            if (!f.decision) throw ValidationError("unparseable decision " + d.dump());
        } else {
            auto name = meta_action_from_phrase(d.at("name").get<std::string>());
            if (!name) throw ValidationError("unknown decision name " + d.dump());
            MetaAction a{*name, std::nullopt};
            if (d.contains("id") && !d["id"].is_null()) a.declared_id = d["id"].get<int>();
            f.decision = a;
        }
    }
    return f;
}

json memory_item_to_json(const MemoryItem& item) {
    json j{{"id", item.id},
           {"kind", to_string(item.kind)},
           {"scenario_text", item.scenario_text},
           {"reasoning", item.reasoning},
           {"created_at", item.created_at},
           {"embedding_dim", item.embedding.size()},
           {"embedding_digest", embedding_digest(item.embedding)}};
    if (item.decision) {
        json d{{"name", to_string(item.decision->name)}};
        if (item.decision->declared_id) d["id"] = *item.decision->declared_id;
        j["decision"] = d;
    } else {
        j["decision"] = nullptr;
    }
    if (!item.lessons.empty()) j["lessons"] = item.lessons;
    return j;
}

std::size_t MemoryStore::seed_from(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open memory seed file: " + path);
    // Validate everything first so a bad line leaves the store untouched.
    std::vector<MemoryFields> pending;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto fields = memory_fields_from_json(json::parse(line));
            validate(fields);
            pending.push_back(std::move(fields));
        } catch (const std::exception& e) {
            throw ValidationError(fmt::format("{}: line {}: {}", path, line_no, e.what()));
        }
    }
    const std::size_t before = items_.size();
    for (const auto& f : pending) add_item(f);
    return items_.size() - before;
}

void MemoryStore::save(const std::string& path) const {
    std::string out;
    for (const auto& it : items_) {
        out += memory_item_to_json(it).dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

MemoryStore MemoryStore::load(const std::string& path, int dim, LoadReport* report) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open memory file: " + path);
    LoadReport local;
    LoadReport& rep = report != nullptr ? *report : local;
    MemoryStore store(dim);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        MemoryFields f;
        try {
            j = json::parse(line);
            f = memory_fields_from_json(j);
            validate(f);
        } catch (const std::exception& e) {
            throw ValidationError(fmt::format("{}: line {}: {}", path, line_no, e.what()));
        }
        MemoryItem item;
        item.id = memory_item_id(f);
        item.kind = f.kind;
        item.scenario_text = f.scenario_text;
        item.reasoning = f.reasoning;
        item.decision = f.decision;
        item.lessons = f.lessons;
        item.embedding = embed(f.scenario_text, dim);
        item.created_at = j.value("created_at", store.next_created_);
        if (j.contains("id") && j["id"].get<std::string>() != item.id)
            rep.warnings.push_back(fmt::format("line {}: stored id {} does not match content", line_no,
                                               j["id"].get<std::string>()));
        if (j.contains("embedding_dim") && j["embedding_dim"].get<int>() != dim) {
            ++rep.reembedded;
            rep.warnings.push_back(fmt::format("line {}: embedding dimension {} -> {}, re-embedded", line_no,
                                               j["embedding_dim"].get<int>(), dim));
        } else if (j.contains("embedding_digest") &&
                   j["embedding_digest"].get<std::string>() != embedding_digest(item.embedding)) {
            ++rep.drifted;
            rep.warnings.push_back(fmt::format("line {}: embedding drift, re-embedded", line_no));
        }
        if (store.find(item.id) != nullptr) continue;
        store.items_.push_back(std::move(item));
        store.next_created_ = std::max(store.next_created_, store.items_.back().created_at + 1);
    }
    std::stable_sort(store.items_.begin(), store.items_.end(),
                     [](const MemoryItem& a, const MemoryItem& b) { return a.created_at < b.created_at; });
    for (std::size_t i = 1; i < store.items_.size(); ++i)
        if (store.items_[i].created_at == store.items_[i - 1].created_at)
            throw ValidationError(fmt::format("{}: duplicate created_at {}", path, store.items_[i].created_at));
    for (const auto& w : rep.warnings) spdlog::warn("memory load: {}", w);
    return store;
}

}  // namespace codriver
