#pragma once

// Cognitive memory: commonsense rules, experience records and reflection
// lessons, recalled by cosine similarity over feature-hashed embeddings.

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codriver/sim.hpp"

namespace codriver {

enum class MemoryKind { Commonsense, Experience, Reflection };

std::string to_string(MemoryKind kind);
MemoryKind memory_kind_from_string(std::string_view s);

inline constexpr int kDefaultEmbeddingDim = 256;

using Embedding = std::vector<double>;

// Lowercased alphanumeric tokens, pure-number tokens dropped, FNV-1a bucketed
// with a sign taken from bit 63, then L2-normalized. No tokens: zero vector.
Embedding embed(std::string_view text, int dim = kDefaultEmbeddingDim);
std::vector<std::string> embedding_tokens(std::string_view text);
double cosine(std::span<const double> a, std::span<const double> b);

struct MemoryFields {
    MemoryKind kind = MemoryKind::Experience;
    std::string scenario_text;
    std::string reasoning;
    std::optional<MetaAction> decision;
    std::string lessons;
};

struct MemoryItem {
    std::string id;
    MemoryKind kind = MemoryKind::Experience;
    std::string scenario_text;
    std::string reasoning;
    std::optional<MetaAction> decision;
    std::string lessons;
    Embedding embedding;
    std::uint64_t created_at = 0;

    bool operator==(const MemoryItem&) const = default;
};

// "idle, 1" / "decelerate" -> MetaAction.
std::optional<MetaAction> parse_decision_string(std::string_view s);
std::string decision_string(const MetaAction& a);  // "idle, 1"

std::string memory_item_id(const MemoryFields& fields);

struct LoadReport {
    std::size_t reembedded = 0;  // dimension changed
    std::size_t drifted = 0;     // same dimension, different stored digest
    std::vector<std::string> warnings;
};

class MemoryStore {
public:
    explicit MemoryStore(int dim = kDefaultEmbeddingDim) : dim_(dim) {}

    // Duplicate content ids return the existing item unchanged.
    MemoryItem add_item(const MemoryFields& fields);
    // Top-k Experience/Reflection items, similarity descending, older first on ties.
    std::vector<MemoryItem> recall(std::string_view query_text, int k) const;
    std::vector<std::pair<MemoryItem, double>> recall_scored(std::string_view query_text, int k) const;

    // JSON Lines seed file; returns the number of newly added items.
    std::size_t seed_from(const std::string& path);
    void save(const std::string& path) const;
    static MemoryStore load(const std::string& path, int dim = kDefaultEmbeddingDim, LoadReport* report = nullptr);

    std::vector<std::string> commonsense_rules() const;
    std::size_t count(MemoryKind kind) const;
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    int dim() const { return dim_; }
    const std::vector<MemoryItem>& items() const { return items_; }
    const MemoryItem* find(std::string_view id) const;

    bool operator==(const MemoryStore&) const = default;

private:
    int dim_;
    std::vector<MemoryItem> items_;
    std::uint64_t next_created_ = 1;
};

nlohmann::json memory_item_to_json(const MemoryItem& item);
MemoryFields memory_fields_from_json(const nlohmann::json& j);

// Single-writer, many-reader wrapper: readers take immutable snapshots;
// writes copy-on-write under a mutex.
class SharedMemory {
public:
    explicit SharedMemory(MemoryStore store) : current_(std::make_shared<const MemoryStore>(std::move(store))) {}

    std::shared_ptr<const MemoryStore> snapshot() const {
        std::lock_guard lock(mutex_);
        return current_;
    }

    template <typename Fn>
    auto ingest(Fn&& fn) {
        std::lock_guard lock(mutex_);
        auto next = std::make_shared<MemoryStore>(*current_);
        auto result = fn(*next);
        current_ = std::move(next);
        return result;
    }

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const MemoryStore> current_;
};

}  // namespace codriver
