#pragma once

// Independent reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "codriver/memory.hpp"

namespace codriver::oracles {

// Exhaustive scan with an explicit dot product.
inline std::vector<std::string> recall(const MemoryStore& store, const std::string& query, int k) {
    const Embedding q = embed(query, store.dim());
    std::vector<std::tuple<double, std::uint64_t, std::string>> all;
    for (const auto& it : store.items()) {
        if (it.kind == MemoryKind::Commonsense) continue;
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            dot += q[i] * it.embedding[i];
            na += q[i] * q[i];
            nb += it.embedding[i] * it.embedding[i];
        }
        const double score = (na == 0 || nb == 0) ? 0.0 : dot / std::sqrt(na * nb);
        all.emplace_back(score, it.created_at, it.id);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        return std::get<1>(a) < std::get<1>(b);
    });
    std::vector<std::string> out;
    for (int i = 0; i < k && i < static_cast<int>(all.size()); ++i) out.push_back(std::get<2>(all[i]));
    return out;
}

// Quartile i (1..3) by integer arithmetic on (n - 1) * i / 4.
inline double quartile(std::vector<double> data, int i) {
    std::sort(data.begin(), data.end());
    const long long m = static_cast<long long>(data.size()) - 1;
    const long long j = i * m / 4;
    const long long delta = i * m - 4 * j;
    if (j + 1 >= static_cast<long long>(data.size())) return data[static_cast<std::size_t>(j)];
    return (data[static_cast<std::size_t>(j)] * static_cast<double>(4 - delta) +
            data[static_cast<std::size_t>(j + 1)] * static_cast<double>(delta)) /
           4.0;
}

}  // namespace codriver::oracles
