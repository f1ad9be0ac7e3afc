#pragma once

// Planted evaluation runs: a key and a run with a chosen number of correct
// answers per category.

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "medforge/evalharness.hpp"

namespace medforge::testing {

struct Planted {
    bench::AnswerKey key;
    std::vector<eval::RunRecord> run;
};

// counts[k] items in category k, the first correct[k] answered right, the
// next one unparseable, the rest wrong.
inline Planted planted_run(const std::string& model, const std::array<int, kCategoryCount>& counts,
                           const std::array<int, kCategoryCount>& correct, Split split = Split::Synthetic,
                           const std::string& id_prefix = "") {
    Planted p;
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
        for (int i = 0; i < counts[k]; ++i) {
            std::string id = id_prefix + std::string(to_string(kAllCategories[k])) + "-" + std::to_string(i);
            int answer = static_cast<int>((k + static_cast<std::size_t>(i)) % 4);
            p.key.answers[id] = answer;
            ++p.key.counts[kAllCategories[k]];
            ++p.key.split_counts[split];
            eval::RunRecord r;
            r.item_id = id;
            r.model = model;
            r.category = kAllCategories[k];
            r.split = split;
            if (i < correct[k]) {
                r.parsed_index = answer;
            } else if (i == correct[k]) {
                r.unparseable_reason = "no-choice";
            } else {
                r.parsed_index = (answer + 1) % 4;
            }
            p.run.push_back(r);
        }
    }
    return p;
}

// Smallest (correct, count) with count in [lo, hi] whose percentage lies
// within tol of a printed cell; the hint count is tried first.
inline std::optional<std::pair<int, int>> fraction_for(double cell, int hint, int lo = 8, int hi = 24,
                                                       double tol = 0.01) {
    auto try_n = [&](int n) -> std::optional<std::pair<int, int>> {
        int k = static_cast<int>(std::lround(cell * n / 100.0));
        if (k >= 0 && k <= n && std::fabs(100.0 * k / n - cell) < tol) return std::make_pair(k, n);
        return std::nullopt;
    };
    if (auto f = try_n(hint)) return f;
    for (int n = lo; n <= hi; ++n) {
        if (auto f = try_n(n)) return f;
    }
    return std::nullopt;
}

// Per-category item counts implied by the denominators in the published
// category table.
inline constexpr std::array<int, kCategoryCount> kImpliedCounts{14, 16, 13, 14, 15, 16, 18, 12, 19, 14, 14};

}  // namespace medforge::testing
