#pragma once

#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace medforge::sim {

enum class GateKind : std::uint8_t { Dataset, Benchmark };
std::string_view to_string(GateKind g);
GateKind gate_from_string(std::string_view text);

// The dataset gate keeps pairs at or above its threshold; the benchmark gate
// requires strictly more than its threshold.
struct Thresholds {
    double dataset = 0.7;
    double benchmark = 0.95;
};

struct SimilarityReport {
    std::string pair_id;
    double similarity = 0.0;
    GateKind gate = GateKind::Dataset;
    bool passed = false;
};

void to_json(nlohmann::json& j, const SimilarityReport& r);

// u.v / (|u||v|), computed in double and clamped to [-1, 1].
// Throws std::invalid_argument on empty input, dimension mismatch or a zero vector.
double cosine(std::span<const double> u, std::span<const double> v);
double cosine(std::span<const float> u, std::span<const float> v);

// Throws std::invalid_argument when similarity is outside [-1, 1] or NaN.
bool gate(double similarity, GateKind kind, const Thresholds& thresholds = {});

SimilarityReport report(std::string pair_id, double similarity, GateKind kind, const Thresholds& thresholds = {});

}  // namespace medforge::sim
