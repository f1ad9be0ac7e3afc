#include "medforge/simfilter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace medforge::sim {

std::string_view to_string(GateKind g) { return g == GateKind::Dataset ? "dataset" : "benchmark"; }

GateKind gate_from_string(std::string_view text) {
    if (text == "dataset" || text == "Dataset") return GateKind::Dataset;
    if (text == "benchmark" || text == "Benchmark") return GateKind::Benchmark;
    throw std::invalid_argument("unknown gate \"" + std::string(text) + "\"");
}

void to_json(nlohmann::json& j, const SimilarityReport& r) {
    j = nlohmann::json{{"pair_id", r.pair_id},
                       {"similarity", r.similarity},
                       {"gate", std::string(to_string(r.gate))},
                       {"passed", r.passed}};
}

double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.empty() || v.empty()) throw std::invalid_argument("cosine: empty vector");
    if (u.size() != v.size()) {
        throw std::invalid_argument("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                                    std::to_string(v.size()) + ")");
    }
    double dot = 0.0;
    double uu = 0.0;
    double vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) throw std::invalid_argument("cosine: zero vector");
    double c = dot / (std::sqrt(uu) * std::sqrt(vv));
    return std::clamp(c, -1.0, 1.0);
}

double cosine(std::span<const float> u, std::span<const float> v) {
    std::vector<double> a(u.begin(), u.end());
    std::vector<double> b(v.begin(), v.end());
    return cosine(std::span<const double>(a), std::span<const double>(b));
}

bool gate(double similarity, GateKind kind, const Thresholds& thresholds) {
    if (!(similarity >= -1.0 && similarity <= 1.0)) {
        throw std::invalid_argument("similarity must be in [-1, 1]");
    }
    return kind == GateKind::Dataset ? similarity >= thresholds.dataset : similarity > thresholds.benchmark;
}

SimilarityReport report(std::string pair_id, double similarity, GateKind kind, const Thresholds& thresholds) {
    return {std::move(pair_id), similarity, kind, gate(similarity, kind, thresholds)};
}

}  // namespace medforge::sim
