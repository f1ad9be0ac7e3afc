#pragma once

// Shared fixtures: scratch directories and the published score tables.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace medforge::testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("medforge-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Per-category accuracy table: Object .. Universality, then Avg.
struct CategoryRow {
    const char* model;
    double cells[11];
    double avg;
};

inline const std::vector<CategoryRow>& category_table() {
    static const std::vector<CategoryRow> rows = {
        {"Human", {85.71, 100, 100, 100, 100, 93.75, 100, 75, 100, 100, 92.86}, 95.21},
        {"GPT-4o-2024-08-06", {57.14, 56.25, 61.54, 57.14, 33.33, 43.75, 50.00, 66.67, 31.58, 42.86, 64.29}, 51.32},
        {"GPT-4.1-2025-04-14", {71.43, 62.50, 61.54, 50.00, 33.33, 50.00, 61.11, 66.67, 47.37, 42.86, 50.00}, 54.26},
        {"Claude3.7 Sonnet", {57.14, 43.75, 46.15, 35.71, 46.67, 25.00, 38.89, 50.00, 15.79, 42.86, 42.86}, 40.44},
        {"Qwen-VL-Plus-25-03", {57.14, 56.25, 61.54, 42.86, 33.33, 31.25, 38.89, 66.67, 47.37, 50.00, 35.71}, 47.36},
        {"Doubao-1.5-vision-pro", {69.23, 37.50, 69.23, 50.00, 50.00, 50.00, 38.89, 66.67, 52.63, 42.86, 42.86}, 51.81},
        {"Qwen2-VL-7B", {35.71, 43.75, 61.54, 42.86, 46.67, 31.25, 50.00, 33.33, 21.05, 28.57, 28.57}, 38.48},
        {"Qwen2-VL-7B (ours)", {42.86, 43.75, 53.85, 57.14, 53.33, 50.00, 55.56, 58.33, 36.84, 42.86, 28.57}, 47.55},
        {"Qwen2.5-VL-7B", {53.85, 50.00, 38.46, 42.86, 12.50, 18.75, 44.44, 50.00, 26.32, 42.86, 57.14}, 39.74},
        {"Qwen2.5-VL-7B (ours)", {57.14, 56.25, 53.84, 42.86, 46.67, 43.75, 55.56, 50.00, 47.37, 50.00, 64.29}, 51.61},
        {"LLaVA-V1.6-7B", {64.29, 37.50, 30.77, 21.43, 33.33, 25.00, 27.78, 25.00, 26.32, 21.43, 28.57}, 31.04},
        {"LLaVA-V1.6-7B (ours)", {57.14, 37.50, 46.15, 42.86, 46.67, 37.50, 44.44, 33.33, 42.11, 28.57, 28.57}, 40.44},
        {"LLaMA-3.2-11B", {46.15, 43.75, 38.46, 50.00, 50.00, 25.00, 22.22, 33.33, 15.79, 21.43, 35.71}, 34.71},
        {"LLaMA-3.2-11B (ours)", {38.46, 62.50, 46.15, 35.71, 37.50, 37.50, 33.33, 41.67, 31.58, 42.86, 42.86}, 40.92},
    };
    return rows;
}

// External-benchmark rows: Pope, Coarse, Fine, Visual_Sim, Visual_Corr,
// Count, MMVP, then Ave and MME. Rows repeated between the two tables
// appear once.
struct ExternalGolden {
    const char* model;
    std::optional<double> cells[7];
    double ave;
    double mme;
};

inline const std::vector<ExternalGolden>& external_table() {
    static const std::vector<ExternalGolden> rows = {
        {"Qwen2-VL-7B", {92.50, 71.21, 48.24, 51.11, 30.23, 55.83, 31.33}, 54.35, 1679.52},
        {"Qwen2-VL-7B (Ours)", {96.27, 73.92, 46.16, 51.85, 33.72, 59.17, 32.67}, 56.25, 1681.27},
        {"Qwen2-VL-7B + trained-ViT", {93.79, 73.81, 49.17, 51.11, 31.40, 53.28, 32.00}, 54.94, 1668.18},
        {"Qwen2.5-VL-7B", {96.29, 73.95, 57.35, 49.63, 33.72, 50.00, 27.33}, 55.47, 1685.14},
        {"Qwen2.5-VL-7B + trained-ViT", {96.43, 75.26, 58.75, 50.37, 33.14, 55.00, 31.33}, 57.18, 1694.83},
        {"Qwen2.5-VL-7B (Ours)", {97.52, 75.97, 59.36, 51.85, 37.79, 59.17, 28.00}, 58.52, 1701.87},
        {"LLaVA-V1.6-7B", {95.56, 58.28, 31.93, 51.11, 21.51, 45.83, 28.67}, 47.56, 1441.89},
        {"LLaVA-V1.6-7B (Ours)", {97.39, 56.74, 35.13, 48.14, 24.42, 49.17, 30.00}, 48.71, 1420.57},
        {"LLaMA-3.2-11B", {std::nullopt, 69.03, 48.94, 43.70, 20.93, 44.17, 26.00}, 42.13, 1421.71},
        {"LLaMA-3.2-11B (Ours)", {std::nullopt, 72.60, 47.21, 45.93, 19.19, 50.00, 28.00}, 43.82, 1430.67},
    };
    return rows;
}

}  // namespace medforge::testing
