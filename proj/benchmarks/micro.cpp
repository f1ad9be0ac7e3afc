// Hot paths: similarity, reply parsing, scoring and the toy SFT gradient.

#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "medforge/benchgen.hpp"
#include "medforge/digest.hpp"
#include "medforge/evalharness.hpp"
#include "medforge/objectives.hpp"
#include "medforge/simfilter.hpp"

using namespace medforge;

static void BM_cosine(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    std::vector<double> u(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = g(rng);
        v[i] = g(rng);
    }
    for (auto _ : state) benchmark::DoNotOptimize(sim::cosine(u, v));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_cosine)->Arg(512)->Arg(768)->Arg(4096);

static void BM_parse_choice(benchmark::State& state) {
    const std::array<std::string, kOptionCount> options = {
        "The mug is now red", "The mug was removed", "A second mug was added", "The mug moved to the left"};
    const std::vector<std::string> replies = {
        "B",
        "The answer is (C).",
        "I think the mug was removed from the table.",
        "Looking at both images carefully, the change is that the mug moved to the left of the plate, so D.",
        "none of these",
    };
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval::parse_choice(replies[i % replies.size()], options));
        ++i;
    }
}
BENCHMARK(BM_parse_choice);

static void BM_score(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    bench::AnswerKey key;
    std::vector<eval::RunRecord> run;
    for (std::size_t i = 0; i < n; ++i) {
        std::string id = derive_id({"item", std::to_string(i)});
        EditCategory c = kAllCategories[i % kCategoryCount];
        key.answers[id] = static_cast<int>(i % 4);
        ++key.counts[c];
        ++key.split_counts[Split::Synthetic];
        eval::RunRecord r;
        r.item_id = id;
        r.model = "m";
        r.category = c;
        r.parsed_index = static_cast<int>((i * 7) % 4);
        run.push_back(r);
    }
    for (auto _ : state) benchmark::DoNotOptimize(eval::score(run, key).macro_average());
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_score)->Arg(200)->Arg(5000);

static void BM_sft_gradient(benchmark::State& state) {
    using namespace objectives;
    const int m = 16, d = 8, V = 32, L = 6;
    ToyEncoders enc = ToyEncoders::random(m, d, V, L, 3);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> tok(0, V - 1);
    std::vector<EditTriplet> set;
    for (int i = 0; i < state.range(0); ++i) {
        EditTriplet t{VectorXd::Random(m), VectorXd::Random(m), {}};
        for (int k = 0; k < L; ++k) t.difference.push_back(tok(rng));
        set.push_back(std::move(t));
    }
    Gradients g = zeros_like(enc);
    for (auto _ : state) benchmark::DoNotOptimize(sft_loss(enc, set, &g));
}
BENCHMARK(BM_sft_gradient)->Arg(64)->Arg(512);

BENCHMARK_MAIN();
