// medforge command-line interface.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "medforge/benchgen.hpp"
#include "medforge/content_store.hpp"
#include "medforge/datamodel.hpp"
#include "medforge/evalharness.hpp"
#include "medforge/mocks.hpp"
#include "medforge/objectives.hpp"
#include "medforge/pipeline.hpp"
#include "medforge/prompts.hpp"
#include "medforge/review_http.hpp"
#include "medforge/reviewsvc.hpp"
#include "medforge/simfilter.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace medforge;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    try {
        return json::parse(slurp(p));
    } catch (const json::exception& e) {
        throw std::runtime_error(p.string() + ": " + e.what());
    }
}

pipeline::Stage stage_arg(const std::string& name) {
    auto s = pipeline::parse_stage(name);
    if (!s) throw CLI::ValidationError("unknown stage \"" + name + "\"");
    return *s;
}

review::ReviewServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"medforge: edited image-pair datasets, edit-detection benchmarks and evaluation"};
    app.require_subcommand(1);

    // mock-corpus ------------------------------------------------------------
    auto* mock = app.add_subcommand("mock-corpus", "Write a synthetic source corpus (and optional real pairs)");
    fs::path mock_store, mock_out;
    std::optional<fs::path> mock_real_out;
    std::size_t mock_n = 50, mock_real_n = 35;
    std::uint64_t mock_seed = 0;
    mock->add_option("--store", mock_store, "Image store directory")->required();
    mock->add_option("--out", mock_out, "samples.jsonl to write")->required();
    mock->add_option("--n", mock_n, "Number of samples");
    mock->add_option("--seed", mock_seed, "Seed");
    mock->add_option("--real-out", mock_real_out, "Also write mock real pairs here");
    mock->add_option("--real-n", mock_real_n, "Number of real pairs");

    // samples import -----------------------------------------------------------
    auto* samples = app.add_subcommand("samples", "Source sample utilities");
    samples->require_subcommand(1);
    auto* import = samples->add_subcommand("import", "Import images + captions into the store");
    fs::path imp_in, imp_store, imp_out;
    import->add_option("--in", imp_in, "JSONL with {image, caption, source?}")->required();
    import->add_option("--store", imp_store, "Image store directory")->required();
    import->add_option("--out", imp_out, "samples.jsonl to write")->required();

    // pipeline run -------------------------------------------------------------
    auto* pipe = app.add_subcommand("pipeline", "Dataset construction pipeline");
    pipe->require_subcommand(1);
    auto* prun = pipe->add_subcommand("run", "Run (or resume) the construction stages");
    fs::path p_config, p_in, p_out;
    std::optional<std::string> p_from, p_stop;
    std::optional<std::uint64_t> p_seed;
    prun->add_option("--config", p_config, "Pipeline config JSON")->required();
    prun->add_option("--in", p_in, "samples.jsonl")->required();
    prun->add_option("--out-dir", p_out, "Output directory")->required();
    prun->add_option("--from", p_from, "Discard checkpoints from this stage on");
    prun->add_option("--seed", p_seed, "Override the config seed");
    prun->add_option("--stop-after", p_stop, "Stop once this stage has committed");

    // sim ------------------------------------------------------------------------
    auto* simc = app.add_subcommand("sim", "Apply a similarity gate to pairs.jsonl");
    fs::path s_pairs;
    std::string s_gate = "dataset";
    std::optional<double> s_threshold;
    simc->add_option("--pairs", s_pairs, "pairs.jsonl")->required();
    simc->add_option("--gate", s_gate, "dataset|benchmark")->check(CLI::IsMember({"dataset", "benchmark"}));
    simc->add_option("--threshold", s_threshold, "Override the gate threshold");

    // bench assemble -------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "Benchmark assembly");
    bench->require_subcommand(1);
    auto* bass = bench->add_subcommand("assemble", "Assemble benchmark items and the answer key");
    fs::path b_config, b_out, b_key;
    bool b_strict = false;
    bass->add_option("--config", b_config, "Bench config JSON")->required();
    bass->add_option("--out", b_out, "benchmark.jsonl")->required();
    bass->add_option("--key", b_key, "key.json")->required();
    bass->add_flag("--strict-count", b_strict, "Fail unless the synthetic total equals the target");

    // eval -------------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Model evaluation");
    ev->require_subcommand(1);
    auto* erun = ev->add_subcommand("run", "Query a model on every benchmark item");
    fs::path e_bench, e_key, e_model, e_out;
    erun->add_option("--bench", e_bench, "benchmark.jsonl")->required();
    erun->add_option("--key", e_key, "key.json")->required();
    erun->add_option("--model-config", e_model, "Model config JSON")->required();
    erun->add_option("--out", e_out, "run.jsonl")->required();

    auto* escore = ev->add_subcommand("score", "Score one or more runs");
    std::vector<fs::path> sc_runs;
    fs::path sc_key;
    std::string sc_format = "md";
    std::optional<fs::path> sc_json;
    escore->add_option("--run", sc_runs, "run.jsonl (repeatable)")->required();
    escore->add_option("--key", sc_key, "key.json")->required();
    escore->add_option("--format", sc_format, "md|csv")->check(CLI::IsMember({"md", "csv"}));
    escore->add_option("--json", sc_json, "Also write score tables as JSON");

    auto* et2 = ev->add_subcommand("table2", "Average external-benchmark rows");
    fs::path t2_scores;
    et2->add_option("--scores", t2_scores, "scores JSON")->required();

    // objectives -------------------------------------------------------------------
    auto* obj = app.add_subcommand("objectives", "Toy training objectives");
    obj->require_subcommand(1);
    auto* odemo = obj->add_subcommand("demo", "Mixture identity and gradient checks as JSON");
    std::uint64_t o_seed = 0;
    odemo->add_option("--seed", o_seed, "Seed");

    // prompts ----------------------------------------------------------------------
    auto* prm = app.add_subcommand("prompts", "Prompt templates");
    prm->require_subcommand(1);
    auto* pdump = prm->add_subcommand("dump", "Write the built-in templates as editable files");
    fs::path pd_out;
    pdump->add_option("--out", pd_out, "Directory")->required();

    // serve ------------------------------------------------------------------------
    auto* serve = app.add_subcommand("serve", "Review service over HTTP");
    int sv_port = 8080;
    std::string sv_host = "127.0.0.1";
    fs::path sv_store;
    serve->add_option("--port", sv_port, "Port");
    serve->add_option("--host", sv_host, "Bind address");
    serve->add_option("--store", sv_store, "Pipeline run directory (holds pairs.jsonl, run.json)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*mock) {
            ContentStore store(mock_store);
            auto corpus = providers::make_mock_corpus(store, mock_n, mock_seed);
            write_jsonl(mock_out, corpus);
            json summary{{"samples", corpus.size()}, {"out", mock_out.string()}};
            if (mock_real_out) {
                providers::ProjectionEmbedder emb(512, mock_seed);
                auto real = bench::make_mock_real_pairs(store, emb, mock_real_n, mock_seed);
                std::string lines;
                for (const auto& r : real) lines += json(r).dump() + "\n";
                write_file_atomic(*mock_real_out, lines);
                summary["real_pairs"] = real.size();
            }
            std::cout << summary.dump(2) << "\n";
        } else if (*import) {
            ContentStore store(imp_store);
            std::vector<SourceSample> out;
            std::size_t line_no = 0;
            for (const auto& line : read_lines(imp_in)) {
                ++line_no;
                json j;
                try {
                    j = json::parse(line);
                } catch (const json::exception& e) {
                    throw ParseError(line_no, e.what());
                }
                fs::path img = j.at("image").get<std::string>();
                if (img.is_relative()) img = imp_in.parent_path() / img;
                std::string bytes = slurp(img);
                check_decodable(bytes);
                std::string src = j.value("source", "Other:import");
                Source source = src == "DOCCI"          ? Source::docci()
                                : src == "VisualGenome" ? Source::visual_genome()
                                : Source::other(src.rfind("Other:", 0) == 0 ? src.substr(6) : src);
                out.push_back(make_source_sample(bytes, store.put(bytes), j.at("caption").get<std::string>(), source));
            }
            write_jsonl(imp_out, out);
            std::cout << json{{"samples", out.size()}}.dump() << "\n";
        } else if (*prun) {
            json cj = read_json(p_config);
            auto cfg = pipeline::config_from_json(cj, p_config.parent_path());
            if (p_seed) cfg.seed = *p_seed;
            auto providers = pipeline::make_providers(cfg);
            auto input = read_jsonl<SourceSample>(p_in);
            pipeline::RunOptions opts;
            if (p_from) opts.from = stage_arg(*p_from);
            if (p_stop) opts.stop_after = stage_arg(*p_stop);
            auto manifest = pipeline::run(cfg, providers, input, p_out, opts);
            std::cout << pipeline::to_json(manifest).dump(2) << "\n";
        } else if (*simc) {
            auto gate = sim::gate_from_string(s_gate);
            sim::Thresholds th;
            if (s_threshold) (gate == sim::GateKind::Dataset ? th.dataset : th.benchmark) = *s_threshold;
            std::size_t passed = 0, total = 0, missing = 0;
            for (const auto& p : read_jsonl<EditedPair>(s_pairs)) {
                if (!p.similarity) {
                    ++missing;
                    continue;
                }
                auto r = sim::report(p.pair_id, *p.similarity, gate, th);
                std::cout << json(r).dump() << "\n";
                ++total;
                passed += r.passed ? 1 : 0;
            }
            std::cerr << json{{"gate", s_gate}, {"total", total}, {"passed", passed}, {"missing_similarity", missing}}
                             .dump()
                      << "\n";
        } else if (*bass) {
            json cj = read_json(b_config);
            auto cfg = bench::bench_config_from_json(cj, b_config.parent_path());
            auto chat = providers::make_chat_provider(cfg.text, cfg.seed);
            auto inputs = bench::load_inputs(cfg);
            auto a = bench::assemble(cfg, *chat, inputs, b_strict);
            bench::write_assembly(a, b_out, b_key, cfg.sft_out_path);
            json summary = bench::to_json(a.summary);
            summary["sft_out"] = cfg.sft_out_path.string();
            std::cout << summary.dump(2) << "\n";
        } else if (*erun) {
            auto mc = eval::model_config_from_json(read_json(e_model), e_model.parent_path());
            auto key = bench::load_key(e_key);
            auto items = read_jsonl<BenchmarkItem>(e_bench);
            ContentStore store(mc.store_dir);
            auto chat = providers::make_chat_provider(mc.provider, mc.seed);
            auto run = eval::run_eval(*chat, store, items, key, mc);
            std::string lines;
            std::size_t unparsed = 0;
            for (const auto& r : run) {
                lines += json(r).dump() + "\n";
                unparsed += r.parsed_index ? 0 : 1;
            }
            write_file_atomic(e_out, lines);
            std::cout << json{{"items", run.size()}, {"unparseable", unparsed}, {"out", e_out.string()}}.dump() << "\n";
        } else if (*escore) {
            auto key = bench::load_key(sc_key);
            std::vector<eval::ScoreTable> tables;
            for (const auto& path : sc_runs) {
                std::vector<eval::RunRecord> run;
                std::size_t line_no = 0;
                for (const auto& line : read_lines(path)) run.push_back(from_jsonl_line<eval::RunRecord>(line, ++line_no));
                auto t = eval::score(run, key);
                if (t.model.empty()) t.model = path.stem().string();
                tables.push_back(std::move(t));
            }
            if (sc_json) {
                json arr = json::array();
                for (const auto& t : tables) arr.push_back(eval::to_json(t));
                write_file_atomic(*sc_json, arr.dump(2) + "\n");
            }
            std::cout << (sc_format == "csv" ? eval::report_csv(tables) : eval::report_markdown(tables));
        } else if (*et2) {
            auto table = eval::external_table_from_json(read_json(t2_scores));
            std::cout << eval::external_markdown(table);
        } else if (*pdump) {
            fs::create_directories(pd_out);
            PromptRegistry reg = PromptRegistry::defaults();
            for (auto role : kAllPromptRoles) {
                write_file_atomic(pd_out / (std::string(to_string(role)) + ".txt"), format_prompt_file(reg.get(role)));
            }
            fmt::print("{}\n", json{{"written", kAllPromptRoles.size()}, {"out", pd_out.string()}}.dump());
        } else if (*odemo) {
            std::cout << objectives::demo(o_seed).dump(2) << "\n";
        } else if (*serve) {
            review::ReviewService service(sv_store);
            review::ReviewServer server(service, review::token_from_env());
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << fmt::format("serving {} pairs on http://{}:{}\n", service.pool_size(), sv_host, sv_port);
            if (!server.listen(sv_host, sv_port)) throw std::runtime_error("could not listen on port " + std::to_string(sv_port));
            g_server = nullptr;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
