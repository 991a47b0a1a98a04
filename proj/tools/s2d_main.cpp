// s2d command line: train desk-scale models, run single decodes, and
// drive the bench/sweep/compare experiment grid.
//
// Exit codes: 0 ok, 1 runtime failure (missing files, I/O), 2 usage
// error, 3 config/validation error.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "s2d/bench.hpp"
#include "s2d/decode.hpp"
#include "s2d/errors.hpp"
#include "s2d/metrics.hpp"
#include "s2d/ngram.hpp"
#include "s2d/transformer.hpp"
#include "s2d/vocab.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(std::stoi(part));
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(std::stod(part));
    return out;
}

int run_train(const std::string& corpus_path, const std::string& out_path,
              const std::string& init_from, int extract_layers, const std::string& mode_str,
              const std::string& ladder_str, int layers, int d_model, int n_heads, int d_ff,
              int context, int steps, int batch, int seq_len, double lr, uint64_t seed,
              bool quiet) {
    const s2d::TrainingMode mode =
        (mode_str == "soft") ? s2d::TrainingMode::soft : s2d::TrainingMode::sft;

    std::optional<s2d::Transformer> model;
    if (!init_from.empty()) {
        s2d::Transformer source = s2d::Transformer::load_checkpoint(init_from);
        model = (extract_layers > 0) ? source.extract_prefix(extract_layers) : std::move(source);
        if (!ladder_str.empty()) model->set_ladder({parse_int_list(ladder_str)});
    }

    std::vector<s2d::TokenId> tokens;
    if (!corpus_path.empty()) {
        const std::string text = s2d::read_text_file(corpus_path);
        const s2d::Vocabulary vocab =
            model ? model->vocab() : s2d::Vocabulary::from_corpus_chars(text);
        tokens = vocab.encode_chars(text);
        if (!model) {
            s2d::TransformerConfig cfg;
            cfg.n_layers = layers;
            cfg.d_model = d_model;
            cfg.n_heads = n_heads;
            cfg.d_ff = d_ff;
            cfg.max_context = context;
            cfg.vocab_size = vocab.size();
            cfg.init_seed = seed;
            s2d::SubModelLadder ladder{ladder_str.empty() ? std::vector<int>{layers}
                                                          : parse_int_list(ladder_str)};
            model.emplace(cfg, ladder, vocab, mode);
        }
    }
    if (!model) throw s2d::ConfigError("train needs --corpus or --init-from");

    if (steps > 0) {
        if (tokens.empty()) throw s2d::ConfigError("training steps > 0 need --corpus");
        s2d::TrainOptions opts;
        opts.steps = steps;
        opts.batch_size = batch;
        opts.seq_len = std::min(seq_len, model->config().max_context);
        opts.learning_rate = lr;
        opts.mode = mode;
        opts.seed = seed;
        s2d::train_on_corpus(*model, tokens, opts, [&](int step, double loss) {
            if (!quiet) std::fprintf(stderr, "step %d loss %.4f\n", step, loss);
        });
    }
    model->save_checkpoint(out_path);
    if (!quiet) std::fprintf(stderr, "saved %s\n", out_path.c_str());
    return 0;
}

int run_decode(const std::string& target_path, const std::string& draft_path,
               const std::string& method, int exit_depth, const std::string& ladder_str,
               const std::string& thresholds_str, int k, const std::string& fallback,
               const std::string& prompt, int max_new_tokens, double temperature, uint64_t seed,
               const std::string& trace_path) {
    const auto target = s2d::load_model(target_path);
    const s2d::SamplerConfig sampler{temperature, seed};
    const std::vector<s2d::TokenId> prompt_tokens = [&] {
        auto t = target->vocab().encode_chars(prompt);
        if (t.empty()) t.push_back(target->vocab().bos());
        return t;
    }();

    s2d::DraftPolicy policy;
    policy.max_draft_len = k;
    policy.fallback =
        fallback == "emit_final" ? s2d::FallbackMode::emit_final : s2d::FallbackMode::stop_draft;
    if (!ladder_str.empty()) policy.ladder = parse_int_list(ladder_str);
    if (!thresholds_str.empty()) policy.thresholds.values = parse_double_list(thresholds_str);

    s2d::Rng rng(seed);
    s2d::DecodeTrace trace;
    if (method == "autoregressive") {
        trace = s2d::autoregressive_decode(*target, prompt_tokens, max_new_tokens, sampler);
    } else if (method == "sd") {
        if (draft_path.empty()) throw s2d::ConfigError("method sd needs --draft");
        const auto draft = s2d::load_model(draft_path);
        policy.kind = s2d::DraftPolicy::Kind::fixed_exit;
        policy.exit_depth = exit_depth > 0 ? exit_depth : draft->n_layers();
        trace = s2d::speculative_decode(*target, *draft, policy, prompt_tokens, max_new_tokens,
                                        sampler, rng);
    } else if (method == "s2d") {
        if (draft_path.empty()) throw s2d::ConfigError("method s2d needs --draft");
        const auto draft = s2d::load_model(draft_path);
        policy.kind = s2d::DraftPolicy::Kind::s2d;
        if (policy.thresholds.values.empty())
            throw s2d::ConfigError("method s2d needs --thresholds");
        trace = s2d::speculative_decode(*target, *draft, policy, prompt_tokens, max_new_tokens,
                                        sampler, rng);
    } else if (method == "self_s2d") {
        policy.kind = s2d::DraftPolicy::Kind::s2d;
        if (policy.thresholds.values.empty())
            throw s2d::ConfigError("method self_s2d needs --thresholds");
        trace = s2d::self_speculative_decode(*target, policy, prompt_tokens, max_new_tokens,
                                             sampler, rng);
    } else {
        throw s2d::ConfigError("unknown decode method: " + method);
    }

    std::cout << target->vocab().decode(trace.output) << "\n";
    if (!trace_path.empty()) s2d::write_text_file(trace_path, trace.to_json());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"s2d: adaptive multi-exit speculative decoding bench"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train or extract a tiny transformer checkpoint");
    std::string corpus, out_path, init_from, mode_str = "sft", ladder_str;
    int extract_layers = 0, layers = 4, d_model = 32, n_heads = 2, d_ff = 64, context = 64;
    int steps = 1000, batch = 8, seq_len = 48;
    double lr = 0.5;
    uint64_t train_seed = 0;
    bool quiet = false;
    train->add_option("--corpus", corpus, "UTF-8 training text");
    train->add_option("--out", out_path, "output checkpoint path")->required();
    train->add_option("--init-from", init_from, "initialize from an existing checkpoint");
    train->add_option("--extract-layers", extract_layers,
                      "keep only the first N layers of --init-from");
    train->add_option("--mode", mode_str, "sft or soft")
        ->check(CLI::IsMember({"sft", "soft"}));
    train->add_option("--ladder", ladder_str, "comma-separated exit depths, e.g. 2,3,4");
    train->add_option("--layers", layers, "transformer depth");
    train->add_option("--d-model", d_model, "model width");
    train->add_option("--n-heads", n_heads, "attention heads");
    train->add_option("--d-ff", d_ff, "MLP width");
    train->add_option("--context", context, "max context length");
    train->add_option("--steps", steps, "SGD steps");
    train->add_option("--batch", batch, "batch size");
    train->add_option("--seq-len", seq_len, "training window length");
    train->add_option("--lr", lr, "learning rate");
    train->add_option("--seed", train_seed, "init and batch-sampling seed");
    train->add_flag("--quiet", quiet, "suppress progress logging");

    // decode
    auto* decode = app.add_subcommand("decode", "run one generation and print the text");
    std::string target_path, draft_path, method = "autoregressive", thresholds_str, trace_path;
    std::string dec_ladder_str, fallback = "stop_draft";
    std::string prompt;
    int exit_depth = 0, k = 5, max_new_tokens = 32;
    double temperature = 0.0;
    uint64_t seed = 0;
    decode->add_option("--target", target_path, "target checkpoint")->required();
    decode->add_option("--draft", draft_path, "draft checkpoint (sd/s2d)");
    decode->add_option("--method", method, "autoregressive | sd | s2d | self_s2d")
        ->check(CLI::IsMember({"autoregressive", "sd", "s2d", "self_s2d"}));
    decode->add_option("--exit", exit_depth, "fixed draft exit depth (sd)");
    decode->add_option("--ladder", dec_ladder_str, "s2d exit ladder, e.g. 2,3,4");
    decode->add_option("--thresholds", thresholds_str, "s2d thresholds, e.g. 0.75,0.7,0");
    decode->add_option("--K", k, "max draft length per round");
    decode->add_option("--fallback", fallback, "stop_draft | emit_final")
        ->check(CLI::IsMember({"stop_draft", "emit_final"}));
    decode->add_option("--prompt", prompt, "prompt text")->required();
    decode->add_option("--max-new-tokens", max_new_tokens, "token budget");
    decode->add_option("--temperature", temperature, "0 = greedy");
    decode->add_option("--seed", seed, "rng seed");
    decode->add_option("--trace", trace_path, "write the DecodeTrace JSON here");

    // bench
    auto* bench = app.add_subcommand("bench", "run an experiment grid from a JSON config");
    std::string bench_config, bench_out;
    int threads = 1;
    bool persist_traces = false;
    std::vector<uint64_t> seed_override;
    std::vector<double> temp_override;
    bench->add_option("--config", bench_config, "experiment config JSON")->required();
    bench->add_option("--out", bench_out, "output directory")->required();
    bench->add_option("--seed", seed_override, "override config seeds");
    bench->add_option("--temperature", temp_override, "override config temperatures");
    bench->add_option("--threads", threads, "parallel grid groups");
    bench->add_flag("--persist-traces", persist_traces, "write per-item DecodeTraces");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "threshold grid sweep for s2d");
    std::string sweep_config, sweep_out, grid_str, sweep_ladder_str;
    int sweep_k = 5;
    sweep->add_option("--config", sweep_config, "experiment config JSON")->required();
    sweep->add_option("--out", sweep_out, "output directory")->required();
    sweep->add_option("--grid", grid_str,
                      "semicolon-separated threshold tuples, e.g. 0.3,0.3,0;0.9,0.6,0")
        ->required();
    sweep->add_option("--ladder", sweep_ladder_str, "exit ladder the tuples apply to")
        ->required();
    sweep->add_option("--K", sweep_k, "max draft length per round");

    // compare
    auto* compare = app.add_subcommand(
        "compare", "diff two reports, ignoring wall-clock fields (exit 0 = equal)");
    std::string report_a, report_b;
    compare->add_option("report_a", report_a)->required();
    compare->add_option("report_b", report_b)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train)
            return run_train(corpus, out_path, init_from, extract_layers, mode_str, ladder_str,
                             layers, d_model, n_heads, d_ff, context, steps, batch, seq_len, lr,
                             train_seed, quiet);
        if (*decode)
            return run_decode(target_path, draft_path, method, exit_depth, dec_ladder_str,
                              thresholds_str, k, fallback, prompt, max_new_tokens, temperature,
                              seed, trace_path);
        if (*bench) {
            s2d::ExperimentConfig config = s2d::ExperimentConfig::from_json_file(bench_config);
            if (!seed_override.empty()) config.seeds = seed_override;
            if (!temp_override.empty()) config.temperatures = temp_override;
            if (persist_traces) config.persist_traces = true;
            s2d::run_bench(config, bench_out, threads);
            std::fprintf(stderr, "report written to %s\n", bench_out.c_str());
            return 0;
        }
        if (*sweep) {
            s2d::ExperimentConfig config = s2d::ExperimentConfig::from_json_file(sweep_config);
            std::vector<std::vector<double>> grid;
            std::stringstream ss(grid_str);
            std::string tuple;
            while (std::getline(ss, tuple, ';')) grid.push_back(parse_double_list(tuple));
            const s2d::Report report = s2d::threshold_sweep(
                config, grid, parse_int_list(sweep_ladder_str), sweep_k, sweep_out);
            for (const auto& [key, value] : report.metadata)
                std::fprintf(stderr, "%s = %s\n", key.c_str(), value.c_str());
            return 0;
        }
        if (*compare) {
            auto load = [](const std::string& path) {
                const std::string text = s2d::read_text_file(path);
                return path.ends_with(".csv") ? s2d::Report::from_csv(text)
                                              : s2d::Report::from_json(text);
            };
            const bool equal = s2d::reports_equal_ignoring_wallclock(load(report_a),
                                                                     load(report_b));
            std::cout << (equal ? "reports equal (ignoring wall-clock)\n"
                                : "reports differ\n");
            return equal ? 0 : 1;
        }
    } catch (const s2d::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const s2d::ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 3;
    } catch (const s2d::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
