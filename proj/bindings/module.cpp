#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "s2d/bench.hpp"
#include "s2d/decode.hpp"
#include "s2d/errors.hpp"
#include "s2d/metrics.hpp"
#include "s2d/ngram.hpp"
#include "s2d/prob.hpp"
#include "s2d/transformer.hpp"

namespace py = pybind11;
using namespace s2d;

namespace {

struct PyModel {
    std::shared_ptr<LanguageModel> model;

    const LanguageModel& get() const {
        if (!model) throw ValidationError("model is empty");
        return *model;
    }
};

PyModel load_model_py(const std::string& path, std::optional<double> unit_cost) {
    return PyModel{std::shared_ptr<LanguageModel>(load_model(path, unit_cost))};
}

PyModel ngram_from_json(const std::string& json_text, int n_layers, double unit_cost) {
    return PyModel{std::make_shared<NGramModel>(NGramTable::from_json(json_text), n_layers,
                                                unit_cost)};
}

DraftPolicy make_policy(const std::string& method, int exit, const std::vector<int>& ladder,
                        const std::vector<double>& thresholds, int k,
                        const std::string& fallback) {
    DraftPolicy policy;
    policy.max_draft_len = k;
    if (fallback == "stop_draft") policy.fallback = FallbackMode::stop_draft;
    else if (fallback == "emit_final") policy.fallback = FallbackMode::emit_final;
    else throw ConfigError("unknown fallback mode: " + fallback);
    if (method == "sd") {
        policy.kind = DraftPolicy::Kind::fixed_exit;
        policy.exit_depth = exit;
    } else if (method == "s2d") {
        policy.kind = DraftPolicy::Kind::s2d;
        policy.ladder = ladder;
        policy.thresholds.values = thresholds;
    } else {
        throw ConfigError("unknown method: " + method);
    }
    return policy;
}

py::dict metrics_to_dict(const RunMetrics& m) {
    py::dict out;
    out["mat"] = m.mat;
    out["acceptance_rate"] = m.acceptance_rate;
    out["zero_drafted"] = m.zero_drafted;
    out["modeled_speedup"] = m.modeled_speedup;
    out["output_tokens"] = m.output_tokens;
    out["rounds"] = m.rounds;
    py::dict hist;
    for (const auto& [depth, count] : m.exit_histogram) hist[py::int_(depth)] = count;
    out["exit_histogram"] = hist;
    return out;
}

}  // namespace

PYBIND11_MODULE(_s2d, m) {
    m.doc() = "speculative decoding engine bindings";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ValidationError>(m, "ValidationError");
    py::register_exception<IoError>(m, "IoError");

    py::class_<PyModel>(m, "Model")
        .def_property_readonly("n_layers", [](const PyModel& s) { return s.get().n_layers(); })
        .def_property_readonly("unit_cost",
                               [](const PyModel& s) { return s.get().unit_cost_per_layer(); })
        .def("exits", [](const PyModel& s) { return s.get().exits(); })
        .def("vocab_symbols", [](const PyModel& s) { return s.get().vocab().symbols(); })
        .def("encode",
             [](const PyModel& s, const std::string& text) {
                 return s.get().vocab().encode_chars(text);
             })
        .def("decode_tokens",
             [](const PyModel& s, const std::vector<TokenId>& tokens) {
                 return s.get().vocab().decode(tokens);
             })
        .def("evaluate", [](const PyModel& s, const std::vector<TokenId>& context, int exit) {
            return s.get().evaluate(context, exit);
        });

    m.def("load_model", &load_model_py, py::arg("path"), py::arg("unit_cost") = std::nullopt);
    m.def("ngram_from_json", &ngram_from_json, py::arg("json_text"), py::arg("n_layers") = 1,
          py::arg("unit_cost") = 1.0);

    m.def(
        "apply_temperature",
        [](const std::vector<double>& logits, double temperature) {
            return apply_temperature(logits, temperature).probs;
        },
        py::arg("logits"), py::arg("temperature"));

    m.def(
        "sample_token",
        [](const std::vector<double>& probs, double temperature, uint64_t seed) {
            Rng rng(seed);
            const auto s = sample_token(ProbDist{probs}, {temperature, seed}, rng);
            return py::make_tuple(s.token, s.confidence);
        },
        py::arg("probs"), py::arg("temperature") = 1.0, py::arg("seed") = 0);

    m.def(
        "autoregressive_decode",
        [](const PyModel& target, const std::vector<TokenId>& prompt, int max_new_tokens,
           double temperature, uint64_t seed) {
            return autoregressive_decode(target.get(), prompt, max_new_tokens,
                                         {temperature, seed})
                .to_json();
        },
        py::arg("target"), py::arg("prompt"), py::arg("max_new_tokens"),
        py::arg("temperature") = 0.0, py::arg("seed") = 0);

    m.def(
        "speculative_decode",
        [](const PyModel& target, const PyModel& draft, const std::vector<TokenId>& prompt,
           int max_new_tokens, const std::string& method, int exit,
           const std::vector<int>& ladder, const std::vector<double>& thresholds, int k,
           const std::string& fallback, double temperature, uint64_t seed) {
            const DraftPolicy policy = make_policy(method, exit, ladder, thresholds, k, fallback);
            Rng rng(seed);
            return speculative_decode(target.get(), draft.get(), policy, prompt, max_new_tokens,
                                      {temperature, seed}, rng)
                .to_json();
        },
        py::arg("target"), py::arg("draft"), py::arg("prompt"), py::arg("max_new_tokens"),
        py::arg("method") = "sd", py::arg("exit") = 1, py::arg("ladder") = std::vector<int>{},
        py::arg("thresholds") = std::vector<double>{}, py::arg("k") = 5,
        py::arg("fallback") = "stop_draft", py::arg("temperature") = 0.0, py::arg("seed") = 0);

    m.def(
        "self_speculative_decode",
        [](const PyModel& target, const std::vector<TokenId>& prompt, int max_new_tokens,
           const std::vector<int>& ladder, const std::vector<double>& thresholds, int k,
           const std::string& fallback, double temperature, uint64_t seed) {
            const DraftPolicy policy = make_policy("s2d", 0, ladder, thresholds, k, fallback);
            Rng rng(seed);
            return self_speculative_decode(target.get(), policy, prompt, max_new_tokens,
                                           {temperature, seed}, rng)
                .to_json();
        },
        py::arg("target"), py::arg("prompt"), py::arg("max_new_tokens"),
        py::arg("ladder") = std::vector<int>{}, py::arg("thresholds") = std::vector<double>{},
        py::arg("k") = 5, py::arg("fallback") = "stop_draft", py::arg("temperature") = 0.0,
        py::arg("seed") = 0);

    m.def(
        "trace_metrics",
        [](const std::string& trace_json, int target_layers, double target_unit_cost,
           int draft_layers, double draft_unit_cost) {
            const DecodeTrace trace = DecodeTrace::from_json(trace_json);
            return metrics_to_dict(compute_metrics(trace, {target_layers, target_unit_cost},
                                                   {draft_layers, draft_unit_cost}));
        },
        py::arg("trace_json"), py::arg("target_layers"), py::arg("target_unit_cost") = 1.0,
        py::arg("draft_layers") = 1, py::arg("draft_unit_cost") = 1.0);

    m.def(
        "run_bench",
        [](const std::string& config_path, const std::string& out_dir, int threads) {
            return run_bench(ExperimentConfig::from_json_file(config_path), out_dir, threads)
                .to_json();
        },
        py::arg("config_path"), py::arg("out_dir") = "", py::arg("threads") = 1);

    m.def(
        "train_transformer",
        [](const std::string& corpus_path, const std::string& out_path, int n_layers, int d_model,
           int n_heads, int d_ff, int max_context, const std::vector<int>& ladder,
           const std::string& mode, int steps, int batch_size, int seq_len, double learning_rate,
           uint64_t seed) {
            const std::string text = read_text_file(corpus_path);
            const Vocabulary vocab = Vocabulary::from_corpus_chars(text);
            TransformerConfig cfg;
            cfg.n_layers = n_layers;
            cfg.d_model = d_model;
            cfg.n_heads = n_heads;
            cfg.d_ff = d_ff;
            cfg.max_context = max_context;
            cfg.vocab_size = vocab.size();
            cfg.init_seed = seed;
            const TrainingMode tm = (mode == "soft") ? TrainingMode::soft : TrainingMode::sft;
            Transformer model(cfg, SubModelLadder{ladder.empty() ? std::vector<int>{n_layers}
                                                                 : ladder},
                              vocab, tm);
            TrainOptions opts;
            opts.steps = steps;
            opts.batch_size = batch_size;
            opts.seq_len = seq_len;
            opts.learning_rate = learning_rate;
            opts.mode = tm;
            opts.seed = seed;
            const double loss = train_on_corpus(model, vocab.encode_chars(text), opts);
            model.save_checkpoint(out_path);
            return loss;
        },
        py::arg("corpus_path"), py::arg("out_path"), py::arg("n_layers") = 2,
        py::arg("d_model") = 16, py::arg("n_heads") = 2, py::arg("d_ff") = 32,
        py::arg("max_context") = 32, py::arg("ladder") = std::vector<int>{},
        py::arg("mode") = "sft", py::arg("steps") = 100, py::arg("batch_size") = 8,
        py::arg("seq_len") = 16, py::arg("learning_rate") = 0.1, py::arg("seed") = 0);
}
