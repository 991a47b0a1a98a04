#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "s2d/bench.hpp"
#include "s2d/errors.hpp"
#include "s2d/ngram.hpp"
#include "s2d/transformer.hpp"

using namespace s2d;
namespace fs = std::filesystem;

namespace {

Vocabulary ab_vocab() {
    return Vocabulary({"<bos>", "<eos>", "a", "b"}, 0, 1);
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "s2d_bench_test";
    fs::create_directories(dir);
    return dir;
}

std::string write_tasks(const std::string& name, bool two_categories = true) {
    const fs::path path = work_dir() / name;
    std::string text =
        R"({"id":"qa-1","category":"qa","prompt":"ab","max_new_tokens":8})" "\n"
        R"({"id":"qa-2","category":"qa","prompt":"ba","max_new_tokens":8})" "\n";
    if (two_categories)
        text +=
            R"({"id":"math-1","category":"math","prompt":"aa","max_new_tokens":6})" "\n"
            R"({"id":"math-2","category":"math","prompt":"bb","max_new_tokens":6})" "\n";
    write_text_file(path.string(), text);
    return path.string();
}

// A small laddered transformer checkpoint shared by the bench tests.
std::string write_toy_checkpoint(const std::string& name, int n_layers, std::vector<int> exits,
                                 uint64_t seed) {
    TransformerConfig cfg;
    cfg.n_layers = n_layers;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.max_context = 32;
    cfg.vocab_size = 4;
    cfg.init_seed = seed;
    const Transformer model(cfg, SubModelLadder{std::move(exits)}, ab_vocab(),
                            TrainingMode::soft);
    const fs::path path = work_dir() / name;
    model.save_checkpoint(path.string());
    return path.string();
}

std::string write_ngram_model(const std::string& name) {
    NGramTable table(2, 0.5, ab_vocab());
    table.add_count(std::vector<TokenId>{2}, 3, 5.0);
    table.add_count(std::vector<TokenId>{3}, 2, 5.0);
    table.add_count(std::vector<TokenId>{0}, 2, 5.0);
    const fs::path path = work_dir() / name;
    write_text_file(path.string(), table.to_json());
    return path.string();
}

MethodSpec ar_method() {
    MethodSpec m;
    m.name = "autoregressive";
    m.kind = MethodKind::autoregressive;
    return m;
}

MethodSpec sd_method(const std::string& name, int exit, int k = 3) {
    MethodSpec m;
    m.name = name;
    m.kind = MethodKind::sd;
    m.policy.kind = DraftPolicy::Kind::fixed_exit;
    m.policy.exit_depth = exit;
    m.policy.max_draft_len = k;
    return m;
}

MethodSpec s2d_method(const std::string& name, std::vector<int> ladder,
                      std::vector<double> thresholds, int k = 3) {
    MethodSpec m;
    m.name = name;
    m.kind = MethodKind::s2d;
    m.policy.kind = DraftPolicy::Kind::s2d;
    m.policy.ladder = std::move(ladder);
    m.policy.thresholds.values = std::move(thresholds);
    m.policy.max_draft_len = k;
    return m;
}

const ReportRow& find_row(const Report& report, const std::string& method,
                          const std::string& target, double temperature) {
    for (const auto& r : report.rows)
        if (r.method == method && r.target == target && r.temperature == temperature &&
            r.category == "all")
            return r;
    throw std::runtime_error("row not found: " + method);
}

}  // namespace

TEST_CASE("load_tasks: bundled shape, line numbers, duplicates, empty files") {
    const auto suite = load_tasks(write_tasks("tasks_ok.jsonl"));
    CHECK(suite.items.size() == 4);
    CHECK(suite.items[0].id == "qa-1");
    CHECK(suite.items[2].category == "math");

    const fs::path empty = work_dir() / "tasks_empty.jsonl";
    write_text_file(empty.string(), "");
    CHECK_THROWS_WITH_AS(load_tasks(empty.string()), doctest::Contains("no tasks"),
                         ValidationError);

    const fs::path dup = work_dir() / "tasks_dup.jsonl";
    write_text_file(dup.string(),
                    R"({"id":"x","category":"qa","prompt":"a","max_new_tokens":4})" "\n"
                    R"({"id":"x","category":"qa","prompt":"b","max_new_tokens":4})" "\n");
    CHECK_THROWS_WITH_AS(load_tasks(dup.string()), doctest::Contains("line 2"), ValidationError);

    const fs::path bad = work_dir() / "tasks_bad.jsonl";
    write_text_file(bad.string(),
                    R"({"id":"x","category":"qa","prompt":"a","max_new_tokens":4})" "\n"
                    "not json\n");
    CHECK_THROWS_WITH_AS(load_tasks(bad.string()), doctest::Contains("line 2"), ValidationError);
}

TEST_CASE("config hash is stable under key reordering") {
    const std::string tasks = write_tasks("tasks_hash.jsonl");
    const std::string a = R"({
      "targets": [{"name": "t", "checkpoint": "m.bin", "unit_cost": 2.0}],
      "methods": [{"name": "ar", "kind": "autoregressive"}],
      "temperatures": [0.0], "seeds": [1], "tasks": ")" + tasks + R"("
    })";
    const std::string b = R"({
      "tasks": ")" + tasks + R"(", "seeds": [1], "temperatures": [0.0],
      "methods": [{"kind": "autoregressive", "name": "ar"}],
      "targets": [{"unit_cost": 2.0, "checkpoint": "m.bin", "name": "t"}]
    })";
    CHECK(ExperimentConfig::from_json(a).hash() == ExperimentConfig::from_json(b).hash());

    const std::string c = R"({
      "targets": [{"name": "t", "checkpoint": "m.bin", "unit_cost": 3.0}],
      "methods": [{"name": "ar", "kind": "autoregressive"}],
      "tasks": ")" + tasks + R"("
    })";
    CHECK(ExperimentConfig::from_json(a).hash() != ExperimentConfig::from_json(c).hash());
}

TEST_CASE("load_model dispatches on the first byte") {
    const auto ngram_path = write_ngram_model("model_table.json");
    const auto model = load_model(ngram_path, 2.0);
    CHECK(model->n_layers() == 1);
    CHECK(model->unit_cost_per_layer() == 2.0);

    const auto ckpt_path = write_toy_checkpoint("model_toy.bin", 2, {1, 2}, 5);
    const auto toy = load_model(ckpt_path);
    CHECK(toy->n_layers() == 2);
    CHECK(toy->exits() == std::vector<int>{1, 2});

    CHECK_THROWS_AS(load_model((work_dir() / "missing.bin").string()), IoError);
}

TEST_CASE("run_bench: draft = target gives acceptance 1.0 everywhere") {
    ExperimentConfig cfg;
    const auto ckpt = write_toy_checkpoint("bench_self.bin", 2, {1, 2}, 9);
    cfg.targets = {{"toy", ckpt, 1.0}};
    cfg.draft_checkpoint = ckpt;
    cfg.methods = {sd_method("sd-full", 2)};
    cfg.tasks_path = write_tasks("tasks_self.jsonl");

    const Report report = run_bench(cfg);
    REQUIRE(!report.rows.empty());
    for (const auto& row : report.rows) {
        CHECK(row.error.empty());
        CHECK(row.acceptance_rate == 1.0);
        CHECK(row.mat > 1.0);
    }
}

TEST_CASE("run_bench: repeated runs are identical excluding wall-clock") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", write_toy_checkpoint("bench_det_t.bin", 2, {1, 2}, 10), 1.0}};
    cfg.draft_checkpoint = write_toy_checkpoint("bench_det_d.bin", 1, {1}, 11);
    cfg.methods = {ar_method(), sd_method("sd-1", 1)};
    cfg.temperatures = {0.0, 1.0};
    cfg.seeds = {0, 7};
    cfg.tasks_path = write_tasks("tasks_det.jsonl");

    const Report a = run_bench(cfg);
    const Report b = run_bench(cfg);
    CHECK(reports_equal_ignoring_wallclock(a, b));

    const Report threaded = run_bench(cfg, "", 4);
    CHECK(reports_equal_ignoring_wallclock(a, threaded));
}

TEST_CASE("run_bench: one target, one method, one prompt -> one row") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", write_toy_checkpoint("bench_single.bin", 1, {1}, 12), 1.0}};
    cfg.methods = {ar_method()};
    const fs::path tasks = work_dir() / "tasks_single.jsonl";
    write_text_file(tasks.string(),
                    R"({"id":"only","category":"qa","prompt":"ab","max_new_tokens":4})" "\n");
    cfg.tasks_path = tasks.string();
    const Report report = run_bench(cfg);
    CHECK(report.rows.size() == 1);
    CHECK(report.rows[0].category == "all");
    CHECK(report.rows[0].n_items == 1);
}

TEST_CASE("run_bench: per-category rows accompany the all row") {
    ExperimentConfig cfg;
    const auto ckpt = write_toy_checkpoint("bench_cat.bin", 2, {1, 2}, 13);
    cfg.targets = {{"toy", ckpt, 1.0}};
    cfg.draft_checkpoint = ckpt;
    cfg.methods = {sd_method("sd", 1)};
    cfg.tasks_path = write_tasks("tasks_cat.jsonl");
    const Report report = run_bench(cfg);
    REQUIRE(report.rows.size() == 3);  // all + qa + math
    CHECK(report.rows[0].category == "all");
    CHECK(report.rows[0].n_items == 4);
    CHECK(report.rows[1].n_items == 2);
    CHECK(report.rows[2].n_items == 2);
}

TEST_CASE("run_bench: a method missing its draft yields an error row, not a crash") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", write_toy_checkpoint("bench_nodraft.bin", 2, {1, 2}, 14), 1.0}};
    cfg.methods = {sd_method("sd", 1), ar_method()};
    cfg.tasks_path = write_tasks("tasks_nodraft.jsonl");
    const Report report = run_bench(cfg);
    bool saw_error = false, saw_ok = false;
    for (const auto& row : report.rows) {
        if (row.method == "sd") {
            CHECK(!row.error.empty());
            saw_error = true;
        }
        if (row.method == "autoregressive" && row.error.empty()) saw_ok = true;
    }
    CHECK(saw_error);
    CHECK(saw_ok);
}

TEST_CASE("report json and csv round-trip losslessly") {
    Report report;
    report.version = "s2d 0.1.0";
    report.config_hash = "00ff00ff00ff00ff";
    report.mat_convention = "accepted_plus_one";
    report.metadata["winner.toy"] = "s2d(0.75,0.69999999999999996)";
    report.avg_speedup_per_method["sd, quoted"] = 1.0 / 3.0;
    ReportRow row;
    row.target = "toy";
    row.method = "s2d \"odd\" name, with comma";
    row.temperature = 0.30000000000000004;
    row.seed = 12345678901234567ULL;
    row.category = "all";
    row.n_items = 4;
    row.mat = 2.0 / 3.0;
    row.acceptance_rate = 1.0 / 7.0;
    row.modeled_speedup = 96.0 / 52.0;
    row.wallclock_speedup = 1.25;
    row.exit_histogram = {{2, 10}, {3, 4}};
    report.rows.push_back(row);

    const Report from_json = Report::from_json(report.to_json());
    CHECK(from_json.to_json() == report.to_json());
    const Report from_csv = Report::from_csv(report.to_csv());
    CHECK(from_csv.to_csv() == report.to_csv());
    CHECK(reports_equal_ignoring_wallclock(from_csv, report));
    CHECK(from_csv.rows[0].mat == row.mat);
    CHECK(from_csv.rows[0].temperature == row.temperature);
    CHECK(from_csv.rows[0].exit_histogram == row.exit_histogram);
}

TEST_CASE("emit_report writes matching json and csv files") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", write_toy_checkpoint("bench_emit.bin", 1, {1}, 15), 1.0}};
    cfg.methods = {ar_method()};
    cfg.tasks_path = write_tasks("tasks_emit.jsonl");
    const fs::path out = work_dir() / "emit_out";
    const Report report = run_bench(cfg, out.string());
    const Report json_report = Report::from_json(read_text_file((out / "report.json").string()));
    const Report csv_report = Report::from_csv(read_text_file((out / "report.csv").string()));
    CHECK(json_report.to_json() == report.to_json());
    CHECK(reports_equal_ignoring_wallclock(json_report, csv_report));
}

TEST_CASE("threshold sweep: singleton grid equals run_bench on that method") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", write_toy_checkpoint("sweep_t.bin", 3, {3}, 16), 1.0}};
    cfg.draft_checkpoint = write_toy_checkpoint("sweep_d.bin", 2, {1, 2}, 17);
    cfg.methods = {s2d_method("s2d(0.5,0)", {1, 2}, {0.5, 0.0})};
    cfg.temperatures = {0.0};
    cfg.tasks_path = write_tasks("tasks_sweep1.jsonl");

    const Report direct = run_bench(cfg);
    const Report swept = threshold_sweep(cfg, {{0.5, 0.0}}, {1, 2}, 3);
    const auto& a = find_row(direct, "s2d(0.5,0)", "toy", 0.0);
    const auto& b = find_row(swept, "s2d(0.5,0)", "toy", 0.0);
    CHECK(a.mat == b.mat);
    CHECK(a.acceptance_rate == b.acceptance_rate);
    CHECK(a.modeled_speedup == b.modeled_speedup);
    CHECK(a.exit_histogram == b.exit_histogram);
    CHECK(swept.metadata.at("winner.toy") == "s2d(0.5,0)");
}

TEST_CASE("threshold sweep: degenerate tuples reproduce the fixed-exit cells") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", write_toy_checkpoint("sweep_et.bin", 3, {3}, 18), 1.0}};
    cfg.draft_checkpoint = write_toy_checkpoint("sweep_ed.bin", 2, {1, 2}, 19);
    cfg.methods = {sd_method("sd-1", 1), sd_method("sd-2", 2)};
    cfg.temperatures = {0.0, 1.0};
    cfg.tasks_path = write_tasks("tasks_sweep2.jsonl");

    const Report sd = run_bench(cfg);
    const Report swept = threshold_sweep(cfg, {{0.0, 0.0}, {1.1, 0.0}}, {1, 2}, 3);
    for (double temp : {0.0, 1.0}) {
        const auto& shallow_sd = find_row(sd, "sd-1", "toy", temp);
        const auto& shallow_s2d = find_row(swept, "s2d(0,0)", "toy", temp);
        CHECK(shallow_s2d.mat == shallow_sd.mat);
        CHECK(shallow_s2d.acceptance_rate == shallow_sd.acceptance_rate);
        CHECK(shallow_s2d.modeled_speedup == shallow_sd.modeled_speedup);

        const auto& deep_sd = find_row(sd, "sd-2", "toy", temp);
        const auto& deep_s2d = find_row(swept, "s2d(1.1000000000000001,0)", "toy", temp);
        CHECK(deep_s2d.mat == deep_sd.mat);
        CHECK(deep_s2d.acceptance_rate == deep_sd.acceptance_rate);
        CHECK(deep_s2d.modeled_speedup == deep_sd.modeled_speedup);
    }
}

TEST_CASE("threshold sweep validates tuple lengths") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", "x.bin", 1.0}};
    cfg.methods = {ar_method()};
    cfg.tasks_path = "tasks.jsonl";
    CHECK_THROWS_AS(threshold_sweep(cfg, {{0.5}}, {1, 2}, 3), ConfigError);
    CHECK_THROWS_AS(threshold_sweep(cfg, {}, {1, 2}, 3), ConfigError);
}

TEST_CASE("persisted traces reproduce every row") {
    ExperimentConfig cfg;
    const auto ckpt = write_toy_checkpoint("replay_t.bin", 2, {1, 2}, 20);
    cfg.targets = {{"toy", ckpt, 1.0}};
    cfg.draft_checkpoint = write_toy_checkpoint("replay_d.bin", 1, {1}, 21);
    cfg.methods = {ar_method(), sd_method("sd-1", 1), s2d_method("s2d", {1}, {0.5})};
    cfg.temperatures = {0.0, 1.0};
    cfg.seeds = {3};
    cfg.tasks_path = write_tasks("tasks_replay.jsonl");
    cfg.persist_traces = true;

    const fs::path out = work_dir() / "replay_out";
    fs::remove_all(out);
    const Report original = run_bench(cfg, out.string());
    const Report rebuilt = recompute_from_traces(cfg, original, out.string());
    CHECK(reports_equal_ignoring_wallclock(original, rebuilt));
}

TEST_CASE("persist_traces without an output directory is rejected") {
    ExperimentConfig cfg;
    cfg.targets = {{"toy", write_toy_checkpoint("persist_t.bin", 1, {1}, 22), 1.0}};
    cfg.methods = {ar_method()};
    cfg.tasks_path = write_tasks("tasks_persist.jsonl");
    cfg.persist_traces = true;
    CHECK_THROWS_AS(run_bench(cfg), ConfigError);
}
