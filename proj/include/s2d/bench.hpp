#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "s2d/decode.hpp"
#include "s2d/metrics.hpp"
#include "s2d/model.hpp"

namespace s2d {

struct TaskItem {
    std::string id;
    std::string category;
    std::string prompt;
    int max_new_tokens = 16;
};

struct TaskSuite {
    std::string name;
    std::vector<TaskItem> items;
};

/// Parses tasks from JSONL, one item per line. Malformed lines are
/// reported with their line number; duplicate ids and empty files are
/// errors.
TaskSuite load_tasks(const std::string& path);

enum class MethodKind { autoregressive, sd, s2d, self_s2d };

struct MethodSpec {
    std::string name;
    MethodKind kind = MethodKind::autoregressive;
    DraftPolicy policy;  // ignored for autoregressive
};

struct TargetSpec {
    std::string name;
    std::string checkpoint;
    double unit_cost = 1.0;
};

struct ExperimentConfig {
    std::vector<TargetSpec> targets;
    std::string draft_checkpoint;
    double draft_unit_cost = 1.0;
    std::vector<MethodSpec> methods;
    std::vector<double> temperatures{0.0};
    std::vector<uint64_t> seeds{0};
    std::string tasks_path;
    bool persist_traces = false;

    static ExperimentConfig from_json_file(const std::string& path);
    static ExperimentConfig from_json(const std::string& json_text);
    std::string canonical_json() const;
    /// FNV-1a over the canonical (sorted-key) dump; stable under field
    /// reordering in the source file.
    std::string hash() const;
};

struct ReportRow {
    std::string target;
    std::string method;
    double temperature = 0.0;
    uint64_t seed = 0;
    std::string category;  // "all" or a task category
    int n_items = 0;
    double mat = 0.0;
    double acceptance_rate = 0.0;
    double modeled_speedup = 0.0;
    double wallclock_speedup = 0.0;
    std::map<int, int64_t> exit_histogram;
    std::string error;  // non-empty marks a failed cell
};

struct Report {
    std::string version;
    std::string config_hash;
    std::string mat_convention;  // declared in every report header
    std::map<std::string, std::string> metadata;
    std::map<std::string, double> avg_speedup_per_method;
    std::vector<ReportRow> rows;

    std::string to_json(bool include_wallclock = true) const;
    static Report from_json(const std::string& json_text);
    std::string to_csv() const;
    static Report from_csv(const std::string& csv_text);
};

/// True when the reports agree on everything except wall-clock fields.
bool reports_equal_ignoring_wallclock(const Report& a, const Report& b);

/// Loads either a transformer checkpoint (binary, length-prefixed
/// header) or an n-gram table (JSON), by peeking at the first byte.
std::unique_ptr<LanguageModel> load_model(const std::string& path,
                                          std::optional<double> unit_cost = std::nullopt);

/// Runs the target x method x temperature x seed x task grid; one
/// decode per cell item, metrics averaged per cell (plus per-category
/// rows). A failing decode produces an error row for its cell, not an
/// aborted run. Traces are persisted under `out_dir`/traces when
/// requested. `threads` > 1 runs (target, temperature, seed) groups in
/// parallel over the shared immutable models; row order stays
/// deterministic. Wall-clock ratios from parallel runs are noisier and
/// are never asserted anywhere.
Report run_bench(const ExperimentConfig& config, const std::string& out_dir = "",
                 int threads = 1);

/// One S2D bench cell per threshold tuple per target, sorted by
/// modeled speedup; the winning tuple per target lands in metadata as
/// "winner.<target>".
Report threshold_sweep(const ExperimentConfig& config,
                       const std::vector<std::vector<double>>& threshold_grid,
                       const std::vector<int>& ladder, int max_draft_len,
                       const std::string& out_dir = "");

/// Writes report.json and report.csv with identical content.
void emit_report(const Report& report, const std::string& dir);

/// Recomputes metric rows from traces persisted by run_bench; rows
/// match the original report bit-for-bit excluding wall-clock.
Report recompute_from_traces(const ExperimentConfig& config, const Report& original,
                             const std::string& out_dir);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace s2d
