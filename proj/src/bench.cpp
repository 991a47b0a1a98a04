#include "s2d/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "s2d/errors.hpp"
#include "s2d/ngram.hpp"
#include "s2d/transformer.hpp"

namespace s2d {

namespace {

constexpr const char* kVersion = "s2d 0.1.0";
constexpr const char* kMatConvention = "accepted_plus_one";

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string histogram_to_string(const std::map<int, int64_t>& h) {
    std::string out;
    for (const auto& [depth, count] : h) {
        if (!out.empty()) out += ";";
        out += std::to_string(depth) + ":" + std::to_string(count);
    }
    return out;
}

std::map<int, int64_t> histogram_from_string(const std::string& s) {
    std::map<int, int64_t> h;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ';')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos) continue;
        h[std::stoi(part.substr(0, colon))] = std::stoll(part.substr(colon + 1));
    }
    return h;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

std::string trace_filename(const ReportRow& cell, const std::string& item_id) {
    return sanitize(cell.target) + "__" + sanitize(cell.method) + "__T" +
           sanitize(fmt17(cell.temperature)) + "__s" + std::to_string(cell.seed) + "__" +
           sanitize(item_id) + ".json";
}

std::vector<TokenId> encode_prompt(const LanguageModel& model, const std::string& prompt) {
    // Generation always starts from bos, so an all-unknown prompt still
    // yields a valid (non-empty) context.
    std::vector<TokenId> tokens{model.vocab().bos()};
    const std::vector<TokenId> body = model.vocab().encode_chars(prompt);
    tokens.insert(tokens.end(), body.begin(), body.end());
    return tokens;
}

nlohmann::json method_to_json(const MethodSpec& m) {
    nlohmann::json j;
    j["name"] = m.name;
    switch (m.kind) {
        case MethodKind::autoregressive: j["kind"] = "autoregressive"; break;
        case MethodKind::sd: j["kind"] = "sd"; break;
        case MethodKind::s2d: j["kind"] = "s2d"; break;
        case MethodKind::self_s2d: j["kind"] = "self_s2d"; break;
    }
    if (m.kind == MethodKind::sd) j["exit"] = m.policy.exit_depth;
    if (m.kind == MethodKind::s2d || m.kind == MethodKind::self_s2d) {
        j["ladder"] = m.policy.ladder;
        j["thresholds"] = m.policy.thresholds.values;
        j["fallback"] =
            m.policy.fallback == FallbackMode::stop_draft ? "stop_draft" : "emit_final";
    }
    if (m.kind != MethodKind::autoregressive) j["K"] = m.policy.max_draft_len;
    return j;
}

MethodSpec method_from_json(const nlohmann::json& j) {
    MethodSpec m;
    m.name = j.at("name").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "autoregressive") {
        m.kind = MethodKind::autoregressive;
        return m;
    }
    m.policy.max_draft_len = j.value("K", 5);
    if (kind == "sd") {
        m.kind = MethodKind::sd;
        m.policy.kind = DraftPolicy::Kind::fixed_exit;
        m.policy.exit_depth = j.at("exit").get<int>();
    } else if (kind == "s2d" || kind == "self_s2d") {
        m.kind = (kind == "s2d") ? MethodKind::s2d : MethodKind::self_s2d;
        m.policy.kind = DraftPolicy::Kind::s2d;
        m.policy.ladder = j.value("ladder", std::vector<int>{});
        m.policy.thresholds.values = j.at("thresholds").get<std::vector<double>>();
        const std::string fb = j.value("fallback", "stop_draft");
        if (fb != "stop_draft" && fb != "emit_final")
            throw ConfigError("unknown fallback mode: " + fb);
        m.policy.fallback =
            fb == "stop_draft" ? FallbackMode::stop_draft : FallbackMode::emit_final;
    } else {
        throw ConfigError("unknown method kind: " + kind);
    }
    return m;
}

}  // namespace

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

TaskSuite load_tasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tasks file: " + path);
    TaskSuite suite;
    suite.name = std::filesystem::path(path).stem().string();
    std::set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            TaskItem item;
            item.id = j.at("id").get<std::string>();
            item.category = j.at("category").get<std::string>();
            item.prompt = j.at("prompt").get<std::string>();
            item.max_new_tokens = j.at("max_new_tokens").get<int>();
            if (item.prompt.empty())
                throw ValidationError("empty prompt");
            if (!ids.insert(item.id).second)
                throw ValidationError("duplicate task id '" + item.id + "'");
            suite.items.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("tasks line " + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError("tasks line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (suite.items.empty()) throw ValidationError("no tasks in " + path);
    return suite;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed experiment config: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        for (const auto& t : j.at("targets"))
            cfg.targets.push_back({t.at("name").get<std::string>(),
                                   t.at("checkpoint").get<std::string>(),
                                   t.value("unit_cost", 1.0)});
        if (j.contains("draft")) {
            cfg.draft_checkpoint = j.at("draft").at("checkpoint").get<std::string>();
            cfg.draft_unit_cost = j.at("draft").value("unit_cost", 1.0);
        }
        for (const auto& m : j.at("methods")) cfg.methods.push_back(method_from_json(m));
        cfg.temperatures = j.value("temperatures", std::vector<double>{0.0});
        cfg.seeds = j.value("seeds", std::vector<uint64_t>{0});
        cfg.tasks_path = j.at("tasks").get<std::string>();
        cfg.persist_traces = j.value("persist_traces", false);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed experiment config: ") + e.what());
    }
    if (cfg.targets.empty()) throw ValidationError("config needs at least one target");
    if (cfg.methods.empty()) throw ValidationError("config needs at least one method");
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    return from_json(read_text_file(path));
}

std::string ExperimentConfig::canonical_json() const {
    nlohmann::json j;
    nlohmann::json targets_json = nlohmann::json::array();
    for (const auto& t : targets)
        targets_json.push_back(
            {{"name", t.name}, {"checkpoint", t.checkpoint}, {"unit_cost", t.unit_cost}});
    j["targets"] = targets_json;
    j["draft"] = {{"checkpoint", draft_checkpoint}, {"unit_cost", draft_unit_cost}};
    nlohmann::json methods_json = nlohmann::json::array();
    for (const auto& m : methods) methods_json.push_back(method_to_json(m));
    j["methods"] = methods_json;
    j["temperatures"] = temperatures;
    j["seeds"] = seeds;
    j["tasks"] = tasks_path;
    // nlohmann::json objects are key-sorted, so this dump is canonical.
    return j.dump();
}

std::string ExperimentConfig::hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical_json()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::unique_ptr<LanguageModel> load_model(const std::string& path,
                                          std::optional<double> unit_cost) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);
    char first = 0;
    in.get(first);
    in.close();
    if (first == '{') {
        NGramTable table = NGramTable::from_json(read_text_file(path));
        return std::make_unique<NGramModel>(std::move(table), 1, unit_cost.value_or(1.0));
    }
    auto model = std::make_unique<Transformer>(Transformer::load_checkpoint(path));
    if (unit_cost) model->set_unit_cost(*unit_cost);
    return model;
}

namespace {

struct CellResult {
    std::vector<ReportRow> rows;  // "all" first, then per category
};

CellResult run_cell(const LanguageModel& target, const LanguageModel* draft,
                    const MethodSpec& method, double temperature, uint64_t seed,
                    const TaskSuite& tasks, const std::string& target_name,
                    const CostModel& cost_target, const CostModel& cost_draft,
                    const std::string& traces_dir,
                    const std::vector<DecodeTrace>& baselines) {
    ReportRow base;
    base.target = target_name;
    base.method = method.name;
    base.temperature = temperature;
    base.seed = seed;

    struct Agg {
        double mat = 0.0, acc = 0.0, spd = 0.0;
        uint64_t method_ns = 0, baseline_ns = 0;
        std::map<int, int64_t> hist;
        int n = 0;
    };
    std::map<std::string, Agg> by_category;
    Agg all;

    CellResult cell;
    for (size_t item_idx = 0; item_idx < tasks.items.size(); ++item_idx) {
        const TaskItem& item = tasks.items[item_idx];
        try {
            const SamplerConfig sampler{temperature, seed};
            const std::vector<TokenId> prompt = encode_prompt(target, item.prompt);
            Rng rng(Rng::mix(seed, item_idx));

            DecodeTrace trace;
            switch (method.kind) {
                case MethodKind::autoregressive:
                    trace = autoregressive_decode(target, prompt, item.max_new_tokens, sampler);
                    break;
                case MethodKind::sd:
                case MethodKind::s2d:
                    if (!draft) throw ConfigError("method '" + method.name + "' needs a draft");
                    trace = speculative_decode(target, *draft, method.policy, prompt,
                                               item.max_new_tokens, sampler, rng);
                    break;
                case MethodKind::self_s2d:
                    trace = self_speculative_decode(target, method.policy, prompt,
                                                    item.max_new_tokens, sampler, rng);
                    break;
            }
            const CostModel cd =
                (method.kind == MethodKind::self_s2d) ? cost_target : cost_draft;
            const RunMetrics m = compute_metrics(trace, cost_target, cd);
            const DecodeTrace& baseline = baselines[item_idx];

            auto fold = [&](Agg& a) {
                a.mat += m.mat;
                a.acc += m.acceptance_rate;
                a.spd += m.modeled_speedup;
                a.method_ns += trace.wall_ns;
                a.baseline_ns += baseline.wall_ns;
                for (const auto& [d, c] : m.exit_histogram) a.hist[d] += c;
                a.n += 1;
            };
            fold(all);
            fold(by_category[item.category]);

            if (!traces_dir.empty())
                write_text_file(traces_dir + "/" + trace_filename(base, item.id),
                                trace.to_json());
        } catch (const std::exception& e) {
            ReportRow err = base;
            err.category = "all";
            err.error = std::string(e.what()) + " (item " + item.id + ")";
            cell.rows.push_back(std::move(err));
            return cell;
        }
    }

    auto finish = [&](const std::string& category, const Agg& a) {
        ReportRow row = base;
        row.category = category;
        row.n_items = a.n;
        row.mat = a.mat / a.n;
        row.acceptance_rate = a.acc / a.n;
        row.modeled_speedup = a.spd / a.n;
        row.wallclock_speedup =
            a.method_ns > 0 ? static_cast<double>(a.baseline_ns) / a.method_ns : 0.0;
        row.exit_histogram = a.hist;
        cell.rows.push_back(std::move(row));
    };
    finish("all", all);
    // A single-category suite would just duplicate the "all" row.
    if (by_category.size() > 1)
        for (const auto& [cat, agg] : by_category) finish(cat, agg);
    return cell;
}

}  // namespace

Report run_bench(const ExperimentConfig& config, const std::string& out_dir, int threads) {
    const TaskSuite tasks = load_tasks(config.tasks_path);

    std::unique_ptr<LanguageModel> draft;
    if (!config.draft_checkpoint.empty())
        draft = load_model(config.draft_checkpoint, config.draft_unit_cost);

    std::string traces_dir;
    if (config.persist_traces) {
        if (out_dir.empty()) throw ConfigError("persist_traces requires an output directory");
        traces_dir = out_dir + "/traces";
        std::filesystem::create_directories(traces_dir);
    }

    Report report;
    report.version = kVersion;
    report.config_hash = config.hash();
    report.mat_convention = kMatConvention;

    std::vector<std::unique_ptr<LanguageModel>> targets;
    for (const auto& target_spec : config.targets)
        targets.push_back(load_model(target_spec.checkpoint, target_spec.unit_cost));

    // One group per (target, temperature, seed); methods run serially
    // inside a group so they share the autoregressive baseline.
    struct Group {
        size_t target_idx;
        double temperature;
        uint64_t seed;
    };
    std::vector<Group> groups;
    for (size_t ti = 0; ti < targets.size(); ++ti)
        for (double temperature : config.temperatures)
            for (uint64_t seed : config.seeds) groups.push_back({ti, temperature, seed});

    std::vector<std::vector<ReportRow>> group_rows(groups.size());
    auto run_group = [&](size_t gi) {
        const Group& g = groups[gi];
        const LanguageModel& target = *targets[g.target_idx];
        const TargetSpec& target_spec = config.targets[g.target_idx];
        const CostModel cost_target = CostModel::of(target);
        const CostModel cost_draft =
            draft ? CostModel::of(*draft) : CostModel{1, config.draft_unit_cost};

        std::vector<DecodeTrace> baselines;
        baselines.reserve(tasks.items.size());
        const SamplerConfig sampler{g.temperature, g.seed};
        for (const auto& item : tasks.items)
            baselines.push_back(autoregressive_decode(
                target, encode_prompt(target, item.prompt), item.max_new_tokens, sampler));
        for (const auto& method : config.methods) {
            CellResult cell = run_cell(target, draft.get(), method, g.temperature, g.seed, tasks,
                                       target_spec.name, cost_target, cost_draft, traces_dir,
                                       baselines);
            for (auto& row : cell.rows) group_rows[gi].push_back(std::move(row));
        }
    };

    if (threads <= 1) {
        for (size_t gi = 0; gi < groups.size(); ++gi) run_group(gi);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        const int n_workers = std::min<int>(threads, static_cast<int>(groups.size()));
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&] {
                for (size_t gi = next.fetch_add(1); gi < groups.size(); gi = next.fetch_add(1))
                    run_group(gi);
            });
        for (auto& t : pool) t.join();
    }

    std::map<std::string, std::pair<double, int>> speedup_by_method;
    for (auto& rows : group_rows)
        for (auto& row : rows) {
            if (row.category == "all" && row.error.empty()) {
                auto& [sum, n] = speedup_by_method[row.method];
                sum += row.modeled_speedup;
                n += 1;
            }
            report.rows.push_back(std::move(row));
        }
    // Mean modeled speedup across targets (and temps/seeds) per method.
    for (const auto& [name, acc] : speedup_by_method)
        report.avg_speedup_per_method[name] = acc.first / acc.second;

    if (!out_dir.empty()) emit_report(report, out_dir);
    return report;
}

Report threshold_sweep(const ExperimentConfig& config,
                       const std::vector<std::vector<double>>& threshold_grid,
                       const std::vector<int>& ladder, int max_draft_len,
                       const std::string& out_dir) {
    if (threshold_grid.empty()) throw ConfigError("empty threshold grid");
    for (const auto& tuple : threshold_grid)
        if (tuple.size() != ladder.size())
            throw ConfigError("threshold tuple length does not match ladder length");

    ExperimentConfig sweep_config = config;
    sweep_config.methods.clear();
    for (const auto& tuple : threshold_grid) {
        MethodSpec m;
        m.kind = MethodKind::s2d;
        m.policy.kind = DraftPolicy::Kind::s2d;
        m.policy.ladder = ladder;
        m.policy.thresholds.values = tuple;
        m.policy.max_draft_len = max_draft_len;
        std::string name = "s2d(";
        for (size_t i = 0; i < tuple.size(); ++i)
            name += (i ? "," : "") + fmt17(tuple[i]);
        name += ")";
        m.name = name;
        sweep_config.methods.push_back(std::move(m));
    }

    Report report = run_bench(sweep_config, "");
    std::stable_sort(report.rows.begin(), report.rows.end(),
                     [](const ReportRow& a, const ReportRow& b) {
                         return a.modeled_speedup > b.modeled_speedup;
                     });

    // Winner per target: best mean modeled speedup over temps and seeds.
    for (const auto& target_spec : config.targets) {
        std::map<std::string, std::pair<double, int>> by_method;
        for (const auto& row : report.rows)
            if (row.target == target_spec.name && row.category == "all" && row.error.empty()) {
                auto& [sum, n] = by_method[row.method];
                sum += row.modeled_speedup;
                n += 1;
            }
        std::string best;
        double best_speedup = -1.0;
        for (const auto& [name, acc] : by_method) {
            const double mean = acc.first / acc.second;
            if (mean > best_speedup) {
                best_speedup = mean;
                best = name;
            }
        }
        if (!best.empty()) report.metadata["winner." + target_spec.name] = best;
    }

    if (!out_dir.empty()) emit_report(report, out_dir);
    return report;
}

Report recompute_from_traces(const ExperimentConfig& config, const Report& original,
                             const std::string& out_dir) {
    const TaskSuite tasks = load_tasks(config.tasks_path);
    const std::string traces_dir = out_dir + "/traces";

    std::map<std::string, double> target_cost;
    std::map<std::string, int> target_layers;
    for (const auto& t : config.targets) {
        const auto model = load_model(t.checkpoint, t.unit_cost);
        target_cost[t.name] = t.unit_cost;
        target_layers[t.name] = model->n_layers();
    }
    CostModel cost_draft{1, config.draft_unit_cost};
    if (!config.draft_checkpoint.empty())
        cost_draft = CostModel::of(*load_model(config.draft_checkpoint, config.draft_unit_cost));

    Report rebuilt;
    rebuilt.version = original.version;
    rebuilt.config_hash = original.config_hash;
    rebuilt.mat_convention = original.mat_convention;
    rebuilt.metadata = original.metadata;
    rebuilt.avg_speedup_per_method = original.avg_speedup_per_method;

    for (const auto& row : original.rows) {
        if (!row.error.empty()) {
            rebuilt.rows.push_back(row);
            continue;
        }
        const CostModel cost_target{target_layers.at(row.target), target_cost.at(row.target)};
        auto method_it =
            std::find_if(config.methods.begin(), config.methods.end(),
                         [&](const MethodSpec& m) { return m.name == row.method; });
        const bool self_spec =
            method_it != config.methods.end() && method_it->kind == MethodKind::self_s2d;
        const CostModel cd = self_spec ? cost_target : cost_draft;

        double mat_sum = 0.0, acc_sum = 0.0, spd_sum = 0.0;
        std::map<int, int64_t> hist;
        int n = 0;
        for (const auto& item : tasks.items) {
            if (row.category != "all" && item.category != row.category) continue;
            const DecodeTrace trace = DecodeTrace::from_json(
                read_text_file(traces_dir + "/" + trace_filename(row, item.id)));
            const RunMetrics m = compute_metrics(trace, cost_target, cd);
            mat_sum += m.mat;
            acc_sum += m.acceptance_rate;
            spd_sum += m.modeled_speedup;
            for (const auto& [d, c] : m.exit_histogram) hist[d] += c;
            ++n;
        }
        ReportRow r = row;
        r.n_items = n;
        r.mat = mat_sum / n;
        r.acceptance_rate = acc_sum / n;
        r.modeled_speedup = spd_sum / n;
        r.exit_histogram = hist;
        r.wallclock_speedup = 0.0;
        rebuilt.rows.push_back(std::move(r));
    }
    return rebuilt;
}

// ---- report serialization ---------------------------------------------

std::string Report::to_json(bool include_wallclock) const {
    nlohmann::json j;
    j["version"] = version;
    j["config_hash"] = config_hash;
    j["mat_convention"] = mat_convention;
    j["metadata"] = metadata;
    j["avg_speedup_per_method"] = avg_speedup_per_method;
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json rj;
        rj["target"] = r.target;
        rj["method"] = r.method;
        rj["temperature"] = r.temperature;
        rj["seed"] = r.seed;
        rj["category"] = r.category;
        rj["n_items"] = r.n_items;
        rj["mat"] = r.mat;
        rj["acceptance_rate"] = r.acceptance_rate;
        rj["modeled_speedup"] = r.modeled_speedup;
        if (include_wallclock) rj["wallclock_speedup"] = r.wallclock_speedup;
        rj["exit_histogram"] = histogram_to_string(r.exit_histogram);
        rj["error"] = r.error;
        rows_json.push_back(std::move(rj));
    }
    j["rows"] = rows_json;
    return j.dump(2);
}

Report Report::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    Report report;
    report.version = j.at("version").get<std::string>();
    report.config_hash = j.at("config_hash").get<std::string>();
    report.mat_convention = j.at("mat_convention").get<std::string>();
    report.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    report.avg_speedup_per_method =
        j.at("avg_speedup_per_method").get<std::map<std::string, double>>();
    for (const auto& rj : j.at("rows")) {
        ReportRow r;
        r.target = rj.at("target").get<std::string>();
        r.method = rj.at("method").get<std::string>();
        r.temperature = rj.at("temperature").get<double>();
        r.seed = rj.at("seed").get<uint64_t>();
        r.category = rj.at("category").get<std::string>();
        r.n_items = rj.at("n_items").get<int>();
        r.mat = rj.at("mat").get<double>();
        r.acceptance_rate = rj.at("acceptance_rate").get<double>();
        r.modeled_speedup = rj.at("modeled_speedup").get<double>();
        r.wallclock_speedup = rj.value("wallclock_speedup", 0.0);
        r.exit_histogram = histogram_from_string(rj.at("exit_histogram").get<std::string>());
        r.error = rj.at("error").get<std::string>();
        report.rows.push_back(std::move(r));
    }
    return report;
}

std::string Report::to_csv() const {
    std::string out = "[meta]\n";
    out += "version," + csv_escape(version) + "\n";
    out += "config_hash," + csv_escape(config_hash) + "\n";
    out += "mat_convention," + csv_escape(mat_convention) + "\n";
    for (const auto& [k, v] : metadata)
        out += "metadata," + csv_escape(k) + "," + csv_escape(v) + "\n";
    for (const auto& [k, v] : avg_speedup_per_method)
        out += "avg_speedup," + csv_escape(k) + "," + fmt17(v) + "\n";
    out += "[rows]\n";
    out += "target,method,temperature,seed,category,n_items,mat,acceptance_rate,"
           "modeled_speedup,wallclock_speedup,exit_histogram,error\n";
    for (const auto& r : rows) {
        out += csv_escape(r.target) + "," + csv_escape(r.method) + "," + fmt17(r.temperature) +
               "," + std::to_string(r.seed) + "," + csv_escape(r.category) + "," +
               std::to_string(r.n_items) + "," + fmt17(r.mat) + "," +
               fmt17(r.acceptance_rate) + "," + fmt17(r.modeled_speedup) + "," +
               fmt17(r.wallclock_speedup) + "," +
               csv_escape(histogram_to_string(r.exit_histogram)) + "," + csv_escape(r.error) +
               "\n";
    }
    return out;
}

Report Report::from_csv(const std::string& csv_text) {
    Report report;
    std::stringstream ss(csv_text);
    std::string line;
    bool in_rows = false;
    bool header_skipped = false;
    while (std::getline(ss, line)) {
        if (line.empty() || line == "[meta]") continue;
        if (line == "[rows]") {
            in_rows = true;
            continue;
        }
        const auto fields = csv_split(line);
        if (!in_rows) {
            if (fields[0] == "version") report.version = fields[1];
            else if (fields[0] == "config_hash") report.config_hash = fields[1];
            else if (fields[0] == "mat_convention") report.mat_convention = fields[1];
            else if (fields[0] == "metadata") report.metadata[fields[1]] = fields[2];
            else if (fields[0] == "avg_speedup")
                report.avg_speedup_per_method[fields[1]] = std::strtod(fields[2].c_str(), nullptr);
            continue;
        }
        if (!header_skipped) {
            header_skipped = true;
            continue;
        }
        if (fields.size() < 12) throw ValidationError("malformed report csv row: " + line);
        ReportRow r;
        r.target = fields[0];
        r.method = fields[1];
        r.temperature = std::strtod(fields[2].c_str(), nullptr);
        r.seed = std::stoull(fields[3]);
        r.category = fields[4];
        r.n_items = std::stoi(fields[5]);
        r.mat = std::strtod(fields[6].c_str(), nullptr);
        r.acceptance_rate = std::strtod(fields[7].c_str(), nullptr);
        r.modeled_speedup = std::strtod(fields[8].c_str(), nullptr);
        r.wallclock_speedup = std::strtod(fields[9].c_str(), nullptr);
        r.exit_histogram = histogram_from_string(fields[10]);
        r.error = fields[11];
        report.rows.push_back(std::move(r));
    }
    return report;
}

bool reports_equal_ignoring_wallclock(const Report& a, const Report& b) {
    return a.to_json(false) == b.to_json(false);
}

void emit_report(const Report& report, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_text_file(dir + "/report.json", report.to_json());
    write_text_file(dir + "/report.csv", report.to_csv());
}

}  // namespace s2d
