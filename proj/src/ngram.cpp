#include "s2d/ngram.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "s2d/errors.hpp"

namespace s2d {

NGramTable::NGramTable(int order, double alpha, Vocabulary vocab)
    : order_(order), alpha_(alpha), vocab_(std::move(vocab)) {
    if (order_ < 1) throw ValidationError("ngram order must be >= 1");
    if (!(alpha_ > 0.0)) throw ValidationError("ngram alpha must be > 0");
}

NGramTable NGramTable::build(const std::vector<std::vector<TokenId>>& corpus, int order,
                             double alpha, Vocabulary vocab) {
    NGramTable table(order, alpha, std::move(vocab));
    for (const auto& seq : corpus) {
        for (size_t i = 0; i < seq.size(); ++i) {
            const size_t ctx_len = std::min(i, static_cast<size_t>(order - 1));
            table.add_count(std::span<const TokenId>(seq.data() + i - ctx_len, ctx_len), seq[i]);
        }
    }
    return table;
}

std::vector<TokenId> NGramTable::effective_context(std::span<const TokenId> context) const {
    const size_t want = static_cast<size_t>(order_ - 1);
    std::vector<TokenId> ctx(want, vocab_.bos());
    const size_t take = std::min(want, context.size());
    for (size_t i = 0; i < take; ++i)
        ctx[want - take + i] = context[context.size() - take + i];
    return ctx;
}

void NGramTable::add_count(std::span<const TokenId> context, TokenId token, double count) {
    if (token < 0 || token >= vocab_.size()) throw ValidationError("count token out of range");
    if (count < 0.0) throw ValidationError("negative count");
    auto& row = counts_[effective_context(context)];
    if (row.empty()) row.assign(static_cast<size_t>(vocab_.size()), 0.0);
    row[static_cast<size_t>(token)] += count;
}

ProbDist NGramTable::conditional(std::span<const TokenId> context) const {
    const int v = vocab_.size();
    ProbDist dist;
    dist.probs.assign(static_cast<size_t>(v), 0.0);

    auto it = counts_.find(effective_context(context));
    double total = 0.0;
    if (it != counts_.end())
        for (double c : it->second) total += c;

    const double denom = total + alpha_ * v;
    for (int t = 0; t < v; ++t) {
        const double c = (it != counts_.end()) ? it->second[static_cast<size_t>(t)] : 0.0;
        dist.probs[static_cast<size_t>(t)] = (c + alpha_) / denom;
    }
    return dist;
}

std::string NGramTable::to_json() const {
    nlohmann::json j;
    j["order"] = order_;
    j["alpha"] = alpha_;
    j["vocab"] = nlohmann::json::parse(vocab_.to_json());
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [ctx, row] : counts_) rows.push_back({ctx, row});
    j["counts"] = rows;
    return j.dump();
}

NGramTable NGramTable::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    NGramTable table(j.at("order").get<int>(), j.at("alpha").get<double>(),
                     Vocabulary::from_json(j.at("vocab").dump()));
    for (const auto& row : j.at("counts")) {
        const auto ctx = row.at(0).get<std::vector<TokenId>>();
        const auto counts = row.at(1).get<std::vector<double>>();
        if (counts.size() != static_cast<size_t>(table.vocab().size()))
            throw ValidationError("ngram count row length does not match vocab");
        for (size_t t = 0; t < counts.size(); ++t)
            if (counts[t] != 0.0)
                table.add_count(ctx, static_cast<TokenId>(t), counts[t]);
    }
    return table;
}

NGramModel::NGramModel(NGramTable table, int n_layers, double unit_cost)
    : exits_{n_layers}, n_layers_(n_layers), unit_cost_(unit_cost) {
    if (n_layers_ < 1 || !(unit_cost_ > 0.0)) throw ConfigError("bad ngram cost profile");
    tables_.push_back(std::move(table));
}

NGramModel::NGramModel(std::vector<int> exits, std::vector<NGramTable> exit_tables, int n_layers,
                       double unit_cost)
    : exits_(std::move(exits)), tables_(std::move(exit_tables)), n_layers_(n_layers),
      unit_cost_(unit_cost) {
    if (exits_.empty() || exits_.size() != tables_.size())
        throw ConfigError("ngram ladder: exits and tables must align");
    for (size_t i = 0; i + 1 < exits_.size(); ++i)
        if (exits_[i] >= exits_[i + 1]) throw ConfigError("ngram ladder exits must increase");
    if (exits_.front() < 1 || exits_.back() != n_layers_)
        throw ConfigError("ngram ladder must end at n_layers");
    for (const auto& t : tables_)
        if (!(t.vocab() == tables_.front().vocab()))
            throw ConfigError("ngram ladder tables must share one vocabulary");
}

std::vector<double> NGramModel::evaluate(std::span<const TokenId> context, int exit) const {
    check_context(context);
    check_exit(exit);
    size_t idx = 0;
    while (exits_[idx] != exit) ++idx;
    const ProbDist dist = tables_[idx].conditional(context);
    std::vector<double> logits(dist.probs.size());
    for (size_t i = 0; i < logits.size(); ++i) logits[i] = std::log(dist.probs[i]);
    return logits;
}

std::map<std::vector<TokenId>, double> enumerate_continuations(const LanguageModel& model,
                                                               std::span<const TokenId> prompt,
                                                               int horizon, double temperature) {
    std::map<std::vector<TokenId>, double> out;
    const int full = model.n_layers();
    const TokenId eos = model.vocab().eos();

    struct Frame {
        std::vector<TokenId> seq;
        double mass;
    };
    std::vector<Frame> stack{{std::vector<TokenId>(prompt.begin(), prompt.end()), 1.0}};
    const size_t prompt_len = prompt.size();

    while (!stack.empty()) {
        Frame f = std::move(stack.back());
        stack.pop_back();
        const size_t emitted = f.seq.size() - prompt_len;
        const bool ended = emitted > 0 && f.seq.back() == eos;
        if (ended || emitted == static_cast<size_t>(horizon)) {
            out[std::vector<TokenId>(f.seq.begin() + static_cast<long>(prompt_len), f.seq.end())] +=
                f.mass;
            continue;
        }
        const ProbDist dist = apply_temperature(model.evaluate(f.seq, full), temperature);
        for (int t = 0; t < dist.size(); ++t) {
            const double p = dist.probs[static_cast<size_t>(t)];
            if (p == 0.0) continue;
            Frame child{f.seq, f.mass * p};
            child.seq.push_back(t);
            stack.push_back(std::move(child));
        }
    }
    return out;
}

}  // namespace s2d
