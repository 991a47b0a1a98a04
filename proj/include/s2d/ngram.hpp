#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "s2d/model.hpp"
#include "s2d/prob.hpp"
#include "s2d/vocab.hpp"

namespace s2d {

/// Count-based n-gram model with add-alpha smoothing. Fully enumerable,
/// used as an exact oracle for the decoding algorithms.
class NGramTable {
public:
    NGramTable(int order, double alpha, Vocabulary vocab);

    static NGramTable build(const std::vector<std::vector<TokenId>>& corpus, int order,
                            double alpha, Vocabulary vocab);

    int order() const { return order_; }
    double alpha() const { return alpha_; }
    const Vocabulary& vocab() const { return vocab_; }

    void add_count(std::span<const TokenId> context, TokenId token, double count = 1.0);

    /// p(t | ctx) = (count(ctx,t) + alpha) / (count(ctx,.) + alpha*|V|).
    /// Context shorter than order-1 is left-padded with bos.
    ProbDist conditional(std::span<const TokenId> context) const;

    std::string to_json() const;
    static NGramTable from_json(const std::string& json_text);

private:
    std::vector<TokenId> effective_context(std::span<const TokenId> context) const;

    int order_;
    double alpha_;
    Vocabulary vocab_;
    std::map<std::vector<TokenId>, std::vector<double>> counts_;
};

/// Adapts one table (or a ladder of tables) to the LanguageModel
/// contract with a synthetic cost profile, so the cost model treats
/// oracles like transformers. evaluate() returns log conditionals.
class NGramModel final : public LanguageModel {
public:
    NGramModel(NGramTable table, int n_layers = 1, double unit_cost = 1.0);

    /// Ladder variant: exit_tables[i] serves exits[i]; exits strictly
    /// increasing, last = n_layers.
    NGramModel(std::vector<int> exits, std::vector<NGramTable> exit_tables, int n_layers,
               double unit_cost);

    const Vocabulary& vocab() const override { return tables_.front().vocab(); }
    int n_layers() const override { return n_layers_; }
    std::vector<int> exits() const override { return exits_; }
    double unit_cost_per_layer() const override { return unit_cost_; }

    std::vector<double> evaluate(std::span<const TokenId> context, int exit) const override;

private:
    std::vector<int> exits_;
    std::vector<NGramTable> tables_;
    int n_layers_;
    double unit_cost_;
};

/// Exhaustive distribution over continuations of `prompt`, mirroring
/// decode semantics: up to `horizon` tokens, eos absorbs. The returned
/// masses sum to 1 within 1e-9 by construction. Brute-force oracle for
/// losslessness tests; keep vocab <= 8 and horizon <= 4.
std::map<std::vector<TokenId>, double> enumerate_continuations(const LanguageModel& model,
                                                               std::span<const TokenId> prompt,
                                                               int horizon, double temperature);

}  // namespace s2d
