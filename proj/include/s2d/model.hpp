#pragma once

#include <memory>
#include <span>
#include <vector>

#include "s2d/errors.hpp"
#include "s2d/vocab.hpp"

namespace s2d {

/// Contract every backend (tiny transformer, tabular oracle) implements.
/// Implementations are immutable after construction and safe to share
/// across threads.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual int n_layers() const = 0;
    /// Valid exit depths, strictly increasing; last entry = n_layers().
    virtual std::vector<int> exits() const = 0;
    virtual double unit_cost_per_layer() const = 0;

    /// Logits for the next-token position given `context`, read at
    /// depth `exit`. Deterministic for fixed model and context.
    virtual std::vector<double> evaluate(std::span<const TokenId> context, int exit) const = 0;

    /// Logits for positions [from_pos, len(tokens)] — position i holds
    /// the next-token logits after prefix tokens[0..i]. The last entry
    /// predicts the token after the whole sequence. Backends that can
    /// batch override this; the default loops over evaluate().
    virtual std::vector<std::vector<double>> evaluate_block(std::span<const TokenId> tokens,
                                                            int exit, size_t from_pos) const;

    double full_forward_cost() const { return n_layers() * unit_cost_per_layer(); }

protected:
    void check_exit(int exit) const;
    void check_context(std::span<const TokenId> context) const;
};

}  // namespace s2d
