#include "s2d/model.hpp"

#include <algorithm>
#include <string>

namespace s2d {

std::vector<std::vector<double>> LanguageModel::evaluate_block(std::span<const TokenId> tokens,
                                                               int exit, size_t from_pos) const {
    if (from_pos < 1 || from_pos > tokens.size())
        throw ValidationError("evaluate_block: from_pos out of range");
    std::vector<std::vector<double>> out;
    out.reserve(tokens.size() - from_pos + 1);
    for (size_t end = from_pos; end <= tokens.size(); ++end)
        out.push_back(evaluate(tokens.subspan(0, end), exit));
    return out;
}

void LanguageModel::check_exit(int exit) const {
    const auto ladder = exits();
    if (std::find(ladder.begin(), ladder.end(), exit) == ladder.end())
        throw ConfigError("exit depth " + std::to_string(exit) + " not in model ladder");
}

void LanguageModel::check_context(std::span<const TokenId> context) const {
    if (context.empty()) throw ValidationError("empty context");
    const int n = vocab().size();
    for (TokenId t : context)
        if (t < 0 || t >= n) throw ValidationError("context token out of vocabulary range");
}

}  // namespace s2d
