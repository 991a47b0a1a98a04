#include <doctest.h>

#include <cmath>

#include "s2d/errors.hpp"
#include "s2d/ngram.hpp"

using namespace s2d;

namespace {

Vocabulary ab_vocab() {
    return Vocabulary({"<bos>", "<eos>", "a", "b"}, 0, 1);
}

}  // namespace

TEST_CASE("empty corpus gives the uniform smoothed distribution") {
    const NGramTable table = NGramTable::build({}, 2, 1.0, ab_vocab());
    const std::vector<TokenId> ctx{2};
    const ProbDist dist = table.conditional(ctx);
    for (double p : dist.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("hand-counted bigram: p(b|a) on corpus 'abab'") {
    // Transitions: bos->a, a->b, b->a, a->b. With add-1 smoothing over a
    // vocab of 4, p(b|a) = (2 + 1) / (2 + 4).
    const NGramTable table = NGramTable::build({{2, 3, 2, 3}}, 2, 1.0, ab_vocab());
    const std::vector<TokenId> ctx{2};
    CHECK(table.conditional(ctx).probs[3] == doctest::Approx((2.0 + 1.0) / (2.0 + 4.0)));
}

TEST_CASE("large alpha pushes conditionals towards uniform") {
    const NGramTable table = NGramTable::build({{2, 3, 2, 3}}, 2, 1e6, ab_vocab());
    const std::vector<TokenId> ctx{2};
    const ProbDist dist = table.conditional(ctx);
    for (double p : dist.probs) CHECK(std::abs(p - 0.25) < 1e-5);
}

TEST_CASE("conditionals always sum to 1") {
    const NGramTable table =
        NGramTable::build({{2, 3, 3, 2, 2}, {3, 3, 2}}, 3, 0.5, ab_vocab());
    for (TokenId t1 = 0; t1 < 4; ++t1)
        for (TokenId t2 = 0; t2 < 4; ++t2) {
            const std::vector<TokenId> ctx{t1, t2};
            double sum = 0.0;
            for (double p : table.conditional(ctx).probs) sum += p;
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
}

TEST_CASE("short context is left-padded with bos") {
    NGramTable table(3, 1.0, ab_vocab());
    table.add_count(std::vector<TokenId>{0, 0}, 2, 5.0);
    const std::vector<TokenId> empty_ctx{};
    const std::vector<TokenId> bos_ctx{0, 0};
    CHECK(table.conditional(empty_ctx).probs == table.conditional(bos_ctx).probs);
}

TEST_CASE("ngram model evaluate returns log conditionals") {
    // counts {a->b only}: evaluate on "a" puts >= 0.99 mass on b at alpha 1e-6.
    NGramTable table(2, 1e-6, ab_vocab());
    table.add_count(std::vector<TokenId>{2}, 3, 10.0);
    const NGramModel model(table);
    const std::vector<TokenId> ctx{2};
    const auto logits = model.evaluate(ctx, 1);
    const ProbDist dist = apply_temperature(logits, 1.0);
    CHECK(dist.probs[3] >= 0.99);
}

TEST_CASE("two tables built from the same corpus evaluate identically") {
    const std::vector<std::vector<TokenId>> corpus{{2, 3, 2, 2}, {3, 2}};
    const NGramModel m1(NGramTable::build(corpus, 2, 0.5, ab_vocab()));
    const NGramModel m2(NGramTable::build(corpus, 2, 0.5, ab_vocab()));
    const std::vector<TokenId> ctx{3, 2};
    CHECK(m1.evaluate(ctx, 1) == m2.evaluate(ctx, 1));
}

TEST_CASE("evaluate rejects empty contexts and unknown exits") {
    const NGramModel model(NGramTable::build({}, 2, 1.0, ab_vocab()));
    const std::vector<TokenId> empty{};
    const std::vector<TokenId> ctx{2};
    CHECK_THROWS_AS(model.evaluate(empty, 1), ValidationError);
    CHECK_THROWS_AS(model.evaluate(ctx, 2), ConfigError);
}

TEST_CASE("enumerator: total probability over all continuations is 1") {
    const NGramTable table = NGramTable::build({{2, 3, 2, 3, 3, 2}}, 2, 0.3, ab_vocab());
    const NGramModel model(table);
    const std::vector<TokenId> prompt{2};
    for (double temp : {1.0, 0.7}) {
        const auto dist = enumerate_continuations(model, prompt, 3, temp);
        double total = 0.0;
        for (const auto& [seq, p] : dist) total += p;
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("enumerator: full next-sequence distribution by exhaustive enumeration") {
    // Horizon-2, vocab 4: every continuation's mass equals the chain
    // rule product, checked directly.
    const NGramTable table = NGramTable::build({{2, 3, 2, 2, 3}}, 2, 0.5, ab_vocab());
    const NGramModel model(table);
    const std::vector<TokenId> prompt{2};
    const auto dist = enumerate_continuations(model, prompt, 2, 1.0);
    double total = 0.0;
    for (const auto& [seq, p] : dist) {
        std::vector<TokenId> ctx = prompt;
        double expect = 1.0;
        for (TokenId t : seq) {
            expect *= table.conditional(ctx).probs[static_cast<size_t>(t)];
            ctx.push_back(t);
        }
        CHECK(p == doctest::Approx(expect).epsilon(1e-12));
        total += p;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("json round trip preserves conditionals") {
    NGramTable table = NGramTable::build({{2, 3, 3, 2}}, 2, 0.25, ab_vocab());
    const NGramTable loaded = NGramTable::from_json(table.to_json());
    for (TokenId t = 0; t < 4; ++t) {
        const std::vector<TokenId> ctx{t};
        CHECK(table.conditional(ctx).probs == loaded.conditional(ctx).probs);
    }
}

TEST_CASE("ladder model routes exits to their tables") {
    NGramTable shallow(1, 1.0, ab_vocab());
    shallow.add_count(std::vector<TokenId>{}, 2, 100.0);
    NGramTable deep(1, 1.0, ab_vocab());
    deep.add_count(std::vector<TokenId>{}, 3, 100.0);
    const NGramModel model({2, 4}, {shallow, deep}, 4, 1.0);
    const std::vector<TokenId> ctx{2};
    CHECK(apply_temperature(model.evaluate(ctx, 2), 1.0).argmax() == 2);
    CHECK(apply_temperature(model.evaluate(ctx, 4), 1.0).argmax() == 3);
    CHECK_THROWS_AS(model.evaluate(ctx, 3), ConfigError);
}

TEST_CASE("ngram validation errors") {
    CHECK_THROWS_AS(NGramTable(0, 1.0, ab_vocab()), ValidationError);
    CHECK_THROWS_AS(NGramTable(2, 0.0, ab_vocab()), ValidationError);
    CHECK_THROWS_AS(NGramModel({2, 3}, {NGramTable(1, 1.0, ab_vocab())}, 3, 1.0), ConfigError);
}
