#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "s2d/rng.hpp"
#include "s2d/vocab.hpp"

namespace s2d {

/// Normalized next-token distribution. Entries are non-negative and sum
/// to 1 within 1e-9.
struct ProbDist {
    std::vector<double> probs;

    void validate() const;
    int argmax() const;
    int size() const { return static_cast<int>(probs.size()); }
};

struct SamplerConfig {
    double temperature = 1.0;  // 0 = greedy
    uint64_t seed = 0;

    bool greedy() const { return temperature == 0.0; }
};

/// Softmax(logits / T) with max-subtraction; T = 0 yields a one-hot at
/// the argmax (ties broken by lowest index). Rejects non-finite logits.
ProbDist apply_temperature(std::span<const double> logits, double temperature);

/// Token plus its probability under the distribution it was drawn from.
struct SampledToken {
    TokenId token;
    double confidence;
};

/// Inverse-CDF draw using a single uniform variate. Greedy mode ignores
/// `u` and returns (argmax, max probability).
SampledToken sample_token_with_uniform(const ProbDist& dist, bool greedy, double u);

SampledToken sample_token(const ProbDist& dist, const SamplerConfig& sampler, Rng& rng);

}  // namespace s2d
