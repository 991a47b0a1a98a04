#include "s2d/prob.hpp"

#include <algorithm>
#include <cmath>

#include "s2d/errors.hpp"

namespace s2d {

void ProbDist::validate() const {
    if (probs.empty()) throw ValidationError("empty distribution");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw ValidationError("negative or NaN probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("distribution does not sum to 1");
}

int ProbDist::argmax() const {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

ProbDist apply_temperature(std::span<const double> logits, double temperature) {
    if (logits.empty()) throw ValidationError("empty logits");
    if (temperature < 0.0 || !std::isfinite(temperature))
        throw ValidationError("temperature must be a finite non-negative real");
    for (double v : logits)
        if (!std::isfinite(v)) throw ValidationError("non-finite logit");

    ProbDist dist;
    dist.probs.assign(logits.size(), 0.0);

    // std::max_element keeps the first of equal maxima, which gives the
    // lowest-index tie break.
    const size_t best =
        static_cast<size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (temperature == 0.0) {
        dist.probs[best] = 1.0;
        return dist;
    }

    const double shift = logits[best];
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        dist.probs[i] = std::exp((logits[i] - shift) / temperature);
        sum += dist.probs[i];
    }
    for (double& p : dist.probs) p /= sum;
    return dist;
}

SampledToken sample_token_with_uniform(const ProbDist& dist, bool greedy, double u) {
    if (greedy) {
        int best = dist.argmax();
        return {best, dist.probs[static_cast<size_t>(best)]};
    }
    double cum = 0.0;
    const int n = dist.size();
    for (int i = 0; i < n; ++i) {
        cum += dist.probs[static_cast<size_t>(i)];
        if (u < cum) return {i, dist.probs[static_cast<size_t>(i)]};
    }
    // u landed in the rounding slack past the last cumulative step.
    for (int i = n - 1; i >= 0; --i)
        if (dist.probs[static_cast<size_t>(i)] > 0.0)
            return {i, dist.probs[static_cast<size_t>(i)]};
    return {n - 1, dist.probs[static_cast<size_t>(n - 1)]};
}

SampledToken sample_token(const ProbDist& dist, const SamplerConfig& sampler, Rng& rng) {
    const bool greedy = sampler.greedy();
    const double u = greedy ? 0.0 : rng.next_uniform();
    return sample_token_with_uniform(dist, greedy, u);
}

}  // namespace s2d
