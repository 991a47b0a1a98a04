#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "s2d/model.hpp"
#include "s2d/prob.hpp"
#include "s2d/rng.hpp"

namespace s2d {

/// One drafted token: the exit that produced it, its confidence, and
/// the full distribution it was sampled from (needed by stochastic
/// verification).
struct DraftCandidate {
    TokenId token;
    double confidence;
    int exit_depth;
    ProbDist dist;
};

/// Per-exit confidence thresholds, aligned with a ladder. Values > 1
/// are legal and mean "never exit here".
struct ThresholdSet {
    std::vector<double> values;
};

enum class FallbackMode { stop_draft, emit_final };

struct DraftPolicy {
    enum class Kind { fixed_exit, s2d };
    Kind kind = Kind::fixed_exit;
    int exit_depth = 0;          // fixed_exit
    std::vector<int> ladder;     // s2d; empty = draft model's own exits
    ThresholdSet thresholds;     // s2d
    int max_draft_len = 5;       // K
    FallbackMode fallback = FallbackMode::stop_draft;
};

struct RoundRecord {
    std::vector<TokenId> draft_tokens;
    std::vector<double> draft_confidences;
    std::vector<int> draft_exit_depths;
    int accepted_count = 0;
    TokenId next_token = -1;
    bool bonus = false;  // next_token came from q_{K+1}, not a correction
    std::vector<TokenId> emitted;
    double draft_layer_units = 0.0;
    double target_full_forwards = 0.0;
};

/// Full record of one generation; every metric is recomputable from it.
struct DecodeTrace {
    std::vector<TokenId> prompt;
    std::vector<TokenId> output;
    std::vector<RoundRecord> rounds;
    double draft_layer_units = 0.0;
    double target_full_forwards = 0.0;
    uint64_t wall_ns = 0;

    std::string to_json() const;
    static DecodeTrace from_json(const std::string& json_text);
};

struct DraftResult {
    std::vector<DraftCandidate> candidates;
    double layer_units = 0.0;
};

struct VerifyResult {
    int accepted_count = 0;
    TokenId next_token = -1;
    bool bonus = false;
};

/// Eq.-1 style fixed-exit drafting: K tokens autoregressively at one
/// exit depth.
DraftResult draft_standard(const LanguageModel& draft, int exit, std::span<const TokenId> context,
                           int k, const SamplerConfig& sampler, Rng& rng);

/// Adaptive drafting: per position, exits are probed shallow to deep
/// and the first whose confidence c satisfies threshold <= c emits the
/// token. One uniform variate is drawn per position and reused across
/// exits, so degenerate thresholds reproduce fixed-exit drafting under
/// a shared rng. Probing a deeper exit extends the same forward pass,
/// so cost is charged incrementally between exits.
DraftResult draft_s2d(const LanguageModel& draft, const std::vector<int>& ladder,
                      const ThresholdSet& thresholds, std::span<const TokenId> context, int k,
                      const SamplerConfig& sampler, Rng& rng, FallbackMode fallback);

/// Top-1 verification: longest prefix matching the target argmax, plus
/// a correction (first mismatch) or bonus (all accepted) token. One
/// batched target forward over context+candidates.
VerifyResult verify_greedy(const LanguageModel& target, std::span<const TokenId> context,
                           const std::vector<DraftCandidate>& candidates);

/// Speculative-sampling verification: accept candidate i with
/// probability min(1, q_i[t]/p_i[t]); on rejection resample from
/// normalize(max(0, q_i - p_i)). p_i[t] = 0 counts as rejection with
/// residual q_i. Lossless for any proposal distribution.
VerifyResult verify_stochastic(const LanguageModel& target, std::span<const TokenId> context,
                               const std::vector<DraftCandidate>& candidates, double temperature,
                               Rng& rng);

/// One target full forward per emitted token; the 1x baseline.
DecodeTrace autoregressive_decode(const LanguageModel& target, std::span<const TokenId> prompt,
                                  int max_new_tokens, const SamplerConfig& sampler);

/// Draft-then-verify loop (greedy verification at T = 0, stochastic
/// otherwise) until eos or token budget.
DecodeTrace speculative_decode(const LanguageModel& target, const LanguageModel& draft,
                               const DraftPolicy& policy, std::span<const TokenId> prompt,
                               int max_new_tokens, const SamplerConfig& sampler, Rng& rng);

/// The target's own early exits serve as the draft; draft probes are
/// charged at the target's cost profile. The policy's exits must all be
/// strictly shallower than the target's full depth.
DecodeTrace self_speculative_decode(const LanguageModel& soft_target, const DraftPolicy& policy,
                                    std::span<const TokenId> prompt, int max_new_tokens,
                                    const SamplerConfig& sampler, Rng& rng);

}  // namespace s2d
