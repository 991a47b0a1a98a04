#include "s2d/decode.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "s2d/errors.hpp"

namespace s2d {

namespace {

int argmax_lowest(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

uint64_t now_ns() {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                     std::chrono::steady_clock::now().time_since_epoch())
                                     .count());
}

void check_same_vocab(const LanguageModel& target, const LanguageModel& draft) {
    if (!(target.vocab() == draft.vocab()))
        throw ConfigError("target and draft must share one vocabulary");
}

void validate_policy(const LanguageModel& draft, const DraftPolicy& policy) {
    if (policy.max_draft_len < 1) throw ConfigError("max_draft_len must be >= 1");
    const auto exits = draft.exits();
    if (policy.kind == DraftPolicy::Kind::fixed_exit) {
        if (std::find(exits.begin(), exits.end(), policy.exit_depth) == exits.end())
            throw ConfigError("fixed_exit depth not in draft ladder");
    } else {
        const auto& ladder = policy.ladder.empty() ? exits : policy.ladder;
        if (policy.thresholds.values.size() != ladder.size())
            throw ConfigError("thresholds and ladder length mismatch");
        for (int e : ladder)
            if (std::find(exits.begin(), exits.end(), e) == exits.end())
                throw ConfigError("s2d ladder exit not in draft ladder");
    }
}

DraftResult run_draft(const LanguageModel& draft, const DraftPolicy& policy,
                      std::span<const TokenId> context, int k, const SamplerConfig& sampler,
                      Rng& rng) {
    if (policy.kind == DraftPolicy::Kind::fixed_exit)
        return draft_standard(draft, policy.exit_depth, context, k, sampler, rng);
    const auto& ladder = policy.ladder.empty() ? draft.exits() : policy.ladder;
    return draft_s2d(draft, ladder, policy.thresholds, context, k, sampler, rng, policy.fallback);
}

DecodeTrace decode_loop(const LanguageModel& target, const LanguageModel& draft,
                        const DraftPolicy& policy, std::span<const TokenId> prompt,
                        int max_new_tokens, const SamplerConfig& sampler, Rng& rng) {
    check_same_vocab(target, draft);
    validate_policy(draft, policy);
    if (prompt.empty()) throw ValidationError("empty prompt");
    if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");

    const uint64_t t0 = now_ns();
    const TokenId eos = target.vocab().eos();
    DecodeTrace trace;
    trace.prompt.assign(prompt.begin(), prompt.end());

    std::vector<TokenId> context(prompt.begin(), prompt.end());
    bool done = false;
    while (!done && static_cast<int>(trace.output.size()) < max_new_tokens) {
        const int remaining = max_new_tokens - static_cast<int>(trace.output.size());
        const int k = std::min(policy.max_draft_len, remaining - 1);

        RoundRecord round;
        DraftResult draft_result;
        if (k >= 1) draft_result = run_draft(draft, policy, context, k, sampler, rng);
        round.draft_layer_units = draft_result.layer_units;
        for (const auto& cand : draft_result.candidates) {
            round.draft_tokens.push_back(cand.token);
            round.draft_confidences.push_back(cand.confidence);
            round.draft_exit_depths.push_back(cand.exit_depth);
        }

        const VerifyResult verdict =
            sampler.greedy()
                ? verify_greedy(target, context, draft_result.candidates)
                : verify_stochastic(target, context, draft_result.candidates,
                                    sampler.temperature, rng);
        round.accepted_count = verdict.accepted_count;
        round.next_token = verdict.next_token;
        round.bonus = verdict.bonus;
        round.target_full_forwards = 1.0;

        for (int i = 0; i < verdict.accepted_count && !done; ++i) {
            const TokenId t = draft_result.candidates[static_cast<size_t>(i)].token;
            round.emitted.push_back(t);
            if (t == eos) done = true;
        }
        if (!done) {
            round.emitted.push_back(verdict.next_token);
            if (verdict.next_token == eos) done = true;
        }

        context.insert(context.end(), round.emitted.begin(), round.emitted.end());
        trace.output.insert(trace.output.end(), round.emitted.begin(), round.emitted.end());
        trace.draft_layer_units += round.draft_layer_units;
        trace.target_full_forwards += round.target_full_forwards;
        trace.rounds.push_back(std::move(round));
    }
    trace.wall_ns = now_ns() - t0;
    return trace;
}

}  // namespace

DraftResult draft_standard(const LanguageModel& draft, int exit, std::span<const TokenId> context,
                           int k, const SamplerConfig& sampler, Rng& rng) {
    DraftResult result;
    std::vector<TokenId> ctx(context.begin(), context.end());
    const TokenId eos = draft.vocab().eos();
    for (int i = 0; i < k; ++i) {
        const auto logits = draft.evaluate(ctx, exit);
        const ProbDist dist = apply_temperature(logits, sampler.temperature);
        const double u = sampler.greedy() ? 0.0 : rng.next_uniform();
        const SampledToken s = sample_token_with_uniform(dist, sampler.greedy(), u);
        // Confidence is the token's untempered probability, so it stays
        // meaningful (and threshold-comparable) at T = 0.
        const double conf = apply_temperature(logits, 1.0).probs[static_cast<size_t>(s.token)];
        result.layer_units += exit;
        result.candidates.push_back({s.token, conf, exit, dist});
        ctx.push_back(s.token);
        if (s.token == eos) break;
    }
    return result;
}

DraftResult draft_s2d(const LanguageModel& draft, const std::vector<int>& ladder,
                      const ThresholdSet& thresholds, std::span<const TokenId> context, int k,
                      const SamplerConfig& sampler, Rng& rng, FallbackMode fallback) {
    if (thresholds.values.size() != ladder.size())
        throw ConfigError("thresholds and ladder length mismatch");
    if (ladder.empty()) throw ConfigError("s2d ladder must not be empty");
    for (size_t j = 1; j < ladder.size(); ++j)
        if (ladder[j] <= ladder[j - 1])
            throw ConfigError("s2d ladder must be strictly increasing");
    DraftResult result;
    std::vector<TokenId> ctx(context.begin(), context.end());
    const TokenId eos = draft.vocab().eos();
    for (int i = 0; i < k; ++i) {
        // One uniform per position, shared by every exit probed for it.
        const double u = sampler.greedy() ? 0.0 : rng.next_uniform();
        int prev_depth = 0;
        bool emitted = false;
        for (size_t j = 0; j < ladder.size(); ++j) {
            const int depth = ladder[j];
            const auto logits = draft.evaluate(ctx, depth);
            const ProbDist dist = apply_temperature(logits, sampler.temperature);
            const SampledToken s = sample_token_with_uniform(dist, sampler.greedy(), u);
            // Same untempered-confidence convention as draft_standard;
            // the exit decision must not collapse at T = 0.
            const double conf =
                apply_temperature(logits, 1.0).probs[static_cast<size_t>(s.token)];
            result.layer_units += depth - prev_depth;
            prev_depth = depth;
            if (thresholds.values[j] <= conf) {
                result.candidates.push_back({s.token, conf, depth, dist});
                ctx.push_back(s.token);
                emitted = true;
                break;
            }
            if (j + 1 == ladder.size() && fallback == FallbackMode::emit_final) {
                result.candidates.push_back({s.token, conf, depth, dist});
                ctx.push_back(s.token);
                emitted = true;
            }
        }
        if (!emitted) return result;  // stop_draft: end the round early
        if (ctx.back() == eos) break;
    }
    return result;
}

VerifyResult verify_greedy(const LanguageModel& target, std::span<const TokenId> context,
                           const std::vector<DraftCandidate>& candidates) {
    std::vector<TokenId> seq(context.begin(), context.end());
    for (const auto& c : candidates) seq.push_back(c.token);
    const auto rows = target.evaluate_block(seq, target.n_layers(), context.size());

    VerifyResult out;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const int best = argmax_lowest(rows[i]);
        if (candidates[i].token != best) {
            out.accepted_count = static_cast<int>(i);
            out.next_token = best;
            out.bonus = false;
            return out;
        }
    }
    out.accepted_count = static_cast<int>(candidates.size());
    out.next_token = argmax_lowest(rows.back());
    out.bonus = true;
    return out;
}

VerifyResult verify_stochastic(const LanguageModel& target, std::span<const TokenId> context,
                               const std::vector<DraftCandidate>& candidates, double temperature,
                               Rng& rng) {
    std::vector<TokenId> seq(context.begin(), context.end());
    for (const auto& c : candidates) seq.push_back(c.token);
    const auto rows = target.evaluate_block(seq, target.n_layers(), context.size());

    VerifyResult out;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const ProbDist q = apply_temperature(rows[i], temperature);
        const double pt = candidates[i].dist.probs[static_cast<size_t>(candidates[i].token)];
        const double qt = q.probs[static_cast<size_t>(candidates[i].token)];
        const double u = rng.next_uniform();
        if (pt > 0.0 && u < std::min(1.0, qt / pt)) continue;

        // Rejected: resample from the residual. p[t] = 0 counts as a
        // rejection with residual q itself.
        ProbDist residual;
        residual.probs.assign(q.probs.size(), 0.0);
        double sum = 0.0;
        for (size_t j = 0; j < q.probs.size(); ++j) {
            const double r = (pt == 0.0) ? q.probs[j]
                                         : std::max(0.0, q.probs[j] - candidates[i].dist.probs[j]);
            residual.probs[j] = r;
            sum += r;
        }
        for (double& r : residual.probs) r /= sum;
        out.accepted_count = static_cast<int>(i);
        out.next_token = sample_token_with_uniform(residual, false, rng.next_uniform()).token;
        out.bonus = false;
        return out;
    }
    const ProbDist q = apply_temperature(rows.back(), temperature);
    out.accepted_count = static_cast<int>(candidates.size());
    out.next_token = sample_token_with_uniform(q, false, rng.next_uniform()).token;
    out.bonus = true;
    return out;
}

DecodeTrace autoregressive_decode(const LanguageModel& target, std::span<const TokenId> prompt,
                                  int max_new_tokens, const SamplerConfig& sampler) {
    if (prompt.empty()) throw ValidationError("empty prompt");
    if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");

    const uint64_t t0 = now_ns();
    const TokenId eos = target.vocab().eos();
    Rng rng(sampler.seed);
    DecodeTrace trace;
    trace.prompt.assign(prompt.begin(), prompt.end());
    std::vector<TokenId> context(prompt.begin(), prompt.end());

    for (int i = 0; i < max_new_tokens; ++i) {
        const ProbDist dist =
            apply_temperature(target.evaluate(context, target.n_layers()), sampler.temperature);
        const SampledToken s = sample_token(dist, sampler, rng);

        RoundRecord round;
        round.accepted_count = 0;
        round.next_token = s.token;
        round.bonus = true;
        round.emitted = {s.token};
        round.target_full_forwards = 1.0;
        trace.target_full_forwards += 1.0;
        trace.rounds.push_back(std::move(round));

        context.push_back(s.token);
        trace.output.push_back(s.token);
        if (s.token == eos) break;
    }
    trace.wall_ns = now_ns() - t0;
    return trace;
}

DecodeTrace speculative_decode(const LanguageModel& target, const LanguageModel& draft,
                               const DraftPolicy& policy, std::span<const TokenId> prompt,
                               int max_new_tokens, const SamplerConfig& sampler, Rng& rng) {
    return decode_loop(target, draft, policy, prompt, max_new_tokens, sampler, rng);
}

DecodeTrace self_speculative_decode(const LanguageModel& soft_target, const DraftPolicy& policy,
                                    std::span<const TokenId> prompt, int max_new_tokens,
                                    const SamplerConfig& sampler, Rng& rng) {
    const int full = soft_target.n_layers();
    if (policy.kind == DraftPolicy::Kind::fixed_exit) {
        if (policy.exit_depth >= full)
            throw ConfigError("self-speculative draft exit must be shallower than full depth");
    } else {
        const auto& ladder = policy.ladder.empty() ? soft_target.exits() : policy.ladder;
        for (int e : ladder)
            if (e >= full)
                throw ConfigError(
                    "self-speculative ladder exit >= full depth degenerates to autoregressive "
                    "decoding with doubled cost; rejected");
    }
    return decode_loop(soft_target, soft_target, policy, prompt, max_new_tokens, sampler, rng);
}

// ---- trace serialization ---------------------------------------------

std::string DecodeTrace::to_json() const {
    nlohmann::json j;
    j["prompt"] = prompt;
    j["output"] = output;
    j["draft_layer_units"] = draft_layer_units;
    j["target_full_forwards"] = target_full_forwards;
    j["wall_ns"] = wall_ns;
    j["mat_convention"] = "accepted_plus_one";
    nlohmann::json rounds_json = nlohmann::json::array();
    for (const auto& r : rounds) {
        rounds_json.push_back({{"draft_tokens", r.draft_tokens},
                               {"draft_confidences", r.draft_confidences},
                               {"draft_exit_depths", r.draft_exit_depths},
                               {"accepted_count", r.accepted_count},
                               {"next_token", r.next_token},
                               {"bonus", r.bonus},
                               {"emitted", r.emitted},
                               {"draft_layer_units", r.draft_layer_units},
                               {"target_full_forwards", r.target_full_forwards}});
    }
    j["rounds"] = rounds_json;
    return j.dump();
}

DecodeTrace DecodeTrace::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    DecodeTrace trace;
    trace.prompt = j.at("prompt").get<std::vector<TokenId>>();
    trace.output = j.at("output").get<std::vector<TokenId>>();
    trace.draft_layer_units = j.at("draft_layer_units").get<double>();
    trace.target_full_forwards = j.at("target_full_forwards").get<double>();
    trace.wall_ns = j.at("wall_ns").get<uint64_t>();
    for (const auto& rj : j.at("rounds")) {
        RoundRecord r;
        r.draft_tokens = rj.at("draft_tokens").get<std::vector<TokenId>>();
        r.draft_confidences = rj.at("draft_confidences").get<std::vector<double>>();
        r.draft_exit_depths = rj.at("draft_exit_depths").get<std::vector<int>>();
        r.accepted_count = rj.at("accepted_count").get<int>();
        r.next_token = rj.at("next_token").get<TokenId>();
        r.bonus = rj.at("bonus").get<bool>();
        r.emitted = rj.at("emitted").get<std::vector<TokenId>>();
        r.draft_layer_units = rj.at("draft_layer_units").get<double>();
        r.target_full_forwards = rj.at("target_full_forwards").get<double>();
        trace.rounds.push_back(std::move(r));
    }
    return trace;
}

}  // namespace s2d
