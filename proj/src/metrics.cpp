#include "s2d/metrics.hpp"

#include "s2d/errors.hpp"

namespace s2d {

double mat(const DecodeTrace& trace) {
    if (trace.rounds.empty()) throw ValidationError("mat: trace has no rounds");
    double emitted = 0.0;
    for (const auto& r : trace.rounds) emitted += r.accepted_count + 1;
    return emitted / static_cast<double>(trace.rounds.size());
}

double acceptance_rate(const DecodeTrace& trace) {
    int64_t drafted = 0, accepted = 0;
    for (const auto& r : trace.rounds) {
        drafted += static_cast<int64_t>(r.draft_tokens.size());
        accepted += r.accepted_count;
    }
    if (drafted == 0) return 0.0;
    return static_cast<double>(accepted) / static_cast<double>(drafted);
}

double modeled_speedup(const DecodeTrace& trace, const CostModel& cost_target,
                       const CostModel& cost_draft) {
    if (trace.rounds.empty()) throw ValidationError("modeled_speedup: trace has no rounds");
    const double denom = trace.draft_layer_units * cost_draft.unit_cost +
                         trace.target_full_forwards * cost_target.full();
    return static_cast<double>(trace.output.size()) * cost_target.full() / denom;
}

double wallclock_speedup(const DecodeTrace& baseline, const DecodeTrace& method) {
    if (method.wall_ns == 0 || baseline.wall_ns == 0)
        throw ValidationError("wallclock_speedup: zero elapsed time");
    return static_cast<double>(baseline.wall_ns) / static_cast<double>(method.wall_ns);
}

RunMetrics compute_metrics(const DecodeTrace& trace, const CostModel& cost_target,
                           const CostModel& cost_draft) {
    RunMetrics m;
    m.mat = mat(trace);
    m.acceptance_rate = acceptance_rate(trace);
    m.modeled_speedup = modeled_speedup(trace, cost_target, cost_draft);
    m.output_tokens = static_cast<int64_t>(trace.output.size());
    m.rounds = static_cast<int64_t>(trace.rounds.size());
    int64_t drafted = 0;
    for (const auto& r : trace.rounds) {
        drafted += static_cast<int64_t>(r.draft_tokens.size());
        for (int e : r.draft_exit_depths) m.exit_histogram[e] += 1;
    }
    m.zero_drafted = (drafted == 0);
    return m;
}

void replay_ledger(const DecodeTrace& trace, double* draft_layer_units,
                   double* target_full_forwards) {
    double du = 0.0, tf = 0.0;
    for (const auto& r : trace.rounds) {
        du += r.draft_layer_units;
        tf += r.target_full_forwards;
    }
    *draft_layer_units = du;
    *target_full_forwards = tf;
}

}  // namespace s2d
