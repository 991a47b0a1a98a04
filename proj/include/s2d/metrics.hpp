#pragma once

#include <map>

#include "s2d/decode.hpp"

namespace s2d {

/// Analytical layer-cost profile: a full forward costs n_layers *
/// unit_cost, an exit at depth e costs e * unit_cost, and probing
/// depth e after e' costs (e - e') * unit_cost.
struct CostModel {
    int n_layers = 1;
    double unit_cost = 1.0;

    double full() const { return n_layers * unit_cost; }

    static CostModel of(const LanguageModel& model) {
        return {model.n_layers(), model.unit_cost_per_layer()};
    }
};

struct RunMetrics {
    double mat = 0.0;
    double acceptance_rate = 0.0;
    bool zero_drafted = false;
    double modeled_speedup = 0.0;
    double wallclock_speedup = 0.0;  // 0 when no baseline was measured
    std::map<int, int64_t> exit_histogram;
    int64_t output_tokens = 0;
    int64_t rounds = 0;
};

/// Mean tokens emitted per verification round (accepted + the
/// correction/bonus token); perfect drafting with K candidates gives
/// K + 1.
double mat(const DecodeTrace& trace);

/// Total accepted candidates / total drafted candidates; 0 when
/// nothing was drafted (see RunMetrics::zero_drafted).
double acceptance_rate(const DecodeTrace& trace);

/// (output tokens x target full cost) / (draft probe cost + rounds x
/// target full cost), from the trace's cost ledger.
double modeled_speedup(const DecodeTrace& trace, const CostModel& cost_target,
                       const CostModel& cost_draft);

/// Baseline ns / method ns. Hardware-dependent; reported, never
/// asserted.
double wallclock_speedup(const DecodeTrace& baseline, const DecodeTrace& method);

RunMetrics compute_metrics(const DecodeTrace& trace, const CostModel& cost_target,
                           const CostModel& cost_draft);

/// Recomputes the trace's cost totals from its rounds; used to check
/// ledger integrity.
void replay_ledger(const DecodeTrace& trace, double* draft_layer_units,
                   double* target_full_forwards);

}  // namespace s2d
