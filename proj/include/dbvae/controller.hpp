#pragma once

#include <string>

#include "dbvae/errors.hpp"

namespace dbvae {

// Signum: +1, 0, -1.
inline double signum(double s) { return s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0); }

struct ControllerHyper {
    double a = 0.2;    // beta increase gain
    double b = 0.05;   // beta decrease gain
    double w1 = 1.2;   // reconstruction historical-minimum tolerance
    double w2 = 1.2;   // regularization historical-minimum tolerance
    double w3 = 0.9;   // last-change lower comparison factor
    double w4 = 1.1;   // last-change upper comparison factor
    long update_period = 5;
    long warmup_epochs = 25;
    long stall_limit = 500;
    double beta_floor = 0.0;

    void validate() const;
};

// Sequential controller state; one instance per training run.
struct ControllerState {
    double beta = 0.0;
    double min_rec = 0.0;             // historical minimum of epoch L_rec since warm-up end
    double min_reg = 0.0;             // historical minimum of epoch L_reg since warm-up end
    double rec_at_last_change = 0.0;  // L_rec at the epoch beta last changed
    long last_change_epoch = -1;
    long epochs_since_change = 0;
    long epoch = 0;
    bool history_started = false;     // set once the first post-warm-up epoch is recorded
    double last_delta = 0.0;          // beta adjustment applied by the most recent decision
};

struct Deltas {
    double delta_rec = 0.0;
    double delta_reg = 0.0;
    int delta_l_rec = 0;  // in {-2,-1,0,1,2}
};

// delta_rec = L_rec - w1*min_rec; delta_reg = L_reg - w2*min_reg;
// delta_l_rec = sgn(L_rec - w3*rec_at_last_change) + sgn(L_rec - w4*rec_at_last_change).
Deltas compute_deltas(const ControllerState& state, double l_rec, double l_reg,
                      const ControllerHyper& hyper);

// One beta decision:
//   beta <- beta - (b/4)(1 - sgn(d_reg))(1 + sgn(d_rec) + dL)
//               + (a/4)(1 - sgn(d_rec))(1 + sgn(d_reg) - dL)
// clamped at beta_floor. A change larger than 1e-12 updates the last-change
// bookkeeping; the historical minima absorb (l_rec, l_reg) after the decision.
ControllerState update_beta(ControllerState state, double l_rec, double l_reg,
                            const ControllerHyper& hyper);

// If beta has not moved for stall_limit epochs, kick it up by a and reset the
// last-change bookkeeping.
ControllerState stall_shakeup(ControllerState state, const ControllerHyper& hyper);

enum class GammaShape { Sawtooth, Triangle };

struct GammaSchedule {
    double low = 0.01;
    double high = 0.2;
    long period = 100;
    GammaShape shape = GammaShape::Sawtooth;
};

// Cyclic clustering-loss weight; 0 before phase_start_epoch.
double gamma_schedule(long epoch, long phase_start_epoch, const GammaSchedule& sched = {});

enum class Phase { Warmup, Regularized, SemiSupervised };

const char* phase_name(Phase p);

struct PhaseConfig {
    long warmup_epochs = 25;
    long semi_supervised_start = 500;
    bool has_labelled_data = false;
};

Phase phase_of(long epoch, const PhaseConfig& config);

// Per-epoch driver used by training: records history, runs the beta decision
// on every update_period-th post-warm-up epoch, and applies the stall kick.
// Returns the state to use for the *next* epoch; `out_deltas`, when non-null,
// receives the deltas observed at this epoch (zeros until history exists).
ControllerState controller_observe_epoch(ControllerState state, double l_rec, double l_reg,
                                         const ControllerHyper& hyper,
                                         Deltas* out_deltas = nullptr);

inline constexpr double kBetaChangeThreshold = 1e-12;

}  // namespace dbvae
