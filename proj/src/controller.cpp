#include "dbvae/controller.hpp"

#include <algorithm>
#include <cmath>

namespace dbvae {

void ControllerHyper::validate() const {
    if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("controller: gains a, b must be > 0");
    if (!(w1 >= 1.0) || !(w2 >= 1.0)) throw ConfigError("controller: w1, w2 must be >= 1");
    if (!(w3 > 0.0 && w3 < 1.0)) throw ConfigError("controller: w3 must be in (0,1)");
    if (!(w4 > 1.0)) throw ConfigError("controller: w4 must be > 1");
    if (update_period < 1) throw ConfigError("controller: update_period must be >= 1");
    if (warmup_epochs < 0) throw ConfigError("controller: warmup_epochs must be >= 0");
    if (stall_limit < 1) throw ConfigError("controller: stall_limit must be >= 1");
}

Deltas compute_deltas(const ControllerState& state, double l_rec, double l_reg,
                      const ControllerHyper& hyper) {
    if (!state.history_started) {
        throw StateError("compute_deltas: no loss history recorded yet");
    }
    Deltas d;
    d.delta_rec = l_rec - hyper.w1 * state.min_rec;
    d.delta_reg = l_reg - hyper.w2 * state.min_reg;
    d.delta_l_rec = static_cast<int>(signum(l_rec - hyper.w3 * state.rec_at_last_change) +
                                     signum(l_rec - hyper.w4 * state.rec_at_last_change));
    return d;
}

namespace {

// Applies the signed beta adjustment and the associated bookkeeping.
ControllerState apply_delta(ControllerState state, double delta, double l_rec,
                            const ControllerHyper& hyper) {
    const double before = state.beta;
    state.beta = std::max(hyper.beta_floor, state.beta + delta);
    state.last_delta = delta;
    if (std::abs(state.beta - before) > kBetaChangeThreshold) {
        state.last_change_epoch = state.epoch;
        state.rec_at_last_change = l_rec;
        state.epochs_since_change = 0;
    }
    return state;
}

}  // namespace

ControllerState update_beta(ControllerState state, double l_rec, double l_reg,
                            const ControllerHyper& hyper) {
    const Deltas d = compute_deltas(state, l_rec, l_reg, hyper);
    const double psi_rec = signum(d.delta_rec);
    const double psi_reg = signum(d.delta_reg);
    const double dl = static_cast<double>(d.delta_l_rec);
    const double decrease = (hyper.b / 4.0) * (1.0 - psi_reg) * (1.0 + psi_rec + dl);
    const double increase = (hyper.a / 4.0) * (1.0 - psi_rec) * (1.0 + psi_reg - dl);
    state = apply_delta(std::move(state), increase - decrease, l_rec, hyper);
    // Historical minima absorb this epoch only after the decision used them.
    state.min_rec = std::min(state.min_rec, l_rec);
    state.min_reg = std::min(state.min_reg, l_reg);
    return state;
}

ControllerState stall_shakeup(ControllerState state, const ControllerHyper& hyper) {
    if (state.epochs_since_change >= hyper.stall_limit) {
        const double before = state.beta;
        state.beta = std::max(hyper.beta_floor, state.beta + hyper.a);
        state.last_delta = state.beta - before;
        state.last_change_epoch = state.epoch;
        state.epochs_since_change = 0;
    }
    return state;
}

double gamma_schedule(long epoch, long phase_start_epoch, const GammaSchedule& sched) {
    if (epoch < phase_start_epoch) return 0.0;
    if (sched.period <= 1) return sched.low;
    const long pos = (epoch - phase_start_epoch) % sched.period;
    switch (sched.shape) {
        case GammaShape::Sawtooth: {
            // Linear ramp low -> high across the cycle, reset at cycle start.
            const double frac =
                static_cast<double>(pos) / static_cast<double>(sched.period - 1);
            return sched.low + (sched.high - sched.low) * frac;
        }
        case GammaShape::Triangle: {
            const long half = sched.period / 2;
            const double frac =
                pos <= half ? static_cast<double>(pos) / static_cast<double>(half)
                            : static_cast<double>(sched.period - pos) /
                                  static_cast<double>(sched.period - half);
            return sched.low + (sched.high - sched.low) * frac;
        }
    }
    return sched.low;
}

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Warmup: return "warmup";
        case Phase::Regularized: return "regularized";
        case Phase::SemiSupervised: return "semisupervised";
    }
    return "unknown";
}

Phase phase_of(long epoch, const PhaseConfig& config) {
    if (epoch < config.warmup_epochs) return Phase::Warmup;
    if (config.has_labelled_data && epoch >= config.semi_supervised_start) {
        return Phase::SemiSupervised;
    }
    return Phase::Regularized;
}

ControllerState controller_observe_epoch(ControllerState state, double l_rec, double l_reg,
                                         const ControllerHyper& hyper, Deltas* out_deltas) {
    if (out_deltas) *out_deltas = Deltas{};
    if (state.epoch < hyper.warmup_epochs) {
        // Warm-up: beta pinned at the floor, no history.
        state.epoch += 1;
        return state;
    }
    if (!state.history_started) {
        // First post-warm-up epoch seeds the history; no decision possible yet.
        state.min_rec = l_rec;
        state.min_reg = l_reg;
        state.rec_at_last_change = l_rec;
        state.last_change_epoch = state.epoch;
        state.history_started = true;
        state.epochs_since_change = 0;
        state.epoch += 1;
        return state;
    }

    state.epochs_since_change += 1;
    const bool decision_epoch =
        ((state.epoch - hyper.warmup_epochs) % hyper.update_period) == 0;
    if (out_deltas) *out_deltas = compute_deltas(state, l_rec, l_reg, hyper);
    if (decision_epoch) {
        state = update_beta(std::move(state), l_rec, l_reg, hyper);
    } else {
        state.min_rec = std::min(state.min_rec, l_rec);
        state.min_reg = std::min(state.min_reg, l_reg);
    }
    state = stall_shakeup(std::move(state), hyper);
    state.epoch += 1;
    return state;
}

}  // namespace dbvae
