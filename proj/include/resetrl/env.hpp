#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "resetrl/rng.hpp"
#include "resetrl/types.hpp"

namespace resetrl::env {

enum class Strength { Strong, Weak };
enum class Prep { Equilibrium, Inverted, QutritMixed };

inline const char* to_string(Strength s) { return s == Strength::Strong ? "strong" : "weak"; }
inline const char* to_string(Prep p) {
    switch (p) {
        case Prep::Equilibrium: return "equilibrium";
        case Prep::Inverted: return "inverted";
        case Prep::QutritMixed: return "qutrit_mixed";
    }
    return "?";
}

// Expected quadrature response per prepared level, tabulated per sample.
struct MeanTraces {
    std::vector<double> i_g, q_g;
    std::vector<double> i_e, q_e;
    std::vector<double> i_f, q_f;  // empty unless three-level

    const std::vector<double>& i_of(Level l) const {
        return l == Level::G ? i_g : (l == Level::E ? i_e : i_f);
    }
    const std::vector<double>& q_of(Level l) const {
        return l == Level::G ? q_g : (l == Level::E ? q_e : q_f);
    }
};

// Physical and noise parameters of the simulated transmon.
struct EnvConfig {
    double t1_e = 13e-6;        // excited-state lifetime [s]
    double t1_f = 6e-6;         // second-excited-state lifetime [s]
    double p_therm = 0.014;     // equilibrium excited-state population
    std::size_t readout_len = 256;  // readout samples per quadrature
    double sample_rate = 1e9;   // [samples/s]
    double cycle_time = 856e-9;         // full measure->act cycle [s]
    double feedback_latency = 451e-9;   // readout end -> conditional pulse [s]
    double verify_delay = 650e-9;       // termination -> verification gap [s]
    double snr = 4.357;         // integrated g/e SNR of a full strong readout
    double snr_weak = 2.232;    // same, weak readout mode
    double flip_error = 1e-3;   // independent failure probability per pi-pulse
    int levels = 2;             // 2 or 3
    MeanTraces mean_traces;

    double readout_duration() const { return static_cast<double>(readout_len) / sample_rate; }

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw ConfigError("env." + field + ": " + why);
        };
        if (!(t1_e > 0)) fail("t1_e", "must be > 0");
        if (!(t1_f > 0)) fail("t1_f", "must be > 0");
        if (!(p_therm >= 0 && p_therm < 0.5)) fail("p_therm", "must be in [0, 0.5)");
        if (!(snr > 0)) fail("snr", "must be > 0");
        if (!(snr_weak > 0)) fail("snr_weak", "must be > 0");
        if (readout_len == 0) fail("readout_len", "must be > 0");
        if (!(sample_rate > 0)) fail("sample_rate", "must be > 0");
        if (!(flip_error >= 0 && flip_error < 1)) fail("flip_error", "must be in [0, 1)");
        if (levels != 2 && levels != 3) fail("levels", "must be 2 or 3");
        if (!(verify_delay >= 0)) fail("verify_delay", "must be >= 0");
        if (!(feedback_latency >= 0)) fail("feedback_latency", "must be >= 0");
        if (cycle_time < readout_duration() + feedback_latency)
            fail("cycle_time", "shorter than readout + feedback latency");
        auto check_len = [&](const std::vector<double>& v, const char* name) {
            if (v.size() != readout_len) fail(std::string("mean_traces.") + name, "length != readout_len");
        };
        check_len(mean_traces.i_g, "i_g");
        check_len(mean_traces.q_g, "q_g");
        check_len(mean_traces.i_e, "i_e");
        check_len(mean_traces.q_e, "q_e");
        if (levels == 3) {
            check_len(mean_traces.i_f, "i_f");
            check_len(mean_traces.q_f, "q_f");
        }
    }
};

// Exponential ring-up toward a state-dependent steady-state IQ point. The
// default geometry puts g/e on the I axis and f off-axis so that an
// orthogonal filter pair resolves all three states.
struct RingUpModel {
    double tau = 50e-9;  // resonator ring-up constant [s]
    double gi = 1.0, gq = 0.0;
    double ei = -1.0, eq = 0.0;
    double fi = -1.0, fq = -1.12;

    MeanTraces build(std::size_t n, double sample_rate, int levels) const {
        MeanTraces mt;
        auto fill = [&](std::vector<double>& out, double target) {
            out.resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                const double t = (static_cast<double>(k) + 0.5) / sample_rate;
                out[k] = target * (1.0 - std::exp(-t / tau));
            }
        };
        fill(mt.i_g, gi);
        fill(mt.q_g, gq);
        fill(mt.i_e, ei);
        fill(mt.q_e, eq);
        if (levels == 3) {
            fill(mt.i_f, fi);
            fill(mt.q_f, fq);
        }
        return mt;
    }
};

inline EnvConfig default_config(int levels = 2) {
    EnvConfig cfg;
    cfg.levels = levels;
    cfg.mean_traces = RingUpModel{}.build(cfg.readout_len, cfg.sample_rate, levels);
    return cfg;
}

// L2 norm of the g/e mean-trace difference over both quadratures; the scale
// that converts the configured integrated SNR into a per-sample noise sigma.
inline double ge_contrast_norm(const EnvConfig& cfg) {
    double s = 0.0;
    for (std::size_t k = 0; k < cfg.readout_len; ++k) {
        const double di = cfg.mean_traces.i_g[k] - cfg.mean_traces.i_e[k];
        const double dq = cfg.mean_traces.q_g[k] - cfg.mean_traces.q_e[k];
        s += di * di + dq * dq;
    }
    return std::sqrt(s);
}

inline double noise_sigma(const EnvConfig& cfg, Strength strength) {
    return ge_contrast_norm(cfg) / (strength == Strength::Strong ? cfg.snr : cfg.snr_weak);
}

struct EnvState {
    Level level = Level::G;
};

inline EnvState prepare_pure(Level l, const EnvConfig& cfg) {
    if (l == Level::F && cfg.levels != 3)
        throw ConfigError("prepare: f level requires levels=3");
    return EnvState{l};
}

// Single pi-pulse maps; each fails (identity) independently with flip_error.
inline Level ge_pulse(Level l, const EnvConfig& cfg, Rng& rng) {
    if (rng.uniform() < cfg.flip_error) return l;
    if (l == Level::G) return Level::E;
    if (l == Level::E) return Level::G;
    return l;
}

inline Level ef_pulse(Level l, const EnvConfig& cfg, Rng& rng) {
    if (rng.uniform() < cfg.flip_error) return l;
    if (l == Level::E) return Level::F;
    if (l == Level::F) return Level::E;
    return l;
}

inline EnvState prepare(const EnvConfig& cfg, Prep prep, Rng& rng) {
    switch (prep) {
        case Prep::Equilibrium:
            return EnvState{rng.uniform() < cfg.p_therm ? Level::E : Level::G};
        case Prep::Inverted: {
            EnvState s{rng.uniform() < cfg.p_therm ? Level::E : Level::G};
            s.level = ge_pulse(s.level, cfg, rng);
            return s;
        }
        case Prep::QutritMixed: {
            if (cfg.levels != 3)
                throw ConfigError("prepare: qutrit_mixed requires levels=3");
            return EnvState{static_cast<Level>(rng.below(3))};
        }
    }
    throw ConfigError("prepare: unknown preparation");
}

namespace detail {

inline double exit_rate(Level l, const EnvConfig& cfg) {
    switch (l) {
        case Level::G: return cfg.p_therm > 0 ? cfg.p_therm / cfg.t1_e : 0.0;
        case Level::E: return 1.0 / cfg.t1_e;
        case Level::F: return 1.0 / cfg.t1_f;
    }
    return 0.0;
}

inline Level jump_target(Level l) {
    switch (l) {
        case Level::G: return Level::E;
        case Level::E: return Level::G;
        case Level::F: return Level::E;
    }
    return Level::G;
}

// Continuous-time Markov jump trajectory over [t0, t0+duration). Appends
// (jump time, new level) segments to path if given; returns the final level.
inline Level evolve_path(Level l, double duration, const EnvConfig& cfg, Rng& rng,
                         double t0, std::vector<std::pair<double, Level>>* path) {
    double t = 0.0;
    while (true) {
        const double rate = exit_rate(l, cfg);
        if (rate <= 0.0) return l;
        const double wait = rng.exponential(rate);
        if (t + wait >= duration) return l;
        t += wait;
        l = jump_target(l);
        if (path) path->emplace_back(t0 + t, l);
    }
}

}  // namespace detail

inline EnvState evolve(EnvState s, double duration, const EnvConfig& cfg, Rng& rng) {
    if (duration < 0) throw ConfigError("evolve: negative duration");
    s.level = detail::evolve_path(s.level, duration, cfg, rng, 0.0, nullptr);
    return s;
}

// Readout with explicit per-sample noise; measure() derives sigma from the
// configured SNR. State jumps during the window slice the emitted mean trace.
inline std::pair<Trace, EnvState> measure_with_sigma(EnvState s, double sigma,
                                                     const EnvConfig& cfg, Rng& rng) {
    Trace tr;
    tr.latent_path.emplace_back(0.0, s.level);
    const double dur = cfg.readout_duration();
    s.level = detail::evolve_path(s.level, dur, cfg, rng, 0.0, &tr.latent_path);

    const std::size_t n = cfg.readout_len;
    tr.i_samples.resize(n);
    tr.q_samples.resize(n);
    std::size_t seg = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = (static_cast<double>(k) + 0.5) / cfg.sample_rate;
        while (seg + 1 < tr.latent_path.size() && tr.latent_path[seg + 1].first <= t) ++seg;
        const Level l = tr.latent_path[seg].second;
        double i = cfg.mean_traces.i_of(l)[k];
        double q = cfg.mean_traces.q_of(l)[k];
        if (sigma > 0) {
            i += sigma * rng.normal();
            q += sigma * rng.normal();
        }
        tr.i_samples[k] = i;
        tr.q_samples[k] = q;
    }
    return {std::move(tr), s};
}

inline std::pair<Trace, EnvState> measure(EnvState s, Strength strength,
                                          const EnvConfig& cfg, Rng& rng) {
    return measure_with_sigma(s, noise_sigma(cfg, strength), cfg, rng);
}

// Pulse actions as instantaneous stochastic maps. The gf-flip is the two-pulse
// decomposition (ef pi-pulse, then ge pi-pulse), so with perfect pulses it
// acts as the cycle f->g, g->e, e->f rather than a bare g/f swap.
inline EnvState apply_action(EnvState s, Action a, const EnvConfig& cfg, Rng& rng) {
    switch (a) {
        case Action::Idle:
        case Action::Terminate:
            return s;
        case Action::Flip:
            s.level = ge_pulse(s.level, cfg, rng);
            return s;
        case Action::GfFlip:
            if (cfg.levels != 3) throw ProtocolError("gf_flip is illegal in two-level mode");
            s.level = ef_pulse(s.level, cfg, rng);
            s.level = ge_pulse(s.level, cfg, rng);
            return s;
    }
    throw ProtocolError("unknown action");
}

// One initialization attempt: repeated (measure, act) cycles plus the
// verification readout used only for scoring.
struct Episode {
    Prep prep = Prep::Equilibrium;
    std::vector<Trace> observations;
    std::vector<Action> actions;
    int n_cycles = 0;
    bool forced_termination = false;
    Trace verification;
};

using DecisionFn = std::function<Action(const Trace&, int cycle)>;

inline Episode run_episode(const EnvConfig& cfg, Prep prep, const DecisionFn& policy,
                           int max_cycles, Rng& rng, Strength strength = Strength::Strong) {
    if (max_cycles < 1) throw ConfigError("run_episode: max_cycles must be >= 1");
    Episode ep;
    ep.prep = prep;
    EnvState s = prepare(cfg, prep, rng);
    const double post_action_gap = cfg.cycle_time - cfg.readout_duration() - cfg.feedback_latency;

    bool terminated = false;
    for (int cycle = 0; cycle < max_cycles; ++cycle) {
        auto [trace, next] = measure(s, strength, cfg, rng);
        s = next;
        const Action a = policy(trace, cycle);
        if (a == Action::GfFlip && cfg.levels != 3)
            throw ProtocolError("policy chose gf_flip in two-level mode");
        ep.observations.push_back(std::move(trace));
        ep.actions.push_back(a);
        ep.n_cycles = cycle + 1;
        if (a == Action::Terminate) {
            terminated = true;
            break;
        }
        s = evolve(s, cfg.feedback_latency, cfg, rng);
        s = apply_action(s, a, cfg, rng);
        s = evolve(s, post_action_gap, cfg, rng);
    }
    ep.forced_termination = !terminated;

    s = evolve(s, cfg.verify_delay, cfg, rng);
    auto [ver, fin] = measure(s, strength, cfg, rng);
    (void)fin;
    ep.verification = std::move(ver);
    return ep;
}

}  // namespace resetrl::env
