#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "snls/errors.hpp"
#include "snls/grid.hpp"
#include "snls/noise.hpp"
#include "snls/observables.hpp"

namespace snls {

enum class SolverKind { SpdeSplitStep, RpdeSplitStep };

struct SimConfig {
    int lambda = 1;  // -1 defocusing, 0 linear, 1 focusing
    double alpha = 3.0;
    double horizon_T = 1.0;
    double dt = 1e-3;
    SolverKind solver = SolverKind::SpdeSplitStep;
    double blow_up_grad_factor = 1e4;
    double blow_up_amp_factor = 1e3;
    int diagnostics_stride = 1;
};

inline void validate_sim_config(const SimConfig& cfg) {
    if (cfg.lambda < -1 || cfg.lambda > 1) throw ConfigError("lambda must be -1, 0 or 1");
    if (!(cfg.alpha >= 1.0)) throw ConfigError("alpha must be at least 1");
    if (!(cfg.horizon_T > 0.0)) throw ConfigError("horizon must be positive");
    if (!(cfg.dt > 0.0)) throw ConfigError("dt must be positive");
    if (cfg.dt > cfg.horizon_T) throw ConfigError("dt exceeds horizon");
    if (cfg.diagnostics_stride < 1) throw ConfigError("stride must be at least 1");
    if (!(cfg.blow_up_grad_factor > 0.0) || !(cfg.blow_up_amp_factor > 0.0))
        throw ConfigError("blow-up factors must be positive");
}

// Focusing window: lambda = 1 with 1 + 4/d <= alpha < 1 + 4/(d-2)+; for
// d <= 2 the upper bound is infinite and memory caps alpha at 9.
inline bool focusing_range_ok(int lambda, double alpha, int d) {
    if (lambda != 1) return false;
    if (!(alpha >= 1.0 + 4.0 / double(d))) return false;
    if (d <= 2) return alpha <= 9.0;
    return alpha < 1.0 + 4.0 / double(d - 2);
}

enum class BlowUpReason { GradThreshold, AmpThreshold, NonFinite };

struct TrajectoryRecord {
    std::vector<double> times;
    std::vector<Diagnostics> diagnostics;
    std::optional<double> blow_up_time;
    std::optional<BlowUpReason> blow_up_reason;
    std::optional<ComplexField> terminal_field;
    std::uint64_t path_seed = 0;
};

// ---------------------------------------------------------------------------
// Exact sub-flows.
// ---------------------------------------------------------------------------

// Spectral flow of i dX/dt = lap X over time dt (negative dt reverses it).
inline void dispersion_step(ComplexField& state, double dt) {
    const GridSpec& g = state.grid;
    const std::vector<double> k = wavenumbers(g);
    const int n = g.points_per_dim;
    fft_nd(state.values, g.dim, n, false);
    if (g.dim == 1) {
        for (int j = 0; j < n; ++j) {
            const double k2 = k[std::size_t(j)] * k[std::size_t(j)];
            state.values[std::size_t(j)] *= std::polar(1.0, k2 * dt);
        }
    } else {
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const double k2 = k[std::size_t(r)] * k[std::size_t(r)] +
                                  k[std::size_t(c)] * k[std::size_t(c)];
                state.values[std::size_t(r) * std::size_t(n) + std::size_t(c)] *=
                    std::polar(1.0, k2 * dt);
            }
    }
    fft_nd(state.values, g.dim, n, true);
}

// Exact phase rotation of i dX/dt = lambda |X|^{alpha-1} X; |X| is invariant.
inline void nonlinear_step(ComplexField& state, double dt, int lambda, double alpha) {
    if (lambda == 0) return;
    const double half = 0.5 * (alpha - 1.0);
    for (cplx& v : state.values) {
        const double amp = detail::pow_alpha(std::norm(v), half);
        v *= std::polar(1.0, -double(lambda) * amp * dt);
    }
}

// Exact pointwise geometric update X <- X exp(dW - mu_hat dt) over [t, t+dt].
inline void noise_step(ComplexField& state, const NoiseSpec& spec,
                       const BrownianPaths& paths, double t, double dt) {
    if (spec.n_modes() == 0) return;
    const GridSpec& g = state.grid;
    const DampingFields damp = damping_fields(spec, g);
    std::vector<cplx> expo(g.size(), cplx(0.0, 0.0));
    for (int j = 0; j < spec.n_modes(); ++j) {
        const double db = beta_at(paths, j, t + dt) - beta_at(paths, j, t);
        const RealField e = mode_e_field(spec.modes[std::size_t(j)], g);
        const cplx mu = spec.modes[std::size_t(j)].mu;
        for (std::size_t i = 0; i < g.size(); ++i) expo[i] += mu * e.values[i] * db;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        expo[i] -= damp.mu_hat.values[i] * dt;
        state.values[i] *= std::exp(expo[i]);
    }
}

inline ComplexField step_spde(ComplexField state, const NoiseSpec& spec,
                              const BrownianPaths& paths, double t, double dt,
                              const SimConfig& cfg) {
    dispersion_step(state, 0.5 * dt);
    nonlinear_step(state, dt, cfg.lambda, cfg.alpha);
    noise_step(state, spec, paths, t, dt);
    dispersion_step(state, 0.5 * dt);
    return state;
}

// ---------------------------------------------------------------------------
// Transformed-equation step: half dispersion, then a classical 4-stage step of
// the non-dispersive part with coefficients frozen at the interval midpoint,
// then half dispersion. Products are dealiased by the 2/3 rule.
// ---------------------------------------------------------------------------

namespace detail {

inline void dealias(std::vector<cplx>& values, const GridSpec& g) {
    const int n = g.points_per_dim;
    fft_nd(values, g.dim, n, false);
    const int cut = n / 3;
    auto kill = [&](int j) {
        const int m = (j < n / 2) ? j : j - n;
        return std::abs(m) > cut;
    };
    if (g.dim == 1) {
        for (int j = 0; j < n; ++j)
            if (kill(j)) values[std::size_t(j)] = cplx(0.0, 0.0);
    } else {
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                if (kill(r) || kill(c))
                    values[std::size_t(r) * std::size_t(n) + std::size_t(c)] =
                        cplx(0.0, 0.0);
    }
    fft_nd(values, g.dim, n, true);
}

struct RpdeFrozen {
    Coefficients coef;
    RealField h_weight;  // exp((alpha-1) Re W) at the frozen time
};

inline RpdeFrozen freeze_rpde(const NoiseSpec& spec, const BrownianPaths& paths,
                              double t_mid, double alpha, const GridSpec& g) {
    RpdeFrozen fr{coefficient_fields(spec, paths, t_mid, g), make_real_field(g)};
    const RealField re_w = eval_re_W(spec, paths, t_mid, g);
    for (std::size_t i = 0; i < g.size(); ++i)
        fr.h_weight.values[i] = std::exp((alpha - 1.0) * re_w.values[i]);
    return fr;
}

// F(y) = -i (b . grad y + c y + lambda h_w |y|^{alpha-1} y), dealiased.
inline std::vector<cplx> rpde_rhs(const std::vector<cplx>& y, const RpdeFrozen& fr,
                                  int lambda, double alpha, const GridSpec& g) {
    const int n = g.points_per_dim;
    const std::vector<double> kd = deriv_wavenumbers(g);
    std::vector<std::vector<cplx>> grad(std::size_t(g.dim), y);
    for (int a = 0; a < g.dim; ++a) {
        auto& w = grad[std::size_t(a)];
        fft_nd(w, g.dim, n, false);
        if (g.dim == 1) {
            for (int j = 0; j < n; ++j)
                w[std::size_t(j)] *= cplx(0.0, kd[std::size_t(j)]);
        } else {
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < n; ++c)
                    w[std::size_t(r) * std::size_t(n) + std::size_t(c)] *=
                        cplx(0.0, kd[std::size_t(a == 0 ? r : c)]);
        }
        fft_nd(w, g.dim, n, true);
    }
    std::vector<cplx> out(y.size());
    const double half = 0.5 * (alpha - 1.0);
    const cplx mi(0.0, -1.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        cplx v = fr.coef.c.values[i] * y[i];
        for (int a = 0; a < g.dim; ++a)
            v += fr.coef.b[std::size_t(a)].values[i] * grad[std::size_t(a)][i];
        if (lambda != 0)
            v += double(lambda) * fr.h_weight.values[i] *
                 pow_alpha(std::norm(y[i]), half) * y[i];
        out[i] = mi * v;
    }
    dealias(out, g);
    return out;
}

}  // namespace detail

inline ComplexField step_rpde(ComplexField y, const NoiseSpec& spec,
                              const BrownianPaths& paths, double t, double dt,
                              const SimConfig& cfg) {
    const GridSpec& g = y.grid;
    dispersion_step(y, 0.5 * dt);

    const detail::RpdeFrozen fr =
        detail::freeze_rpde(spec, paths, t + 0.5 * dt, cfg.alpha, g);
    const std::vector<cplx>& y0 = y.values;
    const std::vector<cplx> k1 = detail::rpde_rhs(y0, fr, cfg.lambda, cfg.alpha, g);
    std::vector<cplx> tmp(y0.size());
    for (std::size_t i = 0; i < y0.size(); ++i) tmp[i] = y0[i] + 0.5 * dt * k1[i];
    const std::vector<cplx> k2 = detail::rpde_rhs(tmp, fr, cfg.lambda, cfg.alpha, g);
    for (std::size_t i = 0; i < y0.size(); ++i) tmp[i] = y0[i] + 0.5 * dt * k2[i];
    const std::vector<cplx> k3 = detail::rpde_rhs(tmp, fr, cfg.lambda, cfg.alpha, g);
    for (std::size_t i = 0; i < y0.size(); ++i) tmp[i] = y0[i] + dt * k3[i];
    const std::vector<cplx> k4 = detail::rpde_rhs(tmp, fr, cfg.lambda, cfg.alpha, g);
    for (std::size_t i = 0; i < y.values.size(); ++i)
        y.values[i] = y0[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);

    dispersion_step(y, 0.5 * dt);
    return y;
}

// ---------------------------------------------------------------------------
// Transforms between the original field X, the rescaled field y = exp(-W) X,
// and z = exp(mu_hat t) y.
// ---------------------------------------------------------------------------

enum class TransformDirection { ToY, ToX, ToZ };

inline ComplexField transforms(const ComplexField& field, const NoiseSpec& spec,
                               const BrownianPaths& paths, double t,
                               TransformDirection dir) {
    ComplexField out = field;
    const GridSpec& g = field.grid;
    if (dir == TransformDirection::ToY || dir == TransformDirection::ToX) {
        const ComplexField w = eval_W(spec, paths, t, g);
        const double sign = (dir == TransformDirection::ToX) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] *= std::exp(sign * w.values[i]);
    } else {
        const DampingFields damp = damping_fields(spec, g);
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] *= std::exp(damp.mu_hat.values[i] * t);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full trajectory driver.
// ---------------------------------------------------------------------------

namespace detail {

struct NoSink {
    void operator()(std::size_t, double, const ComplexField&) const {}
};

}  // namespace detail

// Integrates on the supplied path grid (one solver step per interval). The
// sink sees every healthy physical-space state, including the initial one;
// blow-up states are never passed on.
template <typename Sink>
TrajectoryRecord run_path_on(const ComplexField& x0, const SimConfig& cfg,
                             const NoiseSpec& spec, const BrownianPaths& paths,
                             Sink&& sink) {
    validate_sim_config(cfg);
    require_finite(x0);
    if (paths.times.size() < 2) throw ConfigError("path grid too short");
    if (std::abs(paths.times.back() - cfg.horizon_T) >
        1e-9 * std::max(1.0, cfg.horizon_T))
        throw ConfigError("path horizon does not match sim horizon");
    if (spec.n_modes() > paths.n_modes) throw ConfigError("path has too few modes");

    const GridSpec& g = x0.grid;
    const double grad0 = grad_norm_sq(x0);
    const double amp0 = sup_abs(x0);
    const double grad_cap = cfg.blow_up_grad_factor * std::max(grad0, 1.0);
    const double amp_cap = cfg.blow_up_amp_factor * std::max(amp0, 1.0);

    const bool rpde = (cfg.solver == SolverKind::RpdeSplitStep);
    ComplexField state = x0;  // X for the direct solver, y for the rescaled one

    TrajectoryRecord rec;
    rec.path_seed = paths.seed;

    auto physical = [&](double t) -> ComplexField {
        if (!rpde) return state;
        return transforms(state, spec, paths, t, TransformDirection::ToX);
    };

    ComplexField x_now = physical(0.0);
    sink(0, 0.0, x_now);
    rec.times.push_back(0.0);
    rec.diagnostics.push_back(diagnostics(x_now, cfg.alpha));

    const std::size_t steps = paths.times.size() - 1;
    ComplexField x_prev = x_now;
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = paths.times[i];
        const double dt = paths.times[i + 1] - t;
        state = rpde ? step_rpde(std::move(state), spec, paths, t, dt, cfg)
                     : step_spde(std::move(state), spec, paths, t, dt, cfg);
        const double t1 = paths.times[i + 1];

        bool finite = all_finite(state);
        ComplexField x1 = make_complex_field(g);
        if (finite) {
            x1 = physical(t1);
            finite = all_finite(x1);
        }
        if (!finite) {
            rec.blow_up_time = t1;
            rec.blow_up_reason = BlowUpReason::NonFinite;
            rec.terminal_field = std::move(x_prev);
            return rec;
        }
        const double grad_now = grad_norm_sq(x1);
        const double amp_now = sup_abs(x1);
        if (grad_now > grad_cap || amp_now > amp_cap) {
            rec.blow_up_time = t1;
            rec.blow_up_reason = (grad_now > grad_cap) ? BlowUpReason::GradThreshold
                                                       : BlowUpReason::AmpThreshold;
            rec.terminal_field = std::move(x1);
            return rec;
        }
        sink(i + 1, t1, x1);
        if ((i + 1) % std::size_t(cfg.diagnostics_stride) == 0 || i + 1 == steps) {
            rec.times.push_back(t1);
            rec.diagnostics.push_back(diagnostics(x1, cfg.alpha));
        }
        x_prev = std::move(x1);
    }
    rec.terminal_field = std::move(x_prev);
    return rec;
}

inline std::vector<double> uniform_time_grid(double horizon, double dt) {
    const long long m = std::max(1ll, std::llround(horizon / dt));
    std::vector<double> times(std::size_t(m) + 1);
    for (long long i = 0; i <= m; ++i)
        times[std::size_t(i)] = horizon * double(i) / double(m);
    return times;
}

inline TrajectoryRecord run_path(const ComplexField& x0, const SimConfig& cfg,
                                 const NoiseSpec& spec, std::uint64_t seed) {
    validate_sim_config(cfg);
    const BrownianPaths paths =
        sample_brownian(spec.n_modes(), uniform_time_grid(cfg.horizon_T, cfg.dt), seed);
    return run_path_on(x0, cfg, spec, paths, detail::NoSink{});
}

// Residuals directly from a trajectory record (snapshots must have been
// captured at every path node by the caller's sink).
inline ResidualSeries ito_residuals(const TrajectoryRecord& traj,
                                    const std::vector<ComplexField>& fields,
                                    const NoiseSpec& spec, const BrownianPaths& paths,
                                    double alpha, int lambda) {
    return ito_residuals(traj.times, fields, spec, paths, alpha, lambda);
}

}  // namespace snls
