#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include "snls/errors.hpp"
#include "snls/grid.hpp"
#include "snls/rng.hpp"

namespace snls {

// ---------------------------------------------------------------------------
// Spatial noise profiles. A mode's spatial factor is e(xi) = f(xi) + offset,
// with f either identically `amplitude` or a Gaussian bump. Gradients are
// analytic so downstream consumers never pay a differentiation error here.
// ---------------------------------------------------------------------------

enum class ProfileKind { Constant, GaussianBump };

struct ProfileSpec {
    ProfileKind kind = ProfileKind::Constant;
    double amplitude = 0.0;
    double width = 1.0;
    std::array<double, 2> center{0.0, 0.0};
};

inline void validate_profile(const ProfileSpec& p, const GridSpec& g) {
    if (p.kind != ProfileKind::GaussianBump) return;
    if (!(p.width > 0.0)) throw ConfigError("profile width must be positive");
    if (p.width > g.half_width / 4.0)
        throw ConfigError("profile width exceeds half_width/4");
    double c2 = p.center[0] * p.center[0];
    if (g.dim == 2) c2 += p.center[1] * p.center[1];
    if (std::sqrt(c2) > g.half_width / 2.0)
        throw ConfigError("profile center outside half_width/2");
}

inline RealField evaluate_profile(const ProfileSpec& p, const GridSpec& g) {
    validate_profile(p, g);
    RealField f = make_real_field(g);
    if (p.kind == ProfileKind::Constant) {
        for (auto& v : f.values) v = p.amplitude;
        return f;
    }
    const auto xs = coordinates(g);
    const double inv2w2 = 1.0 / (2.0 * p.width * p.width);
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        double r2 = (xs[0].values[i] - p.center[0]) * (xs[0].values[i] - p.center[0]);
        if (g.dim == 2)
            r2 += (xs[1].values[i] - p.center[1]) * (xs[1].values[i] - p.center[1]);
        f.values[i] = p.amplitude * std::exp(-r2 * inv2w2);
    }
    return f;
}

inline std::vector<RealField> profile_gradient(const ProfileSpec& p, const GridSpec& g) {
    validate_profile(p, g);
    std::vector<RealField> grad(std::size_t(g.dim), make_real_field(g));
    if (p.kind == ProfileKind::Constant) return grad;
    const RealField f = evaluate_profile(p, g);
    const auto xs = coordinates(g);
    const double invw2 = 1.0 / (p.width * p.width);
    for (int m = 0; m < g.dim; ++m)
        for (std::size_t i = 0; i < f.values.size(); ++i)
            grad[std::size_t(m)].values[i] =
                -(xs[std::size_t(m)].values[i] - p.center[std::size_t(m)]) * invw2 * f.values[i];
    return grad;
}

// ---------------------------------------------------------------------------
// Noise specification: finitely many modes mu_j * e_j(xi) * beta_j(t).
// ---------------------------------------------------------------------------

struct NoiseMode {
    cplx mu{0.0, 0.0};
    ProfileSpec profile{};
    double offset = 0.0;

    bool conservative() const { return mu.real() == 0.0; }
};

struct NoiseSpec {
    std::vector<NoiseMode> modes;
    // The Ito correction factor on the damping fields; true is the consistent
    // convention (see damping_fields), false is exposed for negative controls.
    bool ito_half_correction = true;

    int n_modes() const { return int(modes.size()); }
    bool conservative() const {
        for (const auto& m : modes)
            if (!m.conservative()) return false;
        return true;
    }
    double ito_factor() const { return ito_half_correction ? 0.5 : 1.0; }
};

inline RealField mode_e_field(const NoiseMode& m, const GridSpec& g) {
    RealField e = evaluate_profile(m.profile, g);
    for (auto& v : e.values) v += m.offset;
    return e;
}

// ---------------------------------------------------------------------------
// Brownian driving paths on a fixed time grid, with exact bridge refinement.
// Mode j at refinement level l draws from the counter stream (seed, j, l),
// so refined paths extend coarse ones without disturbing existing values.
// ---------------------------------------------------------------------------

struct BrownianPaths {
    int n_modes = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> values;  // [mode][node]
    std::uint64_t seed = 0;
    int level = 0;
};

inline BrownianPaths sample_brownian(int n_modes, std::vector<double> times,
                                     std::uint64_t seed) {
    if (n_modes < 0) throw ConfigError("negative mode count");
    if (times.empty() || times.front() != 0.0)
        throw ConfigError("path grid must start at 0");
    for (std::size_t i = 0; i + 1 < times.size(); ++i)
        if (!(times[i + 1] > times[i]))
            throw ConfigError("path grid must be strictly increasing");

    BrownianPaths p;
    p.n_modes = n_modes;
    p.times = std::move(times);
    p.seed = seed;
    p.level = 0;
    p.values.assign(std::size_t(n_modes), std::vector<double>(p.times.size(), 0.0));
    for (int j = 0; j < n_modes; ++j) {
        const std::uint64_t key = stream_key(seed, std::uint64_t(j), 0);
        auto& v = p.values[std::size_t(j)];
        for (std::size_t i = 0; i + 1 < p.times.size(); ++i) {
            const double dt = p.times[i + 1] - p.times[i];
            v[i + 1] = v[i] + std::sqrt(dt) * gaussian(key, std::uint64_t(i));
        }
    }
    return p;
}

inline BrownianPaths refine_paths(const BrownianPaths& p) {
    BrownianPaths r;
    r.n_modes = p.n_modes;
    r.seed = p.seed;
    r.level = p.level + 1;
    const std::size_t m = p.times.size();
    r.times.resize(2 * m - 1);
    for (std::size_t i = 0; i + 1 < m; ++i) {
        r.times[2 * i] = p.times[i];
        r.times[2 * i + 1] = 0.5 * (p.times[i] + p.times[i + 1]);
    }
    r.times[2 * m - 2] = p.times[m - 1];
    r.values.assign(std::size_t(p.n_modes), std::vector<double>(r.times.size(), 0.0));
    for (int j = 0; j < p.n_modes; ++j) {
        const std::uint64_t key =
            stream_key(p.seed, std::uint64_t(j), std::uint64_t(r.level));
        const auto& v = p.values[std::size_t(j)];
        auto& w = r.values[std::size_t(j)];
        for (std::size_t i = 0; i + 1 < m; ++i) {
            const double dt = p.times[i + 1] - p.times[i];
            w[2 * i] = v[i];
            // Bridge midpoint: mean of endpoints plus N(0, dt/4).
            w[2 * i + 1] = 0.5 * (v[i] + v[i + 1]) +
                           std::sqrt(0.25 * dt) * gaussian(key, std::uint64_t(i));
        }
        w[2 * m - 2] = v[m - 1];
    }
    return r;
}

// Linear interpolation between nodes; endpoints tolerate 1e-9 relative slack.
inline double beta_at(const BrownianPaths& p, int mode, double t) {
    const auto& ts = p.times;
    const double last = ts.back();
    const double tol = 1e-9 * std::max(1.0, std::abs(last));
    if (t < ts.front() - tol || t > last + tol)
        throw ConfigError("time outside path grid");
    const double tc = std::clamp(t, ts.front(), last);
    const auto it = std::upper_bound(ts.begin(), ts.end(), tc);
    if (it == ts.end()) return p.values[std::size_t(mode)].back();
    const std::size_t hi = std::size_t(it - ts.begin());
    if (hi == 0) return p.values[std::size_t(mode)].front();
    const double t0 = ts[hi - 1], t1 = ts[hi];
    const double w = (tc - t0) / (t1 - t0);
    const auto& v = p.values[std::size_t(mode)];
    return v[hi - 1] + w * (v[hi] - v[hi - 1]);
}

// ---------------------------------------------------------------------------
// Field evaluations.
// ---------------------------------------------------------------------------

inline ComplexField eval_W(const NoiseSpec& spec, const BrownianPaths& paths,
                           double t, const GridSpec& g) {
    ComplexField w = make_complex_field(g);
    for (int j = 0; j < spec.n_modes(); ++j) {
        const double b = beta_at(paths, j, t);
        const RealField e = mode_e_field(spec.modes[std::size_t(j)], g);
        const cplx mu = spec.modes[std::size_t(j)].mu;
        for (std::size_t i = 0; i < w.values.size(); ++i)
            w.values[i] += mu * e.values[i] * b;
    }
    return w;
}

inline RealField eval_re_W(const NoiseSpec& spec, const BrownianPaths& paths,
                           double t, const GridSpec& g) {
    RealField w = make_real_field(g);
    for (int j = 0; j < spec.n_modes(); ++j) {
        const double b = beta_at(paths, j, t);
        const RealField e = mode_e_field(spec.modes[std::size_t(j)], g);
        const double re_mu = spec.modes[std::size_t(j)].mu.real();
        for (std::size_t i = 0; i < w.values.size(); ++i)
            w.values[i] += re_mu * e.values[i] * b;
    }
    return w;
}

// Damping fields entering the drift. With the factor 1/2 (the consistent Ito
// convention) Re(mu_hat) = sum_j (Re mu_j)^2 e_j^2 exactly and the mass of the
// original equation is a martingale; factor 1 is kept only as an override.
struct DampingFields {
    RealField mu;
    ComplexField mu_hat;
    std::vector<ComplexField> phi;  // phi_j = mu_j e_j
};

inline DampingFields damping_fields(const NoiseSpec& spec, const GridSpec& g) {
    DampingFields out{make_real_field(g), make_complex_field(g), {}};
    const double kappa = spec.ito_factor();
    for (int j = 0; j < spec.n_modes(); ++j) {
        const NoiseMode& m = spec.modes[std::size_t(j)];
        const RealField e = mode_e_field(m, g);
        ComplexField phi = make_complex_field(g);
        const double abs2 = std::norm(m.mu);
        const cplx mu2 = m.mu * m.mu;
        for (std::size_t i = 0; i < e.values.size(); ++i) {
            const double e2 = e.values[i] * e.values[i];
            out.mu.values[i] += kappa * abs2 * e2;
            out.mu_hat.values[i] += kappa * (abs2 + mu2) * e2;
            phi.values[i] = m.mu * e.values[i];
        }
        out.phi.push_back(std::move(phi));
    }
    return out;
}

// Analytic gradient of the real damping field mu = kappa sum |mu_j|^2 e_j^2.
inline std::vector<RealField> damping_gradient(const NoiseSpec& spec, const GridSpec& g) {
    std::vector<RealField> grad(std::size_t(g.dim), make_real_field(g));
    const double kappa = spec.ito_factor();
    for (int j = 0; j < spec.n_modes(); ++j) {
        const NoiseMode& m = spec.modes[std::size_t(j)];
        const RealField e = mode_e_field(m, g);
        const std::vector<RealField> df = profile_gradient(m.profile, g);
        const double abs2 = std::norm(m.mu);
        for (int a = 0; a < g.dim; ++a)
            for (std::size_t i = 0; i < e.values.size(); ++i)
                grad[std::size_t(a)].values[i] +=
                    kappa * abs2 * 2.0 * e.values[i] * df[std::size_t(a)].values[i];
    }
    return grad;
}

// Pathwise rescaling weight h(t,xi) = exp(-(alpha-1)(Re mu_hat * t - Re W(t))).
// Exponent overflow is not an error: the value saturates at +inf and the flag
// reports that the parameter regime left double range.
struct EvalH {
    RealField h;
    bool overflowed = false;
};

inline EvalH eval_h(const NoiseSpec& spec, const BrownianPaths& paths, double t,
                    double alpha, const GridSpec& g) {
    if (!(alpha > 1.0)) throw ConfigError("alpha must exceed 1");
    const DampingFields damp = damping_fields(spec, g);
    const RealField re_w = eval_re_W(spec, paths, t, g);
    EvalH out{make_real_field(g), false};
    for (std::size_t i = 0; i < out.h.values.size(); ++i) {
        const double arg =
            -(alpha - 1.0) * (damp.mu_hat.values[i].real() * t - re_w.values[i]);
        if (arg > 709.0) out.overflowed = true;
        out.h.values[i] = std::exp(arg);
    }
    return out;
}

// Coefficients of the transformed linear operator: b = 2 grad W and
// c = sum_m (d_m W)^2 + lap W - i mu_hat, complex squares throughout.
// Gradients are spectral on the profile part; offsets differentiate to zero.
struct Coefficients {
    std::vector<ComplexField> b;
    ComplexField c;
};

inline Coefficients coefficient_fields(const NoiseSpec& spec, const BrownianPaths& paths,
                                       double t, const GridSpec& g) {
    Coefficients out;
    out.b.assign(std::size_t(g.dim), make_complex_field(g));
    out.c = make_complex_field(g);

    // Profile part of W only; the offset part is spatially flat.
    ComplexField w_prof = make_complex_field(g);
    for (int j = 0; j < spec.n_modes(); ++j) {
        const NoiseMode& m = spec.modes[std::size_t(j)];
        if (m.profile.kind == ProfileKind::Constant && m.profile.amplitude == 0.0)
            continue;
        const RealField f = evaluate_profile(m.profile, g);
        const double beta = beta_at(paths, j, t);
        for (std::size_t i = 0; i < f.values.size(); ++i)
            w_prof.values[i] += m.mu * f.values[i] * beta;
    }

    const DampingFields damp = damping_fields(spec, g);
    const bool flat = [&] {
        for (const cplx& v : w_prof.values)
            if (v != cplx(0.0, 0.0)) return false;
        return true;
    }();
    if (!flat) {
        const SpectralDerivs d = spectral_derivatives(w_prof);
        for (int a = 0; a < g.dim; ++a)
            for (std::size_t i = 0; i < w_prof.values.size(); ++i)
                out.b[std::size_t(a)].values[i] = 2.0 * d.gradient[std::size_t(a)].values[i];
        for (std::size_t i = 0; i < w_prof.values.size(); ++i) {
            cplx grad2(0.0, 0.0);
            for (int a = 0; a < g.dim; ++a) {
                const cplx gi = d.gradient[std::size_t(a)].values[i];
                grad2 += gi * gi;
            }
            out.c.values[i] = grad2 + d.laplacian.values[i];
        }
    }
    for (std::size_t i = 0; i < out.c.values.size(); ++i)
        out.c.values[i] -= cplx(0.0, 1.0) * damp.mu_hat.values[i];
    return out;
}

// ---------------------------------------------------------------------------
// Smoothness-and-decay report: per mode, the maximum over the outer 10% shell
// of the box of zeta(xi) * sum over derivative orders 1..3 of |d^gamma f|,
// with zeta = 1+|xi|^2 in d=1 and (1+|xi|^2) ln(1+|xi|^2)^2 in d=2. Profiles
// pass when the metric is below tol; a sweep offset c1 must also dominate
// sup|f_1|.
// ---------------------------------------------------------------------------

namespace detail {

inline RealField spectral_multi_derivative(const std::vector<cplx>& hat,
                                           const GridSpec& g, int gx, int gy) {
    const std::vector<double> kd = deriv_wavenumbers(g);
    const int n = g.points_per_dim;
    std::vector<cplx> work(hat.size());
    const cplx iu(0.0, 1.0);
    if (g.dim == 1) {
        for (int j = 0; j < n; ++j) {
            cplx m(1.0, 0.0);
            for (int q = 0; q < gx; ++q) m *= iu * kd[std::size_t(j)];
            work[std::size_t(j)] = m * hat[std::size_t(j)];
        }
    } else {
        for (int r = 0; r < n; ++r)
            for (int col = 0; col < n; ++col) {
                cplx m(1.0, 0.0);
                for (int q = 0; q < gx; ++q) m *= iu * kd[std::size_t(r)];
                for (int q = 0; q < gy; ++q) m *= iu * kd[std::size_t(col)];
                work[std::size_t(r) * std::size_t(n) + std::size_t(col)] =
                    m * hat[std::size_t(r) * std::size_t(n) + std::size_t(col)];
            }
    }
    fft_nd(work, g.dim, n, true);
    RealField out = make_real_field(g);
    for (std::size_t i = 0; i < work.size(); ++i) out.values[i] = work[i].real();
    return out;
}

}  // namespace detail

inline double shell_smoothness_metric(const RealField& f) {
    const GridSpec& g = f.grid;
    std::vector<cplx> hat(f.values.size());
    for (std::size_t i = 0; i < f.values.size(); ++i) hat[i] = cplx(f.values[i], 0.0);
    fft_nd(hat, g.dim, g.points_per_dim, false);

    std::vector<std::array<int, 2>> orders;
    if (g.dim == 1) {
        orders = {{1, 0}, {2, 0}, {3, 0}};
    } else {
        orders = {{1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}, {3, 0}, {2, 1}, {1, 2}, {0, 3}};
    }
    RealField total = make_real_field(g);
    for (const auto& o : orders) {
        const RealField d = detail::spectral_multi_derivative(hat, g, o[0], o[1]);
        for (std::size_t i = 0; i < total.values.size(); ++i)
            total.values[i] += std::abs(d.values[i]);
    }

    const auto xs = coordinates(g);
    const double shell = 0.9 * g.half_width;
    double metric = 0.0;
    for (std::size_t i = 0; i < total.values.size(); ++i) {
        double maxc = std::abs(xs[0].values[i]);
        double r2 = xs[0].values[i] * xs[0].values[i];
        if (g.dim == 2) {
            maxc = std::max(maxc, std::abs(xs[1].values[i]));
            r2 += xs[1].values[i] * xs[1].values[i];
        }
        if (maxc < shell) continue;
        double zeta = 1.0 + r2;
        if (g.dim == 2) {
            const double lg = std::log(1.0 + r2);
            zeta *= lg * lg;
        }
        metric = std::max(metric, zeta * total.values[i]);
    }
    return metric;
}

struct ModeHReport {
    double shell_metric = 0.0;
    double sup_abs_f = 0.0;
    bool pass = false;
};

struct AssumptionHReport {
    std::vector<ModeHReport> modes;
    double tol = 0.0;
    bool pass = false;
    std::optional<bool> c1_exceeds_sup_f1;
};

inline AssumptionHReport check_assumption_H(const NoiseSpec& spec, const GridSpec& g,
                                            double tol = 1e-6,
                                            std::optional<double> c1 = std::nullopt) {
    AssumptionHReport rep;
    rep.tol = tol;
    rep.pass = true;
    for (const NoiseMode& m : spec.modes) {
        const RealField f = evaluate_profile(m.profile, g);
        ModeHReport mr;
        mr.shell_metric = shell_smoothness_metric(f);
        double s = 0.0;
        for (double v : f.values) s = std::max(s, std::abs(v));
        mr.sup_abs_f = s;
        mr.pass = mr.shell_metric <= tol;
        rep.pass = rep.pass && mr.pass;
        rep.modes.push_back(mr);
    }
    if (c1.has_value()) {
        const double sup_f1 = rep.modes.empty() ? 0.0 : rep.modes.front().sup_abs_f;
        rep.c1_exceeds_sup_f1 = (*c1 > sup_f1);
        rep.pass = rep.pass && *rep.c1_exceeds_sup_f1;
    }
    return rep;
}

}  // namespace snls
