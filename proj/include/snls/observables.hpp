#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "snls/errors.hpp"
#include "snls/grid.hpp"
#include "snls/noise.hpp"

namespace snls {

// ---------------------------------------------------------------------------
// Scalar functionals of a field.
// ---------------------------------------------------------------------------

struct Diagnostics {
    double mass = 0.0;
    double hamiltonian = 0.0;
    double variance = 0.0;
    double momentum = 0.0;
    double p_functional = 0.0;
    double grad_norm_sq = 0.0;
    double lp_norm = 0.0;  // |u|_{alpha+1}^{alpha+1}
    double sup_amp = 0.0;
};

namespace detail {

inline double pow_alpha(double base_sq, double exponent_over_two) {
    // base_sq = |u|^2, exponent 2*exponent_over_two; integer fast paths cover
    // the common odd alphas.
    if (exponent_over_two == 1.0) return base_sq;
    if (exponent_over_two == 2.0) return base_sq * base_sq;
    if (exponent_over_two == 3.0) return base_sq * base_sq * base_sq;
    return std::pow(base_sq, exponent_over_two);
}

}  // namespace detail

inline Diagnostics diagnostics(const ComplexField& u, double alpha) {
    require_finite(u);
    const GridSpec& g = u.grid;
    Diagnostics d;

    const std::vector<cplx> hat = forward_spectrum(u);
    d.grad_norm_sq = grad_norm_sq_of_spectrum(g, hat);

    SpectralDerivs sd;
    sd.gradient.reserve(std::size_t(g.dim));
    {
        // Physical gradient for the momentum integrand.
        const std::vector<double> kd = deriv_wavenumbers(g);
        const int n = g.points_per_dim;
        for (int a = 0; a < g.dim; ++a) {
            std::vector<cplx> work(hat.size());
            for (std::size_t i = 0; i < hat.size(); ++i) {
                const int idx = (g.dim == 1) ? int(i)
                                             : (a == 0 ? int(i) / n : int(i) % n);
                work[i] = cplx(0.0, kd[std::size_t(idx)]) * hat[i];
            }
            fft_nd(work, g.dim, n, true);
            ComplexField gf = make_complex_field(g);
            gf.values = std::move(work);
            sd.gradient.push_back(std::move(gf));
        }
    }

    const auto xs = coordinates(g);
    RealField mass_d = make_real_field(g);
    RealField var_d = make_real_field(g);
    RealField mom_d = make_real_field(g);
    RealField lp_d = make_real_field(g);
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        const double a2 = std::norm(u.values[i]);
        double r2 = xs[0].values[i] * xs[0].values[i];
        if (g.dim == 2) r2 += xs[1].values[i] * xs[1].values[i];
        mass_d.values[i] = a2;
        var_d.values[i] = r2 * a2;
        double m = xs[0].values[i] * (u.values[i] * std::conj(sd.gradient[0].values[i])).imag();
        if (g.dim == 2)
            m += xs[1].values[i] * (u.values[i] * std::conj(sd.gradient[1].values[i])).imag();
        mom_d.values[i] = m;
        lp_d.values[i] = detail::pow_alpha(a2, 0.5 * (alpha + 1.0));
        d.sup_amp = std::max(d.sup_amp, std::sqrt(a2));
    }
    d.mass = integrate(mass_d);
    d.variance = integrate(var_d);
    d.momentum = integrate(mom_d);
    d.lp_norm = integrate(lp_d);
    d.hamiltonian = 0.5 * d.grad_norm_sq - d.lp_norm / (alpha + 1.0);
    d.p_functional = d.hamiltonian + (1.0 / (alpha + 1.0)) *
                                         (1.0 - double(g.dim) * (alpha - 1.0) / 4.0) *
                                         d.lp_norm;
    return d;
}

// The variance weight uses box coordinates; it is only meaningful while the
// field keeps essentially all mass away from the periodic seam.
inline bool variance_mass_confined(const ComplexField& u, double fraction = 0.999) {
    const GridSpec& g = u.grid;
    const auto xs = coordinates(g);
    double inside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        const double a2 = std::norm(u.values[i]);
        total += a2;
        double maxc = std::abs(xs[0].values[i]);
        if (g.dim == 2) maxc = std::max(maxc, std::abs(xs[1].values[i]));
        if (maxc <= 0.5 * g.half_width) inside += a2;
    }
    return total == 0.0 || inside >= fraction * total;
}

// ---------------------------------------------------------------------------
// Dispersive-estimate bookkeeping: exponents, fixed constants, weight
// seminorms and the small-time indicator built from them.
// ---------------------------------------------------------------------------

struct AnalysisConstants {
    double strichartz_C = 1.0;
    double sobolev_D = 1.0;
    double v_exponent = 1.5;
};

struct StrichartzExponents {
    double p = 0.0;
    double q = 0.0;
    double v = 0.0;
};

inline StrichartzExponents strichartz_exponents(double alpha, int d) {
    if (!(alpha > 1.0)) throw ConfigError("alpha must exceed 1");
    if (d < 1) throw ConfigError("dimension must be positive");
    StrichartzExponents e;
    e.p = alpha + 1.0;
    e.q = 4.0 * (alpha + 1.0) / (double(d) * (alpha - 1.0));
    if (e.q <= 2.0) throw ConfigError("exponent outside admissible range");
    e.v = 1.0 / (1.0 - 2.0 / e.q);
    return e;
}

struct HSeminorms {
    double h_Lv = 0.0;
    double grad_h_Lv = 0.0;
    double D1 = 0.0;
    double D2 = 0.0;
};

namespace detail {

// sup over the grid of h and |grad h| at path time s. The gradient is
// analytic: grad h = h * (-(alpha-1)(grad Re mu_hat * s - grad Re W)).
struct HSupEvaluator {
    const NoiseSpec* spec;
    const BrownianPaths* paths;
    double alpha;
    GridSpec grid;
    RealField re_mu_hat;
    std::vector<RealField> grad_re_mu_hat;
    std::vector<RealField> e_fields;
    std::vector<std::vector<RealField>> f_grads;
    bool spatial = false;

    HSupEvaluator(const NoiseSpec& s, const BrownianPaths& p, double a, const GridSpec& g)
        : spec(&s), paths(&p), alpha(a), grid(g) {
        const DampingFields damp = damping_fields(s, g);
        re_mu_hat = make_real_field(g);
        for (std::size_t i = 0; i < g.size(); ++i)
            re_mu_hat.values[i] = damp.mu_hat.values[i].real();
        grad_re_mu_hat.assign(std::size_t(g.dim), make_real_field(g));
        const double kappa = s.ito_factor();
        for (const NoiseMode& m : s.modes) {
            e_fields.push_back(mode_e_field(m, g));
            f_grads.push_back(profile_gradient(m.profile, g));
            if (m.profile.kind != ProfileKind::Constant) spatial = true;
            const double fac = kappa * (std::norm(m.mu) + (m.mu * m.mu).real());
            for (int a2 = 0; a2 < g.dim; ++a2)
                for (std::size_t i = 0; i < g.size(); ++i)
                    grad_re_mu_hat[std::size_t(a2)].values[i] +=
                        fac * 2.0 * e_fields.back().values[i] *
                        f_grads.back()[std::size_t(a2)].values[i];
        }
    }

    // Returns (sup h, sup |grad h|).
    std::array<double, 2> operator()(double s) const {
        std::vector<double> re_w(grid.size(), 0.0);
        std::vector<std::array<double, 2>> grad_re_w(grid.size(), {0.0, 0.0});
        for (int j = 0; j < spec->n_modes(); ++j) {
            const double b = beta_at(*paths, j, s);
            const double re_mu = spec->modes[std::size_t(j)].mu.real();
            for (std::size_t i = 0; i < grid.size(); ++i) {
                re_w[i] += re_mu * e_fields[std::size_t(j)].values[i] * b;
                for (int a2 = 0; a2 < grid.dim; ++a2)
                    grad_re_w[i][std::size_t(a2)] +=
                        re_mu * f_grads[std::size_t(j)][std::size_t(a2)].values[i] * b;
            }
        }
        double sup_h = 0.0, sup_gh = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double h = std::exp(-(alpha - 1.0) * (re_mu_hat.values[i] * s - re_w[i]));
            double g2 = 0.0;
            for (int a2 = 0; a2 < grid.dim; ++a2) {
                const double gc = -(alpha - 1.0) *
                                  (grad_re_mu_hat[std::size_t(a2)].values[i] * s -
                                   grad_re_w[i][std::size_t(a2)]);
                g2 += gc * gc;
            }
            sup_h = std::max(sup_h, h);
            sup_gh = std::max(sup_gh, h * std::sqrt(g2));
        }
        return {sup_h, sup_gh};
    }
};

}  // namespace detail

inline HSeminorms h_seminorms(const NoiseSpec& spec, const BrownianPaths& paths,
                              double alpha, const AnalysisConstants& k, double t,
                              const GridSpec& g) {
    if (!(k.v_exponent > 1.0)) throw ConfigError("v exponent must exceed 1");
    HSeminorms out;
    if (t <= 0.0) return out;
    const double v = k.v_exponent;
    const detail::HSupEvaluator ev(spec, paths, alpha, g);

    double ih = 0.0, ig = 0.0;
    double prev_t = paths.times.front();
    auto vals = ev(prev_t);
    double prev_h = std::pow(vals[0], v), prev_g = std::pow(vals[1], v);
    for (std::size_t i = 1; i < paths.times.size() && prev_t < t; ++i) {
        const double s = std::min(paths.times[i], t);
        vals = ev(s);
        const double hv = std::pow(vals[0], v), gv = std::pow(vals[1], v);
        ih += 0.5 * (s - prev_t) * (prev_h + hv);
        ig += 0.5 * (s - prev_t) * (prev_g + gv);
        prev_t = s;
        prev_h = hv;
        prev_g = gv;
    }
    out.h_Lv = std::pow(ih, 1.0 / v);
    out.grad_h_Lv = std::pow(ig, 1.0 / v);
    const double front = alpha * std::pow(k.sobolev_D, alpha - 1.0);
    out.D1 = front * out.h_Lv;
    out.D2 = front * (out.h_Lv + out.grad_h_Lv);
    return out;
}

// First grid time at which 2*3^alpha |x|_{H1}^{alpha-1} C^alpha D(t) exceeds 1,
// where D is D1 for spatially flat specs and D2 otherwise.
inline std::optional<double> tau_indicator(const AnalysisConstants& k,
                                           const Diagnostics& diag0,
                                           const NoiseSpec& spec,
                                           const BrownianPaths& paths, double alpha,
                                           double horizon, const GridSpec& g) {
    const double v = k.v_exponent;
    const double x_h1 = std::sqrt(diag0.mass + diag0.grad_norm_sq);
    const double pref = 2.0 * std::pow(3.0, alpha) * std::pow(x_h1, alpha - 1.0) *
                        std::pow(k.strichartz_C, alpha) * alpha *
                        std::pow(k.sobolev_D, alpha - 1.0);
    const detail::HSupEvaluator ev(spec, paths, alpha, g);
    const bool spatial = ev.spatial;

    double ih = 0.0, ig = 0.0;
    auto vals = ev(paths.times.front());
    double prev_h = std::pow(vals[0], v), prev_g = std::pow(vals[1], v);
    for (std::size_t i = 1; i < paths.times.size(); ++i) {
        const double s = paths.times[i];
        if (s > horizon + 1e-12) break;
        vals = ev(s);
        const double hv = std::pow(vals[0], v), gv = std::pow(vals[1], v);
        const double dt = s - paths.times[i - 1];
        ih += 0.5 * dt * (prev_h + hv);
        ig += 0.5 * dt * (prev_g + gv);
        prev_h = hv;
        prev_g = gv;
        const double dnorm =
            std::pow(ih, 1.0 / v) + (spatial ? std::pow(ig, 1.0 / v) : 0.0);
        if (pref * dnorm > 1.0) return s;
    }
    return std::nullopt;
}

// Bisection refinement of the indicator crossing between grid nodes, for use
// as an oracle against closed forms. The cumulative integral is extended into
// a node interval by a partial trapezoid with linearly interpolated paths.
inline std::optional<double> tau_crossing_refined(const AnalysisConstants& k,
                                                  const Diagnostics& diag0,
                                                  const NoiseSpec& spec,
                                                  const BrownianPaths& paths,
                                                  double alpha, double horizon,
                                                  const GridSpec& g) {
    const double v = k.v_exponent;
    const double x_h1 = std::sqrt(diag0.mass + diag0.grad_norm_sq);
    const double pref = 2.0 * std::pow(3.0, alpha) * std::pow(x_h1, alpha - 1.0) *
                        std::pow(k.strichartz_C, alpha) * alpha *
                        std::pow(k.sobolev_D, alpha - 1.0);
    const detail::HSupEvaluator ev(spec, paths, alpha, g);
    const bool spatial = ev.spatial;

    auto indicator_minus_one = [&](double cum_h, double cum_g) {
        return pref * (std::pow(cum_h, 1.0 / v) +
                       (spatial ? std::pow(cum_g, 1.0 / v) : 0.0)) -
               1.0;
    };

    double ih = 0.0, ig = 0.0;
    auto vals = ev(paths.times.front());
    double prev_h = std::pow(vals[0], v), prev_g = std::pow(vals[1], v);
    for (std::size_t i = 1; i < paths.times.size(); ++i) {
        const double s1 = paths.times[i];
        if (paths.times[i - 1] >= horizon) break;
        const double s_hi = std::min(s1, horizon);
        vals = ev(s_hi);
        const double hv = std::pow(vals[0], v), gv = std::pow(vals[1], v);
        const double dt = s_hi - paths.times[i - 1];
        const double ih1 = ih + 0.5 * dt * (prev_h + hv);
        const double ig1 = ig + 0.5 * dt * (prev_g + gv);
        if (indicator_minus_one(ih1, ig1) > 0.0) {
            // Crossing inside (t_{i-1}, s_hi]; bisect on the partial trapezoid.
            double lo = paths.times[i - 1], hi = s_hi;
            for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++it) {
                const double mid = 0.5 * (lo + hi);
                const auto vm = ev(mid);
                const double dmid = mid - paths.times[i - 1];
                const double ihm = ih + 0.5 * dmid * (prev_h + std::pow(vm[0], v));
                const double igm = ig + 0.5 * dmid * (prev_g + std::pow(vm[1], v));
                if (indicator_minus_one(ihm, igm) > 0.0)
                    hi = mid;
                else
                    lo = mid;
            }
            return 0.5 * (lo + hi);
        }
        ih = ih1;
        ig = ig1;
        prev_h = hv;
        prev_g = gv;
        if (s1 >= horizon) break;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Virial bound f(t) = V + 4G t + 8H t^2 + a t^3 and its roots.
// ---------------------------------------------------------------------------

inline double coefficient_a(const NoiseSpec& spec, double mass0, const GridSpec& g,
                            int a_mu_power = 2) {
    if (mass0 < 0.0) throw ConfigError("negative initial mass");
    if (a_mu_power != 1 && a_mu_power != 2)
        throw ConfigError("a_mu_power must be 1 or 2");
    double sum = 0.0;
    for (const NoiseMode& m : spec.modes) {
        const std::vector<RealField> df = profile_gradient(m.profile, g);
        double sup2 = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            double g2 = 0.0;
            for (int a = 0; a < g.dim; ++a) {
                const double v = df[std::size_t(a)].values[i];
                g2 += v * v;
            }
            sup2 = std::max(sup2, g2);
        }
        const double mu_fac =
            (a_mu_power == 2) ? std::norm(m.mu) : std::abs(m.mu);
        sum += mu_fac * sup2;
    }
    return (4.0 / 3.0) * sum * mass0;
}

struct VirialPrediction {
    double a_coeff = 0.0;
    std::array<double, 4> f_coeffs{0.0, 0.0, 0.0, 0.0};  // {V, 4G, 8H, a}
    std::optional<double> t_star;
    std::optional<double> t_tilde_star;
    std::optional<double> f_at_t_star;
};

namespace detail {

inline double eval_cubic(const std::array<double, 4>& c, double t) {
    return ((c[3] * t + c[2]) * t + c[1]) * t + c[0];
}

inline double eval_cubic_deriv(const std::array<double, 4>& c, double t) {
    return (3.0 * c[3] * t + 2.0 * c[2]) * t + c[1];
}

inline void newton_polish(const std::array<double, 4>& c, double& t) {
    for (int i = 0; i < 8; ++i) {
        const double f = eval_cubic(c, t);
        const double fp = eval_cubic_deriv(c, t);
        if (fp == 0.0) return;
        const double step = f / fp;
        t -= step;
        if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(t))) return;
    }
}

// All real roots of c[0] + c[1] t + c[2] t^2 + c[3] t^3.
inline std::vector<double> real_poly_roots(const std::array<double, 4>& c) {
    std::vector<double> roots;
    if (c[3] != 0.0) {
        const double b = c[2] / c[3], cc = c[1] / c[3], d = c[0] / c[3];
        const double p = cc - b * b / 3.0;
        const double q = 2.0 * b * b * b / 27.0 - b * cc / 3.0 + d;
        const double disc = 0.25 * q * q + p * p * p / 27.0;
        const double shift = -b / 3.0;
        if (disc > 0.0) {
            const double s = std::sqrt(disc);
            const double y = std::cbrt(-0.5 * q + s) + std::cbrt(-0.5 * q - s);
            roots.push_back(y + shift);
        } else {
            const double r = std::sqrt(std::max(0.0, -p / 3.0));
            if (r == 0.0) {
                roots.push_back(shift);
            } else {
                double cosarg = -0.5 * q / (r * r * r);
                cosarg = std::clamp(cosarg, -1.0, 1.0);
                const double theta = std::acos(cosarg);
                for (int k = 0; k < 3; ++k)
                    roots.push_back(2.0 * r * std::cos((theta - 2.0 * pi * k) / 3.0) +
                                    shift);
            }
        }
        for (double& t : roots) newton_polish(c, t);
    } else if (c[2] != 0.0) {
        const double disc = c[1] * c[1] - 4.0 * c[2] * c[0];
        if (disc >= 0.0) {
            const double s = std::sqrt(disc);
            const double qq = -0.5 * (c[1] + (c[1] >= 0.0 ? s : -s));
            if (qq != 0.0) {
                roots.push_back(qq / c[2]);
                roots.push_back(c[0] / qq);
            } else {
                roots.push_back(0.0);
                if (c[2] != 0.0) roots.push_back(-c[1] / c[2]);
            }
        }
    } else if (c[1] != 0.0) {
        roots.push_back(-c[0] / c[1]);
    }
    return roots;
}

}  // namespace detail

inline VirialPrediction virial_prediction(const Diagnostics& diag0, double a) {
    if (a < 0.0) throw ConfigError("cubic coefficient must be nonnegative");
    VirialPrediction out;
    out.a_coeff = a;
    const double V = diag0.variance, G = diag0.momentum, H = diag0.hamiltonian;
    out.f_coeffs = {V, 4.0 * G, 8.0 * H, a};

    const std::vector<double> roots = detail::real_poly_roots(out.f_coeffs);
    double best = -1.0;
    for (double r : roots)
        if (r > 0.0) best = std::max(best, r);
    if (best > 0.0) {
        out.t_star = best;
        out.f_at_t_star = detail::eval_cubic(out.f_coeffs, best);
    }

    if (H < 0.0) {
        const double rad = G * G - 1.5 * H * V;
        if (rad >= 0.0) out.t_tilde_star = (-G - std::sqrt(rad)) / (2.0 * H);
    }

    // Cross-check against the printed closed form, which is a critical point
    // of f; it must coincide with one root of f' when well defined.
    if (a > 0.0 && G != 0.0) {
        const double rad = 16.0 * H * H - 3.0 * a * G;
        if (rad > 0.0) {
            // 2G/(-4H - sqrt(rad)) cancels when H < 0 and a is small; the
            // rationalized form 2(-4H + sqrt(rad))/(3a) is exact there.
            const double printed = (H < 0.0)
                                       ? 2.0 * (-4.0 * H + std::sqrt(rad)) / (3.0 * a)
                                       : 2.0 * G / (-4.0 * H - std::sqrt(rad));
            const double A = 3.0 * a, B = 16.0 * H, C = 4.0 * G;
            const double disc = B * B - 4.0 * A * C;
            if (disc >= 0.0) {
                const double s = std::sqrt(disc);
                const double qq = -0.5 * (B + (B >= 0.0 ? s : -s));
                const double r1 = qq / A;
                const double r2 = (qq != 0.0) ? C / qq : 0.0;
                const double err = std::min(std::abs(r1 - printed), std::abs(r2 - printed));
                if (err > 1e-9 * std::max(1.0, std::abs(printed)))
                    throw NumericalError("virial root cross-check failed");
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pathwise residuals of the energy, variance, momentum and expanded-variance
// identities. Lebesgue integrals are left-Riemann sums on the snapshot grid;
// stochastic integrals are left-point sums against the recorded increments.
// ---------------------------------------------------------------------------

struct ResidualSeries {
    std::vector<double> times;
    std::vector<double> res_H, res_V, res_G, res_Vexp;
    double sup_H = 0.0, sup_V = 0.0, sup_G = 0.0, sup_Vexp = 0.0;
};

namespace detail {

struct SnapshotTerms {
    double H_lam = 0.0, P_lam = 0.0, V = 0.0, G = 0.0, lp = 0.0;
    double MU = 0.0;
    std::vector<double> A, B, C, S, VarI, U, R, T;
};

}  // namespace detail

inline ResidualSeries ito_residuals(const std::vector<double>& times,
                                    const std::vector<ComplexField>& fields,
                                    const NoiseSpec& spec, const BrownianPaths& paths,
                                    double alpha, int lambda) {
    if (times.size() != fields.size() || times.empty())
        throw ConfigError("snapshot times and fields must align");
    const GridSpec g = fields.front().grid;
    const int n_modes = spec.n_modes();
    const int d = g.dim;

    // Locate snapshots on the path grid and collect increments.
    std::vector<std::size_t> node(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        const auto it = std::lower_bound(paths.times.begin(), paths.times.end(),
                                         times[i] - 1e-9);
        if (it == paths.times.end() || std::abs(*it - times[i]) > 1e-9)
            throw ConfigError("snapshot times not on path grid");
        node[i] = std::size_t(it - paths.times.begin());
    }

    // Static fields.
    const DampingFields damp = damping_fields(spec, g);
    const std::vector<RealField> grad_mu = damping_gradient(spec, g);
    std::vector<std::vector<RealField>> f_grads;
    for (const NoiseMode& m : spec.modes) f_grads.push_back(profile_gradient(m.profile, g));
    const auto xs = coordinates(g);
    RealField xi_sq = make_real_field(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double r2 = xs[0].values[i] * xs[0].values[i];
        if (d == 2) r2 += xs[1].values[i] * xs[1].values[i];
        xi_sq.values[i] = r2;
    }

    const std::size_t M = times.size();
    std::vector<detail::SnapshotTerms> terms(M);
    for (std::size_t s = 0; s < M; ++s) {
        const ComplexField& X = fields[s];
        if (!(X.grid == g)) throw ConfigError("snapshot grids differ");
        require_finite(X);
        const SpectralDerivs dX = spectral_derivatives(X);
        detail::SnapshotTerms& t = terms[s];
        t.A.assign(std::size_t(n_modes), 0.0);
        t.B = t.A;
        t.C = t.A;
        t.S = t.A;
        t.VarI = t.A;
        t.U = t.A;
        t.R = t.A;
        t.T = t.A;

        RealField acc = make_real_field(g);
        RealField abs2 = make_real_field(g);
        RealField absP = make_real_field(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            abs2.values[i] = std::norm(X.values[i]);
            absP.values[i] = detail::pow_alpha(abs2.values[i], 0.5 * (alpha + 1.0));
        }
        t.lp = integrate(absP);

        double grad_sq = 0.0;
        {
            RealField gd = make_real_field(g);
            for (int a = 0; a < d; ++a)
                for (std::size_t i = 0; i < g.size(); ++i)
                    gd.values[i] += std::norm(dX.gradient[std::size_t(a)].values[i]);
            grad_sq = integrate(gd);
        }
        t.H_lam = 0.5 * grad_sq - double(lambda) * t.lp / (alpha + 1.0);
        t.P_lam = t.H_lam + (double(lambda) / (alpha + 1.0)) *
                                (1.0 - double(d) * (alpha - 1.0) / 4.0) * t.lp;

        for (std::size_t i = 0; i < g.size(); ++i) acc.values[i] = xi_sq.values[i] * abs2.values[i];
        t.V = integrate(acc);

        for (std::size_t i = 0; i < g.size(); ++i) {
            double m = xs[0].values[i] *
                       (X.values[i] * std::conj(dX.gradient[0].values[i])).imag();
            if (d == 2)
                m += xs[1].values[i] *
                     (X.values[i] * std::conj(dX.gradient[1].values[i])).imag();
            acc.values[i] = m;
        }
        t.G = integrate(acc);

        // MU = Re <grad(mu X), grad X>.
        for (std::size_t i = 0; i < g.size(); ++i) {
            double re = 0.0;
            for (int a = 0; a < d; ++a) {
                const cplx gd = damp.mu.values[i] * dX.gradient[std::size_t(a)].values[i] +
                                grad_mu[std::size_t(a)].values[i] * X.values[i];
                re += (gd * std::conj(dX.gradient[std::size_t(a)].values[i])).real();
            }
            acc.values[i] = re;
        }
        t.MU = integrate(acc);

        for (int k = 0; k < n_modes; ++k) {
            const NoiseMode& mode = spec.modes[std::size_t(k)];
            const ComplexField& phi = damp.phi[std::size_t(k)];
            RealField ra = make_real_field(g), rb = make_real_field(g);
            RealField rc = make_real_field(g), rs = make_real_field(g);
            RealField rv = make_real_field(g), ru = make_real_field(g);
            RealField rr = make_real_field(g), rt = make_real_field(g);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const cplx phv = phi.values[i];
                double a_re = 0.0, c_re = 0.0, r_im = 0.0, t_im = 0.0;
                for (int a = 0; a < d; ++a) {
                    const cplx dphi = mode.mu * f_grads[std::size_t(k)][std::size_t(a)].values[i];
                    const cplx gXa = dX.gradient[std::size_t(a)].values[i];
                    const cplx gprod = phv * gXa + dphi * X.values[i];
                    a_re += (gprod * std::conj(gXa)).real();
                    c_re += std::norm(gprod);
                    r_im += (xs[std::size_t(a)].values[i] * gXa * std::conj(X.values[i]) *
                             std::conj(phv))
                                .imag();
                    t_im += (xs[std::size_t(a)].values[i] * dphi * abs2.values[i] *
                             std::conj(phv))
                                .imag();
                }
                ra.values[i] = a_re;
                rc.values[i] = c_re;
                rb.values[i] = phv.real() * absP.values[i];
                rs.values[i] = phv.real() * phv.real() * absP.values[i];
                rv.values[i] = xi_sq.values[i] * abs2.values[i] * phv.real();
                ru.values[i] = abs2.values[i] * phv.imag();
                rr.values[i] = r_im;
                rt.values[i] = t_im;
            }
            t.A[std::size_t(k)] = integrate(ra);
            t.B[std::size_t(k)] = integrate(rb);
            t.C[std::size_t(k)] = integrate(rc);
            t.S[std::size_t(k)] = integrate(rs);
            t.VarI[std::size_t(k)] = integrate(rv);
            t.U[std::size_t(k)] = integrate(ru);
            t.R[std::size_t(k)] = integrate(rr);
            t.T[std::size_t(k)] = integrate(rt);
        }
    }

    // Increments of beta between consecutive snapshots.
    std::vector<std::vector<double>> dbeta(std::size_t(n_modes),
                                           std::vector<double>(M > 0 ? M - 1 : 0, 0.0));
    for (int k = 0; k < n_modes; ++k)
        for (std::size_t s = 0; s + 1 < M; ++s)
            dbeta[std::size_t(k)][s] = paths.values[std::size_t(k)][node[s + 1]] -
                                       paths.values[std::size_t(k)][node[s]];

    ResidualSeries out;
    out.times = times;
    out.res_H.assign(M, 0.0);
    out.res_V.assign(M, 0.0);
    out.res_G.assign(M, 0.0);
    out.res_Vexp.assign(M, 0.0);

    const double lam = double(lambda);
    const double crit = (16.0 * lam / (alpha + 1.0)) *
                        (1.0 - double(d) * (alpha - 1.0) / 4.0);

    // Running left-Riemann and Ito sums for the H, V, G identities.
    double lr_H = 0.0, lr_V = 0.0, lr_G = 0.0, lr_T = 0.0;
    std::vector<double> it_H(std::size_t(n_modes), 0.0);
    std::vector<double> it_V(std::size_t(n_modes), 0.0);
    std::vector<double> it_Gu(std::size_t(n_modes), 0.0);
    std::vector<double> it_Gr(std::size_t(n_modes), 0.0);

    for (std::size_t i = 1; i < M; ++i) {
        const std::size_t s = i - 1;
        const double w = times[i] - times[s];
        const detail::SnapshotTerms& ts = terms[s];

        double sumC = 0.0, sumS = 0.0, sumT = 0.0;
        for (int k = 0; k < n_modes; ++k) {
            sumC += ts.C[std::size_t(k)];
            sumS += ts.S[std::size_t(k)];
            sumT += ts.T[std::size_t(k)];
        }
        lr_H += w * (-ts.MU + 0.5 * sumC - 0.5 * lam * (alpha - 1.0) * sumS);
        lr_V += w * ts.G;
        lr_G += w * ts.P_lam;
        lr_T += w * sumT;
        for (int k = 0; k < n_modes; ++k) {
            const double db = dbeta[std::size_t(k)][s];
            it_H[std::size_t(k)] += (ts.A[std::size_t(k)] - lam * ts.B[std::size_t(k)]) * db;
            it_V[std::size_t(k)] += ts.VarI[std::size_t(k)] * db;
            it_Gu[std::size_t(k)] += ts.U[std::size_t(k)] * db;
            it_Gr[std::size_t(k)] += ts.R[std::size_t(k)] * db;
        }

        double mart_H = 0.0, mart_V = 0.0, mart_G = 0.0;
        for (int k = 0; k < n_modes; ++k) {
            mart_H += it_H[std::size_t(k)];
            mart_V += 2.0 * it_V[std::size_t(k)];
            mart_G += double(d) * it_Gu[std::size_t(k)] - 2.0 * it_Gr[std::size_t(k)];
        }

        out.res_H[i] = terms[i].H_lam - terms[0].H_lam - lr_H - mart_H;
        out.res_V[i] = terms[i].V - terms[0].V - 4.0 * lr_V - mart_V;
        out.res_G[i] = terms[i].G - terms[0].G - 4.0 * lr_G + lr_T - mart_G;

        // Expanded variance: weights depend on the evaluation time.
        const double ti = times[i];
        double drift2 = 0.0, drift1 = 0.0, driftT = 0.0;
        double m2 = 0.0, m1r = 0.0, m1u = 0.0, m0 = 0.0;
        for (std::size_t s2 = 0; s2 + 1 <= i; ++s2) {
            const detail::SnapshotTerms& u = terms[s2];
            const double ws = times[s2 + 1] - times[s2];
            const double wt1 = ti - times[s2];
            const double wt2 = wt1 * wt1;
            double sC = 0.0, sS = 0.0, sT = 0.0;
            for (int k = 0; k < n_modes; ++k) {
                sC += u.C[std::size_t(k)];
                sS += u.S[std::size_t(k)];
                sT += u.T[std::size_t(k)];
            }
            drift2 += ws * wt2 * (-u.MU + 0.5 * sC - 0.5 * lam * (alpha - 1.0) * sS);
            drift1 += ws * wt1 * u.lp;
            driftT += ws * wt1 * sT;
            for (int k = 0; k < n_modes; ++k) {
                const double db = dbeta[std::size_t(k)][s2];
                m2 += wt2 * (u.A[std::size_t(k)] - lam * u.B[std::size_t(k)]) * db;
                m1r += wt1 * u.R[std::size_t(k)] * db;
                m1u += wt1 * u.U[std::size_t(k)] * db;
                m0 += u.VarI[std::size_t(k)] * db;
            }
        }
        const double rhs = terms[0].V + 4.0 * terms[0].G * ti +
                           8.0 * terms[0].H_lam * ti * ti + 8.0 * drift2 +
                           crit * drift1 - 4.0 * driftT + 8.0 * m2 - 8.0 * m1r +
                           4.0 * double(d) * m1u + 2.0 * m0;
        out.res_Vexp[i] = terms[i].V - rhs;
    }

    for (std::size_t i = 0; i < M; ++i) {
        out.sup_H = std::max(out.sup_H, std::abs(out.res_H[i]));
        out.sup_V = std::max(out.sup_V, std::abs(out.res_V[i]));
        out.sup_G = std::max(out.sup_G, std::abs(out.res_G[i]));
        out.sup_Vexp = std::max(out.sup_Vexp, std::abs(out.res_Vexp[i]));
    }
    return out;
}

}  // namespace snls
