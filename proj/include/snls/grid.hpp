#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"
#include "fft.hpp"

namespace snls {

inline constexpr double pi = 3.141592653589793238462643383279;

// Periodic box [-L, L)^d, d in {1,2}, n points per axis. Wavenumbers are
// k_m = pi m / L with m in {-n/2, ..., n/2-1}, stored in FFT order.
struct GridSpec {
    int dim = 1;
    double half_width = 8.0;
    int points_per_dim = 64;

    double spacing() const { return 2.0 * half_width / points_per_dim; }
    std::size_t size() const {
        std::size_t s = 1;
        for (int m = 0; m < dim; ++m) s *= std::size_t(points_per_dim);
        return s;
    }
    bool operator==(const GridSpec& o) const {
        return dim == o.dim && half_width == o.half_width && points_per_dim == o.points_per_dim;
    }
};

inline GridSpec make_grid(int dim, double half_width, int points_per_dim) {
    if (dim != 1 && dim != 2) throw ConfigError("grid dim must be 1 or 2");
    if (!(half_width > 0)) throw ConfigError("grid half_width must be positive");
    if (points_per_dim < 16 || !detail::is_pow2(std::size_t(points_per_dim)))
        throw ConfigError("grid points_per_dim must be a power of two >= 16");
    return GridSpec{dim, half_width, points_per_dim};
}

// Wavenumber along one axis in FFT storage order.
inline std::vector<double> wavenumbers(const GridSpec& g) {
    const int n = g.points_per_dim;
    std::vector<double> k(std::size_t(n), 0.0);
    for (int j = 0; j < n; ++j) {
        const int m = (j < n / 2) ? j : j - n;
        k[std::size_t(j)] = pi * double(m) / g.half_width;
    }
    return k;
}

// First-derivative multiplier: the Nyquist entry is zeroed so derivatives of
// real fields stay real.
inline std::vector<double> deriv_wavenumbers(const GridSpec& g) {
    std::vector<double> k = wavenumbers(g);
    k[std::size_t(g.points_per_dim / 2)] = 0.0;
    return k;
}

struct ComplexField {
    GridSpec grid;
    std::vector<cplx> values;
};

struct RealField {
    GridSpec grid;
    std::vector<double> values;
};

inline ComplexField make_complex_field(const GridSpec& g) { return {g, std::vector<cplx>(g.size())}; }
inline RealField make_real_field(const GridSpec& g) { return {g, std::vector<double>(g.size())}; }

inline bool all_finite(const ComplexField& f) {
    for (const cplx& v : f.values)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
}

inline bool all_finite(const RealField& f) {
    for (double v : f.values)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void require_finite(const ComplexField& f) {
    if (!all_finite(f)) throw NumericalError("non-finite field");
}

inline void require_finite(const RealField& f) {
    if (!all_finite(f)) throw NumericalError("non-finite field");
}

// Coordinate fields: component m at flat index maps index 0 to -L, n/2 to 0.
inline std::vector<RealField> coordinates(const GridSpec& g) {
    const int n = g.points_per_dim;
    const double L = g.half_width;
    const double h = g.spacing();
    std::vector<RealField> out;
    out.reserve(std::size_t(g.dim));
    for (int m = 0; m < g.dim; ++m) out.push_back(make_real_field(g));
    if (g.dim == 1) {
        for (int j = 0; j < n; ++j) out[0].values[std::size_t(j)] = -L + h * double(j);
    } else {
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const std::size_t idx = std::size_t(r) * std::size_t(n) + std::size_t(c);
                out[0].values[idx] = -L + h * double(r);
                out[1].values[idx] = -L + h * double(c);
            }
    }
    return out;
}

// Rectangle-rule quadrature; exact trapezoid on a periodic grid.
inline double integrate(const RealField& density) {
    require_finite(density);
    double sum = 0.0, comp = 0.0;
    for (double v : density.values) {
        const double y = v - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    const double h = density.grid.spacing();
    return (density.grid.dim == 1 ? h : h * h) * sum;
}

inline double cell_volume(const GridSpec& g) {
    const double h = g.spacing();
    return g.dim == 1 ? h : h * h;
}

inline RealField abs2_field(const ComplexField& f) {
    RealField out{f.grid, std::vector<double>(f.values.size())};
    for (std::size_t i = 0; i < f.values.size(); ++i) out.values[i] = std::norm(f.values[i]);
    return out;
}

inline std::vector<cplx> forward_spectrum(const ComplexField& f) {
    std::vector<cplx> a = f.values;
    fft_nd(a, f.grid.dim, std::size_t(f.grid.points_per_dim), false);
    return a;
}

inline ComplexField from_spectrum(const GridSpec& g, std::vector<cplx> spectrum) {
    fft_nd(spectrum, g.dim, std::size_t(g.points_per_dim), true);
    return {g, std::move(spectrum)};
}

struct SpectralDerivs {
    ComplexField laplacian;
    std::vector<ComplexField> gradient;
};

// laplacian = ifft(-|k|^2 fft(u)); gradient_m = ifft(i k_m fft(u)) with the
// Nyquist first-derivative multiplier zeroed.
inline SpectralDerivs spectral_derivatives(const ComplexField& f) {
    require_finite(f);
    const GridSpec& g = f.grid;
    const int n = g.points_per_dim;
    const std::vector<double> k = wavenumbers(g);
    const std::vector<double> kd = deriv_wavenumbers(g);
    const std::vector<cplx> hat = forward_spectrum(f);

    SpectralDerivs out;
    std::vector<cplx> lap(hat.size());
    if (g.dim == 1) {
        std::vector<cplx> gx(hat.size());
        for (int j = 0; j < n; ++j) {
            const std::size_t i = std::size_t(j);
            lap[i] = -(k[i] * k[i]) * hat[i];
            gx[i] = cplx(0.0, kd[i]) * hat[i];
        }
        out.laplacian = from_spectrum(g, std::move(lap));
        out.gradient.push_back(from_spectrum(g, std::move(gx)));
    } else {
        std::vector<cplx> g1(hat.size()), g2(hat.size());
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const std::size_t i = std::size_t(r) * std::size_t(n) + std::size_t(c);
                lap[i] = -(k[std::size_t(r)] * k[std::size_t(r)] +
                           k[std::size_t(c)] * k[std::size_t(c)]) *
                         hat[i];
                g1[i] = cplx(0.0, kd[std::size_t(r)]) * hat[i];
                g2[i] = cplx(0.0, kd[std::size_t(c)]) * hat[i];
            }
        out.laplacian = from_spectrum(g, std::move(lap));
        out.gradient.push_back(from_spectrum(g, std::move(g1)));
        out.gradient.push_back(from_spectrum(g, std::move(g2)));
    }
    return out;
}

// Parseval: integral |u|^2 = h^d / n^d * sum_k |u_hat_k|^2.
inline double spectral_mass(const ComplexField& f, const std::vector<cplx>& hat) {
    double s = 0.0, comp = 0.0;
    for (const cplx& v : hat) {
        const double y = std::norm(v) - comp;
        const double t = s + y;
        comp = (t - s) - y;
        s = t;
    }
    return cell_volume(f.grid) / double(f.values.size()) * s;
}

// |grad u|_2^2 via Parseval over the derivative multipliers; one forward FFT.
inline double grad_norm_sq_of_spectrum(const GridSpec& g, const std::vector<cplx>& hat) {
    const int n = g.points_per_dim;
    const std::vector<double> kd = deriv_wavenumbers(g);
    double s = 0.0, comp = 0.0;
    if (g.dim == 1) {
        for (int j = 0; j < n; ++j) {
            const std::size_t i = std::size_t(j);
            const double y = kd[i] * kd[i] * std::norm(hat[i]) - comp;
            const double t = s + y;
            comp = (t - s) - y;
            s = t;
        }
    } else {
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const std::size_t i = std::size_t(r) * std::size_t(n) + std::size_t(c);
                const double k2 = kd[std::size_t(r)] * kd[std::size_t(r)] +
                                  kd[std::size_t(c)] * kd[std::size_t(c)];
                const double y = k2 * std::norm(hat[i]) - comp;
                const double t = s + y;
                comp = (t - s) - y;
                s = t;
            }
    }
    std::size_t total = g.size();
    return cell_volume(g) / double(total) * s;
}

inline double grad_norm_sq(const ComplexField& f) {
    return grad_norm_sq_of_spectrum(f.grid, forward_spectrum(f));
}

inline double sup_abs(const ComplexField& f) {
    double m = 0.0;
    for (const cplx& v : f.values) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace snls
