#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "snls/grid.hpp"
#include "snls/rng.hpp"

using namespace snls;

namespace {

// Smooth periodic test field: random low-pass spectrum with decaying tail.
ComplexField random_smooth_field(const GridSpec& g, std::uint64_t seed) {
    const int n = g.points_per_dim;
    const std::vector<double> k = wavenumbers(g);
    std::vector<cplx> hat(g.size());
    const std::uint64_t key = stream_key(seed, 17, 3);
    std::uint64_t c = 0;
    if (g.dim == 1) {
        for (int j = 0; j < n; ++j) {
            const double decay = std::exp(-0.05 * k[std::size_t(j)] * k[std::size_t(j)]);
            hat[std::size_t(j)] = decay * cplx(gaussian(key, c), gaussian(key, c + 1));
            c += 2;
        }
    } else {
        for (int r = 0; r < n; ++r)
            for (int col = 0; col < n; ++col) {
                const double k2 = k[std::size_t(r)] * k[std::size_t(r)] +
                                  k[std::size_t(col)] * k[std::size_t(col)];
                hat[std::size_t(r) * std::size_t(n) + std::size_t(col)] =
                    std::exp(-0.05 * k2) * cplx(gaussian(key, c), gaussian(key, c + 1));
                c += 2;
            }
    }
    return from_spectrum(g, std::move(hat));
}

double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("grid construction validates and fixes invariants") {
    const GridSpec g = make_grid(1, pi, 64);
    CHECK(g.spacing() * g.points_per_dim == Catch::Approx(2.0 * g.half_width).epsilon(1e-15));
    CHECK(g.size() == 64u);

    const std::vector<double> k = wavenumbers(g);
    REQUIRE(k.size() == 64u);
    // symmetric up to the Nyquist entry: k[n-m] == -k[m] for 1 <= m < n/2
    for (int m = 1; m < 32; ++m)
        CHECK(k[std::size_t(64 - m)] == Catch::Approx(-k[std::size_t(m)]).margin(1e-15));
    CHECK(deriv_wavenumbers(g)[32] == 0.0);

    CHECK_THROWS_AS(make_grid(3, 1.0, 64), ConfigError);
    CHECK_THROWS_AS(make_grid(1, 1.0, 48), ConfigError);
    CHECK_THROWS_AS(make_grid(1, 1.0, 8), ConfigError);
    CHECK_THROWS_AS(make_grid(1, -1.0, 64), ConfigError);
}

TEST_CASE("spectral derivatives reproduce the plane-wave eigenpair") {
    const GridSpec g = make_grid(1, pi, 64);
    ComplexField u = make_complex_field(g);
    const auto xs = coordinates(g);
    for (std::size_t i = 0; i < u.values.size(); ++i)
        u.values[i] = std::exp(cplx(0.0, 2.0 * xs[0].values[i]));

    const SpectralDerivs d = spectral_derivatives(u);
    double err_lap = 0.0, err_grad = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        err_lap = std::max(err_lap, std::abs(d.laplacian.values[i] - (-4.0) * u.values[i]));
        err_grad = std::max(err_grad, std::abs(d.gradient[0].values[i] - cplx(0.0, 2.0) * u.values[i]));
    }
    CHECK(err_lap <= 1e-10);
    CHECK(err_grad <= 1e-10);
}

TEST_CASE("spectral derivatives of a constant vanish") {
    const GridSpec g = make_grid(1, pi, 64);
    ComplexField u = make_complex_field(g);
    for (auto& v : u.values) v = cplx(1.0, 0.0);
    const SpectralDerivs d = spectral_derivatives(u);
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        CHECK(std::abs(d.laplacian.values[i]) <= 1e-13);
        CHECK(std::abs(d.gradient[0].values[i]) <= 1e-13);
    }
}

TEST_CASE("spectral laplacian matches the analytic Gaussian derivative") {
    const GridSpec g = make_grid(1, 10.0 * pi, 512);
    ComplexField u = make_complex_field(g);
    const auto xs = coordinates(g);
    for (std::size_t i = 0; i < u.values.size(); ++i)
        u.values[i] = std::exp(-0.5 * xs[0].values[i] * xs[0].values[i]);

    const SpectralDerivs d = spectral_derivatives(u);
    double err = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        const double x = xs[0].values[i];
        err = std::max(err, std::abs(d.laplacian.values[i] - (x * x - 1.0) * u.values[i]));
    }
    CHECK(err <= 1e-8);
}

TEST_CASE("spectral derivatives in two dimensions") {
    const GridSpec g = make_grid(2, pi, 16);
    ComplexField u = make_complex_field(g);
    const auto xs = coordinates(g);
    for (std::size_t i = 0; i < u.values.size(); ++i)
        u.values[i] = std::exp(cplx(0.0, 2.0 * xs[0].values[i] + 4.0 * xs[1].values[i]));

    const SpectralDerivs d = spectral_derivatives(u);
    double err = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        err = std::max(err, std::abs(d.laplacian.values[i] + 20.0 * u.values[i]));
        err = std::max(err, std::abs(d.gradient[0].values[i] - cplx(0.0, 2.0) * u.values[i]));
        err = std::max(err, std::abs(d.gradient[1].values[i] - cplx(0.0, 4.0) * u.values[i]));
    }
    CHECK(err <= 1e-10);
}

TEST_CASE("spectral derivatives reject non-finite input") {
    const GridSpec g = make_grid(1, pi, 64);
    ComplexField u = make_complex_field(g);
    u.values[5] = cplx(std::numeric_limits<double>::quiet_NaN(), 0.0);
    CHECK_THROWS_AS(spectral_derivatives(u), NumericalError);
    CHECK_THROWS_WITH(spectral_derivatives(u), "non-finite field");
}

TEST_CASE("integrate: constants, plane waves, Gaussians") {
    {
        const GridSpec g = make_grid(1, pi, 64);
        RealField one = make_real_field(g);
        for (auto& v : one.values) v = 1.0;
        CHECK(integrate(one) == Catch::Approx(2.0 * pi).epsilon(1e-14));
    }
    {
        const GridSpec g = make_grid(1, 5.0, 128);
        ComplexField u = make_complex_field(g);
        const auto xs = coordinates(g);
        for (std::size_t i = 0; i < u.values.size(); ++i)
            u.values[i] = std::exp(cplx(0.0, 2.0 * pi / 5.0 * xs[0].values[i]));
        CHECK(integrate(abs2_field(u)) == Catch::Approx(10.0).epsilon(1e-14));
    }
    {
        const GridSpec g = make_grid(1, 8.0, 256);
        RealField gaussf = make_real_field(g);
        const auto xs = coordinates(g);
        for (std::size_t i = 0; i < gaussf.values.size(); ++i)
            gaussf.values[i] = std::exp(-xs[0].values[i] * xs[0].values[i]);
        CHECK(std::abs(integrate(gaussf) - std::sqrt(pi)) <= 1e-10);
    }
    {
        RealField bad = make_real_field(make_grid(1, 1.0, 16));
        bad.values[0] = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(integrate(bad), NumericalError);
    }
}

TEST_CASE("coordinates map index 0 to -L and n/2 to 0") {
    const GridSpec g = make_grid(1, pi, 16);
    const auto xs = coordinates(g);
    CHECK(xs[0].values[0] == Catch::Approx(-pi).margin(1e-15));
    CHECK(xs[0].values[8] == Catch::Approx(0.0).margin(1e-15));

    // |xi|^2 symmetric under index reflection m -> n-m for m >= 1
    for (int m = 1; m < 16; ++m) {
        const double a = xs[0].values[std::size_t(m)];
        const double b = xs[0].values[std::size_t((16 - m) % 16)];
        if (m != 8) CHECK(a * a == Catch::Approx(b * b).epsilon(1e-14));
    }

    const GridSpec g2 = make_grid(2, 2.0, 16);
    const auto xy = coordinates(g2);
    CHECK(xy[0].values[0] == -2.0);
    CHECK(xy[1].values[0] == -2.0);
    CHECK(xy[0].values[std::size_t(8) * 16 + 8] == 0.0);
    CHECK(xy[1].values[std::size_t(3) * 16 + 8] == 0.0);
}

TEST_CASE("Parseval identity on random smooth fields") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const GridSpec g = make_grid(1, 6.0, 128);
        const ComplexField u = random_smooth_field(g, seed);
        const double phys = integrate(abs2_field(u));
        const double spec = spectral_mass(u, forward_spectrum(u));
        CHECK(std::abs(phys - spec) <= 1e-12 * phys);
    }
    const GridSpec g2 = make_grid(2, 4.0, 32);
    const ComplexField u2 = random_smooth_field(g2, 7);
    const double phys2 = integrate(abs2_field(u2));
    CHECK(std::abs(phys2 - spectral_mass(u2, forward_spectrum(u2))) <= 1e-12 * phys2);
}

TEST_CASE("spectral differentiation is linear") {
    const GridSpec g = make_grid(1, 6.0, 128);
    const ComplexField u = random_smooth_field(g, 11);
    const ComplexField v = random_smooth_field(g, 12);
    const cplx a(0.7, -0.3), b(-1.2, 0.4);

    ComplexField w = make_complex_field(g);
    for (std::size_t i = 0; i < w.values.size(); ++i)
        w.values[i] = a * u.values[i] + b * v.values[i];

    const SpectralDerivs du = spectral_derivatives(u);
    const SpectralDerivs dv = spectral_derivatives(v);
    const SpectralDerivs dw = spectral_derivatives(w);

    std::vector<cplx> lin(w.values.size()), ging(w.values.size());
    for (std::size_t i = 0; i < w.values.size(); ++i) {
        lin[i] = a * du.laplacian.values[i] + b * dv.laplacian.values[i];
        ging[i] = a * du.gradient[0].values[i] + b * dv.gradient[0].values[i];
    }
    double scale = 0.0;
    for (const cplx& z : dw.laplacian.values) scale = std::max(scale, std::abs(z));
    CHECK(max_abs_diff(dw.laplacian.values, lin) <= 1e-12 * scale);
    CHECK(max_abs_diff(dw.gradient[0].values, ging) <= 1e-12 * std::max(1.0, scale));
}

TEST_CASE("integral of an odd compactly-supported function vanishes") {
    const GridSpec g = make_grid(1, 8.0, 256);
    RealField f = make_real_field(g);
    const auto xs = coordinates(g);
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        const double x = xs[0].values[i];
        f.values[i] = x * std::exp(-x * x);
    }
    CHECK(std::abs(integrate(f)) <= 1e-12);
}

TEST_CASE("fft round trip and spectral mass agree on impulses") {
    std::vector<cplx> a(64, cplx(0.0, 0.0));
    a[3] = cplx(1.0, -2.0);
    std::vector<cplx> b = a;
    fft(b, false);
    for (const cplx& z : b) CHECK(std::abs(z) == Catch::Approx(std::abs(a[3])).epsilon(1e-12));
    fft(b, true);
    CHECK(max_abs_diff(a, b) <= 1e-13);
}
