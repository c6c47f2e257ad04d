#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace snls {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// w[j] = exp(-2 pi i j / n) for j < n/2. Cached per size, per thread, so
// concurrent transforms never share mutable state.
inline const std::vector<cplx>& twiddles(std::size_t n) {
    thread_local std::unordered_map<std::size_t, std::vector<cplx>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<cplx> w(n / 2);
    const double step = -6.283185307179586476925286766559 / double(n);
    for (std::size_t j = 0; j < n / 2; ++j) w[j] = std::polar(1.0, step * double(j));
    return cache.emplace(n, std::move(w)).first->second;
}

}  // namespace detail

// In-place radix-2 transform. Forward is unnormalized; the inverse carries the
// 1/n factor, so inverse(forward(a)) == a up to rounding.
inline void fft_inplace(cplx* a, std::size_t n, bool inverse) {
    if (!detail::is_pow2(n)) throw std::invalid_argument("fft: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& w = detail::twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t stride = n / len;
        const std::size_t half = len / 2;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t j = 0; j < half; ++j) {
                cplx tw = w[j * stride];
                if (inverse) tw = std::conj(tw);
                const cplx u = a[i + j];
                const cplx v = a[i + j + half] * tw;
                a[i + j] = u + v;
                a[i + j + half] = u - v;
            }
        }
    }
    if (inverse) {
        const double s = 1.0 / double(n);
        for (std::size_t i = 0; i < n; ++i) a[i] *= s;
    }
}

inline void fft(std::vector<cplx>& a, bool inverse) { fft_inplace(a.data(), a.size(), inverse); }

// Row-major d-dimensional transform with n points per axis (d in {1,2}).
inline void fft_nd(std::vector<cplx>& a, int dim, std::size_t n, bool inverse) {
    if (dim == 1) {
        fft_inplace(a.data(), n, inverse);
        return;
    }
    for (std::size_t r = 0; r < n; ++r) fft_inplace(a.data() + r * n, n, inverse);
    std::vector<cplx> col(n);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t r = 0; r < n; ++r) col[r] = a[r * n + c];
        fft_inplace(col.data(), n, inverse);
        for (std::size_t r = 0; r < n; ++r) a[r * n + c] = col[r];
    }
}

}  // namespace snls
