#include "kvq/fft.hpp"

#include <cmath>
#include <numbers>

#include "kvq/error.hpp"

namespace kvq {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

// In-place iterative radix-2 decimation-in-time. sign = -1 forward, +1 inverse.
void fft_radix2(std::vector<std::complex<double>>& a, int sign) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double angle = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wstep(std::cos(angle), std::sin(angle));
        for (std::size_t start = 0; start < n; start += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[start + k];
                std::complex<double> v = a[start + k + len / 2] * w;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
                w *= wstep;
            }
        }
    }
}

std::vector<std::complex<double>> dft_direct(const std::vector<std::complex<double>>& x,
                                             int sign) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) *
                                 static_cast<double>(t) / static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
        }
        out[k] = acc;
    }
    return out;
}

}  // namespace

std::vector<std::complex<double>> dft_forward(const std::vector<double>& x) {
    if (x.empty()) raise(ErrorKind::length, "transform length must be >= 1");
    std::vector<std::complex<double>> a(x.begin(), x.end());
    if (is_power_of_two(a.size())) {
        fft_radix2(a, -1);
        return a;
    }
    return dft_direct(a, -1);
}

std::vector<double> dft_inverse_real(const std::vector<std::complex<double>>& spectrum) {
    if (spectrum.empty()) raise(ErrorKind::length, "transform length must be >= 1");
    std::vector<std::complex<double>> a = spectrum;
    if (is_power_of_two(a.size())) {
        fft_radix2(a, +1);
    } else {
        a = dft_direct(a, +1);
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i].real() / static_cast<double>(a.size());
    return out;
}

}  // namespace kvq
