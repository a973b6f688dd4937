#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace kvq {

// Unnormalized forward transform X[k] = sum_t x[t] * exp(-2*pi*i*k*t/N).
// Power-of-two lengths take the radix-2 path; other lengths fall back to
// the direct O(N^2) sum.
std::vector<std::complex<double>> dft_forward(const std::vector<double>& x);

// Inverse with the 1/N factor; returns the real part of the time samples.
std::vector<double> dft_inverse_real(const std::vector<std::complex<double>>& spectrum);

bool is_power_of_two(std::size_t n);

}  // namespace kvq
