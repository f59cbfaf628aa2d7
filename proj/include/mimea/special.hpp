#pragma once

namespace mimea {

inline constexpr double kEulerMascheroni = 0.57721566490153286060651209008;

// ln Gamma(x) for x > 0 via the Lanczos approximation (g = 7, 9 coefficients).
// Relative accuracy better than 1e-10 across (0, 1e6).
double log_gamma(double x);

// psi(x) = d/dx ln Gamma(x) for x > 0. Recurrence lift to x >= 10 followed by
// the asymptotic series; accurate to about 1e-12.
double digamma(double x);

// psi'(x) for x > 0, same lift-plus-series scheme. Needed to differentiate
// through digamma when fusion weights stay on the tape.
double trigamma(double x);

// ln B(alpha, beta) = lnG(a) + lnG(b) - lnG(a+b), alpha, beta > 0.
double log_beta(double alpha, double beta);

// Numerically stable ln(1 + e^x).
double softplus(double x);

}  // namespace mimea
