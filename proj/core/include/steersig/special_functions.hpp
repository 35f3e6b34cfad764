#pragma once

namespace steersig {

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
// Requires a, b > 0 and x in [0, 1]; absolute error below 1e-10.
double regularized_incomplete_beta(double a, double b, double x);

// CDF of the F distribution with (d1, d2) degrees of freedom.
double f_cdf(double f, double d1, double d2);

// Inverse of f_cdf by bisection on the incomplete beta; p in (0, 1).
double f_quantile(double p, double d1, double d2);

}  // namespace steersig
