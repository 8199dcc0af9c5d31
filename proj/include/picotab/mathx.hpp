#pragma once

#include <cmath>
#include <vector>

namespace picotab {

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / 1.4142135623730951); }

// Inverse standard normal CDF, Acklam's rational approximation
// (~1.15e-9 relative accuracy, monotone, no erf dependence).
double inv_normal_cdf(double p);

// Numerically stable in-place softmax over n entries.
void softmax_inplace(double* v, int n);

// log(sum(exp(v))) over n entries, stable.
double log_sum_exp(const double* v, int n);

double mean(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);  // n-1 denominator

// Median and interquartile range with linear-interpolation quartiles
// (the R type-7 convention). Input gets copied and sorted.
double median(std::vector<double> v);
double quantile_linear(std::vector<double> v, double q);

}  // namespace picotab
