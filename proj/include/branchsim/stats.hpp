#pragma once

// Statistical utilities shared by the verification estimators: distribution
// functions, Kolmogorov-Smirnov machinery, batch-mean standard errors, and
// least-squares slope fits with bootstrap confidence intervals.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace branchsim {

double normal_cdf(double x);
// Centered Laplace CDF with scale b (density exp(-|x|/b)/(2b)).
double laplace_cdf(double x, double b);
double exponential_cdf(double x, double rate = 1.0);

// Survival function of the Kolmogorov distribution, Q(d) = P(K > d).
double kolmogorov_q(double d);
// Asymptotic one-sample critical value at level alpha for n samples:
// the KS statistic exceeds this with probability alpha under the null.
double ks_critical_value(double alpha, std::size_t n);
double ks_critical_value_two_sample(double alpha, std::size_t n, std::size_t m);

// One-sample KS statistic against an arbitrary CDF. Samples need not be
// sorted; a sorted copy is made internally. The three-argument overload
// supports CDFs with atoms: `cdf_left` evaluates the left limit, so samples
// sitting exactly on a jump are not charged for the jump mass.
double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf);
double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf,
                    const std::function<double(double)>& cdf_left);
double ks_statistic_two_sample(std::span<const double> a, std::span<const double> b);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  int batches = 0;
};
// Standard error of the sample mean via batch means (default 32 batches).
MeanSe batch_mean_se(std::span<const double> values, int batches = 32);

// Batch-mean SE for a derived statistic: `stat` maps a batch of values to a
// number; the returned SE is the spread of the per-batch statistics scaled
// by 1/sqrt(batches). Used for variance-like estimators.
MeanSe batch_statistic_se(std::span<const double> values,
                          const std::function<double(std::span<const double>)>& stat,
                          int batches = 32);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual_rms = 0.0;
};
LineFit fit_line(std::span<const double> t, std::span<const double> y);

struct SlopeCi {
  double lo = 0.0;
  double hi = 0.0;
};
// Nonparametric bootstrap over (t, y) residuals for the slope of y ~ a + b t.
SlopeCi bootstrap_slope_ci(std::span<const double> t, std::span<const double> y, double level,
                           int resamples, std::uint64_t seed);

// Akaike information criterion for a least-squares fit with k parameters,
// from the residual sum of squares over n points.
double aic_least_squares(double rss, int n, int k);

}  // namespace branchsim
