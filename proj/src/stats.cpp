#include "branchsim/stats.hpp"

#include "branchsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace branchsim {

double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

double laplace_cdf(double x, double b) {
  if (x < 0.0) return 0.5 * std::exp(x / b);
  return 1.0 - 0.5 * std::exp(-x / b);
}

double exponential_cdf(double x, double rate) {
  return x <= 0.0 ? 0.0 : -std::expm1(-rate * x);
}

double kolmogorov_q(double d) {
  if (d <= 0.0) return 1.0;
  if (d < 1.0) {
    // The alternating series cancels catastrophically as d -> 0; the dual
    // theta form converges in a few terms there.
    double sum = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double m = 2.0 * k - 1.0;
      const double term = std::exp(-m * m * M_PI * M_PI / (8.0 * d * d));
      sum += term;
      if (term < 1e-18) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * M_PI) / d * sum, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * d * d);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

namespace {

// Invert kolmogorov_q by bisection; Q is strictly decreasing on (0, inf).
double kolmogorov_quantile(double alpha) {
  double lo = 1e-3, hi = 4.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (kolmogorov_q(mid) > alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double ks_critical_value(double alpha, std::size_t n) {
  return kolmogorov_quantile(alpha) / std::sqrt(static_cast<double>(n));
}

double ks_critical_value_two_sample(double alpha, std::size_t n, std::size_t m) {
  double nm = static_cast<double>(n) * static_cast<double>(m);
  return kolmogorov_quantile(alpha) * std::sqrt((n + m) / nm);
}

double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf,
                    const std::function<double(double)>& cdf_left) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  // Runs of tied values are compared as one step: the empirical CDF just
  // before the run against the CDF's left limit, and just after the run
  // against its value. For a continuous CDF this reduces to the classical
  // statistic; for a CDF with an atom it avoids charging the jump itself.
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double f = cdf(sorted[i]);
    const double fl = cdf_left(sorted[i]);
    d = std::max(d, std::abs(fl - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(j) / n - f));
    i = j;
  }
  return d;
}

double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf) {
  return ks_statistic(samples, cdf, cdf);
}

double ks_statistic_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic_two_sample: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < sa.size() && j < sb.size()) {
    double v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] <= v) ++i;
    while (j < sb.size() && sb[j] <= v) ++j;
    double fa = static_cast<double>(i) / sa.size();
    double fb = static_cast<double>(j) / sb.size();
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

MeanSe batch_mean_se(std::span<const double> values, int batches) {
  return batch_statistic_se(
      values,
      [](std::span<const double> chunk) {
        double acc = 0.0;
        for (double v : chunk) acc += v;
        return acc / static_cast<double>(chunk.size());
      },
      batches);
}

MeanSe batch_statistic_se(std::span<const double> values,
                          const std::function<double(std::span<const double>)>& stat,
                          int batches) {
  if (values.empty()) throw std::invalid_argument("batch_statistic_se: empty sample");
  int usable = std::min<std::size_t>(batches, values.size());
  MeanSe out;
  out.batches = usable;
  std::vector<double> per_batch(usable);
  // Contiguous batches in replica order: replicas are independent, so any
  // fixed partition is valid, and this one is deterministic.
  std::size_t base = values.size() / usable, extra = values.size() % usable;
  std::size_t offset = 0;
  for (int b = 0; b < usable; ++b) {
    std::size_t len = base + (static_cast<std::size_t>(b) < extra ? 1 : 0);
    per_batch[b] = stat(values.subspan(offset, len));
    offset += len;
  }
  double mean = 0.0;
  for (double v : per_batch) mean += v;
  mean /= usable;
  double var = 0.0;
  for (double v : per_batch) var += (v - mean) * (v - mean);
  out.mean = stat(values);  // full-sample statistic; batches only provide the SE
  out.se = usable > 1 ? std::sqrt(var / (usable * (usable - 1.0))) : 0.0;
  return out;
}

LineFit fit_line(std::span<const double> t, std::span<const double> y) {
  if (t.size() != y.size() || t.size() < 2) throw std::invalid_argument("fit_line: need >= 2 points");
  const double n = static_cast<double>(t.size());
  double mt = 0.0, my = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mt += t[i];
    my += y[i];
  }
  mt /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxx += (t[i] - mt) * (t[i] - mt);
    sxy += (t[i] - mt) * (y[i] - my);
  }
  if (sxx <= 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mt;
  double rss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double r = y[i] - fit.intercept - fit.slope * t[i];
    rss += r * r;
  }
  fit.residual_rms = std::sqrt(rss / n);
  return fit;
}

SlopeCi bootstrap_slope_ci(std::span<const double> t, std::span<const double> y, double level,
                           int resamples, std::uint64_t seed) {
  LineFit base = fit_line(t, y);
  std::vector<double> residuals(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    residuals[i] = y[i] - base.intercept - base.slope * t[i];
  }
  Rng rng(seed);
  std::vector<double> slopes(resamples);
  std::vector<double> yb(t.size());
  for (int r = 0; r < resamples; ++r) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::size_t pick = static_cast<std::size_t>(rng.next_double() * t.size());
      if (pick >= t.size()) pick = t.size() - 1;
      yb[i] = base.intercept + base.slope * t[i] + residuals[pick];
    }
    slopes[r] = fit_line(t, yb).slope;
  }
  std::sort(slopes.begin(), slopes.end());
  double tail = 0.5 * (1.0 - level);
  auto quantile = [&](double q) {
    double idx = q * (resamples - 1);
    std::size_t lo = static_cast<std::size_t>(idx);
    std::size_t hi = std::min<std::size_t>(lo + 1, resamples - 1);
    double frac = idx - lo;
    return slopes[lo] * (1.0 - frac) + slopes[hi] * frac;
  };
  return {quantile(tail), quantile(1.0 - tail)};
}

double aic_least_squares(double rss, int n, int k) {
  // Gaussian log-likelihood profile: n*log(rss/n) + 2k, constants dropped.
  double safe = std::max(rss, 1e-300);
  return n * std::log(safe / n) + 2.0 * k;
}

}  // namespace branchsim
