#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace spectral_perc {

/// Result of a Monte Carlo estimator.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::uint64_t n = 0;
    std::uint64_t seed = 0;
    std::int64_t wall_ms = 0;
};

/// Count / sum / sum-of-squares monoid. Merging is associative and
/// commutative, and exact for integer-valued samples.
struct MeanAccumulator {
    std::uint64_t count = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double x) noexcept
    {
        ++count;
        sum += x;
        sum_sq += x * x;
    }

    void merge(const MeanAccumulator& o) noexcept
    {
        count += o.count;
        sum += o.sum;
        sum_sq += o.sum_sq;
    }

    double mean() const noexcept { return count ? sum / static_cast<double>(count) : 0.0; }

    double variance() const noexcept
    {
        if (count < 2) return 0.0;
        const double n = static_cast<double>(count);
        const double m = sum / n;
        return std::max(0.0, (sum_sq - n * m * m) / (n - 1.0));
    }

    double std_error() const noexcept
    {
        return count ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
    }

    Estimate estimate(std::uint64_t seed = 0) const
    {
        return Estimate{mean(), std_error(), count, seed, 0};
    }
};

/// Success counter; standard error is sqrt(p(1-p)/n).
struct BernoulliAccumulator {
    std::uint64_t count = 0;
    std::uint64_t hits = 0;

    void add(bool hit) noexcept
    {
        ++count;
        hits += hit ? 1U : 0U;
    }

    void merge(const BernoulliAccumulator& o) noexcept
    {
        count += o.count;
        hits += o.hits;
    }

    double mean() const noexcept
    {
        return count ? static_cast<double>(hits) / static_cast<double>(count) : 0.0;
    }

    double std_error() const noexcept
    {
        if (count == 0) return 0.0;
        const double p = mean();
        return std::sqrt(p * (1.0 - p) / static_cast<double>(count));
    }

    Estimate estimate(std::uint64_t seed = 0) const
    {
        return Estimate{mean(), std_error(), count, seed, 0};
    }
};

/// Joint first and second moments of K variables observed together,
/// for delta-method error propagation of ratios on shared replicas.
template <std::size_t K>
struct CovarianceAccumulator {
    std::uint64_t count = 0;
    std::array<double, K> sum{};
    std::array<std::array<double, K>, K> cross{};

    void add(const std::array<double, K>& x) noexcept
    {
        ++count;
        for (std::size_t i = 0; i < K; ++i) {
            sum[i] += x[i];
            for (std::size_t j = 0; j < K; ++j) cross[i][j] += x[i] * x[j];
        }
    }

    void merge(const CovarianceAccumulator& o) noexcept
    {
        count += o.count;
        for (std::size_t i = 0; i < K; ++i) {
            sum[i] += o.sum[i];
            for (std::size_t j = 0; j < K; ++j) cross[i][j] += o.cross[i][j];
        }
    }

    double mean(std::size_t i) const noexcept
    {
        return count ? sum[i] / static_cast<double>(count) : 0.0;
    }

    // Covariance of the sample means (not of single observations).
    double mean_covariance(std::size_t i, std::size_t j) const noexcept
    {
        if (count < 2) return 0.0;
        const double n = static_cast<double>(count);
        const double c = (cross[i][j] - n * mean(i) * mean(j)) / (n - 1.0);
        return c / n;
    }
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Wilson score interval at z standard deviations.
inline Interval wilson_interval(std::uint64_t hits, std::uint64_t n, double z)
{
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(hits) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double centre = (p + z2 / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// True when |a - b| is within k combined standard errors (plus a
/// floating-point floor so zero-variance estimators compare exactly).
inline bool within_sigma(double a, double sa, double b, double sb, double k)
{
    const double s = std::sqrt(sa * sa + sb * sb);
    return std::abs(a - b) <= k * s + 1e-12 * std::max(1.0, std::abs(b));
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    std::size_t points = 0;
};

/// Least-squares line through (log x, log y). When `y_stderr` is non-empty
/// the points are weighted by 1/var(log y) with var(log y) ~ (se/y)^2.
inline SlopeFit fit_loglog(std::span<const double> x, std::span<const double> y,
                           std::span<const double> y_stderr = {})
{
    if (x.size() != y.size())
        throw std::invalid_argument("fit_loglog: x and y differ in length");
    if (x.size() < 3)
        throw std::invalid_argument("fit_loglog: need at least 3 points");
    const bool weighted = !y_stderr.empty();
    if (weighted && y_stderr.size() != y.size())
        throw std::invalid_argument("fit_loglog: stderr length mismatch");

    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::vector<double> lx(x.size()), ly(x.size()), w(x.size(), 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0) || !(y[i] > 0))
            throw std::invalid_argument("fit_loglog: non-positive value");
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
        if (weighted) {
            const double rel = y_stderr[i] / y[i];
            w[i] = rel > 0 ? 1.0 / (rel * rel) : 1e12;
        }
        sw += w[i];
        sx += w[i] * lx[i];
        sy += w[i] * ly[i];
        sxx += w[i] * lx[i] * lx[i];
        sxy += w[i] * lx[i] * ly[i];
    }
    const double det = sw * sxx - sx * sx;
    if (det <= 0) throw std::invalid_argument("fit_loglog: degenerate abscissae");

    SlopeFit fit;
    fit.points = x.size();
    fit.slope = (sw * sxy - sx * sy) / det;
    fit.intercept = (sy - fit.slope * sx) / sw;
    if (weighted) {
        fit.slope_stderr = std::sqrt(sw / det);
    } else {
        double rss = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = ly[i] - fit.intercept - fit.slope * lx[i];
            rss += r * r;
        }
        const double s2 = rss / static_cast<double>(x.size() - 2);
        fit.slope_stderr = std::sqrt(s2 * sw / det);
    }
    return fit;
}

} // namespace spectral_perc
