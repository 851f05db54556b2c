#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "photostat/errors.hpp"
#include "photostat/eventstream.hpp"
#include "photostat/rng.hpp"
#include "photostat/threading.hpp"

namespace photostat {

struct PixelRef {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    friend bool operator==(const PixelRef&, const PixelRef&) = default;
};

/// P(n) histogram accumulated over (pixel, frame) samples.
struct PhotonNumberHistogram {
    std::vector<std::uint64_t> counts; // counts[n] = samples with n photons
    std::vector<PixelRef> region;
    std::uint64_t frame_begin = 0;
    std::uint64_t frame_end = 0;

    std::uint64_t total_samples() const {
        std::uint64_t n = 0;
        for (std::uint64_t c : counts) n += c;
        return n;
    }

    void add(std::uint16_t n) {
        if (n > kPnrCountCeiling) throw CountOverLimit(n, 0);
        if (counts.size() <= n) counts.resize(n + 1, 0);
        counts[n] += 1;
    }

    /// Associative, commutative merge of partial histograms.
    void merge(const PhotonNumberHistogram& other) {
        if (other.counts.size() > counts.size()) counts.resize(other.counts.size(), 0);
        for (std::size_t i = 0; i < other.counts.size(); ++i) counts[i] += other.counts[i];
    }

    /// Exact integer first and second moments (sum n*c_n, sum n^2*c_n).
    void integer_moments(std::uint64_t& sum, std::uint64_t& sum_sq) const {
        sum = 0;
        sum_sq = 0;
        for (std::size_t n = 0; n < counts.size(); ++n) {
            sum += counts[n] * n;
            sum_sq += counts[n] * n * n;
        }
    }
};

inline std::vector<PixelRef> region_all(const FrameStack& stack) {
    std::vector<PixelRef> out;
    out.reserve(stack.pixels_per_frame());
    for (std::uint16_t y = 0; y < stack.height; ++y)
        for (std::uint16_t x = 0; x < stack.width; ++x) out.push_back({x, y});
    return out;
}

/// The single pixel with the highest summed count over all frames
/// (ties resolved towards the lowest (y, x)).
inline std::vector<PixelRef> region_brightest(const FrameStack& stack) {
    if (stack.frame_count == 0 || stack.counts.empty())
        throw EmptyHistogram("frame stack is empty");
    std::vector<std::uint64_t> totals(stack.pixels_per_frame(), 0);
    for (std::uint64_t f = 0; f < stack.frame_count; ++f) {
        const std::uint16_t* frame = stack.counts.data() + f * stack.pixels_per_frame();
        for (std::size_t p = 0; p < stack.pixels_per_frame(); ++p) totals[p] += frame[p];
    }
    std::size_t best = 0;
    for (std::size_t p = 1; p < totals.size(); ++p)
        if (totals[p] > totals[best]) best = p;
    return {PixelRef{static_cast<std::uint16_t>(best % stack.width),
                     static_cast<std::uint16_t>(best / stack.width)}};
}

/// One sample per (pixel in region, frame in [frame_begin, frame_end)).
inline PhotonNumberHistogram build_histogram(const FrameStack& stack,
                                             std::span<const PixelRef> region,
                                             std::uint64_t frame_begin, std::uint64_t frame_end,
                                             int threads = 1) {
    if (frame_end > stack.frame_count || frame_begin > frame_end)
        throw ConfigInvalid("frame range [" + std::to_string(frame_begin) + "," +
                            std::to_string(frame_end) + ") outside stack of " +
                            std::to_string(stack.frame_count) + " frames");
    for (const PixelRef& p : region)
        if (p.x >= stack.width || p.y >= stack.height)
            throw ConfigInvalid("region pixel outside frame geometry");

    const std::uint64_t n_frames = frame_end - frame_begin;
    constexpr std::uint64_t kBlock = 4096;
    const std::size_t n_blocks = n_frames == 0 ? 0 : static_cast<std::size_t>((n_frames + kBlock - 1) / kBlock);

    std::vector<PhotonNumberHistogram> partial(n_blocks);
    parallel_blocks(n_blocks, threads, [&](std::size_t b) {
        std::uint64_t lo = frame_begin + b * kBlock;
        std::uint64_t hi = std::min(frame_end, lo + kBlock);
        for (std::uint64_t f = lo; f < hi; ++f)
            for (const PixelRef& p : region) partial[b].add(stack.at(f, p.x, p.y));
    });

    PhotonNumberHistogram hist;
    hist.region.assign(region.begin(), region.end());
    hist.frame_begin = frame_begin;
    hist.frame_end = frame_end;
    for (const auto& p : partial) hist.merge(p);
    return hist;
}

/// Derived figures of merit. By construction Q = E - 1 = <n>(g2 - 1).
struct PhotonNumberStats {
    double mean = 0.0;
    double variance = 0.0;
    double stdev = 0.0;
    double q = 0.0;
    double e = 0.0;
    double g2 = 0.0;
    double g2_uncertainty = 0.0;
    double q_uncertainty = 0.0;
    std::uint64_t samples = 0;
};

/// Figures of merit from first and second moments alone (no uncertainties).
inline PhotonNumberStats stats_from_moments(double mean, double variance) {
    if (mean <= 0.0) throw DegenerateDistribution("mean photon number is zero");
    if (variance < 0.0) throw ConfigInvalid("variance must be non-negative");
    PhotonNumberStats s;
    s.mean = mean;
    s.variance = variance;
    s.stdev = std::sqrt(variance);
    s.q = (variance - mean) / mean;
    s.e = variance / mean;
    s.g2 = 1.0 + (variance - mean) / (mean * mean);
    return s;
}

namespace detail {

struct Moments {
    double mean;
    double variance;
};

/// Population (divisor N) moments from exact integer sums; the identical
/// expression applied to the identical sums is reproducible bit for bit.
inline Moments moments_from_sums(std::uint64_t n_samples, std::uint64_t sum,
                                 std::uint64_t sum_sq) {
    double n = static_cast<double>(n_samples);
    double mean = static_cast<double>(sum) / n;
    double variance = (static_cast<double>(sum_sq) - mean * static_cast<double>(sum)) / n;
    if (variance < 0.0) variance = 0.0; // rounding guard
    return {mean, variance};
}

} // namespace detail

/// Sample statistics of a histogram plus bootstrap uncertainties on g2 and
/// Q (multinomial resampling of the empirical distribution, standard
/// deviation across resamples).
inline PhotonNumberStats compute_stats(const PhotonNumberHistogram& hist,
                                       int bootstrap_resamples = 1000,
                                       std::uint64_t seed = 0x9027c5e7f2b1d04bULL) {
    const std::uint64_t n_samples = hist.total_samples();
    if (n_samples < 2) throw EmptyHistogram("need at least two samples");
    std::uint64_t sum = 0, sum_sq = 0;
    hist.integer_moments(sum, sum_sq);
    if (sum == 0) throw DegenerateDistribution("mean photon number is zero");

    detail::Moments m = detail::moments_from_sums(n_samples, sum, sum_sq);
    PhotonNumberStats stats = stats_from_moments(m.mean, m.variance);
    stats.samples = n_samples;

    if (bootstrap_resamples > 1) {
        std::vector<double> g2s, qs;
        g2s.reserve(static_cast<std::size_t>(bootstrap_resamples));
        qs.reserve(static_cast<std::size_t>(bootstrap_resamples));
        for (int b = 0; b < bootstrap_resamples; ++b) {
            Xoshiro256pp rng = Xoshiro256pp::substream(seed, static_cast<std::uint64_t>(b));
            std::uint64_t remaining = n_samples;
            double remaining_prob = 1.0;
            std::uint64_t rs_sum = 0, rs_sum_sq = 0;
            for (std::size_t n = 0; n < hist.counts.size() && remaining > 0; ++n) {
                double p = static_cast<double>(hist.counts[n]) / static_cast<double>(n_samples);
                if (p <= 0.0) continue;
                double cond = remaining_prob > 0.0 ? std::min(1.0, p / remaining_prob) : 1.0;
                std::uint64_t draw = sample_binomial(rng, remaining, cond);
                remaining -= draw;
                remaining_prob -= p;
                rs_sum += draw * n;
                rs_sum_sq += draw * n * n;
            }
            if (rs_sum == 0) continue; // degenerate resample, cannot form g2
            detail::Moments rm = detail::moments_from_sums(n_samples, rs_sum, rs_sum_sq);
            g2s.push_back(1.0 + (rm.variance - rm.mean) / (rm.mean * rm.mean));
            qs.push_back((rm.variance - rm.mean) / rm.mean);
        }
        auto sample_std = [](const std::vector<double>& xs) {
            if (xs.size() < 2) return std::numeric_limits<double>::infinity();
            double mean = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            double ss = 0.0;
            for (double x : xs) ss += (x - mean) * (x - mean);
            return std::sqrt(ss / static_cast<double>(xs.size() - 1));
        };
        stats.g2_uncertainty = sample_std(g2s);
        stats.q_uncertainty = sample_std(qs);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Photon-number models
// ---------------------------------------------------------------------------

/// Poisson pmf, evaluated in log space for stability at large n.
inline double poisson_pmf(int n, double mean) {
    if (n < 0) return 0.0;
    if (mean <= 0.0) return n == 0 ? 1.0 : 0.0;
    return std::exp(n * std::log(mean) - mean - std::lgamma(n + 1.0));
}

/// Bose-Einstein pmf P(n) = mean^n / (1+mean)^(n+1).
inline double bose_einstein_pmf(int n, double mean) {
    if (n < 0) return 0.0;
    if (mean <= 0.0) return n == 0 ? 1.0 : 0.0;
    return std::exp(n * std::log(mean) - (n + 1) * std::log1p(mean));
}

/// Multimode thermal light with n_modes equal modes: variance
/// mean + mean^2/n_modes. n_modes = 1 recovers Bose-Einstein; the limit
/// n_modes -> infinity is Poissonian.
inline double multimode_variance(double mean, double n_modes) {
    if (n_modes < 1.0) throw ConfigInvalid("mode count must be at least 1");
    return mean + mean * mean / n_modes;
}

/// Mode count implied by measured moments, if any: mean^2/(var - mean).
/// Sub-Poissonian moments (var <= mean) admit no thermal mode count.
inline std::optional<double> multimode_modes_from_moments(double mean, double variance) {
    if (variance <= mean) return std::nullopt;
    return mean * mean / (variance - mean);
}

/// Multimode thermal pmf (negative binomial with real mode count r):
/// P(n) = Gamma(n+r)/(Gamma(r) n!) (mean/(mean+r))^n (r/(mean+r))^r.
inline double multimode_thermal_pmf(int n, double mean, double n_modes) {
    if (n < 0) return 0.0;
    if (mean <= 0.0) return n == 0 ? 1.0 : 0.0;
    double r = n_modes;
    double log_p = std::lgamma(n + r) - std::lgamma(r) - std::lgamma(n + 1.0) +
                   n * (std::log(mean) - std::log(mean + r)) +
                   r * (std::log(r) - std::log(mean + r));
    return std::exp(log_p);
}

enum class PhotonModel { poisson, bose_einstein, multimode_thermal };

struct ModelFit {
    PhotonModel model = PhotonModel::poisson;
    double mean = 0.0;
    double n_modes = 0.0; // multimode fit only
    double log_likelihood = 0.0;
    double chi_square = 0.0;
    int dof = 0;
    double p_value = 0.0;
    bool at_boundary = false; // multimode optimum pinned at the search edge
};

namespace detail {

/// Regularized upper incomplete gamma Q(a, x), series/continued-fraction
/// split at x = a + 1.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    if (x == 0.0) return 1.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
        }
        double p = sum * std::exp(-x + a * std::log(x) - gln);
        return 1.0 - p;
    }
    double b = x + 1.0 - a;
    double c = 1e300;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::fabs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

inline double chi_square_p_value(double chi2, int dof) {
    if (dof <= 0) return std::numeric_limits<double>::quiet_NaN();
    return gamma_q(dof / 2.0, chi2 / 2.0);
}

template <typename Pmf>
double histogram_log_likelihood(const PhotonNumberHistogram& hist, Pmf&& pmf) {
    double ll = 0.0;
    for (std::size_t n = 0; n < hist.counts.size(); ++n) {
        if (hist.counts[n] == 0) continue;
        double p = pmf(static_cast<int>(n));
        if (p <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += static_cast<double>(hist.counts[n]) * std::log(p);
    }
    return ll;
}

/// Pearson chi-square with adjacent bins pooled until each group's
/// expectation reaches 5; the remainder tail is folded into the last group.
template <typename Pmf>
void pooled_chi_square(const PhotonNumberHistogram& hist, Pmf&& pmf, int n_params,
                       double& chi2, int& dof, double& p_value) {
    const double n_total = static_cast<double>(hist.total_samples());
    const int n_max = static_cast<int>(hist.counts.size()) - 1;

    std::vector<double> group_expected;
    std::vector<double> group_observed;
    double exp_acc = 0.0, obs_acc = 0.0;
    double cdf = 0.0;
    for (int n = 0; n <= n_max; ++n) {
        double p = pmf(n);
        cdf += p;
        exp_acc += n_total * p;
        obs_acc += static_cast<double>(hist.counts[static_cast<std::size_t>(n)]);
        if (exp_acc >= 5.0) {
            group_expected.push_back(exp_acc);
            group_observed.push_back(obs_acc);
            exp_acc = 0.0;
            obs_acc = 0.0;
        }
    }
    // Mass beyond the observed range plus any unfinished group.
    exp_acc += n_total * std::max(0.0, 1.0 - cdf);
    if (exp_acc > 0.0 || obs_acc > 0.0) {
        if (!group_expected.empty() && exp_acc < 5.0) {
            group_expected.back() += exp_acc;
            group_observed.back() += obs_acc;
        } else {
            group_expected.push_back(exp_acc);
            group_observed.push_back(obs_acc);
        }
    }

    chi2 = 0.0;
    for (std::size_t g = 0; g < group_expected.size(); ++g) {
        if (group_expected[g] <= 0.0) continue;
        double d = group_observed[g] - group_expected[g];
        chi2 += d * d / group_expected[g];
    }
    dof = static_cast<int>(group_expected.size()) - 1 - n_params;
    p_value = chi_square_p_value(chi2, dof);
}

} // namespace detail

/// Maximum-likelihood fit of a photon-number model. Poisson and
/// Bose-Einstein means have the closed-form MLE (the sample mean); the
/// multimode-thermal mode count is found by golden-section search of the
/// profile likelihood over n_modes in [1, 1e6] to 1e-6.
inline ModelFit fit_model(const PhotonNumberHistogram& hist, PhotonModel model) {
    const std::uint64_t n_samples = hist.total_samples();
    if (n_samples == 0) throw EmptyHistogram("cannot fit an empty histogram");
    std::uint64_t sum = 0, sum_sq = 0;
    hist.integer_moments(sum, sum_sq);
    detail::Moments m = detail::moments_from_sums(n_samples, sum, sum_sq);

    ModelFit fit;
    fit.model = model;
    fit.mean = m.mean;

    int n_params = 1;
    switch (model) {
    case PhotonModel::poisson:
        fit.log_likelihood = detail::histogram_log_likelihood(
            hist, [&](int n) { return poisson_pmf(n, fit.mean); });
        break;
    case PhotonModel::bose_einstein:
        fit.log_likelihood = detail::histogram_log_likelihood(
            hist, [&](int n) { return bose_einstein_pmf(n, fit.mean); });
        break;
    case PhotonModel::multimode_thermal: {
        n_params = 2;
        auto ll = [&](double r) {
            return detail::histogram_log_likelihood(
                hist, [&](int n) { return multimode_thermal_pmf(n, fit.mean, r); });
        };
        constexpr double kGolden = 0.6180339887498949;
        double lo = 1.0, hi = 1e6;
        double x1 = hi - kGolden * (hi - lo);
        double x2 = lo + kGolden * (hi - lo);
        double f1 = ll(x1), f2 = ll(x2);
        while (hi - lo > 1e-6) {
            if (f1 < f2) {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + kGolden * (hi - lo);
                f2 = ll(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - kGolden * (hi - lo);
                f1 = ll(x1);
            }
        }
        fit.n_modes = 0.5 * (lo + hi);
        fit.log_likelihood = ll(fit.n_modes);
        // Pinned at an edge of the search range, or no mode count can
        // reproduce the moments at all (sub-Poissonian data).
        fit.at_boundary = fit.n_modes < 1.0 + 1e-3 || fit.n_modes > 1e6 * 0.99 ||
                          !multimode_modes_from_moments(m.mean, m.variance).has_value();
        break;
    }
    }

    auto pmf = [&](int n) {
        switch (model) {
        case PhotonModel::poisson: return poisson_pmf(n, fit.mean);
        case PhotonModel::bose_einstein: return bose_einstein_pmf(n, fit.mean);
        case PhotonModel::multimode_thermal: return multimode_thermal_pmf(n, fit.mean, fit.n_modes);
        }
        return 0.0;
    };
    detail::pooled_chi_square(hist, pmf, n_params, fit.chi_square, fit.dof, fit.p_value);
    return fit;
}

enum class Classification { sub_poissonian, poissonian, super_poissonian };

struct ClassificationResult {
    Classification verdict = Classification::poissonian;
    double significance = 0.0; // |Q| / sigma_Q
};

inline const char* to_string(Classification c) {
    switch (c) {
    case Classification::sub_poissonian: return "sub_poissonian";
    case Classification::poissonian: return "poissonian";
    case Classification::super_poissonian: return "super_poissonian";
    }
    return "unknown";
}

/// Verdict on the sign of Mandel Q, requiring at least 3 bootstrap sigma
/// to call a distribution non-Poissonian.
inline ClassificationResult classify(const PhotonNumberStats& stats) {
    ClassificationResult res;
    if (stats.q_uncertainty > 0.0 && std::isfinite(stats.q_uncertainty))
        res.significance = std::fabs(stats.q) / stats.q_uncertainty;
    else if (stats.q != 0.0)
        res.significance = std::numeric_limits<double>::infinity();
    if (res.significance >= 3.0)
        res.verdict = stats.q < 0.0 ? Classification::sub_poissonian
                                    : Classification::super_poissonian;
    return res;
}

} // namespace photostat
