#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "photostat/correlate.hpp"
#include "photostat/errors.hpp"
#include "photostat/eventstream.hpp"
#include "photostat/rng.hpp"
#include "photostat/threading.hpp"

namespace photostat {

enum class SourceKind {
    coherent,            // Poisson(mean) per pulse
    thermal_single_mode, // Bose-Einstein(mean)
    thermal_multimode,   // sum of n_modes Bose-Einstein(mean/n_modes)
    fock_attenuated,     // Binomial(fock_n, fock_eta)
    sbsl_like            // thinned-Fock mixture hitting (mean, q_target)
};

inline const char* to_string(SourceKind k) {
    switch (k) {
    case SourceKind::coherent: return "coherent";
    case SourceKind::thermal_single_mode: return "thermal_single_mode";
    case SourceKind::thermal_multimode: return "thermal_multimode";
    case SourceKind::fock_attenuated: return "fock_attenuated";
    case SourceKind::sbsl_like: return "sbsl_like";
    }
    return "unknown";
}

/// Pulsed light source with a per-pulse photon-number law.
struct SourceModel {
    SourceKind kind = SourceKind::coherent;
    double mean = 3.5;        // photons per pulse (coherent/thermal/sbsl)
    double n_modes = 1.0;     // thermal_multimode
    int fock_n = 1;           // fock_attenuated
    double fock_eta = 1.0;    // fock_attenuated
    double q_target = -0.45;  // sbsl_like Mandel Q
    double pulse_width_ps = 150.0;
    double repetition_rate_hz = 28060.0;

    /// Pulse period rounded to integer picoseconds; all simulated pulse
    /// times are exact multiples of this.
    std::int64_t pulse_period_ps() const {
        return static_cast<std::int64_t>(std::llround(1e12 / repetition_rate_hz));
    }

    /// Repetition rate actually realised on the integer-ps clock.
    double effective_rate_hz() const { return 1e12 / static_cast<double>(pulse_period_ps()); }

    void validate() const {
        if (repetition_rate_hz <= 0) throw ConfigInvalid("repetition rate must be positive");
        if (pulse_width_ps < 40.0 || pulse_width_ps > 350.0)
            throw ConfigInvalid("pulse width must lie in [40, 350] ps");
        switch (kind) {
        case SourceKind::coherent:
        case SourceKind::thermal_single_mode:
            if (mean <= 0) throw ConfigInvalid("mean photons per pulse must be positive");
            break;
        case SourceKind::thermal_multimode:
            if (mean <= 0) throw ConfigInvalid("mean photons per pulse must be positive");
            if (n_modes < 1.0 || std::llround(n_modes) != n_modes)
                throw ConfigInvalid("simulated mode count must be a positive integer");
            break;
        case SourceKind::fock_attenuated:
            if (fock_n < 1) throw ConfigInvalid("photon number must be at least 1");
            if (fock_eta <= 0.0 || fock_eta > 1.0)
                throw ConfigInvalid("attenuation must lie in (0, 1]");
            break;
        case SourceKind::sbsl_like:
            if (mean <= 0) throw ConfigInvalid("mean photons per pulse must be positive");
            if (q_target >= 0.0) throw ConfigInvalid("sbsl_like targets sub-Poissonian Q < 0");
            break;
        }
    }
};

/// Parameters of the thinned-Fock mixture behind sbsl_like: the pulse
/// photon number before loss is n_low or n_low+1 (probability
/// upper_weight), each photon surviving with probability eta.
struct ThinnedFockParams {
    int n_low = 0;
    double upper_weight = 0.0;
    double eta = 0.0;
};

/// Solve (mean, Q) for the thinned-Fock mixture. With E[N] = n_low + w,
///   mean = eta E[N],  Q = eta (w(1-w)/E[N] - 1),
/// so Q is continuous and increasing in w between -mean/n_low and
/// -mean/(n_low+1); n_low = floor(mean/(-Q)) brackets any feasible target.
inline ThinnedFockParams solve_thinned_fock(double mean, double q) {
    if (mean <= 0.0) throw ConfigInvalid("mean must be positive");
    if (q >= 0.0 || q <= -1.0) throw ConfigInvalid("target Q must lie in (-1, 0)");
    double ratio = mean / -q;
    ThinnedFockParams params;
    params.n_low = static_cast<int>(std::floor(ratio));
    if (params.n_low >= 1 && std::floor(ratio) == ratio) {
        params.upper_weight = 0.0;
        params.eta = -q;
        return params;
    }
    if (params.n_low < 1) {
        // mean < -q: the support is {0, 1}, which is Bernoulli(mean) with
        // Q = -mean regardless of how the loss splits.
        if (std::fabs(q + mean) > 1e-9)
            throw ConfigInvalid("for mean below 1 the only reachable Q is -mean");
        params.n_low = 0;
        params.upper_weight = mean;
        params.eta = 1.0;
        return params;
    }
    auto q_of = [&](double w) {
        double en = params.n_low + w;
        double eta = mean / en;
        return eta * (w * (1.0 - w) / en - 1.0);
    };
    double lo = 0.0;
    double hi = 1.0;
    double q_lo = q_of(lo);
    double q_hi = q_of(hi);
    if (q < std::min(q_lo, q_hi) - 1e-9 || q > std::max(q_lo, q_hi) + 1e-9)
        throw ConfigInvalid("no thinned-Fock distribution reaches mean " +
                            std::to_string(mean) + " with Q " + std::to_string(q));
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (q_of(mid) < q)
            lo = mid;
        else
            hi = mid;
    }
    params.upper_weight = 0.5 * (lo + hi);
    params.eta = mean / (params.n_low + params.upper_weight);
    if (params.eta > 1.0)
        throw ConfigInvalid("no thinned-Fock distribution reaches mean " +
                            std::to_string(mean) + " with Q " + std::to_string(q));
    return params;
}

/// Per-pulse photon-number sampler with the sbsl_like solution cached.
class PulseSampler {
  public:
    explicit PulseSampler(const SourceModel& model) : model_(model) {
        model_.validate();
        if (model_.kind == SourceKind::sbsl_like)
            fock_ = solve_thinned_fock(model_.mean, model_.q_target);
    }

    std::uint32_t operator()(Xoshiro256pp& rng) const {
        switch (model_.kind) {
        case SourceKind::coherent:
            return static_cast<std::uint32_t>(sample_poisson(rng, model_.mean));
        case SourceKind::thermal_single_mode:
            return static_cast<std::uint32_t>(
                std::min<std::uint64_t>(sample_bose_einstein(rng, model_.mean), 1u << 24));
        case SourceKind::thermal_multimode: {
            int modes = static_cast<int>(std::llround(model_.n_modes));
            std::uint64_t total = 0;
            for (int m = 0; m < modes; ++m)
                total += sample_bose_einstein(rng, model_.mean / modes);
            return static_cast<std::uint32_t>(std::min<std::uint64_t>(total, 1u << 24));
        }
        case SourceKind::fock_attenuated:
            return static_cast<std::uint32_t>(
                sample_binomial(rng, static_cast<std::uint64_t>(model_.fock_n), model_.fock_eta));
        case SourceKind::sbsl_like: {
            std::uint64_t n = static_cast<std::uint64_t>(fock_.n_low);
            if (rng.uniform01() < fock_.upper_weight) ++n;
            return static_cast<std::uint32_t>(sample_binomial(rng, n, fock_.eta));
        }
        }
        return 0;
    }

  private:
    SourceModel model_;
    ThinnedFockParams fock_;
};

/// Draw the photon number of one pulse.
inline std::uint32_t sample_pulse_photon_count(const SourceModel& model, Xoshiro256pp& rng) {
    return PulseSampler(model)(rng);
}

inline double analytic_mean(const SourceModel& model) {
    switch (model.kind) {
    case SourceKind::coherent:
    case SourceKind::thermal_single_mode:
    case SourceKind::thermal_multimode:
    case SourceKind::sbsl_like: return model.mean;
    case SourceKind::fock_attenuated: return model.fock_n * model.fock_eta;
    }
    return 0.0;
}

inline double analytic_variance(const SourceModel& model) {
    switch (model.kind) {
    case SourceKind::coherent: return model.mean;
    case SourceKind::thermal_single_mode: return model.mean + model.mean * model.mean;
    case SourceKind::thermal_multimode:
        return model.mean + model.mean * model.mean / model.n_modes;
    case SourceKind::fock_attenuated:
        return model.fock_n * model.fock_eta * (1.0 - model.fock_eta);
    case SourceKind::sbsl_like: return model.mean * (1.0 + model.q_target);
    }
    return 0.0;
}

/// Expected g2 of the per-pulse photon number: 1 + (var - mean)/mean^2.
inline double analytic_g2(const SourceModel& model) {
    double mean = analytic_mean(model);
    double var = analytic_variance(model);
    return 1.0 + (var - mean) / (mean * mean);
}

/// Detector chain for the time-tagging camera: per-channel efficiency,
/// dark counts, intensifier flash geometry, ToT response and timing.
struct DetectorModel {
    std::vector<double> channel_efficiency; // collection x QE, one per ROI
    double dark_rate_hz_per_px = 0.0;
    double jitter_fwhm_ps = 7000.0;
    double psf_sigma_px = 0.8;   // flash intensity falloff
    double spot_sigma_px = 2.0;  // photon scatter around the ROI centre
    double tot_peak = 48.0;      // ToT ticks deposited at the flash centre
    double tot_log_sigma = 0.3;  // lognormal flash amplitude spread
    std::uint16_t tot_threshold = 4;
    double walk_scale_ps = 60000.0; // arrival delay = walk_scale / tot
    std::uint32_t tick_ps = 1562;
    std::uint16_t sensor_width = 256;
    std::uint16_t sensor_height = 256;

    void validate(std::size_t n_channels) const {
        if (channel_efficiency.size() != n_channels)
            throw ConfigInvalid("detector lists " + std::to_string(channel_efficiency.size()) +
                                " channel efficiencies for " + std::to_string(n_channels) +
                                " ROIs");
        double total = 0.0;
        for (double e : channel_efficiency) {
            if (e < 0.0 || e > 1.0) throw ConfigInvalid("channel efficiency must lie in [0, 1]");
            total += e;
        }
        if (total > 1.0) throw ConfigInvalid("channel efficiencies sum above 1");
        if (dark_rate_hz_per_px < 0.0) throw ConfigInvalid("dark rate must be non-negative");
        if (jitter_fwhm_ps < 0.0) throw ConfigInvalid("jitter must be non-negative");
        if (tick_ps == 0) throw ConfigInvalid("tick duration must be positive");
        if (sensor_width == 0 || sensor_height == 0)
            throw ConfigInvalid("sensor dimensions must be at least 1x1");
    }
};

/// ToT-dependent arrival delay: weak (low-ToT) hits cross the threshold
/// late, intense hits nearly on time.
inline double time_walk_delay_ps(const DetectorModel& det, double tot) {
    return det.walk_scale_ps / std::max(1.0, tot);
}

struct TimetagRun {
    StreamHeader header;
    std::vector<RawHit> hits;
    std::uint64_t pulse_count = 0;
    std::uint64_t photon_count = 0; // detected photons (flashes)
    std::uint64_t dark_count = 0;
};

namespace detail {

constexpr double kFwhmToSigma = 1.0 / 2.3548200450309493; // Gaussian FWHM -> sigma

struct FlashBuffer {
    std::vector<RawHit> hits;
    std::uint64_t photons = 0;
    std::uint64_t darks = 0;
};

/// Emit the pixel hits of one intensifier flash centred at (fx, fy).
inline void emit_flash(const DetectorModel& det, double fx, double fy, double flash_time_ps,
                       Xoshiro256pp& rng, std::vector<RawHit>& out) {
    double amplitude = det.tot_peak * std::exp(det.tot_log_sigma * sample_normal(rng));
    int cx = static_cast<int>(std::lround(fx));
    int cy = static_cast<int>(std::lround(fy));
    int reach = std::max(1, static_cast<int>(std::ceil(3.0 * det.psf_sigma_px)));
    double inv_two_sigma_sq = 1.0 / (2.0 * det.psf_sigma_px * det.psf_sigma_px);
    for (int y = cy - reach; y <= cy + reach; ++y) {
        if (y < 0 || y >= det.sensor_height) continue;
        for (int x = cx - reach; x <= cx + reach; ++x) {
            if (x < 0 || x >= det.sensor_width) continue;
            double dx = x - fx;
            double dy = y - fy;
            double tot = amplitude * std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
            if (tot < det.tot_threshold) continue;
            std::uint16_t tot_ticks = static_cast<std::uint16_t>(
                std::min<long>(65535L, std::lround(tot)));
            double toa_ps = flash_time_ps + time_walk_delay_ps(det, tot_ticks);
            if (toa_ps < 0.0) toa_ps = 0.0;
            RawHit hit;
            hit.x = static_cast<std::uint16_t>(x);
            hit.y = static_cast<std::uint16_t>(y);
            hit.tot = tot_ticks;
            hit.toa_ticks = static_cast<std::uint64_t>(std::llround(toa_ps / det.tick_ps));
            out.push_back(hit);
        }
    }
}

} // namespace detail

/// Monte Carlo time-tag run. Per pulse the source photon number is drawn
/// and split multinomially over the channels; each detected photon becomes
/// an intensifier flash around its ROI centre with Gaussian timing jitter
/// and ToT-dependent time walk. Dark counts are uniform over the sensor
/// and the run. Pulse blocks use counter-derived substreams, so the output
/// is byte-identical for any worker count, and hits are canonically
/// time-sorted.
inline TimetagRun simulate_timetag_run(const SourceModel& model, const DetectorModel& det,
                                       std::span<const ChannelROI> rois, double duration_s,
                                       std::uint64_t seed, int threads = 1) {
    model.validate();
    det.validate(rois.size());
    validate_rois(rois);
    if (duration_s <= 0.0) throw ConfigInvalid("duration must be positive");

    const std::int64_t period_ps = model.pulse_period_ps();
    const std::uint64_t n_pulses =
        static_cast<std::uint64_t>(duration_s * 1e12 / static_cast<double>(period_ps));
    constexpr std::uint64_t kPulsesPerBlock = 16384;
    const std::size_t n_blocks =
        n_pulses == 0 ? 0 : static_cast<std::size_t>((n_pulses + kPulsesPerBlock - 1) / kPulsesPerBlock);

    std::vector<double> cum_eff(rois.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < rois.size(); ++i) {
        acc += det.channel_efficiency[i];
        cum_eff[i] = acc;
    }

    const double jitter_sigma = det.jitter_fwhm_ps * detail::kFwhmToSigma;
    const PulseSampler sampler(model);
    std::vector<detail::FlashBuffer> blocks(n_blocks);

    parallel_blocks(n_blocks, threads, [&](std::size_t b) {
        Xoshiro256pp rng = Xoshiro256pp::substream(seed, b);
        detail::FlashBuffer& buf = blocks[b];
        const std::uint64_t pulse_lo = b * kPulsesPerBlock;
        const std::uint64_t pulse_hi = std::min(n_pulses, pulse_lo + kPulsesPerBlock);

        for (std::uint64_t k = pulse_lo; k < pulse_hi; ++k) {
            std::uint32_t n = sampler(rng);
            double pulse_time = static_cast<double>(k) * static_cast<double>(period_ps);
            for (std::uint32_t ph = 0; ph < n; ++ph) {
                double u = rng.uniform01();
                std::size_t channel = rois.size();
                for (std::size_t c = 0; c < rois.size(); ++c) {
                    if (u < cum_eff[c]) {
                        channel = c;
                        break;
                    }
                }
                if (channel == rois.size()) continue; // photon lost
                double fx = rois[channel].center_x + det.spot_sigma_px * sample_normal(rng);
                double fy = rois[channel].center_y + det.spot_sigma_px * sample_normal(rng);
                double flash_time = pulse_time + model.pulse_width_ps * rng.uniform01() +
                                    jitter_sigma * sample_normal(rng);
                std::size_t before = buf.hits.size();
                detail::emit_flash(det, fx, fy, flash_time, rng, buf.hits);
                if (buf.hits.size() > before) buf.photons += 1;
            }
        }

        // Dark counts across the block's time span.
        if (det.dark_rate_hz_per_px > 0.0) {
            double span_s = static_cast<double>(pulse_hi - pulse_lo) *
                            static_cast<double>(period_ps) * 1e-12;
            double expected = det.dark_rate_hz_per_px * span_s *
                              static_cast<double>(det.sensor_width) * det.sensor_height;
            std::uint64_t darks = sample_poisson(rng, expected);
            for (std::uint64_t d = 0; d < darks; ++d) {
                RawHit hit;
                hit.x = static_cast<std::uint16_t>(rng.next() % det.sensor_width);
                hit.y = static_cast<std::uint16_t>(rng.next() % det.sensor_height);
                hit.tot = static_cast<std::uint16_t>(
                    det.tot_threshold + rng.next() % (det.tot_threshold + 8));
                double t_ps = (static_cast<double>(pulse_lo) +
                               rng.uniform01() * static_cast<double>(pulse_hi - pulse_lo)) *
                              static_cast<double>(period_ps);
                hit.toa_ticks = static_cast<std::uint64_t>(std::llround(t_ps / det.tick_ps));
                buf.hits.push_back(hit);
            }
            buf.darks = darks;
        }
    });

    TimetagRun run;
    run.header.tick_picoseconds = det.tick_ps;
    run.header.sensor_width = det.sensor_width;
    run.header.sensor_height = det.sensor_height;
    run.pulse_count = n_pulses;
    std::size_t total_hits = 0;
    for (const auto& b : blocks) total_hits += b.hits.size();
    run.hits.reserve(total_hits);
    for (auto& b : blocks) {
        run.photon_count += b.photons;
        run.dark_count += b.darks;
        run.hits.insert(run.hits.end(), b.hits.begin(), b.hits.end());
    }
    std::sort(run.hits.begin(), run.hits.end(), hit_time_order);
    run.header.record_count = run.hits.size();
    return run;
}

/// Sensor window for photon-number frames: a Gaussian intensity profile
/// whose peak pixel detects each source photon with `peak_efficiency`.
struct FrameGeometry {
    std::uint16_t width = 1;
    std::uint16_t height = 1;
    double center_x = 0.0;
    double center_y = 0.0;
    double profile_sigma_px = 1.5;
    double peak_efficiency = 1.0;

    void validate() const {
        if (width == 0 || height == 0) throw ConfigInvalid("frame geometry must be at least 1x1");
        if (peak_efficiency <= 0.0 || peak_efficiency > 1.0)
            throw ConfigInvalid("peak efficiency must lie in (0, 1]");
        if (profile_sigma_px <= 0.0) throw ConfigInvalid("profile sigma must be positive");
    }
};

/// Monte Carlo photon-number frames. Frame f spans
/// [f, f+1) * exposure on the integer-ps clock and integrates every pulse
/// whose emission time falls inside, so an exposure that is not a multiple
/// of the pulse period straddles floor/ceil pulse counts phase-accurately.
/// Per-frame substreams make the stack independent of the worker count.
inline FrameStack simulate_frames(const SourceModel& model, const DetectorModel& det,
                                  const FrameGeometry& geom, std::uint64_t frame_count,
                                  double exposure_us, std::uint64_t seed, int threads = 1) {
    model.validate();
    geom.validate();
    if (frame_count == 0) throw ConfigInvalid("frame count must be positive");
    if (exposure_us <= 0.0) throw ConfigInvalid("exposure must be positive");

    const std::int64_t period_ps = model.pulse_period_ps();
    const std::int64_t exposure_ps = static_cast<std::int64_t>(std::llround(exposure_us * 1e6));
    if (exposure_ps <= 0) throw ConfigInvalid("exposure must be at least 1 ps");

    // Per-pixel detection weights.
    std::vector<double> cum_weight(static_cast<std::size_t>(geom.width) * geom.height);
    double acc = 0.0;
    for (std::uint16_t y = 0; y < geom.height; ++y) {
        for (std::uint16_t x = 0; x < geom.width; ++x) {
            double dx = x - geom.center_x;
            double dy = y - geom.center_y;
            double w = geom.peak_efficiency *
                       std::exp(-(dx * dx + dy * dy) /
                                (2.0 * geom.profile_sigma_px * geom.profile_sigma_px));
            acc += w;
            cum_weight[static_cast<std::size_t>(y) * geom.width + x] = acc;
        }
    }
    if (acc > 1.0)
        throw ConfigInvalid("pixel detection weights sum above 1; shrink peak efficiency");

    FrameStack stack;
    stack.width = geom.width;
    stack.height = geom.height;
    stack.frame_count = frame_count;
    stack.exposure_us = exposure_us;
    stack.counts.assign(stack.pixels_per_frame() * frame_count, 0);

    const double dark_per_px =
        det.dark_rate_hz_per_px * static_cast<double>(exposure_ps) * 1e-12;
    const PulseSampler sampler(model);

    parallel_blocks(frame_count, threads, [&](std::size_t f) {
        Xoshiro256pp rng = Xoshiro256pp::substream(seed, f);
        std::uint16_t* frame = stack.counts.data() + f * stack.pixels_per_frame();

        const std::int64_t t0 = static_cast<std::int64_t>(f) * exposure_ps;
        const std::int64_t t1 = t0 + exposure_ps;
        // Pulses with k * period in [t0, t1).
        std::int64_t k_min = (t0 + period_ps - 1) / period_ps;
        std::int64_t k_max = (t1 + period_ps - 1) / period_ps - 1;

        for (std::int64_t k = k_min; k <= k_max; ++k) {
            std::uint32_t n = sampler(rng);
            for (std::uint32_t ph = 0; ph < n; ++ph) {
                double u = rng.uniform01();
                if (u >= acc) continue; // photon missed the window
                std::size_t px = static_cast<std::size_t>(
                    std::lower_bound(cum_weight.begin(), cum_weight.end(), u) -
                    cum_weight.begin());
                if (px >= cum_weight.size()) px = cum_weight.size() - 1;
                if (frame[px] < kPnrCountCeiling) frame[px] += 1;
            }
        }
        if (dark_per_px > 0.0) {
            for (std::size_t px = 0; px < stack.pixels_per_frame(); ++px) {
                std::uint64_t d = sample_poisson(rng, dark_per_px);
                std::uint64_t total = frame[px] + d;
                frame[px] = static_cast<std::uint16_t>(
                    std::min<std::uint64_t>(total, kPnrCountCeiling));
            }
        }
    });

    return stack;
}

} // namespace photostat
