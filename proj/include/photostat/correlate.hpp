#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "photostat/cluster.hpp"
#include "photostat/errors.hpp"
#include "photostat/threading.hpp"

namespace photostat {

/// Circular region of interest tied to one optical channel. Membership is
/// inclusive: an event at exactly `radius` from the centre belongs to the
/// channel.
struct ChannelROI {
    std::string id;
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 10.0;

    bool contains(double x, double y) const {
        double dx = x - center_x;
        double dy = y - center_y;
        return dx * dx + dy * dy <= radius * radius;
    }

    /// Number of pixel centres (integer lattice points) inside the disc.
    std::uint32_t pixel_count() const {
        std::uint32_t n = 0;
        int x_lo = static_cast<int>(std::floor(center_x - radius));
        int x_hi = static_cast<int>(std::ceil(center_x + radius));
        int y_lo = static_cast<int>(std::floor(center_y - radius));
        int y_hi = static_cast<int>(std::ceil(center_y + radius));
        for (int x = x_lo; x <= x_hi; ++x)
            for (int y = y_lo; y <= y_hi; ++y)
                if (contains(x, y)) ++n;
        return n;
    }
};

/// Throws OverlappingROIs when any two discs intersect (centre distance
/// not greater than the radius sum, since membership is inclusive).
inline void validate_rois(std::span<const ChannelROI> rois) {
    for (std::size_t i = 0; i < rois.size(); ++i) {
        if (rois[i].radius <= 0.0)
            throw ConfigInvalid("ROI '" + rois[i].id + "' must have positive radius");
        for (std::size_t j = i + 1; j < rois.size(); ++j) {
            double dx = rois[i].center_x - rois[j].center_x;
            double dy = rois[i].center_y - rois[j].center_y;
            double reach = rois[i].radius + rois[j].radius;
            if (dx * dx + dy * dy <= reach * reach)
                throw OverlappingROIs(rois[i].id, rois[j].id);
        }
    }
}

/// Acquisition parameters shared by a correlation run.
struct RunParams {
    double repetition_rate_hz = 28060.0;
    double duration_s = 22.0;
    double gate_width_ns = 25.0;
    double background_rate = 4.3; // photons / s / pixel

    double gate_width_ps() const { return gate_width_ns * 1e3; }

    void validate() const {
        if (repetition_rate_hz <= 0 || duration_s <= 0 || gate_width_ns <= 0 ||
            background_rate < 0)
            throw ConfigInvalid("run parameters must be positive (background may be zero)");
    }
};

/// Per-channel event record: strictly sorted (deduplicated) arrival times
/// plus raw and background-corrected totals.
struct ChannelSeries {
    std::string roi_id;
    std::vector<double> times_ps;       // strictly increasing
    std::uint64_t raw_singles = 0;      // assigned events, before dedup
    double corrected_singles = 0.0;
    std::uint32_t pixel_count = 0;
    bool background_floored = false;
};

struct Assignment {
    std::vector<ChannelSeries> channels; // one per ROI, in ROI order
    std::uint64_t rejected = 0;          // events outside every ROI
};

/// Sort events into channels by ROI membership. ROIs must be disjoint.
inline Assignment assign_channels(std::span<const PhotonEvent> events,
                                  std::span<const ChannelROI> rois) {
    validate_rois(rois);
    Assignment out;
    out.channels.resize(rois.size());
    for (std::size_t i = 0; i < rois.size(); ++i) {
        out.channels[i].roi_id = rois[i].id;
        out.channels[i].pixel_count = rois[i].pixel_count();
    }
    for (const PhotonEvent& ev : events) {
        bool assigned = false;
        for (std::size_t i = 0; i < rois.size(); ++i) {
            if (rois[i].contains(ev.cx, ev.cy)) {
                out.channels[i].times_ps.push_back(ev.toa_ps);
                out.channels[i].raw_singles += 1;
                assigned = true;
                break;
            }
        }
        if (!assigned) out.rejected += 1;
    }
    for (ChannelSeries& ch : out.channels) {
        if (!std::is_sorted(ch.times_ps.begin(), ch.times_ps.end()))
            std::sort(ch.times_ps.begin(), ch.times_ps.end());
        ch.times_ps.erase(std::unique(ch.times_ps.begin(), ch.times_ps.end()),
                          ch.times_ps.end());
        ch.corrected_singles = static_cast<double>(ch.raw_singles);
    }
    return out;
}

struct BackgroundResult {
    double corrected = 0.0;
    bool floored = false;
};

/// Subtract the constant ambient rate integrated over the run and the ROI
/// area; negative results clamp to zero with a warning flag.
inline BackgroundResult subtract_background(std::uint64_t raw_singles, const RunParams& params,
                                            std::uint32_t pixel_count) {
    double expected = params.background_rate * params.duration_s * pixel_count;
    double corrected = static_cast<double>(raw_singles) - expected;
    if (corrected < 0.0) return {0.0, true};
    return {corrected, false};
}

/// Greedy n-fold coincidence counter. The anchor is always the earliest
/// unconsumed event on the merged timeline; a coincidence is recorded when
/// every channel has an unconsumed event within `gate_ps` of it, and then
/// one event per channel is consumed. Otherwise only the anchor is
/// discarded. Counting stops once any channel is exhausted.
///
/// Parallel runs split the merged timeline at gaps wider than the gate,
/// which no coincidence can span and across which no unconsumed event
/// survives, so shard sums match the serial count exactly.
inline std::uint64_t count_coincidences(std::span<const ChannelSeries* const> channels,
                                        double gate_ps, int fold, int threads = 1) {
    if (fold < 2 || static_cast<std::size_t>(fold) != channels.size())
        throw FoldOutOfRange("fold " + std::to_string(fold) + " does not match " +
                             std::to_string(channels.size()) + " channels");
    if (gate_ps <= 0.0) throw ConfigInvalid("gate width must be positive");

    const std::size_t n = channels.size();
    for (const ChannelSeries* ch : channels)
        if (ch->times_ps.empty()) return 0;

    if (n > 8) throw FoldOutOfRange("folds above 8 are not supported");
    const double* data[8];
    for (std::size_t k = 0; k < n; ++k) data[k] = channels[k]->times_ps.data();

    // Greedy matcher over per-channel index ranges [begin, end).
    auto match = [&](const std::size_t* begin, const std::size_t* end) -> std::uint64_t {
        std::size_t idx[8];
        double front[8];
        for (std::size_t k = 0; k < n; ++k) {
            idx[k] = begin[k];
            if (idx[k] >= end[k]) return 0;
            front[k] = data[k][idx[k]];
        }
        std::uint64_t count = 0;
        for (;;) {
            double t_min = front[0];
            double t_max = front[0];
            std::size_t min_ch = 0;
            for (std::size_t k = 1; k < n; ++k) {
                if (front[k] < t_min) {
                    t_min = front[k];
                    min_ch = k;
                } else if (front[k] > t_max) {
                    t_max = front[k];
                }
            }
            if (t_max - t_min <= gate_ps) {
                ++count;
                for (std::size_t k = 0; k < n; ++k) {
                    if (++idx[k] >= end[k]) return count;
                    front[k] = data[k][idx[k]];
                }
            } else {
                if (++idx[min_ch] >= end[min_ch]) return count;
                front[min_ch] = data[min_ch][idx[min_ch]];
            }
        }
    };

    if (resolve_threads(threads) <= 1) {
        std::size_t begin[8] = {};
        std::size_t end[8];
        for (std::size_t k = 0; k < n; ++k) end[k] = channels[k]->times_ps.size();
        return match(begin, end);
    }

    // Parallel path: split the merged timeline at gaps wider than the gate.
    std::vector<double> boundaries;
    {
        std::size_t idx[8] = {};
        double last = -std::numeric_limits<double>::infinity();
        bool first = true;
        for (;;) {
            std::size_t best = n;
            double t = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < n; ++k) {
                if (idx[k] < channels[k]->times_ps.size() && channels[k]->times_ps[idx[k]] < t) {
                    t = channels[k]->times_ps[idx[k]];
                    best = k;
                }
            }
            if (best == n) break;
            if (!first && t - last > gate_ps) boundaries.push_back(t);
            last = t;
            first = false;
            ++idx[best];
        }
    }

    // Coarsen: any subset of the gap boundaries is a valid split, so keep
    // only enough for the worker pool.
    std::size_t target = static_cast<std::size_t>(resolve_threads(threads)) * 8;
    std::vector<double> splits;
    if (boundaries.size() > target && target > 0) {
        std::size_t stride = (boundaries.size() + target - 1) / target;
        for (std::size_t i = stride - 1; i < boundaries.size(); i += stride)
            splits.push_back(boundaries[i]);
    } else {
        splits = std::move(boundaries);
    }

    const std::size_t n_segments = splits.size() + 1;
    std::vector<std::size_t> cut(n_segments * n + n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::vector<double>& times = channels[k]->times_ps;
        for (std::size_t s = 0; s < splits.size(); ++s)
            cut[s * n + k] = static_cast<std::size_t>(
                std::lower_bound(times.begin(), times.end(), splits[s]) - times.begin());
        cut[splits.size() * n + k] = times.size();
    }

    std::vector<std::uint64_t> partial(n_segments, 0);
    parallel_blocks(n_segments, threads, [&](std::size_t s) {
        std::size_t begin[8] = {};
        std::size_t end[8];
        for (std::size_t k = 0; k < n; ++k) {
            if (s > 0) begin[k] = cut[(s - 1) * n + k];
            end[k] = cut[s * n + k];
        }
        partial[s] = match(begin, end);
    });

    return std::accumulate(partial.begin(), partial.end(), std::uint64_t{0});
}

struct GnEstimate {
    double g = 0.0;
    double sigma = 0.0;
};

/// Count-based correlation estimator
///     g_n = C_n (R T)^(n-1) / prod(S_i)
/// with first-order Poisson error propagation
///     sigma = g_n sqrt(1/C_n + sum 1/S_i).
/// For C_n = 0 the returned sigma is the value one coincidence would have
/// contributed, so that zero-count folds still carry a meaningful scale.
inline GnEstimate estimate_gn(std::uint64_t coincidences, std::span<const double> singles,
                              const RunParams& params, int fold) {
    if (fold < 2 || static_cast<std::size_t>(fold) != singles.size())
        throw FoldOutOfRange("fold " + std::to_string(fold) + " does not match " +
                             std::to_string(singles.size()) + " singles");
    double product = 1.0;
    double inv_sum = 0.0;
    for (double s : singles) {
        if (s <= 0.0) throw ZeroSingles("singles");
        product *= s;
        inv_sum += 1.0 / s;
    }
    double rt = params.repetition_rate_hz * params.duration_s;
    double scale = std::pow(rt, fold - 1) / product;
    GnEstimate est;
    est.g = static_cast<double>(coincidences) * scale;
    if (coincidences > 0)
        est.sigma = est.g * std::sqrt(1.0 / static_cast<double>(coincidences) + inv_sum);
    else
        est.sigma = scale;
    return est;
}

/// All size-k index subsets of {0..n-1} in lexicographic order.
inline std::vector<std::vector<std::size_t>> combinations(std::size_t n, int k) {
    std::vector<std::vector<std::size_t>> out;
    if (k < 0 || static_cast<std::size_t>(k) > n) return out;
    std::vector<std::size_t> cur(static_cast<std::size_t>(k));
    std::iota(cur.begin(), cur.end(), 0);
    for (;;) {
        out.push_back(cur);
        int i = k - 1;
        while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - static_cast<std::size_t>(k - i))
            --i;
        if (i < 0) break;
        ++cur[static_cast<std::size_t>(i)];
        for (std::size_t j = static_cast<std::size_t>(i) + 1; j < static_cast<std::size_t>(k); ++j)
            cur[j] = cur[j - 1] + 1;
    }
    return out;
}

/// Channel subsets for every fold in [n_min, n_max], lexicographic within
/// each fold.
inline std::vector<std::vector<std::vector<std::size_t>>> enumerate_folds(std::size_t n_channels,
                                                                          int n_min, int n_max) {
    if (n_min < 2 || n_max < n_min || static_cast<std::size_t>(n_max) > n_channels)
        throw FoldOutOfRange("fold range [" + std::to_string(n_min) + "," +
                             std::to_string(n_max) + "] invalid for " +
                             std::to_string(n_channels) + " channels");
    std::vector<std::vector<std::vector<std::size_t>>> out;
    for (int k = n_min; k <= n_max; ++k) out.push_back(combinations(n_channels, k));
    return out;
}

enum class ResultStatus { ok, zero_singles };

struct CorrelationResult {
    std::vector<std::string> channel_ids;
    int fold = 2;
    std::uint64_t coincidences = 0;
    double g = 0.0;
    double sigma = 0.0;
    ResultStatus status = ResultStatus::ok;
};

struct RunReport {
    RunParams params;
    std::vector<ChannelSeries> channels;
    std::uint64_t rejected = 0;
    std::vector<CorrelationResult> results;
};

/// Full correlation pipeline: assign events to ROIs, subtract background,
/// then count coincidences and form g_n for every channel subset of every
/// fold from 2 to `max_fold`. Channels with no counts left after
/// subtraction surface as zero_singles results instead of aborting the run.
inline RunReport correlate_run(std::span<const PhotonEvent> events,
                               std::span<const ChannelROI> rois, const RunParams& params,
                               int max_fold = 5, int threads = 1) {
    params.validate();
    RunReport report;
    report.params = params;

    Assignment assignment = assign_channels(events, rois);
    report.rejected = assignment.rejected;
    for (ChannelSeries& ch : assignment.channels) {
        BackgroundResult bg = subtract_background(ch.raw_singles, params, ch.pixel_count);
        ch.corrected_singles = bg.corrected;
        ch.background_floored = bg.floored;
    }
    report.channels = std::move(assignment.channels);

    // Folds above the channel count have no subsets; below two channels
    // there is nothing to correlate.
    int top_fold = std::min<int>(max_fold, static_cast<int>(rois.size()));
    if (top_fold < 2) return report;

    const double gate_ps = params.gate_width_ps();
    auto folds = enumerate_folds(rois.size(), 2, top_fold);
    for (const auto& subsets : folds) {
        for (const auto& subset : subsets) {
            CorrelationResult res;
            res.fold = static_cast<int>(subset.size());
            std::vector<const ChannelSeries*> chans;
            std::vector<double> singles;
            bool zero = false;
            for (std::size_t ci : subset) {
                res.channel_ids.push_back(report.channels[ci].roi_id);
                chans.push_back(&report.channels[ci]);
                singles.push_back(report.channels[ci].corrected_singles);
                if (report.channels[ci].corrected_singles <= 0.0) zero = true;
            }
            if (zero) {
                res.status = ResultStatus::zero_singles;
            } else {
                res.coincidences = count_coincidences(chans, gate_ps, res.fold, threads);
                GnEstimate est = estimate_gn(res.coincidences, singles, params, res.fold);
                res.g = est.g;
                res.sigma = est.sigma;
            }
            report.results.push_back(std::move(res));
        }
    }
    return report;
}

} // namespace photostat
