#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <span>
#include <tuple>
#include <vector>

#include "photostat/eventstream.hpp"
#include "photostat/threading.hpp"
#include "photostat/timewalk.hpp"

namespace photostat {

/// Clustering parameters. A hit joins a cluster when it lies within
/// `spatial_radius` (Chebyshev) of any existing member and within
/// `temporal_window_ticks` of the cluster's earliest hit. The defaults
/// suit an intensifier flash a few pixels wide: 2 px and ~100 ns
/// (64 ticks of 1562 ps), far below typical pulse spacing.
struct ClusterParams {
    int spatial_radius = 2;
    std::uint64_t temporal_window_ticks = 64;
};

/// One spatiotemporally connected group of hits, candidate single photon.
struct Cluster {
    std::vector<RawHit> hits; // in canonical time order
};

/// A reconstructed photon: ToT-weighted fractional centroid plus the
/// walk-corrected arrival time of its most intense member.
struct PhotonEvent {
    double cx = 0.0;
    double cy = 0.0;
    double toa_ps = 0.0;
    std::uint64_t total_tot = 0;
    std::uint32_t size = 0;
    bool unweighted_centroid = false; // set when total ToT was zero
};

namespace detail {

struct OpenCluster {
    std::vector<RawHit> hits;
    std::uint64_t first_toa;
    int min_x, max_x, min_y, max_y;
};

inline bool chebyshev_adjacent(const OpenCluster& c, const RawHit& h, int radius) {
    if (static_cast<int>(h.x) < c.min_x - radius || static_cast<int>(h.x) > c.max_x + radius ||
        static_cast<int>(h.y) < c.min_y - radius || static_cast<int>(h.y) > c.max_y + radius)
        return false;
    for (const RawHit& m : c.hits) {
        int dx = static_cast<int>(h.x) - static_cast<int>(m.x);
        int dy = static_cast<int>(h.y) - static_cast<int>(m.y);
        if (std::abs(dx) <= radius && std::abs(dy) <= radius) return true;
    }
    return false;
}

/// Sweep over one time-sorted segment. Open clusters are examined in
/// creation order; the first spatial/temporal match wins.
inline void sweep_segment(std::span<const RawHit> hits, const ClusterParams& params,
                          std::vector<Cluster>& out) {
    std::deque<OpenCluster> open;
    for (const RawHit& h : hits) {
        while (!open.empty() && h.toa_ticks - open.front().first_toa > params.temporal_window_ticks) {
            out.push_back(Cluster{std::move(open.front().hits)});
            open.pop_front();
        }
        OpenCluster* target = nullptr;
        for (OpenCluster& c : open) {
            if (chebyshev_adjacent(c, h, params.spatial_radius)) {
                target = &c;
                break;
            }
        }
        if (target) {
            target->hits.push_back(h);
            target->min_x = std::min(target->min_x, static_cast<int>(h.x));
            target->max_x = std::max(target->max_x, static_cast<int>(h.x));
            target->min_y = std::min(target->min_y, static_cast<int>(h.y));
            target->max_y = std::max(target->max_y, static_cast<int>(h.y));
        } else {
            open.push_back(OpenCluster{{h}, h.toa_ticks, h.x, h.x, h.y, h.y});
        }
    }
    for (OpenCluster& c : open) out.push_back(Cluster{std::move(c.hits)});
}

} // namespace detail

/// Partition hits into clusters. Input order does not matter: hits are
/// brought into canonical time order first, so any permutation of the same
/// hits yields the same clusters. Parallel execution splits the timeline at
/// gaps wider than the temporal window, which no cluster can span, so the
/// result is identical to the single-threaded sweep.
inline std::vector<Cluster> cluster_hits(std::vector<RawHit> hits, const ClusterParams& params,
                                         int threads = 1) {
    if (params.spatial_radius < 0) throw ConfigInvalid("spatial radius must be non-negative");
    if (hits.empty()) return {};
    if (!std::is_sorted(hits.begin(), hits.end(), hit_time_order))
        std::sort(hits.begin(), hits.end(), hit_time_order);

    if (resolve_threads(threads) <= 1) {
        std::vector<Cluster> clusters;
        detail::sweep_segment(hits, params, clusters);
        return clusters;
    }

    // Chunk the timeline at inter-hit gaps no cluster can cross. Sweeping a
    // chunk of whole segments reproduces the serial sweep on that range, so
    // any subset of the gap boundaries is a valid partition.
    std::vector<std::size_t> boundaries;
    for (std::size_t i = 1; i < hits.size(); ++i)
        if (hits[i].toa_ticks - hits[i - 1].toa_ticks > params.temporal_window_ticks)
            boundaries.push_back(i);

    const std::size_t target = static_cast<std::size_t>(resolve_threads(threads)) * 8;
    std::vector<std::size_t> starts{0};
    if (boundaries.size() > target && target > 0) {
        std::size_t stride = (boundaries.size() + target - 1) / target;
        for (std::size_t i = stride - 1; i < boundaries.size(); i += stride)
            starts.push_back(boundaries[i]);
    } else {
        starts.insert(starts.end(), boundaries.begin(), boundaries.end());
    }
    starts.push_back(hits.size());

    const std::size_t n_chunks = starts.size() - 1;
    std::vector<std::vector<Cluster>> partial(n_chunks);
    parallel_blocks(n_chunks, threads, [&](std::size_t s) {
        std::span<const RawHit> chunk(hits.data() + starts[s], starts[s + 1] - starts[s]);
        detail::sweep_segment(chunk, params, partial[s]);
    });

    std::vector<Cluster> clusters;
    std::size_t total = 0;
    for (const auto& p : partial) total += p.size();
    clusters.reserve(total);
    for (auto& p : partial)
        for (auto& c : p) clusters.push_back(std::move(c));
    return clusters;
}

/// Collapse a cluster into one photon event. The centroid weights pixels by
/// ToT; the event time is the walk-corrected time of the highest-ToT member
/// (ties broken towards the lowest (y, x)).
inline PhotonEvent centroid(const Cluster& cluster, std::uint32_t tick_ps,
                            const TimeWalkTable* walk = nullptr) {
    if (cluster.hits.empty()) throw ConfigInvalid("cannot centroid an empty cluster");

    PhotonEvent ev;
    ev.size = static_cast<std::uint32_t>(cluster.hits.size());

    std::uint64_t total_tot = 0;
    double wx = 0.0, wy = 0.0;
    const RawHit* timing = &cluster.hits.front();
    for (const RawHit& h : cluster.hits) {
        total_tot += h.tot;
        wx += static_cast<double>(h.tot) * h.x;
        wy += static_cast<double>(h.tot) * h.y;
        if (h.tot > timing->tot ||
            (h.tot == timing->tot && std::tie(h.y, h.x) < std::tie(timing->y, timing->x)))
            timing = &h;
    }
    ev.total_tot = total_tot;
    if (total_tot > 0) {
        ev.cx = wx / static_cast<double>(total_tot);
        ev.cy = wy / static_cast<double>(total_tot);
    } else {
        double sx = 0.0, sy = 0.0;
        for (const RawHit& h : cluster.hits) {
            sx += h.x;
            sy += h.y;
        }
        ev.cx = sx / static_cast<double>(cluster.hits.size());
        ev.cy = sy / static_cast<double>(cluster.hits.size());
        ev.unweighted_centroid = true;
    }

    static const TimeWalkTable kNoWalk{};
    ev.toa_ps = apply_time_walk(*timing, walk ? *walk : kNoWalk, tick_ps);
    return ev;
}

/// Cluster and centroid in one pass; events come out in cluster order
/// (time order of the earliest member).
inline std::vector<PhotonEvent> reconstruct_photons(std::vector<RawHit> hits,
                                                    const ClusterParams& params,
                                                    std::uint32_t tick_ps,
                                                    const TimeWalkTable* walk = nullptr,
                                                    int threads = 1) {
    std::vector<Cluster> clusters = cluster_hits(std::move(hits), params, threads);
    std::vector<PhotonEvent> events(clusters.size());
    constexpr std::size_t kBlock = 65536;
    parallel_blocks((clusters.size() + kBlock - 1) / kBlock, threads, [&](std::size_t block) {
        std::size_t begin = block * kBlock;
        std::size_t end = std::min(clusters.size(), begin + kBlock);
        for (std::size_t i = begin; i < end; ++i)
            events[i] = centroid(clusters[i], tick_ps, walk);
    });
    return events;
}

} // namespace photostat
