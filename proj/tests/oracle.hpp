#pragma once

// Test-only oracles, kept deliberately naive and independent of the
// library's data structures and scan order.

#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

/// Brute-force greedy gate matcher over per-channel time lists. Each step
/// rescans every channel for its earliest unconsumed event, takes the
/// global earliest as anchor, and either consumes one event per channel
/// (all within the gate of the anchor) or discards the anchor alone.
inline std::uint64_t coincidences(const std::vector<std::vector<double>>& channels,
                                  double gate) {
    std::vector<std::vector<char>> used(channels.size());
    for (std::size_t k = 0; k < channels.size(); ++k)
        used[k].assign(channels[k].size(), 0);

    std::uint64_t count = 0;
    for (;;) {
        // Earliest unconsumed event per channel, by full rescan.
        std::vector<std::size_t> front(channels.size());
        bool any_empty = false;
        for (std::size_t k = 0; k < channels.size(); ++k) {
            std::size_t best = channels[k].size();
            double best_t = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < channels[k].size(); ++i) {
                if (!used[k][i] && channels[k][i] < best_t) {
                    best_t = channels[k][i];
                    best = i;
                }
            }
            front[k] = best;
            if (best == channels[k].size()) any_empty = true;
        }
        if (any_empty) break;

        // Anchor: globally earliest front (lowest channel on ties).
        std::size_t anchor_ch = 0;
        for (std::size_t k = 1; k < channels.size(); ++k)
            if (channels[k][front[k]] < channels[anchor_ch][front[anchor_ch]]) anchor_ch = k;
        double t0 = channels[anchor_ch][front[anchor_ch]];

        bool all_in_gate = true;
        for (std::size_t k = 0; k < channels.size(); ++k)
            if (channels[k][front[k]] - t0 > gate) all_in_gate = false;

        if (all_in_gate) {
            ++count;
            for (std::size_t k = 0; k < channels.size(); ++k) used[k][front[k]] = 1;
        } else {
            used[anchor_ch][front[anchor_ch]] = 1;
        }
    }
    return count;
}

} // namespace oracle
