#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "photostat/errors.hpp"
#include "photostat/eventstream.hpp"

namespace photostat {

/// Empirical time-walk lookup: mean arrival-time offset (ps) per
/// time-over-threshold bin. Intense hits cross the discriminator earlier,
/// so offsets are expected (but not required) to shrink with ToT.
struct TimeWalkTable {
    std::uint32_t bin_width_ticks = 1;
    std::vector<double> offsets_ps;
    std::vector<std::uint32_t> bin_samples;   // raw samples per bin, before interpolation
    bool monotone_nonincreasing = true;       // diagnostic only, never enforced

    bool empty() const { return offsets_ps.empty(); }

    double offset_for(std::uint16_t tot) const {
        if (offsets_ps.empty()) return 0.0;
        std::size_t bin = tot / bin_width_ticks;
        if (bin >= offsets_ps.size()) bin = offsets_ps.size() - 1;
        return offsets_ps[bin];
    }
};

/// A calibration sample: a raw hit plus the known emission time of the
/// pulse that produced it.
struct PulseTaggedHit {
    RawHit hit;
    double pulse_time_ps = 0.0;
};

/// Build a time-walk table from pulsed calibration data. Bins with fewer
/// than `min_samples` hits are filled by linear interpolation between the
/// nearest well-populated bins (flat extrapolation at the ends).
inline TimeWalkTable calibrate_time_walk(std::span<const PulseTaggedHit> samples,
                                         std::uint32_t bin_width_ticks,
                                         std::uint32_t tick_ps,
                                         std::uint32_t min_samples = 20) {
    if (bin_width_ticks == 0) throw ConfigInvalid("time-walk bin width must be positive");
    if (tick_ps == 0) throw ConfigInvalid("tick duration must be positive");

    std::vector<double> sums;
    std::vector<double> sq_sums;
    std::vector<std::uint32_t> counts;
    for (const PulseTaggedHit& s : samples) {
        std::size_t bin = s.hit.tot / bin_width_ticks;
        if (bin >= sums.size()) {
            sums.resize(bin + 1, 0.0);
            sq_sums.resize(bin + 1, 0.0);
            counts.resize(bin + 1, 0);
        }
        double measured_ps = static_cast<double>(s.hit.toa_ticks) * tick_ps;
        double residual = measured_ps - s.pulse_time_ps;
        sums[bin] += residual;
        sq_sums[bin] += residual * residual;
        counts[bin] += 1;
    }

    TimeWalkTable table;
    table.bin_width_ticks = bin_width_ticks;
    table.bin_samples = counts;
    table.offsets_ps.assign(sums.size(), 0.0);

    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < sums.size(); ++i) {
        if (counts[i] >= min_samples) {
            table.offsets_ps[i] = sums[i] / counts[i];
            valid.push_back(i);
        }
    }
    if (valid.empty())
        throw InsufficientData("no time-over-threshold bin reached " +
                               std::to_string(min_samples) + " calibration samples");

    // Fill sparse bins from the populated neighbours.
    for (std::size_t i = 0; i < table.offsets_ps.size(); ++i) {
        if (counts[i] >= min_samples) continue;
        auto right = std::lower_bound(valid.begin(), valid.end(), i);
        if (right == valid.begin()) {
            table.offsets_ps[i] = table.offsets_ps[valid.front()];
        } else if (right == valid.end()) {
            table.offsets_ps[i] = table.offsets_ps[valid.back()];
        } else {
            std::size_t hi = *right;
            std::size_t lo = *(right - 1);
            double t = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
            table.offsets_ps[i] =
                table.offsets_ps[lo] + t * (table.offsets_ps[hi] - table.offsets_ps[lo]);
        }
    }

    // Offsets are expected to shrink with ToT. An increase only counts as a
    // violation beyond 5 combined standard errors of the two bin means:
    // jitter-limited bins fluctuate, and with dozens of neighbour pairs a
    // tighter gate would flag noise on most real calibrations.
    table.monotone_nonincreasing = true;
    for (std::size_t k = 1; k < valid.size(); ++k) {
        std::size_t a = valid[k - 1];
        std::size_t b = valid[k];
        auto se_sq = [&](std::size_t i) {
            double mean = table.offsets_ps[i];
            double var = sq_sums[i] / counts[i] - mean * mean;
            return std::max(0.0, var) / counts[i];
        };
        double tolerance = 5.0 * std::sqrt(se_sq(a) + se_sq(b));
        if (table.offsets_ps[b] > table.offsets_ps[a] + tolerance)
            table.monotone_nonincreasing = false;
    }
    return table;
}

/// Corrected arrival time in picoseconds: tick time minus the walk offset
/// for the hit's ToT bin. An empty table leaves the time unchanged.
inline double apply_time_walk(const RawHit& hit, const TimeWalkTable& table,
                              std::uint32_t tick_ps) {
    return static_cast<double>(hit.toa_ticks) * tick_ps - table.offset_for(hit.tot);
}

inline std::string time_walk_to_csv(const TimeWalkTable& table) {
    std::string out = "tot_bin,offset_ps\n";
    char buf[64];
    for (std::size_t i = 0; i < table.offsets_ps.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i * table.bin_width_ticks,
                      table.offsets_ps[i]);
        out += buf;
    }
    return out;
}

/// Parse a `tot_bin,offset_ps` table. The bin width is recovered from the
/// spacing of the first two rows (a single row means width 1).
inline TimeWalkTable time_walk_from_csv(std::string_view text) {
    TimeWalkTable table;
    std::vector<std::uint64_t> bins;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos
                                                     ? std::string_view::npos
                                                     : eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line_no == 1) continue; // header row
        std::size_t comma = line.find(',');
        if (comma == std::string_view::npos) throw MalformedRow(line_no, std::string(line));
        std::uint64_t bin_start = 0;
        if (!detail::parse_u64_field(line.substr(0, comma), bin_start))
            throw MalformedRow(line_no, std::string(line));
        errno = 0;
        char* end = nullptr;
        std::string value(line.substr(comma + 1));
        double offset = std::strtod(value.c_str(), &end);
        if (end == value.c_str() || errno != 0) throw MalformedRow(line_no, std::string(line));
        bins.push_back(bin_start);
        table.offsets_ps.push_back(offset);
    }
    if (bins.size() >= 2 && bins[1] > bins[0])
        table.bin_width_ticks = static_cast<std::uint32_t>(bins[1] - bins[0]);
    table.bin_samples.assign(table.offsets_ps.size(), 0);
    return table;
}

} // namespace photostat
