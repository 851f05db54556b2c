#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "photostat/correlate.hpp"
#include "photostat/pnr.hpp"

namespace photostat {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline std::string fmt_double(double v, const char* fmt = "%.10g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

inline std::string join_ids(const std::vector<std::string>& ids, char sep = '+') {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += sep;
        out += ids[i];
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Correlation reports
// ---------------------------------------------------------------------------

inline ordered_json gn_results_json(const RunReport& report) {
    ordered_json j;
    j["run"] = {{"repetition_rate_hz", report.params.repetition_rate_hz},
                {"duration_s", report.params.duration_s},
                {"gate_width_ns", report.params.gate_width_ns},
                {"background_rate_per_px_s", report.params.background_rate},
                {"rejected_events", report.rejected}};
    ordered_json channels = ordered_json::array();
    for (const ChannelSeries& ch : report.channels) {
        channels.push_back({{"id", ch.roi_id},
                            {"raw_singles", ch.raw_singles},
                            {"corrected_singles", ch.corrected_singles},
                            {"pixel_count", ch.pixel_count},
                            {"background_floored", ch.background_floored}});
    }
    j["channels"] = channels;
    ordered_json results = ordered_json::array();
    for (const CorrelationResult& r : report.results) {
        ordered_json item = {{"subset", r.channel_ids},
                             {"fold", r.fold},
                             {"C", r.coincidences},
                             {"g", r.g},
                             {"sigma", r.sigma}};
        if (r.status == ResultStatus::zero_singles) item["status"] = "zero_singles";
        results.push_back(item);
    }
    j["results"] = results;
    return j;
}

inline std::string gn_results_csv(const RunReport& report) {
    std::string out = "subset,fold,C,g,sigma,status\n";
    for (const CorrelationResult& r : report.results) {
        out += detail::join_ids(r.channel_ids);
        out += ',' + std::to_string(r.fold);
        out += ',' + std::to_string(r.coincidences);
        out += ',' + detail::fmt_double(r.g);
        out += ',' + detail::fmt_double(r.sigma);
        out += r.status == ResultStatus::zero_singles ? ",zero_singles\n" : ",ok\n";
    }
    return out;
}

/// One `fold,g` row per subset, the layout used to plot g against fold.
inline std::string fig2_csv(const RunReport& report) {
    std::string out = "fold,g\n";
    for (const CorrelationResult& r : report.results) {
        if (r.status != ResultStatus::ok) continue;
        out += std::to_string(r.fold) + ',' + detail::fmt_double(r.g) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pre-counted coincidence tables (APD-style runs)
// ---------------------------------------------------------------------------

/// One row of an already-counted run: label, duration, coincidences and
/// background-subtracted singles for each channel.
struct CountsRow {
    std::string label;
    double duration_s = 0.0;
    std::uint64_t coincidences = 0;
    std::vector<double> singles;
};

/// Parse `set,duration_s,coincidences,singles_1,singles_2[,...]` with a
/// mandatory header row.
inline std::vector<CountsRow> parse_counts_csv(std::string_view text) {
    std::vector<CountsRow> rows;
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
        if (line.empty() || line_no == 1) continue;

        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                fields.emplace_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() < 5) throw MalformedRow(line_no, std::string(line));
        CountsRow row;
        row.label = fields[0];
        char* end = nullptr;
        row.duration_s = std::strtod(fields[1].c_str(), &end);
        if (end == fields[1].c_str() || row.duration_s <= 0)
            throw MalformedRow(line_no, "bad duration");
        std::uint64_t c = 0;
        if (!detail::parse_u64_field(fields[2], c)) throw MalformedRow(line_no, "bad coincidences");
        row.coincidences = c;
        for (std::size_t i = 3; i < fields.size(); ++i) {
            double s = std::strtod(fields[i].c_str(), &end);
            if (end == fields[i].c_str()) throw MalformedRow(line_no, "bad singles");
            row.singles.push_back(s);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Evaluate g_n rows of a pre-counted table at the given repetition rate.
inline std::string counts_results_csv(const std::vector<CountsRow>& rows,
                                      double repetition_rate_hz) {
    std::string out = "set,duration_s,coincidences,";
    std::size_t max_singles = 0;
    for (const CountsRow& r : rows) max_singles = std::max(max_singles, r.singles.size());
    for (std::size_t i = 0; i < max_singles; ++i)
        out += "singles_" + std::to_string(i + 1) + ',';
    out += "g,sigma\n";
    for (const CountsRow& r : rows) {
        RunParams params;
        params.repetition_rate_hz = repetition_rate_hz;
        params.duration_s = r.duration_s;
        GnEstimate est =
            estimate_gn(r.coincidences, r.singles, params, static_cast<int>(r.singles.size()));
        out += r.label + ',' + detail::fmt_double(r.duration_s) + ',' +
               std::to_string(r.coincidences) + ',';
        for (std::size_t i = 0; i < max_singles; ++i)
            out += (i < r.singles.size() ? detail::fmt_double(r.singles[i]) : std::string()) + ',';
        out += detail::fmt_double(est.g) + ',' + detail::fmt_double(est.sigma) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Photon-number reports
// ---------------------------------------------------------------------------

inline ordered_json pnr_stats_json(const PhotonNumberStats& stats, const ModelFit& poisson_fit,
                                   const ClassificationResult& verdict) {
    ordered_json j;
    j["samples"] = stats.samples;
    j["mean"] = stats.mean;
    j["variance"] = stats.variance;
    j["g2"] = stats.g2;
    j["Q"] = stats.q;
    j["E"] = stats.e;
    j["stdev"] = stats.stdev;
    j["g2_uncertainty"] = stats.g2_uncertainty;
    j["Q_uncertainty"] = stats.q_uncertainty;
    j["classification"] = to_string(verdict.verdict);
    j["significance"] = verdict.significance;
    j["poisson_fit"] = {{"mean", poisson_fit.mean},
                        {"log_likelihood", poisson_fit.log_likelihood},
                        {"chi_square", poisson_fit.chi_square},
                        {"dof", poisson_fit.dof},
                        {"p_value", poisson_fit.p_value}};
    return j;
}

/// `n,P(n),poisson_fit(n)` rows over the histogram support.
inline std::string histogram_csv(const PhotonNumberHistogram& hist, double poisson_mean) {
    std::string out = "n,P(n),poisson_fit(n)\n";
    const double total = static_cast<double>(hist.total_samples());
    for (std::size_t n = 0; n < hist.counts.size(); ++n) {
        double p = total > 0 ? static_cast<double>(hist.counts[n]) / total : 0.0;
        out += std::to_string(n) + ',' + detail::fmt_double(p) + ',' +
               detail::fmt_double(poisson_pmf(static_cast<int>(n), poisson_mean)) + '\n';
    }
    return out;
}

/// Per-run `sample,mean,variance,g2,Q,E,stdev,g2_uncertainty` summary rows.
inline std::string fig3c_csv(const std::vector<std::pair<std::string, PhotonNumberStats>>& runs) {
    std::string out = "sample,mean,variance,g2,Q,E,stdev,g2_uncertainty\n";
    for (const auto& [label, s] : runs) {
        out += label + ',' + detail::fmt_double(s.mean) + ',' + detail::fmt_double(s.variance) +
               ',' + detail::fmt_double(s.g2) + ',' + detail::fmt_double(s.q) + ',' +
               detail::fmt_double(s.e) + ',' + detail::fmt_double(s.stdev) + ',' +
               detail::fmt_double(s.g2_uncertainty) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// ROI configuration
// ---------------------------------------------------------------------------

inline std::vector<ChannelROI> rois_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid(std::string("ROI file is not valid JSON: ") + e.what());
    }
    if (!j.is_array()) throw ConfigInvalid("ROI file must hold a JSON array");
    std::vector<ChannelROI> rois;
    for (const auto& item : j) {
        for (auto it = item.begin(); it != item.end(); ++it) {
            const std::string& key = it.key();
            if (key != "id" && key != "x" && key != "y" && key != "radius")
                throw ConfigInvalid("unknown ROI key '" + key + "'");
        }
        ChannelROI roi;
        if (!item.contains("id") || !item.contains("x") || !item.contains("y"))
            throw ConfigInvalid("each ROI needs id, x and y");
        roi.id = item["id"].get<std::string>();
        roi.center_x = item["x"].get<double>();
        roi.center_y = item["y"].get<double>();
        if (item.contains("radius")) roi.radius = item["radius"].get<double>();
        rois.push_back(std::move(roi));
    }
    validate_rois(rois);
    return rois;
}

inline ordered_json rois_to_json(std::span<const ChannelROI> rois) {
    ordered_json j = ordered_json::array();
    for (const ChannelROI& r : rois)
        j.push_back({{"id", r.id}, {"x", r.center_x}, {"y", r.center_y}, {"radius", r.radius}});
    return j;
}

/// Seven-spot default layout: the direct image at the sensor centre and
/// six mirror spots on a ring, all well separated at the default radius.
inline std::vector<ChannelROI> default_rois() {
    return {{"s1", 128.0, 38.0, 10.0},  {"s2", 206.0, 83.0, 10.0}, {"s3", 128.0, 128.0, 10.0},
            {"s4", 206.0, 173.0, 10.0}, {"s5", 128.0, 218.0, 10.0}, {"s6", 50.0, 173.0, 10.0},
            {"s7", 50.0, 83.0, 10.0}};
}

} // namespace photostat
