// photostat: command-line front end for the photon-statistics toolkit.
//
// Subcommands: simulate, ingest, cluster, correlate, pnr, report.
// Exit codes: 0 success, 1 usage/config error, 2 data error.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <photostat/photostat.hpp>
#include <photostat/report_io.hpp>

namespace ps = photostat;
using ps::ordered_json;

namespace {

struct GlobalOptions {
    int threads = 0; // 0 = hardware
    bool error_json = false;
};

double elapsed_s(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string stem_of(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

// Apply a JSON config document: every key must be a known option, and
// command-line flags win over config values.
class ConfigDoc {
  public:
    ConfigDoc(CLI::App* cmd, const std::string& path) : cmd_(cmd) {
        if (path.empty()) return;
        doc_ = ordered_json::parse(ps::read_text_file(path), nullptr, false);
        if (doc_.is_discarded()) throw ps::ConfigInvalid("config file is not valid JSON: " + path);
        if (!doc_.is_object()) throw ps::ConfigInvalid("config file must hold a JSON object");
    }

    /// Bind a config key to its option; `flag` is needed where the option
    /// name differs from the underscore-to-dash translation of the key.
    template <typename T>
    void apply(const std::string& key, T& value, std::string flag = "") {
        known_.push_back(key);
        if (!doc_.is_object() || !doc_.contains(key)) return;
        if (flag.empty()) {
            flag = "--" + key;
            for (char& c : flag) c = c == '_' ? '-' : c;
        }
        const CLI::Option* opt = cmd_->get_option_no_throw(flag);
        if (!opt) opt = cmd_->get_option_no_throw(key); // positional
        if (opt && opt->count() > 0) return;            // explicit flag wins
        try {
            value = doc_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ps::ConfigInvalid("config key '" + key + "' has the wrong type");
        }
    }

    void finish() const {
        if (!doc_.is_object()) return;
        for (auto it = doc_.begin(); it != doc_.end(); ++it) {
            bool ok = false;
            for (const std::string& k : known_)
                if (k == it.key()) ok = true;
            if (!ok) throw ps::ConfigInvalid("unknown config key '" + it.key() + "'");
        }
    }

  private:
    CLI::App* cmd_;
    ordered_json doc_;
    std::vector<std::string> known_;
};

ps::SourceKind parse_model(const std::string& name) {
    if (name == "coherent") return ps::SourceKind::coherent;
    if (name == "thermal" || name == "thermal_single_mode")
        return ps::SourceKind::thermal_single_mode;
    if (name == "multimode" || name == "thermal_multimode")
        return ps::SourceKind::thermal_multimode;
    if (name == "fock" || name == "fock_attenuated") return ps::SourceKind::fock_attenuated;
    if (name == "sbsl" || name == "sbsl_like") return ps::SourceKind::sbsl_like;
    throw ps::ConfigInvalid("unknown source model '" + name + "'");
}

std::vector<ps::ChannelROI> load_rois(const std::string& path) {
    if (path.empty()) return ps::default_rois();
    return ps::rois_from_json(ps::read_text_file(path));
}

std::vector<ps::PhotonEvent> load_events_csv(const std::string& path) {
    std::string text = ps::read_text_file(path);
    std::vector<ps::PhotonEvent> events;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos
                                                                     : eol - pos);
        pos = eol == std::string::npos ? text.size() : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line_no == 1) continue;
        ps::PhotonEvent ev;
        unsigned long long tot = 0, size = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%llu,%llu", &ev.cx, &ev.cy, &ev.toa_ps, &tot,
                        &size) != 5)
            throw ps::MalformedRow(line_no, line);
        ev.total_tot = tot;
        ev.size = static_cast<std::uint32_t>(size);
        events.push_back(ev);
    }
    return events;
}

std::string events_to_csv(const std::vector<ps::PhotonEvent>& events) {
    std::string out = "cx,cy,toa_ps,total_tot,size\n";
    char buf[160];
    for (const ps::PhotonEvent& ev : events) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.3f,%llu,%u\n", ev.cx, ev.cy, ev.toa_ps,
                      static_cast<unsigned long long>(ev.total_tot), ev.size);
        out += buf;
    }
    return out;
}

void emit(const ordered_json& summary) { std::cout << summary.dump(2) << "\n"; }

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string config_path;
    std::string out_path;
    std::string kind = "timetag";
    std::string model_name = "coherent";
    double mean = 3.5;
    double modes = 5.0;
    int fock_n = 1;
    double eta = 1.0;
    double q_target = -0.45;
    double rate_hz = 28060.0;
    double pulse_width_ps = 150.0;
    std::uint64_t seed = 1;
    // timetag
    std::string rois_path;
    std::vector<double> efficiency;
    double duration_s = 22.0;
    double dark_rate = 0.0;
    double jitter_fwhm_ps = 7000.0;
    double psf_sigma = 0.8;
    double spot_sigma = 2.0;
    double tot_peak = 48.0;
    unsigned tot_threshold = 4;
    double walk_scale_ps = 60000.0;
    unsigned tick_ps = 1562;
    unsigned width = 256;
    unsigned height = 256;
    // frames
    std::uint64_t frames = 10000;
    double exposure_us = 172.8;
    unsigned frame_width = 1;
    unsigned frame_height = 1;
    double center_x = 0.0;
    double center_y = 0.0;
    double profile_sigma = 1.5;
    double peak_eff = 1.0;
};

void run_simulate(const GlobalOptions& global, CLI::App* cmd, SimulateArgs& a) {
    ConfigDoc config(cmd, a.config_path);
    config.apply("out", a.out_path);
    config.apply("kind", a.kind);
    config.apply("model", a.model_name);
    config.apply("mean", a.mean);
    config.apply("modes", a.modes);
    config.apply("fock_n", a.fock_n);
    config.apply("eta", a.eta);
    config.apply("q_target", a.q_target);
    config.apply("rate_hz", a.rate_hz, "--rate");
    config.apply("pulse_width_ps", a.pulse_width_ps);
    config.apply("seed", a.seed);
    config.apply("rois", a.rois_path);
    config.apply("efficiency", a.efficiency);
    config.apply("duration_s", a.duration_s, "--duration");
    config.apply("dark_rate", a.dark_rate);
    config.apply("jitter_fwhm_ps", a.jitter_fwhm_ps);
    config.apply("psf_sigma", a.psf_sigma);
    config.apply("spot_sigma", a.spot_sigma);
    config.apply("tot_peak", a.tot_peak);
    config.apply("tot_threshold", a.tot_threshold);
    config.apply("walk_scale_ps", a.walk_scale_ps);
    config.apply("tick_ps", a.tick_ps);
    config.apply("width", a.width);
    config.apply("height", a.height);
    config.apply("frames", a.frames);
    config.apply("exposure_us", a.exposure_us);
    config.apply("frame_width", a.frame_width);
    config.apply("frame_height", a.frame_height);
    config.apply("center_x", a.center_x);
    config.apply("center_y", a.center_y);
    config.apply("profile_sigma", a.profile_sigma);
    config.apply("peak_eff", a.peak_eff);
    config.finish();

    if (a.out_path.empty()) throw ps::ConfigInvalid("simulate needs --out");

    ps::SourceModel model;
    model.kind = parse_model(a.model_name);
    model.mean = a.mean;
    model.n_modes = a.modes;
    model.fock_n = a.fock_n;
    model.fock_eta = a.eta;
    model.q_target = a.q_target;
    model.repetition_rate_hz = a.rate_hz;
    model.pulse_width_ps = a.pulse_width_ps;

    auto start = std::chrono::steady_clock::now();
    if (a.kind == "timetag") {
        auto rois = load_rois(a.rois_path);
        ps::DetectorModel det;
        det.channel_efficiency = a.efficiency;
        if (det.channel_efficiency.empty()) det.channel_efficiency.assign(rois.size(), 0.008);
        if (det.channel_efficiency.size() == 1 && rois.size() > 1)
            det.channel_efficiency.assign(rois.size(), a.efficiency[0]);
        det.dark_rate_hz_per_px = a.dark_rate;
        det.jitter_fwhm_ps = a.jitter_fwhm_ps;
        det.psf_sigma_px = a.psf_sigma;
        det.spot_sigma_px = a.spot_sigma;
        det.tot_peak = a.tot_peak;
        det.tot_threshold = static_cast<std::uint16_t>(a.tot_threshold);
        det.walk_scale_ps = a.walk_scale_ps;
        det.tick_ps = a.tick_ps;
        det.sensor_width = static_cast<std::uint16_t>(a.width);
        det.sensor_height = static_cast<std::uint16_t>(a.height);

        ps::TimetagRun run =
            ps::simulate_timetag_run(model, det, rois, a.duration_s, a.seed, global.threads);
        ps::write_binary_file(a.out_path, ps::write_stream(run.header, run.hits));

        double dt = elapsed_s(start);
        emit(ordered_json{{"command", "simulate"},
                          {"kind", "timetag"},
                          {"model", ps::to_string(model.kind)},
                          {"out", a.out_path},
                          {"pulses", run.pulse_count},
                          {"photon_events", run.photon_count},
                          {"dark_counts", run.dark_count},
                          {"raw_hits", run.hits.size()},
                          {"effective_rate_hz", model.effective_rate_hz()},
                          {"seconds", dt},
                          {"hits_per_s", dt > 0 ? run.hits.size() / dt : 0.0}});
    } else if (a.kind == "frames") {
        ps::DetectorModel det;
        det.channel_efficiency = {};
        det.dark_rate_hz_per_px = a.dark_rate;
        ps::FrameGeometry geom;
        geom.width = static_cast<std::uint16_t>(a.frame_width);
        geom.height = static_cast<std::uint16_t>(a.frame_height);
        geom.center_x = a.center_x;
        geom.center_y = a.center_y;
        geom.profile_sigma_px = a.profile_sigma;
        geom.peak_efficiency = a.peak_eff;

        ps::FrameStack stack = ps::simulate_frames(model, det, geom, a.frames, a.exposure_us,
                                                   a.seed, global.threads);
        ps::write_binary_file(a.out_path, ps::write_frames(stack));

        double dt = elapsed_s(start);
        std::uint64_t total = 0;
        for (auto c : stack.counts) total += c;
        emit(ordered_json{{"command", "simulate"},
                          {"kind", "frames"},
                          {"model", ps::to_string(model.kind)},
                          {"out", a.out_path},
                          {"frames", stack.frame_count},
                          {"exposure_us", stack.exposure_us},
                          {"total_photons", total},
                          {"seconds", dt}});
    } else {
        throw ps::ConfigInvalid("simulate kind must be 'timetag' or 'frames'");
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

void run_ingest(const GlobalOptions&, const std::string& input, const std::string& out_path,
                unsigned tick_ps, unsigned width, unsigned height) {
    auto start = std::chrono::steady_clock::now();
    ps::StreamData data;
    if (input.size() > 4 && input.substr(input.size() - 4) == ".csv") {
        data.header.tick_picoseconds = tick_ps;
        data.header.sensor_width = static_cast<std::uint16_t>(width);
        data.header.sensor_height = static_cast<std::uint16_t>(height);
        data.hits = ps::import_csv(ps::read_text_file(input));
        data.header.record_count = data.hits.size();
    } else {
        data = ps::read_stream(ps::read_binary_file(input));
    }
    if (!out_path.empty())
        ps::write_binary_file(out_path, ps::write_stream(data.header, data.hits));

    std::uint64_t first = data.hits.empty() ? 0 : data.hits.front().toa_ticks;
    std::uint64_t last = first;
    for (const ps::RawHit& h : data.hits) {
        first = std::min(first, h.toa_ticks);
        last = std::max(last, h.toa_ticks);
    }
    double dt = elapsed_s(start);
    emit(ordered_json{{"command", "ingest"},
                      {"input", input},
                      {"records", data.hits.size()},
                      {"sensor", {data.header.sensor_width, data.header.sensor_height}},
                      {"tick_ps", data.header.tick_picoseconds},
                      {"span_s", data.hits.empty()
                                     ? 0.0
                                     : (last - first) * data.header.tick_picoseconds * 1e-12},
                      {"trailing_bytes", data.trailing_bytes},
                      {"seconds", dt},
                      {"hits_per_s", dt > 0 ? data.hits.size() / dt : 0.0}});
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

struct ClusterArgs {
    std::string config_path;
    std::string input;
    std::string out_path;
    std::string walk_table_path;
    std::string calibrate_out;
    int radius = 2;
    double window_ns = 100.0;
    double pulse_period_ps = 0.0;
    unsigned walk_bin_width = 2;
    unsigned walk_min_samples = 20;
};

void run_cluster(const GlobalOptions& global, CLI::App* cmd, ClusterArgs& a) {
    ConfigDoc config(cmd, a.config_path);
    config.apply("input", a.input);
    config.apply("out", a.out_path);
    config.apply("walk_table", a.walk_table_path);
    config.apply("calibrate_walk", a.calibrate_out);
    config.apply("radius", a.radius);
    config.apply("window_ns", a.window_ns);
    config.apply("pulse_period_ps", a.pulse_period_ps);
    config.apply("walk_bin_width", a.walk_bin_width);
    config.apply("walk_min_samples", a.walk_min_samples);
    config.finish();
    if (a.input.empty()) throw ps::ConfigInvalid("cluster needs an input stream");

    auto start = std::chrono::steady_clock::now();
    ps::StreamData data = ps::read_stream(ps::read_binary_file(a.input));
    const std::uint32_t tick_ps = data.header.tick_picoseconds;
    const std::size_t n_hits = data.hits.size();

    ps::ClusterParams params;
    params.spatial_radius = a.radius;
    params.temporal_window_ticks =
        static_cast<std::uint64_t>(std::llround(a.window_ns * 1e3 / tick_ps));

    if (!a.calibrate_out.empty()) {
        if (a.pulse_period_ps <= 0)
            throw ps::ConfigInvalid("--calibrate-walk needs --pulse-period-ps");
        std::vector<ps::PulseTaggedHit> tagged;
        tagged.reserve(data.hits.size());
        for (const ps::RawHit& h : data.hits) {
            double t_ps = static_cast<double>(h.toa_ticks) * tick_ps;
            double pulse = std::round(t_ps / a.pulse_period_ps) * a.pulse_period_ps;
            tagged.push_back({h, pulse});
        }
        ps::TimeWalkTable table = ps::calibrate_time_walk(
            tagged, a.walk_bin_width, tick_ps, a.walk_min_samples);
        ps::write_text_file(a.calibrate_out, ps::time_walk_to_csv(table));
        emit(ordered_json{{"command", "cluster"},
                          {"mode", "calibrate-walk"},
                          {"input", a.input},
                          {"out", a.calibrate_out},
                          {"bins", table.offsets_ps.size()},
                          {"monotone_nonincreasing", table.monotone_nonincreasing}});
        return;
    }

    ps::TimeWalkTable walk;
    if (!a.walk_table_path.empty())
        walk = ps::time_walk_from_csv(ps::read_text_file(a.walk_table_path));

    std::vector<ps::PhotonEvent> events = ps::reconstruct_photons(
        std::move(data.hits), params, tick_ps, walk.empty() ? nullptr : &walk, global.threads);
    if (!a.out_path.empty()) ps::write_text_file(a.out_path, events_to_csv(events));

    double mean_size = 0.0;
    std::uint64_t fallback = 0;
    for (const ps::PhotonEvent& ev : events) {
        mean_size += ev.size;
        fallback += ev.unweighted_centroid ? 1 : 0;
    }
    if (!events.empty()) mean_size /= static_cast<double>(events.size());
    double dt = elapsed_s(start);
    emit(ordered_json{{"command", "cluster"},
                      {"input", a.input},
                      {"raw_hits", n_hits},
                      {"photon_events", events.size()},
                      {"mean_cluster_size", mean_size},
                      {"unweighted_centroids", fallback},
                      {"seconds", dt},
                      {"hits_per_s", dt > 0 ? n_hits / dt : 0.0}});
}

// ---------------------------------------------------------------------------
// correlate
// ---------------------------------------------------------------------------

struct CorrelateArgs {
    std::string config_path;
    std::string input;
    std::string events_path;
    std::string counts_path;
    std::string rois_path;
    std::string walk_table_path;
    std::string out_dir = ".";
    double gate_ns = 25.0;
    double rate_hz = 28060.0;
    double duration_s = 0.0;
    double background = 4.3;
    int max_fold = 5;
    int radius = 2;
    double window_ns = 100.0;
};

void run_correlate(const GlobalOptions& global, CLI::App* cmd, CorrelateArgs& a) {
    ConfigDoc config(cmd, a.config_path);
    config.apply("input", a.input);
    config.apply("events", a.events_path);
    config.apply("from_counts", a.counts_path);
    config.apply("rois", a.rois_path);
    config.apply("walk_table", a.walk_table_path);
    config.apply("out_dir", a.out_dir);
    config.apply("gate_ns", a.gate_ns);
    config.apply("rate_hz", a.rate_hz, "--rate");
    config.apply("duration_s", a.duration_s, "--duration");
    config.apply("background", a.background);
    config.apply("max_fold", a.max_fold);
    config.apply("radius", a.radius);
    config.apply("window_ns", a.window_ns);
    config.finish();

    std::filesystem::create_directories(a.out_dir);
    auto out_file = [&](const char* name) { return (std::filesystem::path(a.out_dir) / name).string(); };

    if (!a.counts_path.empty()) {
        auto rows = ps::parse_counts_csv(ps::read_text_file(a.counts_path));
        std::string csv = ps::counts_results_csv(rows, a.rate_hz);
        ps::write_text_file(out_file("gn_results.csv"), csv);
        ordered_json results = ordered_json::array();
        for (const ps::CountsRow& r : rows) {
            ps::RunParams params;
            params.repetition_rate_hz = a.rate_hz;
            params.duration_s = r.duration_s;
            ps::GnEstimate est = ps::estimate_gn(r.coincidences, r.singles, params,
                                                 static_cast<int>(r.singles.size()));
            results.push_back({{"set", r.label},
                               {"fold", r.singles.size()},
                               {"C", r.coincidences},
                               {"g", est.g},
                               {"sigma", est.sigma}});
        }
        ordered_json j{{"command", "correlate"},
                       {"mode", "counts"},
                       {"repetition_rate_hz", a.rate_hz},
                       {"results", results}};
        ps::write_text_file(out_file("gn_results.json"), j.dump(2) + "\n");
        emit(j);
        return;
    }

    auto start = std::chrono::steady_clock::now();
    std::vector<ps::PhotonEvent> events;
    std::size_t n_hits = 0;
    std::uint32_t tick_ps = 1562;
    if (!a.events_path.empty()) {
        events = load_events_csv(a.events_path);
    } else {
        if (a.input.empty())
            throw ps::ConfigInvalid("correlate needs a stream file, --events or --from-counts");
        ps::StreamData data = ps::read_stream(ps::read_binary_file(a.input));
        tick_ps = data.header.tick_picoseconds;
        n_hits = data.hits.size();
        ps::ClusterParams params;
        params.spatial_radius = a.radius;
        params.temporal_window_ticks =
            static_cast<std::uint64_t>(std::llround(a.window_ns * 1e3 / tick_ps));
        ps::TimeWalkTable walk;
        if (!a.walk_table_path.empty())
            walk = ps::time_walk_from_csv(ps::read_text_file(a.walk_table_path));
        events = ps::reconstruct_photons(std::move(data.hits), params, tick_ps,
                                         walk.empty() ? nullptr : &walk, global.threads);
    }

    double duration = a.duration_s;
    if (duration <= 0.0) {
        double max_ps = 0.0;
        for (const ps::PhotonEvent& ev : events) max_ps = std::max(max_ps, ev.toa_ps);
        duration = max_ps * 1e-12;
        if (duration <= 0.0) throw ps::ConfigInvalid("cannot infer duration from empty data");
    }

    auto rois = load_rois(a.rois_path);
    ps::RunParams params;
    params.repetition_rate_hz = a.rate_hz;
    params.duration_s = duration;
    params.gate_width_ns = a.gate_ns;
    params.background_rate = a.background;

    ps::RunReport report = ps::correlate_run(events, rois, params, a.max_fold, global.threads);

    ordered_json j = ps::gn_results_json(report);
    ps::write_text_file(out_file("gn_results.json"), j.dump(2) + "\n");
    ps::write_text_file(out_file("gn_results.csv"), ps::gn_results_csv(report));
    ps::write_text_file(out_file("fig2_data.csv"), ps::fig2_csv(report));

    double dt = elapsed_s(start);
    emit(ordered_json{{"command", "correlate"},
                      {"input", a.input.empty() ? a.events_path : a.input},
                      {"raw_hits", n_hits},
                      {"photon_events", events.size()},
                      {"rejected_events", report.rejected},
                      {"subsets", report.results.size()},
                      {"out_dir", a.out_dir},
                      {"seconds", dt},
                      {"hits_per_s", (dt > 0 && n_hits > 0) ? n_hits / dt : 0.0}});
}

// ---------------------------------------------------------------------------
// pnr
// ---------------------------------------------------------------------------

struct PnrArgs {
    std::string config_path;
    std::vector<std::string> inputs;
    std::string region = "brightest";
    std::string frame_range;
    std::string out_dir = ".";
    int bootstrap = 1000;
    std::uint64_t seed = 0x9027c5e7f2b1d04bULL;
};

void run_pnr(const GlobalOptions& global, CLI::App* cmd, PnrArgs& a) {
    ConfigDoc config(cmd, a.config_path);
    config.apply("inputs", a.inputs);
    config.apply("region", a.region);
    config.apply("frames", a.frame_range);
    config.apply("out_dir", a.out_dir);
    config.apply("bootstrap", a.bootstrap);
    config.apply("seed", a.seed);
    config.finish();
    if (a.inputs.empty()) throw ps::ConfigInvalid("pnr needs at least one .phfr input");
    std::filesystem::create_directories(a.out_dir);
    auto out_file = [&](const std::string& name) {
        return (std::filesystem::path(a.out_dir) / name).string();
    };

    std::vector<std::pair<std::string, ps::PhotonNumberStats>> all_stats;
    ordered_json summary = ordered_json::array();
    for (std::size_t i = 0; i < a.inputs.size(); ++i) {
        const std::string& input = a.inputs[i];
        ps::FrameStack stack = ps::read_frames(ps::read_binary_file(input));

        std::vector<ps::PixelRef> region;
        if (a.region == "all") {
            region = ps::region_all(stack);
        } else if (a.region == "brightest") {
            region = ps::region_brightest(stack);
        } else {
            unsigned x = 0, y = 0;
            if (std::sscanf(a.region.c_str(), "%u,%u", &x, &y) != 2)
                throw ps::ConfigInvalid("region must be 'all', 'brightest' or 'x,y'");
            region = {ps::PixelRef{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y)}};
        }

        std::uint64_t frame_begin = 0, frame_end = stack.frame_count;
        if (!a.frame_range.empty()) {
            unsigned long long b = 0, e = 0;
            if (std::sscanf(a.frame_range.c_str(), "%llu:%llu", &b, &e) != 2)
                throw ps::ConfigInvalid("frame range must be 'begin:end'");
            frame_begin = b;
            frame_end = e;
        }

        ps::PhotonNumberHistogram hist =
            ps::build_histogram(stack, region, frame_begin, frame_end, global.threads);
        ps::PhotonNumberStats stats = ps::compute_stats(hist, a.bootstrap, a.seed);
        ps::ModelFit poisson = ps::fit_model(hist, ps::PhotonModel::poisson);
        ps::ClassificationResult verdict = ps::classify(stats);

        std::string stem = stem_of(input);
        ps::write_text_file(out_file(stem + "_hist.csv"), ps::histogram_csv(hist, poisson.mean));
        ordered_json stats_json = ps::pnr_stats_json(stats, poisson, verdict);
        stats_json["input"] = input;
        ps::write_text_file(out_file(stem + "_stats.json"), stats_json.dump(2) + "\n");
        if (i == 0)
            ps::write_text_file(out_file("fig3_data.csv"), ps::histogram_csv(hist, poisson.mean));

        all_stats.push_back({stem, stats});
        summary.push_back(stats_json);
    }
    if (all_stats.size() > 1)
        ps::write_text_file(out_file("fig3c_data.csv"), ps::fig3c_csv(all_stats));

    emit(ordered_json{{"command", "pnr"}, {"runs", summary}, {"out_dir", a.out_dir}});
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void run_report(const std::string& gn_path, const std::string& pnr_path,
                const std::string& out_path) {
    std::string text = "# photostat run report\n";
    if (!gn_path.empty()) {
        ordered_json gn = ordered_json::parse(ps::read_text_file(gn_path));
        text += "\n## Temporal correlations\n\n";
        if (gn.contains("run")) {
            text += "- duration: " + gn["run"]["duration_s"].dump() + " s, gate " +
                    gn["run"]["gate_width_ns"].dump() + " ns\n";
        }
        if (gn.contains("results")) {
            std::map<int, std::pair<double, int>> by_fold; // fold -> (sum g, count)
            for (const auto& r : gn["results"]) {
                if (r.contains("status")) continue;
                int fold = r["fold"].get<int>();
                by_fold[fold].first += r["g"].get<double>();
                by_fold[fold].second += 1;
            }
            text += "\n| fold | subsets | mean g |\n|---|---|---|\n";
            for (const auto& [fold, acc] : by_fold) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "| %d | %d | %.4f |\n", fold, acc.second,
                              acc.second ? acc.first / acc.second : 0.0);
                text += buf;
            }
        }
    }
    if (!pnr_path.empty()) {
        ordered_json pj = ordered_json::parse(ps::read_text_file(pnr_path));
        text += "\n## Photon-number statistics\n\n";
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "- mean %.4f, variance %.4f, g2 %.4f +- %.4f, Q %.4f, E %.4f (%s)\n",
                      pj["mean"].get<double>(), pj["variance"].get<double>(),
                      pj["g2"].get<double>(), pj["g2_uncertainty"].get<double>(),
                      pj["Q"].get<double>(), pj["E"].get<double>(),
                      pj["classification"].get<std::string>().c_str());
        text += buf;
    }
    if (!out_path.empty())
        ps::write_text_file(out_path, text);
    else
        std::cout << text;
}

} // namespace

int main(int argc, char** argv) {
    GlobalOptions global;
    if (const char* env = std::getenv("PHOTOSTAT_THREADS")) global.threads = std::atoi(env);

    CLI::App app{"photon statistics toolkit: time-tag correlation and photon-number analysis"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");
    app.add_option("--threads", global.threads,
                   "worker threads (0 = hardware, PHOTOSTAT_THREADS overrides the default)");
    app.add_flag("--error-json", global.error_json, "emit errors as JSON on stderr");

    // simulate
    SimulateArgs sim;
    CLI::App* c_sim = app.add_subcommand("simulate", "generate Monte Carlo runs");
    c_sim->add_option("--config", sim.config_path, "JSON config (flags override)");
    c_sim->add_option("--out", sim.out_path, "output .phst or .phfr file");
    c_sim->add_option("--kind", sim.kind, "timetag|frames");
    c_sim->add_option("--model", sim.model_name, "coherent|thermal|multimode|fock|sbsl");
    c_sim->add_option("--mean", sim.mean, "mean photons per pulse");
    c_sim->add_option("--modes", sim.modes, "thermal mode count");
    c_sim->add_option("--fock-n", sim.fock_n, "photon number before attenuation");
    c_sim->add_option("--eta", sim.eta, "attenuation survival probability");
    c_sim->add_option("--q-target", sim.q_target, "Mandel Q target (sbsl model)");
    c_sim->add_option("--rate", sim.rate_hz, "pulse repetition rate [Hz]");
    c_sim->add_option("--pulse-width-ps", sim.pulse_width_ps, "pulse width [ps]");
    c_sim->add_option("--seed", sim.seed, "RNG seed");
    c_sim->add_option("--rois", sim.rois_path, "ROI JSON file (default: 7-spot layout)");
    c_sim->add_option("--efficiency", sim.efficiency,
                      "per-channel efficiency (single value broadcasts)");
    c_sim->add_option("--duration", sim.duration_s, "run duration [s]");
    c_sim->add_option("--dark-rate", sim.dark_rate, "dark counts [1/s/pixel]");
    c_sim->add_option("--jitter-fwhm-ps", sim.jitter_fwhm_ps, "timing jitter FWHM [ps]");
    c_sim->add_option("--psf-sigma", sim.psf_sigma, "flash PSF sigma [px]");
    c_sim->add_option("--spot-sigma", sim.spot_sigma, "photon scatter around ROI centre [px]");
    c_sim->add_option("--tot-peak", sim.tot_peak, "flash peak ToT [ticks]");
    c_sim->add_option("--tot-threshold", sim.tot_threshold, "pixel ToT threshold [ticks]");
    c_sim->add_option("--walk-scale-ps", sim.walk_scale_ps, "time-walk scale [ps*ticks]");
    c_sim->add_option("--tick-ps", sim.tick_ps, "clock tick [ps]");
    c_sim->add_option("--width", sim.width, "sensor width [px]");
    c_sim->add_option("--height", sim.height, "sensor height [px]");
    c_sim->add_option("--frames", sim.frames, "frame count");
    c_sim->add_option("--exposure-us", sim.exposure_us, "frame exposure [us]");
    c_sim->add_option("--frame-width", sim.frame_width, "frame width [px]");
    c_sim->add_option("--frame-height", sim.frame_height, "frame height [px]");
    c_sim->add_option("--center-x", sim.center_x, "spot centre x [px]");
    c_sim->add_option("--center-y", sim.center_y, "spot centre y [px]");
    c_sim->add_option("--profile-sigma", sim.profile_sigma, "spot profile sigma [px]");
    c_sim->add_option("--peak-eff", sim.peak_eff, "detection probability at the peak pixel");

    // ingest
    std::string in_input, in_out;
    unsigned in_tick = 1562, in_width = 256, in_height = 256;
    CLI::App* c_in = app.add_subcommand("ingest", "read a stream or CSV and summarize it");
    c_in->add_option("input", in_input, "input .phst or .csv")->required();
    c_in->add_option("--out", in_out, "write canonical .phst");
    c_in->add_option("--tick-ps", in_tick, "tick duration for CSV input");
    c_in->add_option("--width", in_width, "sensor width for CSV input");
    c_in->add_option("--height", in_height, "sensor height for CSV input");

    // cluster
    ClusterArgs clu;
    CLI::App* c_clu = app.add_subcommand("cluster", "reconstruct photon events from raw hits");
    c_clu->add_option("--config", clu.config_path, "JSON config (flags override)");
    c_clu->add_option("input", clu.input, "input .phst");
    c_clu->add_option("--out", clu.out_path, "photon events CSV");
    c_clu->add_option("--radius", clu.radius, "spatial radius [px]");
    c_clu->add_option("--window-ns", clu.window_ns, "temporal window [ns]");
    c_clu->add_option("--walk-table", clu.walk_table_path, "time-walk table CSV to apply");
    c_clu->add_option("--calibrate-walk", clu.calibrate_out, "derive a walk table, write CSV");
    c_clu->add_option("--pulse-period-ps", clu.pulse_period_ps,
                      "pulse period for calibration [ps]");
    c_clu->add_option("--walk-bin-width", clu.walk_bin_width, "ToT bin width [ticks]");
    c_clu->add_option("--walk-min-samples", clu.walk_min_samples, "samples needed per bin");

    // correlate
    CorrelateArgs cor;
    CLI::App* c_cor = app.add_subcommand("correlate", "multi-fold coincidence analysis");
    c_cor->add_option("--config", cor.config_path, "JSON config (flags override)");
    c_cor->add_option("input", cor.input, "input .phst (clustered internally)");
    c_cor->add_option("--events", cor.events_path, "clustered events CSV");
    c_cor->add_option("--from-counts", cor.counts_path, "pre-counted singles/coincidences CSV");
    c_cor->add_option("--rois", cor.rois_path, "ROI JSON file (default: 7-spot layout)");
    c_cor->add_option("--walk-table", cor.walk_table_path, "time-walk table CSV to apply");
    c_cor->add_option("--out-dir", cor.out_dir, "directory for result files");
    c_cor->add_option("--gate-ns", cor.gate_ns, "coincidence gate [ns]");
    c_cor->add_option("--rate", cor.rate_hz, "pulse repetition rate [Hz]");
    c_cor->add_option("--duration", cor.duration_s, "run duration [s] (0: infer from data)");
    c_cor->add_option("--background", cor.background, "background [1/s/pixel]");
    c_cor->add_option("--max-fold", cor.max_fold, "highest coincidence fold");
    c_cor->add_option("--radius", cor.radius, "clustering spatial radius [px]");
    c_cor->add_option("--window-ns", cor.window_ns, "clustering temporal window [ns]");

    // pnr
    PnrArgs pnr;
    CLI::App* c_pnr = app.add_subcommand("pnr", "photon-number statistics from frame stacks");
    c_pnr->add_option("--config", pnr.config_path, "JSON config (flags override)");
    c_pnr->add_option("inputs", pnr.inputs, "input .phfr files");
    c_pnr->add_option("--region", pnr.region, "all|brightest|x,y");
    c_pnr->add_option("--frames", pnr.frame_range, "frame range begin:end");
    c_pnr->add_option("--out-dir", pnr.out_dir, "directory for result files");
    c_pnr->add_option("--bootstrap", pnr.bootstrap, "bootstrap resamples");
    c_pnr->add_option("--seed", pnr.seed, "bootstrap RNG seed");

    // report
    std::string rep_gn, rep_pnr, rep_out;
    CLI::App* c_rep = app.add_subcommand("report", "summarize result files");
    c_rep->add_option("--correlate", rep_gn, "gn_results.json");
    c_rep->add_option("--pnr", rep_pnr, "stats JSON from the pnr command");
    c_rep->add_option("--out", rep_out, "markdown output (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (global.error_json) {
            ordered_json err{{"error", {{"type", "usage"}, {"message", e.what()}}}};
            std::cerr << err.dump() << "\n";
            return e.get_exit_code() == 0 ? 0 : 1;
        }
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (c_sim->parsed()) run_simulate(global, c_sim, sim);
        if (c_in->parsed()) run_ingest(global, in_input, in_out, in_tick, in_width, in_height);
        if (c_clu->parsed()) run_cluster(global, c_clu, clu);
        if (c_cor->parsed()) run_correlate(global, c_cor, cor);
        if (c_pnr->parsed()) run_pnr(global, c_pnr, pnr);
        if (c_rep->parsed()) run_report(rep_gn, rep_pnr, rep_out);
    } catch (const ps::ConfigError& e) {
        if (global.error_json)
            std::cerr << ordered_json{{"error", {{"type", "config"}, {"message", e.what()}}}}.dump()
                      << "\n";
        else
            std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        if (global.error_json)
            std::cerr << ordered_json{{"error", {{"type", "data"}, {"message", e.what()}}}}.dump()
                      << "\n";
        else
            std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
