#include <doctest.h>

#include <cmath>

#include <photostat/photostat.hpp>
#include <photostat/report_io.hpp>

using namespace photostat;

namespace {

std::vector<ChannelROI> two_rois() {
    return {{"a", 60, 60, 10}, {"b", 180, 180, 10}};
}

DetectorModel detector_for(std::size_t n_channels, double efficiency) {
    DetectorModel det;
    det.channel_efficiency.assign(n_channels, efficiency);
    return det;
}

/// File round trip plus clustering, mirroring the production path.
std::vector<PhotonEvent> run_through_files(const TimetagRun& run, int threads = 1) {
    auto bytes = write_stream(run.header, run.hits);
    StreamData data = read_stream(bytes);
    ClusterParams params;
    params.temporal_window_ticks =
        static_cast<std::uint64_t>(std::llround(100e3 / data.header.tick_picoseconds));
    return reconstruct_photons(std::move(data.hits), params, data.header.tick_picoseconds,
                               nullptr, threads);
}

RunParams params_for(const SourceModel& model, double duration_s, double gate_ns = 25.0) {
    RunParams p;
    p.repetition_rate_hz = model.effective_rate_hz();
    p.duration_s = duration_s;
    p.gate_width_ns = gate_ns;
    p.background_rate = 0.0;
    return p;
}

} // namespace

TEST_CASE("coherent light closes to g2 = 1 through the full file pipeline") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 3.0;
    auto rois = two_rois();
    DetectorModel det = detector_for(2, 0.01); // ~0.03 detected per pulse per channel
    const double duration = 6.0;

    TimetagRun run = simulate_timetag_run(model, det, rois, duration, 314);
    auto events = run_through_files(run);
    RunReport report = correlate_run(events, rois, params_for(model, duration), 2);

    REQUIRE(report.results.size() == 1);
    const CorrelationResult& r = report.results[0];
    CHECK(r.coincidences > 50);
    CHECK(std::fabs(r.g - 1.0) <= 3.0 * r.sigma);
}

TEST_CASE("one thermal beam split over two ROIs gives g2 = 2") {
    SourceModel model;
    model.kind = SourceKind::thermal_single_mode;
    model.mean = 3.0;
    auto rois = two_rois();
    DetectorModel det = detector_for(2, 0.008);
    const double duration = 6.0;

    TimetagRun run = simulate_timetag_run(model, det, rois, duration, 2718);
    auto events = run_through_files(run);
    RunReport report = correlate_run(events, rois, params_for(model, duration), 2);

    const CorrelationResult& r = report.results[0];
    CHECK(r.coincidences > 50);
    CHECK(std::fabs(r.g - 2.0) <= 3.0 * r.sigma + 0.15);
}

TEST_CASE("a heralded single photon cannot coincide with itself") {
    SourceModel model;
    model.kind = SourceKind::fock_attenuated;
    model.fock_n = 1;
    model.fock_eta = 0.6;
    auto rois = two_rois();
    DetectorModel det = detector_for(2, 0.45);
    const double duration = 2.0;

    TimetagRun run = simulate_timetag_run(model, det, rois, duration, 99);
    auto events = run_through_files(run);
    RunReport report = correlate_run(events, rois, params_for(model, duration), 2);

    CHECK(report.channels[0].raw_singles > 5000);
    CHECK(report.results[0].coincidences == 0);
    CHECK(report.results[0].g == 0.0);
}

TEST_CASE("analytic g2 closure across source families") {
    struct Case {
        SourceKind kind;
        double mean;
        double n_modes;
        int fock_n;
        double eta;
        double slack; // extra absolute slack on top of 3 sigma
    };
    const Case cases[] = {
        {SourceKind::thermal_multimode, 3.0, 1, 0, 0, 0.25},
        {SourceKind::thermal_multimode, 3.0, 5, 0, 0, 0.10},
        {SourceKind::thermal_multimode, 3.0, 50, 0, 0, 0.10},
        {SourceKind::fock_attenuated, 0, 0, 2, 0.9, 0.06},
        {SourceKind::fock_attenuated, 0, 0, 10, 0.5, 0.08},
    };
    std::uint64_t seed = 5000;
    for (const Case& c : cases) {
        SourceModel model;
        model.kind = c.kind;
        model.mean = c.mean;
        model.n_modes = c.n_modes;
        model.fock_n = c.fock_n;
        model.fock_eta = c.eta;

        auto rois = two_rois();
        DetectorModel det = detector_for(2, 0.012);
        const double duration = 6.0;
        TimetagRun run = simulate_timetag_run(model, det, rois, duration, seed++);
        auto events = run_through_files(run);
        RunReport report = correlate_run(events, rois, params_for(model, duration), 2);

        const CorrelationResult& r = report.results[0];
        double expected = analytic_g2(model);
        INFO("kind ", static_cast<int>(c.kind), " modes ", c.n_modes, " fock ", c.fock_n,
             " got ", r.g, " expected ", expected);
        CHECK(std::fabs(r.g - expected) <= 3.0 * r.sigma + c.slack);
    }
}

TEST_CASE("sbsl-like light recovers its sub-Poissonian g2 through the correlator") {
    SourceModel model;
    model.kind = SourceKind::sbsl_like;
    model.mean = 3.5;
    model.q_target = -0.45;
    auto rois = two_rois();
    DetectorModel det = detector_for(2, 0.0086); // ~0.03 detected/pulse/channel
    const double duration = 22.0;

    TimetagRun run = simulate_timetag_run(model, det, rois, duration, 87001);
    auto events = run_through_files(run);
    RunReport report = correlate_run(events, rois, params_for(model, duration), 2);

    const CorrelationResult& r = report.results[0];
    CHECK(r.coincidences > 200);
    // Expected g2 = 1 + Q/mean = 0.871; the count-based estimator carries
    // its own counting noise, so the gate is the propagated 3 sigma.
    CHECK(std::fabs(r.g - analytic_g2(model)) <= 3.0 * r.sigma);
    CHECK(r.g < 1.0);
}

TEST_CASE("correlation results do not depend on the ROI listing order") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 3.0;
    std::vector<ChannelROI> rois = {{"a", 60, 60, 10}, {"b", 180, 180, 10}, {"c", 60, 180, 10}};
    DetectorModel det = detector_for(3, 0.01);
    TimetagRun run = simulate_timetag_run(model, det, rois, 3.0, 55);
    auto events = run_through_files(run);

    std::vector<ChannelROI> reversed(rois.rbegin(), rois.rend());
    RunReport fwd = correlate_run(events, rois, params_for(model, 3.0), 3);
    RunReport rev = correlate_run(events, reversed, params_for(model, 3.0), 3);

    auto find = [](const RunReport& rep, const std::vector<std::string>& ids) {
        for (const CorrelationResult& r : rep.results) {
            std::vector<std::string> sorted_ids = r.channel_ids;
            std::sort(sorted_ids.begin(), sorted_ids.end());
            if (sorted_ids == ids) return r;
        }
        REQUIRE(false);
        return rep.results.front();
    };
    for (const CorrelationResult& r : fwd.results) {
        std::vector<std::string> ids = r.channel_ids;
        std::sort(ids.begin(), ids.end());
        const CorrelationResult& other = find(rev, ids);
        CHECK(other.coincidences == r.coincidences);
        CHECK(other.g == r.g);
    }
}

TEST_CASE("binomial thinning leaves g2 unchanged") {
    SourceModel model;
    model.kind = SourceKind::thermal_multimode;
    model.mean = 3.0;
    model.n_modes = 2;
    auto rois = two_rois();
    const double duration = 8.0;

    DetectorModel full = detector_for(2, 0.02);
    DetectorModel thinned = detector_for(2, 0.02 * 0.5); // eta = 0.5

    TimetagRun run_full = simulate_timetag_run(model, full, rois, duration, 808);
    TimetagRun run_thin = simulate_timetag_run(model, thinned, rois, duration, 808);
    auto g_of = [&](const TimetagRun& run) {
        auto events = run_through_files(run);
        return correlate_run(events, rois, params_for(model, duration), 2).results[0];
    };
    CorrelationResult a = g_of(run_full);
    CorrelationResult b = g_of(run_thin);
    double combined = std::sqrt(a.sigma * a.sigma + b.sigma * b.sigma);
    CHECK(std::fabs(a.g - b.g) <= 3.0 * combined);
}

TEST_CASE("walk calibration restores the 7 ns timing resolution") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 3.0;
    std::vector<ChannelROI> rois = {{"a", 128, 128, 10}};
    DetectorModel det = detector_for(1, 0.1);
    det.jitter_fwhm_ps = 7000.0;
    det.walk_scale_ps = 60000.0;
    const double duration = 0.6;

    TimetagRun run = simulate_timetag_run(model, det, rois, duration, 1234);
    const double period_ps = static_cast<double>(model.pulse_period_ps());

    // Calibrate against the known pulse grid.
    std::vector<PulseTaggedHit> tagged;
    for (const RawHit& h : run.hits) {
        double t_ps = static_cast<double>(h.toa_ticks) * det.tick_ps;
        tagged.push_back({h, std::round(t_ps / period_ps) * period_ps});
    }
    TimeWalkTable table = calibrate_time_walk(tagged, 2, det.tick_ps);

    ClusterParams cparams;
    auto events_raw = reconstruct_photons(run.hits, cparams, det.tick_ps, nullptr);
    auto events_fix = reconstruct_photons(run.hits, cparams, det.tick_ps, &table);

    auto residual_fwhm = [&](const std::vector<PhotonEvent>& events) {
        double sum = 0, sum_sq = 0;
        for (const PhotonEvent& ev : events) {
            double r = ev.toa_ps - std::round(ev.toa_ps / period_ps) * period_ps;
            sum += r;
            sum_sq += r * r;
        }
        double n = static_cast<double>(events.size());
        double var = sum_sq / n - (sum / n) * (sum / n);
        return 2.3548200450309493 * std::sqrt(var);
    };

    double fwhm_fix = residual_fwhm(events_fix);
    double fwhm_raw = residual_fwhm(events_raw);
    CHECK(fwhm_fix <= 1.1 * det.jitter_fwhm_ps);
    CHECK(fwhm_fix <= fwhm_raw); // correction never degrades the resolution
}

TEST_CASE("background subtraction recovers the photon singles under heavy darks") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 3.5;
    std::vector<ChannelROI> rois = {{"a", 40, 40, 10}, {"b", 90, 90, 10}, {"c", 40, 90, 10}};
    DetectorModel det = detector_for(3, 0.009);
    det.dark_rate_hz_per_px = 4.3;
    det.sensor_width = 128;
    det.sensor_height = 128;
    const double duration = 8.0;

    TimetagRun run = simulate_timetag_run(model, det, rois, duration, 20252);
    auto events = run_through_files(run);
    RunParams params = params_for(model, duration);
    params.background_rate = 4.3;
    RunReport report = correlate_run(events, rois, params, 2);

    const double photon_singles = 0.009 * 3.5 * static_cast<double>(run.pulse_count);
    for (const ChannelSeries& ch : report.channels) {
        CHECK(ch.pixel_count == 317);
        CHECK_FALSE(ch.background_floored);
        // Corrected singles match the true photon rate within Poisson noise
        // of the subtracted dark estimate (~3 sigma of sqrt(raw)).
        CHECK(std::fabs(ch.corrected_singles - photon_singles) <
              3.5 * std::sqrt(static_cast<double>(ch.raw_singles)));
    }
    for (const CorrelationResult& r : report.results)
        CHECK(std::fabs(r.g - 1.0) <= 3.0 * r.sigma + 0.05);
}

TEST_CASE("full pipeline is deterministic end to end across thread counts") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 2.5;
    auto rois = default_rois();
    DetectorModel det = detector_for(rois.size(), 0.006);
    const double duration = 1.5;

    auto run_once = [&](int threads) {
        TimetagRun run = simulate_timetag_run(model, det, rois, duration, 77, threads);
        auto events = run_through_files(run, threads);
        RunReport report =
            correlate_run(events, rois, params_for(model, duration), 4, threads);
        return gn_results_json(report).dump();
    };
    std::string one = run_once(1);
    CHECK(run_once(2) == one);
    CHECK(run_once(8) == one);
}
