#include <doctest.h>

#include <cmath>

#include <photostat/report_io.hpp>
#include <photostat/simulate.hpp>

using namespace photostat;

namespace {

struct SampleMoments {
    double mean;
    double variance;
};

SampleMoments draw_moments(const SourceModel& model, std::size_t n, std::uint64_t seed) {
    PulseSampler sampler(model);
    Xoshiro256pp rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double v = static_cast<double>(sampler(rng));
        sum += v;
        sum_sq += v * v;
    }
    double mean = sum / static_cast<double>(n);
    return {mean, sum_sq / static_cast<double>(n) - mean * mean};
}

} // namespace

TEST_CASE("fock_attenuated(1, 1.0) always emits exactly one photon") {
    SourceModel model;
    model.kind = SourceKind::fock_attenuated;
    model.fock_n = 1;
    model.fock_eta = 1.0;
    PulseSampler sampler(model);
    Xoshiro256pp rng(1);
    for (int i = 0; i < 1000; ++i) CHECK(sampler(rng) == 1);
}

TEST_CASE("coherent sampling reproduces Poisson moments at 1e6 draws") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 3.5;
    SampleMoments m = draw_moments(model, 1000000, 2);
    CHECK(std::fabs(m.mean - 3.5) < 0.006);
    CHECK(std::fabs(m.variance / m.mean - 1.0) < 0.005);
}

TEST_CASE("attenuated Fock light has variance/mean = 1 - eta") {
    SourceModel model;
    model.kind = SourceKind::fock_attenuated;
    model.fock_n = 20;
    model.fock_eta = 0.25;
    SampleMoments m = draw_moments(model, 1000000, 3);
    CHECK(m.mean == doctest::Approx(5.0).epsilon(0.005));
    CHECK(m.variance / m.mean == doctest::Approx(0.75).epsilon(0.01));
}

TEST_CASE("every model's sampled moments converge to the analytic values") {
    std::vector<SourceModel> models;
    {
        SourceModel m;
        m.kind = SourceKind::coherent;
        m.mean = 2.2;
        models.push_back(m);
        m.kind = SourceKind::thermal_single_mode;
        m.mean = 1.7;
        models.push_back(m);
        m.kind = SourceKind::thermal_multimode;
        m.mean = 3.0;
        m.n_modes = 5;
        models.push_back(m);
        m.kind = SourceKind::fock_attenuated;
        m.fock_n = 10;
        m.fock_eta = 0.4;
        models.push_back(m);
        m.kind = SourceKind::sbsl_like;
        m.mean = 3.5;
        m.q_target = -0.45;
        models.push_back(m);
    }
    const std::size_t n = 1000000;
    std::uint64_t seed = 10;
    for (const SourceModel& model : models) {
        SampleMoments m = draw_moments(model, n, seed++);
        double mean = analytic_mean(model);
        double var = analytic_variance(model);
        // 5-sigma envelopes on the sample mean and variance.
        double sigma_mean = std::sqrt(var / static_cast<double>(n));
        CHECK(std::fabs(m.mean - mean) < 5.0 * sigma_mean + 1e-9);
        double rel = std::fabs(m.variance - var) / var;
        CHECK(rel < 0.02);
    }
}

TEST_CASE("analytic g2 spot values") {
    SourceModel m;
    m.kind = SourceKind::coherent;
    CHECK(analytic_g2(m) == doctest::Approx(1.0));

    m.kind = SourceKind::thermal_single_mode;
    m.mean = 2.0;
    CHECK(analytic_g2(m) == doctest::Approx(2.0));

    m.kind = SourceKind::thermal_multimode;
    m.n_modes = 1;
    CHECK(analytic_g2(m) == doctest::Approx(2.0));
    m.n_modes = 10;
    CHECK(analytic_g2(m) == doctest::Approx(1.1));

    m.kind = SourceKind::fock_attenuated;
    m.fock_n = 1;
    m.fock_eta = 0.3;
    CHECK(analytic_g2(m) == doctest::Approx(0.0));
    m.fock_n = 2;
    CHECK(analytic_g2(m) == doctest::Approx(0.5));
    m.fock_n = 10;
    CHECK(analytic_g2(m) == doctest::Approx(0.9));
}

TEST_CASE("thinned-Fock solver hits its mean and Q targets") {
    for (double mean : {1.2, 3.5, 6.0}) {
        for (double q : {-0.2, -0.45, -0.7}) {
            ThinnedFockParams p = solve_thinned_fock(mean, q);
            double en = p.n_low + p.upper_weight;
            double got_mean = p.eta * en;
            double var = p.eta * (1 - p.eta) * en + p.eta * p.eta * p.upper_weight *
                                                        (1 - p.upper_weight);
            double got_q = var / got_mean - 1.0;
            CHECK(got_mean == doctest::Approx(mean).epsilon(1e-9));
            CHECK(got_q == doctest::Approx(q).epsilon(1e-6));
        }
    }
    CHECK_THROWS_AS(static_cast<void>(solve_thinned_fock(3.5, 0.1)), ConfigInvalid);
    CHECK_THROWS_AS(static_cast<void>(solve_thinned_fock(3.5, -1.5)), ConfigInvalid);

    // Sub-unity means only support the Bernoulli point Q = -mean.
    ThinnedFockParams bern = solve_thinned_fock(0.3, -0.3);
    double en = bern.n_low + bern.upper_weight;
    CHECK(bern.eta * en == doctest::Approx(0.3));
    CHECK(bern.eta * (bern.upper_weight * (1 - bern.upper_weight) / en - 1) ==
          doctest::Approx(-0.3));
    CHECK_THROWS_AS(static_cast<void>(solve_thinned_fock(0.3, -0.5)), ConfigInvalid);
}

TEST_CASE("time-tag runs are byte-identical across seeds and thread counts") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 2.0;
    auto rois = default_rois();
    DetectorModel det;
    det.channel_efficiency.assign(rois.size(), 0.01);
    det.dark_rate_hz_per_px = 2.0;

    TimetagRun a = simulate_timetag_run(model, det, rois, 0.5, 99, 1);
    TimetagRun b = simulate_timetag_run(model, det, rois, 0.5, 99, 2);
    TimetagRun c = simulate_timetag_run(model, det, rois, 0.5, 99, 8);
    CHECK(a.hits == b.hits);
    CHECK(a.hits == c.hits);
    CHECK(write_stream(a.header, a.hits) == write_stream(c.header, c.hits));

    TimetagRun d = simulate_timetag_run(model, det, rois, 0.5, 100, 1);
    CHECK(a.hits != d.hits);
}

TEST_CASE("zero quantum efficiency leaves only dark counts") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 3.5;
    auto rois = default_rois();
    DetectorModel det;
    det.channel_efficiency.assign(rois.size(), 0.0);
    det.dark_rate_hz_per_px = 1.0;
    TimetagRun run = simulate_timetag_run(model, det, rois, 0.3, 3);
    CHECK(run.photon_count == 0);
    CHECK(run.dark_count > 0);
    CHECK(run.hits.size() == run.dark_count);
}

TEST_CASE("simulated hits land inside their ROIs and within the run window") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 3.0;
    auto rois = default_rois();
    DetectorModel det;
    det.channel_efficiency.assign(rois.size(), 0.012);
    TimetagRun run = simulate_timetag_run(model, det, rois, 0.2, 7);
    CHECK(run.photon_count > 0);
    CHECK(run.hits.size() >= run.photon_count);
    for (const RawHit& h : run.hits) {
        CHECK(h.x < det.sensor_width);
        CHECK(h.y < det.sensor_height);
    }
    CHECK(std::is_sorted(run.hits.begin(), run.hits.end(), hit_time_order));
}

TEST_CASE("frame simulation: one pulse per frame with a perfect pixel counts the source") {
    SourceModel model;
    model.kind = SourceKind::fock_attenuated;
    model.fock_n = 1;
    model.fock_eta = 1.0;
    DetectorModel det;
    FrameGeometry geom; // 1x1 pixel, peak efficiency 1
    double exposure_us = static_cast<double>(model.pulse_period_ps()) * 1e-6;
    FrameStack stack = simulate_frames(model, det, geom, 500, exposure_us, 4);
    for (std::uint16_t c : stack.counts) CHECK(c == 1);
}

TEST_CASE("frames straddle 4 or 5 pulses at the native exposure") {
    SourceModel model;
    model.kind = SourceKind::fock_attenuated;
    model.fock_n = 1;
    model.fock_eta = 1.0;
    DetectorModel det;
    FrameGeometry geom;
    FrameStack stack = simulate_frames(model, det, geom, 2000, 172.8, 5);
    std::uint64_t total = 0;
    for (std::uint16_t c : stack.counts) {
        CHECK(c >= 4);
        CHECK(c <= 5);
        total += c;
    }
    // 172.8 us / 35.637919 us = 4.8488 pulses per frame on average.
    double mean = static_cast<double>(total) / 2000.0;
    CHECK(mean == doctest::Approx(4.8488).epsilon(0.005));
}

TEST_CASE("multi-pulse exposures push g2 towards 1 (upper bound)") {
    SourceModel model;
    model.kind = SourceKind::sbsl_like;
    model.mean = 3.5;
    model.q_target = -0.45;
    DetectorModel det;
    FrameGeometry geom;
    geom.peak_efficiency = 0.8;

    double single_exposure = static_cast<double>(model.pulse_period_ps()) * 1e-6;
    FrameStack single = simulate_frames(model, det, geom, 10000, single_exposure, 11);
    FrameStack multi = simulate_frames(model, det, geom, 10000, 172.8, 11);

    auto g2_of = [](const FrameStack& stack) {
        auto hist = build_histogram(stack, region_all(stack), 0, stack.frame_count);
        return compute_stats(hist, 0).g2;
    };
    double g2_single = g2_of(single);
    double g2_multi = g2_of(multi);
    CHECK(g2_single == doctest::Approx(analytic_g2(model)).epsilon(0.025));
    CHECK(g2_multi > g2_single);
    CHECK(g2_multi < 1.0);
    // Five summed pulses dilute g2 - 1 by the pulse count.
    CHECK(g2_multi == doctest::Approx(1.0 + (analytic_g2(model) - 1.0) / 4.8488).epsilon(0.02));
}

TEST_CASE("frame stacks are deterministic across thread counts") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = 1.0;
    DetectorModel det;
    det.dark_rate_hz_per_px = 50.0;
    FrameGeometry geom;
    geom.width = 5;
    geom.height = 5;
    geom.center_x = 2;
    geom.center_y = 2;
    geom.peak_efficiency = 0.04;
    FrameStack a = simulate_frames(model, det, geom, 3000, 172.8, 21, 1);
    FrameStack b = simulate_frames(model, det, geom, 3000, 172.8, 21, 8);
    CHECK(a == b);
}

TEST_CASE("invalid configurations are rejected") {
    SourceModel model;
    model.kind = SourceKind::coherent;
    model.mean = -1;
    CHECK_THROWS_AS(model.validate(), ConfigInvalid);

    SourceModel ok;
    DetectorModel det;
    det.channel_efficiency = {0.5, 0.6}; // sums above 1
    CHECK_THROWS_AS(det.validate(2), ConfigInvalid);

    DetectorModel det2;
    det2.channel_efficiency = {0.1};
    CHECK_THROWS_AS(static_cast<void>(simulate_timetag_run(ok, det2, default_rois(), 1.0, 1)),
                    ConfigInvalid); // 1 efficiency for 7 ROIs
}
