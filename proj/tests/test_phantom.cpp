#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "verdict/error.hpp"
#include "verdict/io_util.hpp"
#include "verdict/phantom.hpp"

using namespace verdict;

TEST_CASE("noiseless phantom equals the forward model") {
    PhantomSpec spec;
    spec.n_voxels = 50;
    spec.seed = 7;
    const auto raw = generate_raw_phantom(spec);
    REQUIRE(raw.raw.rows() == 50);
    REQUIRE(raw.raw.cols() == 36);
    CHECK(raw.truth.noise_sigma == 0.0);
    for (Eigen::Index v = 0; v < 50; ++v) {
        const auto& p = raw.truth.params[static_cast<std::size_t>(v)];
        CHECK(params_valid(p, ParamRanges{}));
        CHECK(p.radius >= 5.0);
        CHECK(p.radius <= 15.0);
        for (std::size_t j = 0; j < 36; ++j) {
            CHECK(raw.raw(v, static_cast<Eigen::Index>(j)) == verdict_signal(p, spec.model, spec.scheme[j]));
        }
    }
    const auto [table, truth] = generate_phantom(spec);
    CHECK(table.signals.rows() == 50);
    CHECK(table.signals.cols() == 18);
    CHECK(truth.params.size() == 50);
    CHECK(table.signals.rightCols(9).isOnes(1e-15));
    const auto [dir, dtruth] = generate_direction_phantom(spec);
    CHECK(dir.signals.cols() == 27);
}

TEST_CASE("phantom generation is deterministic in the seed") {
    PhantomSpec spec;
    spec.n_voxels = 20;
    spec.snr = 30.0;
    spec.seed = 5;
    const auto a = generate_raw_phantom(spec), b = generate_raw_phantom(spec);
    CHECK(a.raw == b.raw);
    spec.seed = 6;
    CHECK(generate_raw_phantom(spec).raw != a.raw);
}

TEST_CASE("Rician noise floor at zero signal") {
    Rng rng(derive_seed(1, "rician"));
    const double snr = 20.0;
    double sum = 0.0;
    bool nonneg = true;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double s = add_rician_noise(0.0, snr, rng);
        nonneg = nonneg && s >= 0.0;
        sum += s;
    }
    CHECK(nonneg);
    const double floor = std::sqrt(std::numbers::pi / 2.0) / snr;
    CHECK(floor == doctest::Approx(0.0627).epsilon(0.001));
    CHECK(std::abs(sum / n - floor) < 0.001);
    CHECK(add_rician_noise(0.7, std::numeric_limits<double>::infinity(), rng) == 0.7);
    CHECK_THROWS(add_rician_noise(0.5, 0.0, rng));
}

TEST_CASE("phantom spec validation") {
    PhantomSpec spec;
    spec.n_voxels = 0;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.n_voxels = 10;
    spec.radius_max = 20.0;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.radius_max = 15.0;
    spec.snr = -1.0;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.snr = 10.0;
    spec.planted_shells = {true, false};
    CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("planted shells") {
    PhantomSpec spec;
    spec.n_voxels = 40;
    spec.planted_shells = {false, true, false, false, true, false, false, false, false};
    const auto raw = generate_raw_phantom(spec);
    const auto& shells = spec.scheme.shells();
    // unplanted DW entries carry the reference tissue
    for (auto j : shells[0].dw_indices) {
        CHECK(raw.raw.col(static_cast<Eigen::Index>(j)).isConstant(
            verdict_signal(spec.planted_reference, spec.model, spec.scheme[j])));
    }
    // first planted shell follows the recorded ground truth
    for (Eigen::Index v = 0; v < raw.raw.rows(); ++v) {
        const auto j = shells[1].dw_indices.front();
        CHECK(raw.raw(v, static_cast<Eigen::Index>(j)) ==
              verdict_signal(raw.truth.params[static_cast<std::size_t>(v)], spec.model, spec.scheme[j]));
    }
    // the second planted shell is drawn independently
    const auto j4 = static_cast<Eigen::Index>(shells[4].dw_indices.front());
    bool differs = false;
    for (Eigen::Index v = 0; v < raw.raw.rows(); ++v) {
        differs = differs || raw.raw(v, j4) != verdict_signal(raw.truth.params[static_cast<std::size_t>(v)], spec.model,
                                                             spec.scheme[static_cast<std::size_t>(j4)]);
    }
    CHECK(differs);
}

TEST_CASE("Monte Carlo sphere signal") {
    const auto scheme = kidney_protocol();
    const auto& shell = scheme.shells()[4];   // b = 1000
    McOptions opts;
    opts.n_walkers = 20000;
    opts.dt = mc_max_dt(8.0, 2.0) * 0.9;
    const auto est = mc_sphere_signal(8.0, 2.0, shell.dw_point, opts);
    const double gpd = sphere_gpd_signal(shell.dw_point, 8.0, 2.0);
    CHECK(est.standard_error > 0.0);
    CHECK(std::abs(est.signal - gpd) <= std::max(0.02, 3.0 * est.standard_error));

    SUBCASE("b0 is exactly one") {
        CHECK(mc_sphere_signal(8.0, 2.0, scheme[shell.b0_index], opts).signal == 1.0);
    }
    SUBCASE("deterministic and axis-independent in distribution") {
        CHECK(mc_sphere_signal(8.0, 2.0, shell.dw_point, opts).signal == est.signal);
        McOptions rotated = opts;
        rotated.axis = Eigen::Vector3d(1.0, 1.0, 1.0);
        rotated.seed = 2;
        const auto r = mc_sphere_signal(8.0, 2.0, shell.dw_point, rotated);
        CHECK(std::abs(r.signal - est.signal) < 4.0 * std::hypot(r.standard_error, est.standard_error));
    }
    SUBCASE("standard error shrinks with walkers") {
        McOptions more = opts;
        more.n_walkers = 80000;
        const auto m = mc_sphere_signal(8.0, 2.0, shell.dw_point, more);
        CHECK(m.standard_error == doctest::Approx(est.standard_error / 2.0).epsilon(0.2));
    }
    SUBCASE("shared trajectories for several b-values") {
        std::vector<AcquisitionPoint> pts{scheme.shells()[3].dw_point, shell.dw_point};
        const auto both = mc_sphere_signals(8.0, 2.0, pts, opts);
        CHECK(both[1].signal == est.signal);
        CHECK(both[0].signal > both[1].signal);
        pts.push_back(scheme.shells()[8].dw_point);
        CHECK_THROWS_AS(mc_sphere_signals(8.0, 2.0, pts, opts), std::invalid_argument);
    }
    SUBCASE("preconditions") {
        McOptions bad = opts;
        bad.n_walkers = 100;
        CHECK_THROWS_AS(mc_sphere_signal(8.0, 2.0, shell.dw_point, bad), std::invalid_argument);
        bad = opts;
        bad.dt = 1.0;
        CHECK_THROWS_AS(mc_sphere_signal(8.0, 2.0, shell.dw_point, bad), std::invalid_argument);
        CHECK_THROWS_AS(mc_sphere_signal(-1.0, 2.0, shell.dw_point, opts), std::invalid_argument);
    }
}

TEST_CASE("ground truth CSV") {
    const std::string dir = std::string(VERDICT_TEST_TMP) + "/phantom";
    std::filesystem::create_directories(dir);
    GroundTruth truth;
    truth.params = {{0.2, 0.3, 7.5}, {0.5, 0.1, 12.0}};
    write_ground_truth_csv(truth, {3, 9}, dir + "/gt.csv");
    const auto text = read_file(dir + "/gt.csv");
    CHECK(text.find("f_ic") != std::string::npos);
    CHECK(text.find("\n9,") != std::string::npos);
    CHECK_THROWS(write_ground_truth_csv(truth, {1}, dir + "/gt2.csv"));
}
