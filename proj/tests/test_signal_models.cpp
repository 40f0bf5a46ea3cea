#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "verdict/error.hpp"
#include "verdict/random.hpp"
#include "verdict/signal_models.hpp"

using namespace verdict;

namespace {

const double kPi = std::acos(-1.0);

// Composite Simpson over t = cos(theta) in [0, 1].
double astrosticks_quadrature(double b, double d) {
    const int n = 20000;
    const double h = 1.0 / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double t = i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * std::exp(-b * d * t * t);
    }
    return s * h / 3.0;
}

// Sphere GPD written from the textbook sum, with roots found by scanning for sign changes.
double sphere_oracle(const AcquisitionPoint& p, double R, double d) {
    auto f = [](double x) { return (x * x - 2.0) * std::sin(x) + 2.0 * x * std::cos(x); };
    std::vector<double> roots;
    double x0 = 0.5;
    while (roots.size() < 60) {
        const double x1 = x0 + 0.01;
        if (f(x0) * f(x1) < 0.0) {
            double lo = x0, hi = x1;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                (f(lo) * f(mid) <= 0.0 ? hi : lo) = mid;
            }
            roots.push_back(0.5 * (lo + hi));
        }
        x0 = x1;
    }
    const double g2 = pulse_strength_factor(p);
    const double del = p.delta, Del = p.Delta;
    double sum = 0.0;
    for (double x : roots) {
        const double a2 = x * x / (R * R);
        const double ad = a2 * d;
        const double num = 2.0 * del / ad -
                           (2.0 + std::exp(-ad * (Del - del)) - 2.0 * std::exp(-ad * del) - 2.0 * std::exp(-ad * Del) +
                            std::exp(-ad * (Del + del))) /
                               (ad * ad);
        sum += num / (a2 * (a2 * R * R - 2.0));
    }
    return std::exp(-2.0 * g2 * sum);
}

AcquisitionPoint dw(double b_s_mm2, double delta, double Delta) {
    return AcquisitionPoint{b_from_s_mm2(b_s_mm2), delta, Delta, 60.0, 0, false};
}

}  // namespace

TEST_CASE("sphere root table") {
    const auto& r = SphereRootTable::standard().roots();
    REQUIRE(r.size() == 40);
    CHECK(r[0] == doctest::Approx(2.0815759778181).epsilon(1e-12));
    for (std::size_t m = 0; m < r.size(); ++m) {
        CHECK(r[m] > m * kPi);
        CHECK(r[m] < (m + 1) * kPi);
        const double x = r[m];
        CHECK(std::abs((x * x - 2.0) * std::sin(x) + 2.0 * x * std::cos(x)) < 1e-8 * x * x);
    }
}

TEST_CASE("ball and astrosticks") {
    CHECK(ball_signal(1.0, 2.0) == doctest::Approx(std::exp(-2.0)));
    CHECK(ball_signal(0.0, 2.0) == 1.0);
    for (double bd : {1e-9, 1e-4, 0.07, 0.5, 1.0, 3.0, 5.0, 125.0}) {
        CHECK(astrosticks_signal(bd, 1.0) == doctest::Approx(astrosticks_quadrature(bd, 1.0)).epsilon(1e-9));
    }
    CHECK(astrosticks_signal(0.0, 50.0) == 1.0);
    // the series branch joins the closed form smoothly
    const double t = kAstrosticksSeriesThreshold;
    const double closed = std::sqrt(std::numbers::pi / (4.0 * t)) * std::erf(std::sqrt(t));
    CHECK(std::abs(astrosticks_signal(t, 1.0) - closed) < 1e-12);
}

TEST_CASE("sphere GPD matches an independently written sum") {
    for (double R : {0.5, 2.0, 5.0, 10.0, 15.0}) {
        for (auto p : {dw(70, 4.8, 27), dw(500, 12, 34), dw(1500, 26.3, 47), dw(2500, 21.4, 43.5)}) {
            CAPTURE(R);
            CAPTURE(p.b);
            CHECK(sphere_gpd_signal(p, R, 2.0) == doctest::Approx(sphere_oracle(p, R, 2.0)).epsilon(1e-9));
        }
    }
}

TEST_CASE("sphere limits") {
    const auto p = dw(2000, 16.8, 37.5);
    CHECK(sphere_gpd_signal(p, 0.1, 2.0) > 0.9999);
    // a very large sphere approaches free diffusion for a short experiment
    const auto q = dw(70, 4.8, 27);
    CHECK(sphere_gpd_signal(q, 300.0, 2.0) == doctest::Approx(std::exp(-q.b * 2.0)).epsilon(2e-3));
    // signal falls as R grows at fixed timing
    double prev = 1.0;
    for (double R = 1.0; R <= 15.0; R += 1.0) {
        const double s = sphere_gpd_signal(p, R, 2.0);
        CHECK(s < prev);
        prev = s;
    }
    CHECK_THROWS_AS(sphere_gpd_signal(p, 0.0, 2.0), std::domain_error);
    CHECK_THROWS_AS(sphere_gpd_signal(AcquisitionPoint{0, 4.8, 27, 60, std::nullopt, true}, 5.0, 2.0), std::domain_error);
}

TEST_CASE("VERDICT signal composition") {
    const VerdictModel m;
    const auto p = dw(1000, 12, 34);
    const TissueParams t{0.5, 0.3, 8.0};
    const double expected = 0.5 * sphere_gpd_signal(p, 8.0, 2.0) + 0.3 * ball_signal(p.b, 2.0) +
                            0.2 * astrosticks_signal(p.b, 50.0);
    CHECK(verdict_signal(t, m, p) == doctest::Approx(expected).epsilon(1e-15));
    VerdictModel ball = m;
    ball.vascular = VascularGeometry::ball;
    CHECK(verdict_signal(t, ball, p) ==
          doctest::Approx(0.5 * sphere_gpd_signal(p, 8.0, 2.0) + 0.3 * ball_signal(p.b, 2.0) + 0.2 * ball_signal(p.b, 50.0)));
    CHECK(verdict_signal(t, m, AcquisitionPoint{0, 12, 34, 60, std::nullopt, true}) == 1.0);
    CHECK(verdict_signal(t, m.diffusivities, p) == verdict_signal(t, m, p));
}

TEST_CASE("VERDICT gradient against central differences") {
    Rng rng(derive_seed(7, "gradients"));
    const auto scheme = kidney_protocol();
    const auto dws = scheme.dw_indices();
    for (int draw = 0; draw < 100; ++draw) {
        const double a = uniform01(rng), b = uniform01(rng);
        TissueParams t{std::min(a, b), std::abs(a - b), 1.0 + 14.0 * uniform01(rng)};
        VerdictModel m;
        m.vascular = draw % 2 ? VascularGeometry::ball : VascularGeometry::astrosticks;
        const auto& p = scheme[dws[static_cast<std::size_t>(draw) % dws.size()]];
        const auto g = verdict_gradient(t, m, p);
        const double h[3] = {1e-6, 1e-6, 1e-5};
        for (int k = 0; k < 3; ++k) {
            TissueParams up = t, dn = t;
            double* fu = k == 0 ? &up.f_ic : k == 1 ? &up.f_ees : &up.radius;
            double* fd = k == 0 ? &dn.f_ic : k == 1 ? &dn.f_ees : &dn.radius;
            *fu += h[k];
            *fd -= h[k];
            const double fdiff = (verdict_signal(up, m, p) - verdict_signal(dn, m, p)) / (2.0 * h[k]);
            CAPTURE(draw);
            CAPTURE(k);
            CHECK(std::abs(g[static_cast<std::size_t>(k)] - fdiff) <= 1e-6 * std::max(1e-3, std::abs(fdiff)));
        }
    }
}

TEST_CASE("ADC and IVIM forms") {
    CHECK(adc_signal(1.0, 2.0, 0.5) == doctest::Approx(std::exp(-1.0)));
    CHECK(ivim_signal(1.0, 0.2, 20.0, 2.0, 0.1) ==
          doctest::Approx(0.2 * std::exp(-2.0) + 0.8 * std::exp(-0.2)));
}

TEST_CASE("information criteria") {
    const auto ic = information_criteria(0.5, 18, 3);
    CHECK(ic.aic == doctest::Approx(18 * std::log(0.5 / 18) + 6));
    CHECK(ic.bic == doctest::Approx(18 * std::log(0.5 / 18) + 3 * std::log(18.0)));
    CHECK_FALSE(ic.degenerate);
    const auto z = information_criteria(0.0, 18, 3);
    CHECK(z.degenerate);
    CHECK(std::isinf(z.aic));
    CHECK(z.aic < 0);
    CHECK(std::isinf(z.bic));
    CHECK_THROWS_AS(information_criteria(-1.0, 18, 3), std::invalid_argument);
    CHECK_THROWS_AS(information_criteria(1.0, 3, 3), std::invalid_argument);
    CHECK_THROWS_AS(information_criteria(1.0, 18, 0), std::invalid_argument);
    // fewer free parameters wins at equal fit
    CHECK(information_criteria(0.5, 18, 2).aic < information_criteria(0.5, 18, 3).aic);
}

TEST_CASE("parameter validity") {
    ParamRanges r;
    CHECK(params_valid({0.3, 0.3, 5.0}, r));
    CHECK_FALSE(params_valid({0.7, 0.5, 5.0}, r));
    CHECK_FALSE(params_valid({0.3, 0.3, 20.0}, r));
    CHECK_FALSE(params_valid({-0.1, 0.3, 5.0}, r));
}
