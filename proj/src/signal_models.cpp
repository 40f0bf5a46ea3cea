#include "verdict/signal_models.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace verdict {

bool params_valid(const TissueParams& p, const ParamRanges& ranges, double tol) {
    return p.f_ic >= -tol && p.f_ic <= 1.0 + tol && p.f_ees >= -tol && p.f_ees <= 1.0 + tol &&
           p.f_ic + p.f_ees <= 1.0 + tol && p.radius >= ranges.radius_min - tol &&
           p.radius <= ranges.radius_max + tol;
}

std::string to_string(VascularGeometry g) {
    return g == VascularGeometry::astrosticks ? "astrosticks" : "ball";
}

namespace {

double root_equation(double x) { return (x * x - 2.0) * std::sin(x) + 2.0 * x * std::cos(x); }

}  // namespace

SphereRootTable::SphereRootTable(std::size_t count) {
    roots_.reserve(count);
    for (std::size_t m = 0; m < count; ++m) {
        // f(m*pi) = 2 m pi (-1)^m, so every interval (m pi, (m+1) pi) holds one sign change.
        double lo = m == 0 ? 1e-3 : static_cast<double>(m) * std::numbers::pi;
        double hi = static_cast<double>(m + 1) * std::numbers::pi;
        double flo = root_equation(lo);
        while (hi - lo > 1e-14 * hi) {
            const double mid = 0.5 * (lo + hi);
            const double fmid = root_equation(mid);
            if (fmid == 0.0) {
                lo = hi = mid;
                break;
            }
            if ((fmid > 0.0) == (flo > 0.0)) {
                lo = mid;
                flo = fmid;
            } else {
                hi = mid;
            }
        }
        roots_.push_back(0.5 * (lo + hi));
    }
}

const SphereRootTable& SphereRootTable::standard() {
    static const SphereRootTable table(40);
    return table;
}

double ball_signal(double b, double d) { return std::exp(-b * d); }

double astrosticks_signal(double b, double d) {
    const double x = b * d;
    if (x <= kAstrosticksSeriesThreshold) return 1.0 - x / 3.0;
    return std::sqrt(std::numbers::pi / (4.0 * x)) * std::erf(std::sqrt(x));
}

SphereSignal sphere_gpd_signal_with_derivative(const AcquisitionPoint& point, double radius, double d,
                                               const SphereRootTable& roots) {
    if (!(radius > 0.0)) throw std::domain_error("sphere radius must be > 0");
    if (!(d > 0.0)) throw std::domain_error("sphere diffusivity must be > 0");
    const double q = pulse_strength_factor(point);
    const double sd = point.delta;
    const double bd = point.Delta;

    double sum = 0.0;
    double dsum_dr = 0.0;
    for (double x : roots.roots()) {
        const double x2 = x * x;
        const double a = d * x2 / (radius * radius);
        const double e_d = std::exp(-a * sd);
        const double e_D = std::exp(-a * bd);
        const double e_m = std::exp(-a * (bd - sd));
        const double e_p = std::exp(-a * (bd + sd));
        const double num = 2.0 * a * sd - 2.0 + 2.0 * e_d + 2.0 * e_D - e_m - e_p;
        const double dnum = 2.0 * sd - 2.0 * sd * e_d - 2.0 * bd * e_D + (bd - sd) * e_m + (bd + sd) * e_p;
        const double a3 = a * a * a;
        const double scale = d / (x2 - 2.0);
        const double term = scale * num / a3;
        const double dterm_da = scale * (dnum / a3 - 3.0 * num / (a3 * a));
        sum += term;
        dsum_dr += dterm_da * (-2.0 * a / radius);
        if (std::abs(term) < 1e-10 * std::abs(sum)) break;
    }
    const double value = std::exp(-2.0 * q * sum);
    return SphereSignal{value, value * (-2.0 * q) * dsum_dr};
}

double sphere_gpd_signal(const AcquisitionPoint& point, double radius, double d, const SphereRootTable& roots) {
    return sphere_gpd_signal_with_derivative(point, radius, d, roots).value;
}

CompartmentSignals compartment_signals(double radius, const VerdictModel& model, const AcquisitionPoint& point) {
    if (point.is_b0) return CompartmentSignals{};
    const auto& fd = model.diffusivities;
    CompartmentSignals c;
    c.vascular = model.vascular == VascularGeometry::astrosticks ? astrosticks_signal(point.b, fd.d_vasc)
                                                                 : ball_signal(point.b, fd.d_vasc);
    const auto sphere = sphere_gpd_signal_with_derivative(point, radius, fd.d_ic);
    c.sphere = sphere.value;
    c.sphere_d_radius = sphere.d_radius;
    c.ees = ball_signal(point.b, fd.d_ees);
    return c;
}

double verdict_signal(const TissueParams& params, const VerdictModel& model, const AcquisitionPoint& point) {
    if (point.is_b0) return 1.0;
    const auto c = compartment_signals(params.radius, model, point);
    return params.f_vasc() * c.vascular + params.f_ic * c.sphere + params.f_ees * c.ees;
}

double verdict_signal(const TissueParams& params, const FixedDiffusivities& fixed, const AcquisitionPoint& point) {
    return verdict_signal(params, VerdictModel{fixed, VascularGeometry::astrosticks}, point);
}

std::array<double, 3> verdict_gradient(const TissueParams& params, const VerdictModel& model,
                                       const AcquisitionPoint& point) {
    if (point.is_b0) return {0.0, 0.0, 0.0};
    const auto c = compartment_signals(params.radius, model, point);
    return {c.sphere - c.vascular, c.ees - c.vascular, params.f_ic * c.sphere_d_radius};
}

std::array<double, 3> verdict_gradient(const TissueParams& params, const FixedDiffusivities& fixed,
                                       const AcquisitionPoint& point) {
    return verdict_gradient(params, VerdictModel{fixed, VascularGeometry::astrosticks}, point);
}

double adc_signal(double s0, double adc, double b) { return s0 * std::exp(-b * adc); }

double ivim_signal(double s0, double f, double d_star, double d, double b) {
    return s0 * (f * std::exp(-b * d_star) + (1.0 - f) * std::exp(-b * d));
}

InformationCriteria information_criteria(double rss, std::size_t n, std::size_t k) {
    if (!(rss >= 0.0)) throw std::invalid_argument("rss must be >= 0");
    if (k < 1 || n <= k) throw std::invalid_argument("information criteria need n > k >= 1");
    if (rss == 0.0) {
        const double inf = -std::numeric_limits<double>::infinity();
        return InformationCriteria{inf, inf, true};
    }
    const double nd = static_cast<double>(n);
    const double kd = static_cast<double>(k);
    const double fit = nd * std::log(rss / nd);
    return InformationCriteria{fit + 2.0 * kd, fit + kd * std::log(nd), false};
}

}  // namespace verdict
