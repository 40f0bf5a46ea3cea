#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "verdict/acquisition.hpp"

namespace verdict {

/// Free VERDICT parameters. f_vasc is derived so the three fractions always sum to one.
struct TissueParams {
    double f_ic = 0.0;
    double f_ees = 0.0;
    double radius = 1.0;   // um

    double f_vasc() const { return 1.0 - f_ic - f_ees; }
};

/// Diffusivities in um^2/ms.
struct FixedDiffusivities {
    double d_ic = 2.0;
    double d_ees = 2.0;
    double d_vasc = 50.0;
};

/// Clamp bounds for the fitted parameters. Fractions always live on [0, 1].
struct ParamRanges {
    double radius_min = 0.01;   // um
    double radius_max = 15.0;   // um
};

bool params_valid(const TissueParams& p, const ParamRanges& ranges, double tol = 1e-12);

enum class VascularGeometry { astrosticks, ball };

std::string to_string(VascularGeometry g);

/// Which vascular compartment to use and the fixed diffusivities.
struct VerdictModel {
    FixedDiffusivities diffusivities{};
    VascularGeometry vascular = VascularGeometry::astrosticks;
};

/// Positive roots of (x^2 - 2) sin x + 2x cos x = 0 (zeros of the derivative of j1).
class SphereRootTable {
public:
    explicit SphereRootTable(std::size_t count = 40);
    const std::vector<double>& roots() const { return roots_; }

    /// Shared 40-root table, built on first use.
    static const SphereRootTable& standard();

private:
    std::vector<double> roots_;
};

double ball_signal(double b, double d);

/// Below this b*d the two-term series replaces the erf form.
inline constexpr double kAstrosticksSeriesThreshold = 1e-6;

double astrosticks_signal(double b, double d);

/// Signal and its derivative with respect to the sphere radius.
struct SphereSignal {
    double value = 1.0;
    double d_radius = 0.0;
};

/// Gaussian-phase-distribution signal from an impermeable sphere under rectangular PGSE.
/// Throws std::domain_error for radius <= 0 or a b0 point.
SphereSignal sphere_gpd_signal_with_derivative(const AcquisitionPoint& point, double radius, double d,
                                               const SphereRootTable& roots = SphereRootTable::standard());

double sphere_gpd_signal(const AcquisitionPoint& point, double radius, double d,
                         const SphereRootTable& roots = SphereRootTable::standard());

/// Normalized VERDICT signal; 1.0 for b0 entries.
double verdict_signal(const TissueParams& params, const VerdictModel& model, const AcquisitionPoint& point);
double verdict_signal(const TissueParams& params, const FixedDiffusivities& fixed, const AcquisitionPoint& point);

/// Per-compartment signals at one point, reused by fitting loops.
struct CompartmentSignals {
    double vascular = 1.0;
    double sphere = 1.0;
    double sphere_d_radius = 0.0;
    double ees = 1.0;
};

CompartmentSignals compartment_signals(double radius, const VerdictModel& model, const AcquisitionPoint& point);

/// (dS/df_ic, dS/df_ees, dS/dR) with f_vasc = 1 - f_ic - f_ees eliminated.
std::array<double, 3> verdict_gradient(const TissueParams& params, const VerdictModel& model,
                                       const AcquisitionPoint& point);
std::array<double, 3> verdict_gradient(const TissueParams& params, const FixedDiffusivities& fixed,
                                       const AcquisitionPoint& point);

double adc_signal(double s0, double adc, double b);
double ivim_signal(double s0, double f, double d_star, double d, double b);

struct InformationCriteria {
    double aic = 0.0;
    double bic = 0.0;
    bool degenerate = false;   // rss == 0: both reported as -infinity
};

/// Gaussian-likelihood AIC/BIC. Requires rss >= 0 and n > k >= 1.
InformationCriteria information_criteria(double rss, std::size_t n, std::size_t k);

}  // namespace verdict
