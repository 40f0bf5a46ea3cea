#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "verdict/acquisition.hpp"
#include "verdict/nn.hpp"
#include "verdict/signal_models.hpp"

namespace verdict {

enum class FitModel { verdict, ivim, adc };
std::string to_string(FitModel m);

struct SsFitConfig {
    double learning_rate = 1e-4;
    double dropout_p = 0.5;
    int max_epochs = 1000;
    int patience = 10;
    /// Early-stopping threshold; a fraction of the best loss when relative_min_delta is set.
    double min_delta = 1e-6;
    bool relative_min_delta = true;
    /// Multiplier on the initial output-layer weights so outputs start near mid-range
    /// instead of on the clamp rails.
    double output_init_scale = 0.01;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    /// Held-out share of voxels whose eval-mode loss drives early stopping.
    double validation_fraction = 0.1;
    std::vector<Eigen::Index> hidden{18, 18, 18};
    ParamRanges ranges{};
    VerdictModel model{};
    /// Polish every voxel with bounded Levenberg-Marquardt after the network pass.
    bool refine = false;

    void validate() const;
};

struct AdcParams {
    double s0 = 0.0;
    double adc = 0.0;   // um^2/ms
    bool missing = false;
};

struct IvimParams {
    double s0 = 1.0;
    double f = 0.0;
    double d_star = 0.0;   // um^2/ms
    double d = 0.0;        // um^2/ms
    bool d_star_missing = false;
    bool missing = false;
};

struct TrainingLog {
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    int best_epoch = -1;
    double railed_fraction = 0.0;
    std::vector<std::string> warnings;
};

struct FitResult {
    FitModel model = FitModel::verdict;
    VerdictModel verdict_model{};
    std::vector<TissueParams> verdict;
    std::vector<AdcParams> adc;
    std::vector<IvimParams> ivim;
    std::vector<double> mse;   // per voxel, over DW entries
    TrainingLog log;

    std::size_t size() const;
    /// Parameter names in map order for this model.
    std::vector<std::string> parameter_names() const;
    /// Value of a named parameter at voxel i (NaN when missing).
    double parameter(std::size_t i, const std::string& name) const;
};

/// Columns of `table` must follow scheme.averaged_layout().
FitResult fit_verdict_ss(const VoxelTable& table, const AcquisitionScheme& scheme, const SsFitConfig& cfg);

/// Log-linear least squares of ln S against b over the DW columns.
FitResult fit_adc(const VoxelTable& table, const AcquisitionScheme& scheme);

inline constexpr double kIvimSegmentationB = 0.25;   // ms/um^2 (250 s/mm^2)
inline constexpr double kIvimDStarMin = 3.0;
inline constexpr double kIvimDStarMax = 100.0;

/// Segmented IVIM: high-b log-linear fit for d, intercept gap for f, bounded 1-D search for d_star.
FitResult fit_ivim(const VoxelTable& table, const AcquisitionScheme& scheme);

/// Predicted signal for every column of the averaged layout at voxel i.
Eigen::VectorXd predict_signal(const FitResult& result, std::size_t voxel, const AcquisitionScheme& scheme);

/// Per-voxel mean squared error over the DW columns; also stored into result.mse by the fitters.
std::vector<double> goodness_of_fit(const FitResult& result, const VoxelTable& table, const AcquisitionScheme& scheme);

/// Mean of per-voxel MSE over the listed rows.
double roi_mse(const std::vector<double>& voxel_mse, const std::vector<std::size_t>& rows);

/// Bounded Levenberg-Marquardt on (f_ic, f_ees, R) from the given start, all columns.
TissueParams refine_verdict_voxel(const Eigen::VectorXd& signal, const std::vector<AcquisitionPoint>& layout,
                                  const VerdictModel& model, const ParamRanges& ranges, TissueParams start,
                                  int max_iterations = 100);

/// Clamp each fraction to [0, 1] and R to its range, then rescale the fractions if they sum above 1.
TissueParams project_params(TissueParams p, const ParamRanges& ranges);

struct VariantScore {
    VascularGeometry geometry;
    double d_vasc;
    double mean_rss;
    double mean_aic;
    double mean_bic;
};

struct VariantComparison {
    std::vector<VariantScore> variants;   // fixed order: {astrosticks, ball} x {10, 50}
    std::size_t best_aic = 0;
    std::size_t best_bic = 0;
    std::size_t n_measurements = 0;
};

/// Fits {ball, astrosticks} x {d_vasc = 10, 50} and ranks them by AIC and BIC (k = 3).
VariantComparison compare_vascular_variants(const VoxelTable& table, const AcquisitionScheme& scheme,
                                            const SsFitConfig& cfg);

}  // namespace verdict
