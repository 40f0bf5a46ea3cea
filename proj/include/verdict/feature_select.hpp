#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "verdict/acquisition.hpp"
#include "verdict/nn.hpp"
#include "verdict/ss_fit.hpp"

namespace verdict {

inline constexpr std::size_t kDirectionMeasurements = 27;

struct SelectionConfig {
    std::size_t k_selected = 12;
    int epochs = 100;
    double learning_rate = 1e-5;
    double dropout_p = 0.1;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    /// Subjects at the end of the list held out for the test MSE. With holdout off every
    /// subject trains and test_mse is measured on the training data.
    std::size_t n_test_subjects = 3;
    bool holdout = true;
    /// Epochs at the start in which every measurement passes the gate (scaled by its
    /// score) so all predictor columns see data before the hard top-k takes over.
    int warmup_epochs = 0;
    std::size_t n_bvalues = 4;

    void validate() const;
};

struct ScoreReport {
    Eigen::VectorXd scores;                 // mean importance per measurement, in [0, 1]
    std::vector<std::size_t> selected;      // top-k measurement indices, ascending
    std::vector<double> b_values;           // s/mm^2 of the top n_bvalues shells, scheme order
    Eigen::MatrixXd subject_scores;         // subjects x 27 (training subjects)
    std::vector<std::size_t> voxel_counts;  // per training subject
    double test_mse = 0.0;
    std::vector<double> train_loss;         // per epoch
    std::vector<std::string> warnings;
    std::uint64_t seed = 0;
    SelectionConfig config;
};

/// Scorer 27 -> 64 (ReLU, batchnorm) -> 27 sigmoid gates the measurements: the k with the
/// highest batch-mean score pass through multiplied by their scores, the rest are zeroed.
/// The predictor 27 -> 64 ReLU -> 27 sees the gated vector; since unselected inputs are
/// zero it acts as a k-input layer over the selected columns. Loss is the MSE against the
/// ungated input. The hard mask is treated as identity in the backward pass.
ScoreReport train_selector(const std::vector<VoxelTable>& datasets, const AcquisitionScheme& scheme,
                           const SelectionConfig& cfg);

/// Top-k indices of `scores`, ties to the lower index, returned ascending.
std::vector<std::size_t> top_k(const Eigen::VectorXd& scores, std::size_t k);

/// Mean of each shell's direction scores (shell order of `scheme`).
Eigen::VectorXd shell_scores(const Eigen::VectorXd& scores, const AcquisitionScheme& scheme);

/// Voxel-weighted mean of the per-subject rows, then top-k and the top shells.
ScoreReport report_from_scores(const Eigen::MatrixXd& subject_scores, const std::vector<std::size_t>& voxel_counts,
                               const AcquisitionScheme& scheme, std::size_t k_selected, std::size_t n_bvalues);

/// Keeps the n_bvalues best shells with all their directions and matched b0s, in the
/// original entry order. Ties go to the lower shell index.
AcquisitionScheme extract_protocol(const ScoreReport& report, const AcquisitionScheme& full, std::size_t n_bvalues);

/// For every entry of `reduced`, the index of the identical entry in `full`.
std::vector<std::size_t> scheme_subset(const AcquisitionScheme& full, const AcquisitionScheme& reduced);

struct ParameterComparison {
    std::string name;
    double pearson_r = 0.0;
    double mean_abs_diff = 0.0;
    std::vector<double> difference;   // reduced - full, per voxel
};

struct ReducedComparison {
    std::vector<ParameterComparison> parameters;   // f_ic, f_ees, f_vasc, R
};

/// NaN when either sample has zero variance.
double pearson_r(const std::vector<double>& a, const std::vector<double>& b);

ReducedComparison evaluate_reduced(const FitResult& full_fit, const FitResult& reduced_fit);

std::string score_report_json(const ScoreReport& report, const AcquisitionScheme& scheme);

}  // namespace verdict
