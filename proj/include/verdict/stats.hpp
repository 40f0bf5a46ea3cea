#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "verdict/ss_fit.hpp"

namespace verdict {

struct RoiMask {
    std::string label;
    std::vector<std::int64_t> indices;   // flat voxel indices into the source volume
    std::vector<std::string> groups;

    /// Indices must be unique and non-negative.
    void validate() const;
};

struct ParameterSummary {
    std::string name;
    double mean = 0.0;
    double median = 0.0;
    double sd = 0.0;   // population (divide by n)
    std::size_t n = 0;
    std::size_t n_missing = 0;
};

struct RoiSummary {
    std::string label;
    std::size_t n_unresolved = 0;   // mask indices with no fitted voxel
    std::vector<ParameterSummary> parameters;
};

/// Summaries over the mask voxels present in the fit. `voxel_indices` maps fit rows to
/// flat volume indices (the fitted table's voxel_indices).
RoiSummary roi_summary(const FitResult& fit, const std::vector<std::int64_t>& voxel_indices, const RoiMask& mask);

enum class WilcoxonMethod { exact, normal_approximation };

struct WilcoxonResult {
    double w = 0.0;   // min(W+, W-)
    double w_plus = 0.0;
    double w_minus = 0.0;
    std::size_t n_effective = 0;
    double p_value = 1.0;   // two-sided
    WilcoxonMethod method = WilcoxonMethod::exact;
    std::string band;
};

inline constexpr std::size_t kWilcoxonExactMaxN = 20;

/// Paired signed-rank test. Zero differences are dropped, tied |d| share average ranks.
/// Exact null distribution up to 20 pairs, otherwise normal approximation with tie and
/// continuity corrections.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y);

/// '****' below 1e-4, '***' below 1e-3, '**' below 1e-2, '*' below 0.05, else 'n.s.'.
/// A p exactly on a threshold gets the less significant band.
std::string significance_band(double p);

std::string to_string(WilcoxonMethod m);

struct SubjectFit {
    std::string subject;
    const FitResult* fit = nullptr;
    std::vector<std::int64_t> voxel_indices;
    std::vector<RoiMask> rois;
};

struct GroupRow {
    std::string subject;
    std::string roi_label;
    std::string group;
    std::string parameter;
    double value = 0.0;
};

/// One row per (subject, ROI, parameter) holding the ROI median. The group comes from
/// `grouping` keyed by subject, else the ROI's first group tag, else empty.
std::vector<GroupRow> export_group_data(const std::vector<SubjectFit>& fits,
                                        const std::map<std::string, std::string>& grouping);

/// Header `subject,roi_label,group,parameter,value`; values with 9 significant digits.
std::string group_rows_to_csv(const std::vector<GroupRow>& rows);
std::vector<GroupRow> group_rows_from_csv(const std::string& text);

struct PairedTest {
    std::string parameter;
    std::vector<std::string> subjects;   // pairs used, sorted
    WilcoxonResult result;
};

/// For each parameter, pairs subjects that have both ROI labels and tests a against b.
/// Parameters with no nonzero pair are skipped with a note in `skipped`.
std::vector<PairedTest> paired_roi_tests(const std::vector<GroupRow>& rows, const std::string& roi_a,
                                         const std::string& roi_b, std::vector<std::string>* skipped = nullptr);

std::string paired_tests_to_csv(const std::vector<PairedTest>& tests, const std::string& roi_a,
                                const std::string& roi_b);

/// RFC 4180 field quoting.
std::string csv_field(const std::string& s);
/// Splits RFC 4180 text into records of fields.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace verdict
