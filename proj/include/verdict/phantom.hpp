#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "verdict/acquisition.hpp"
#include "verdict/random.hpp"
#include "verdict/signal_models.hpp"

namespace verdict {

struct PhantomSpec {
    std::size_t n_voxels = 1000;
    double radius_min = 5.0;    // um
    double radius_max = 15.0;   // um
    double snr = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;
    VerdictModel model{};
    AcquisitionScheme scheme = kidney_protocol();
    /// Planted-information mode, one flag per shell when non-empty. Each flagged shell draws
    /// its own tissue parameters per voxel (ground truth holds the first flagged shell's),
    /// so none can be predicted from another. DW entries of unflagged shells carry the
    /// reference tissue's signal in every voxel with a tenth of the noise.
    std::vector<bool> planted_shells;
    TissueParams planted_reference{0.4, 0.3, 10.0};

    void validate(const ParamRanges& ranges = {}) const;
};

struct GroundTruth {
    std::vector<TissueParams> params;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

/// Raw per-entry values (b0 = 1) for every scheme entry, one row per voxel.
struct RawPhantom {
    Eigen::MatrixXd raw;   // n_voxels x scheme.size()
    GroundTruth truth;
};

/// Uniform R and uniform (f_ic, f_ees, f_vasc) on the simplex. Rician noise on every
/// entry including the b0s when snr is finite.
RawPhantom generate_raw_phantom(const PhantomSpec& spec);

/// Normalized, direction-averaged table (dims = n_voxels x 1 x 1) with its ground truth.
std::pair<VoxelTable, GroundTruth> generate_phantom(const PhantomSpec& spec);

/// Direction-level table (one column per DW entry) from the same draws.
std::pair<VoxelTable, GroundTruth> generate_direction_phantom(const PhantomSpec& spec);

/// Magnitude of signal plus complex Gaussian noise with sigma = 1/snr.
double add_rician_noise(double signal, double snr, Rng& rng);

struct McEstimate {
    double signal = 1.0;
    double standard_error = 0.0;
};

struct McOptions {
    std::size_t n_walkers = 100000;
    double dt = 0.01;   // ms
    std::uint64_t seed = 1;
    Eigen::Vector3d axis = Eigen::Vector3d::UnitX();
    std::size_t chunk = 4096;   // walkers per seeded sub-stream
};

/// Largest dt (ms) such that the rms 3-D step sqrt(6 d dt) stays below radius / ratio.
double mc_max_dt(double radius, double d, double ratio = 10.0);

/// Random-walk estimate of the PGSE signal from an impermeable, reflecting sphere.
/// b0 points (zero gradient) return exactly 1.
McEstimate mc_sphere_signal(double radius, double d, const AcquisitionPoint& point, const McOptions& opts);

/// Same walks scored for several points sharing delta and Delta (only the gradient
/// amplitude differs), so one trajectory set serves every b-value of that timing.
std::vector<McEstimate> mc_sphere_signals(double radius, double d, std::span<const AcquisitionPoint> points,
                                          const McOptions& opts);

void write_ground_truth_csv(const GroundTruth& truth, const std::vector<std::int64_t>& voxel_indices,
                            const std::string& path);

}  // namespace verdict
