#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace verdict {

/// One entry of a PGSE acquisition. `b` is stored in ms/um^2 (1 s/mm^2 = 1e-3 ms/um^2).
struct AcquisitionPoint {
    double b = 0.0;       // ms/um^2
    double delta = 0.0;   // ms
    double Delta = 0.0;   // ms
    double te = 0.0;      // ms
    std::optional<int> direction_index;
    bool is_b0 = false;

    double b_s_mm2() const { return b * 1e3; }
};

double b_from_s_mm2(double b_s_mm2);

/// Ordered list of acquisition entries plus the TE-matched b0 for every DW entry.
class AcquisitionScheme {
public:
    AcquisitionScheme() = default;
    /// Validates invariants and derives the b0 pairing (same TE, nearest preceding b0 first).
    explicit AcquisitionScheme(std::vector<AcquisitionPoint> points);

    const std::vector<AcquisitionPoint>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const AcquisitionPoint& operator[](std::size_t i) const { return points_[i]; }

    /// Index of the b0 entry paired with DW entry `i`.
    std::size_t b0_for(std::size_t i) const;

    /// DW entries sharing (b, delta, Delta, TE), i.e. the directions of one b-value.
    struct Shell {
        std::size_t b0_index;
        std::vector<std::size_t> dw_indices;
        AcquisitionPoint dw_point;   // representative, direction-free
    };
    const std::vector<Shell>& shells() const { return shells_; }
    const std::vector<std::size_t>& b0_indices() const { return b0_indices_; }

    /// Indices of DW entries in scheme order (direction level).
    std::vector<std::size_t> dw_indices() const;

    /// Points matching the columns produced by normalize_and_average:
    /// one direction-averaged DW point per shell, then every b0 in scheme order.
    std::vector<AcquisitionPoint> averaged_layout() const;

    /// Image volumes after direction averaging.
    std::size_t n_volumes() const { return shells_.size() + b0_indices_.size(); }

private:
    std::vector<AcquisitionPoint> points_;
    std::vector<std::size_t> b0_pairing_;   // size == points_.size(); b0 entries map to themselves
    std::vector<Shell> shells_;
    std::vector<std::size_t> b0_indices_;
};

/// The 9-shell renal protocol: 9 b0 entries + 27 DW entries in shell order [b0, d0, d1, d2].
AcquisitionScheme kidney_protocol();

/// gamma^2 G^2 in um^-2 ms^-2 for a DW point (b = gamma^2 G^2 delta^2 (Delta - delta/3)).
double pulse_strength_factor(const AcquisitionPoint& p);

/// Per-voxel normalized signal rows. Columns follow AcquisitionScheme::averaged_layout()
/// or, for direction-level tables, AcquisitionScheme::dw_indices().
struct VoxelTable {
    Eigen::MatrixXd signals;                 // n_voxels x n_meas
    std::vector<std::int64_t> voxel_indices; // strictly increasing flat indices
    std::array<std::int64_t, 3> dims{0, 0, 0};

    std::size_t n_voxels() const { return static_cast<std::size_t>(signals.rows()); }
    std::size_t n_meas() const { return static_cast<std::size_t>(signals.cols()); }
    void validate() const;
};

/// Normalizes one voxel's raw values (one per scheme entry). Returns nullopt when any
/// referenced b0 is not strictly positive.
std::optional<Eigen::VectorXd> normalize_and_average(std::span<const double> raw,
                                                     const AcquisitionScheme& scheme);

/// Direction-level normalization: every DW value divided by its matched b0, in dw_indices() order.
std::optional<Eigen::VectorXd> normalize_directions(std::span<const double> raw,
                                                    const AcquisitionScheme& scheme);

/// Scan time in minutes, rounded to one decimal.
double estimate_duration(const AcquisitionScheme& scheme, double seconds_per_volume);

/// Seconds per volume such that the kidney protocol takes 40.0 minutes.
double kidney_seconds_per_volume();

AcquisitionScheme read_scheme_csv(const std::string& path);
void write_scheme_csv(const AcquisitionScheme& scheme, const std::string& path);
std::string scheme_to_csv(const AcquisitionScheme& scheme);
AcquisitionScheme scheme_from_csv(const std::string& text);

}  // namespace verdict
