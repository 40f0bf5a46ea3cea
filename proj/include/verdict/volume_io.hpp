#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "verdict/acquisition.hpp"
#include "verdict/ss_fit.hpp"

namespace verdict {

enum class VolumeKind { signal, mask, parameter };
std::string to_string(VolumeKind k);
VolumeKind volume_kind_from_string(const std::string& s);

/// X fastest, then Y, Z, and V slowest. Signal and parameter volumes hold float32 values,
/// masks hold uint8 values in {0, 1}.
struct Volume {
    std::array<std::int64_t, 4> shape{1, 1, 1, 1};
    std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
    VolumeKind kind = VolumeKind::signal;
    std::string scheme;   // path of the scheme CSV, may be empty
    std::vector<float> values;          // signal / parameter
    std::vector<std::uint8_t> mask;     // mask

    std::int64_t n_spatial() const { return shape[0] * shape[1] * shape[2]; }
    std::int64_t n_elements() const { return n_spatial() * shape[3]; }
    std::size_t element_size() const { return kind == VolumeKind::mask ? 1 : 4; }
    /// Throws ValidationError on a non-positive shape, a payload of the wrong length, or
    /// mask values outside {0, 1}.
    void validate() const;

    double value(std::int64_t flat_spatial, std::int64_t v) const {
        const auto i = static_cast<std::size_t>(v * n_spatial() + flat_spatial);
        return kind == VolumeKind::mask ? mask[i] : values[i];
    }
};

/// Adjacent payload path: "name.json" -> "name.raw"; any other name gets ".raw" appended.
std::string payload_path(const std::string& sidecar_path);

std::string sidecar_json(const Volume& vol);
std::string payload_bytes(const Volume& vol);
Volume volume_from_parts(const std::string& sidecar, const std::string& payload);

/// Writes the JSON sidecar at `path` and the payload next to it, each atomically.
void write_volume(const Volume& vol, const std::string& path);
Volume read_volume(const std::string& path);

/// Volume of zeros with the given spatial dims and V frames.
Volume make_volume(const std::array<std::int64_t, 3>& dims, std::int64_t frames, VolumeKind kind);

/// Flat spatial indices of the voxels to use, ascending. No mask selects every voxel.
std::vector<std::int64_t> masked_indices(const Volume& vol, const Volume* mask);

/// Raw values (one row per selected voxel, one column per frame).
Eigen::MatrixXd extract_rows(const Volume& vol, const std::vector<std::int64_t>& indices);

enum class TableLayout { averaged, directions };

/// Normalized voxel table in ascending flat-index order. Voxels whose matched b0 is not
/// positive are dropped and counted in `dropped`.
VoxelTable volume_to_table(const Volume& vol, const Volume* mask, const AcquisitionScheme& scheme,
                           TableLayout layout = TableLayout::averaged, std::size_t* dropped = nullptr);

inline constexpr float kMapFill = std::numeric_limits<float>::quiet_NaN();

/// Single-frame parameter volume holding `values[i]` at voxel_indices[i] and NaN elsewhere.
Volume values_to_map(const std::vector<double>& values, const std::vector<std::int64_t>& voxel_indices,
                     const std::array<std::int64_t, 3>& dims);

/// One parameter map per FitResult parameter, in parameter_names() order.
std::vector<std::pair<std::string, Volume>> table_to_maps(const FitResult& fit,
                                                          const std::vector<std::int64_t>& voxel_indices,
                                                          const std::array<std::int64_t, 3>& dims);

}  // namespace verdict
