#include "verdict/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "verdict/error.hpp"
#include "verdict/io_util.hpp"

namespace verdict {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

std::string to_string(VolumeKind k) {
    switch (k) {
        case VolumeKind::signal: return "signal";
        case VolumeKind::mask: return "mask";
        case VolumeKind::parameter: return "parameter";
    }
    return "unknown";
}

VolumeKind volume_kind_from_string(const std::string& s) {
    if (s == "signal") return VolumeKind::signal;
    if (s == "mask") return VolumeKind::mask;
    if (s == "parameter") return VolumeKind::parameter;
    throw ValidationError("unknown volume kind '" + s + "'");
}

void Volume::validate() const {
    for (auto s : shape) {
        if (s <= 0) throw ValidationError("volume shape must be positive in every dimension");
    }
    for (auto v : voxel_size_mm) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("voxel size must be positive");
    }
    const auto expected = static_cast<std::size_t>(n_elements());
    const std::size_t actual = kind == VolumeKind::mask ? mask.size() : values.size();
    if (actual != expected) {
        throw ValidationError("volume payload holds " + std::to_string(actual * element_size()) + " bytes, expected " +
                              std::to_string(expected * element_size()));
    }
    if (kind == VolumeKind::mask) {
        for (auto m : mask) {
            if (m > 1) throw ValidationError("mask volume holds a value outside {0, 1}");
        }
    } else if (!mask.empty()) {
        throw ValidationError("non-mask volume carries mask data");
    }
}

std::string payload_path(const std::string& sidecar_path) {
    const std::string ext = ".json";
    if (sidecar_path.size() > ext.size() && sidecar_path.compare(sidecar_path.size() - ext.size(), ext.size(), ext) == 0) {
        return sidecar_path.substr(0, sidecar_path.size() - ext.size()) + ".raw";
    }
    return sidecar_path + ".raw";
}

std::string sidecar_json(const Volume& vol) {
    nlohmann::ordered_json j;
    j["shape"] = vol.shape;
    j["voxel_size_mm"] = vol.voxel_size_mm;
    j["kind"] = to_string(vol.kind);
    j["scheme"] = vol.scheme;
    j["dtype"] = vol.kind == VolumeKind::mask ? "uint8" : "float32";
    j["byte_order"] = "little";
    return j.dump(2) + "\n";
}

std::string payload_bytes(const Volume& vol) {
    vol.validate();
    if (vol.kind == VolumeKind::mask) return std::string(vol.mask.begin(), vol.mask.end());
    std::string out(vol.values.size() * sizeof(float), '\0');
    std::memcpy(out.data(), vol.values.data(), out.size());
    return out;
}

Volume volume_from_parts(const std::string& sidecar, const std::string& payload) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(sidecar);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("volume sidecar is not valid JSON: ") + e.what());
    }
    Volume vol;
    try {
        vol.kind = volume_kind_from_string(j.at("kind").get<std::string>());
        vol.shape = j.at("shape").get<std::array<std::int64_t, 4>>();
        vol.voxel_size_mm = j.at("voxel_size_mm").get<std::array<double, 3>>();
        vol.scheme = j.at("scheme").get<std::string>();
        const auto dtype = j.at("dtype").get<std::string>();
        const auto order = j.at("byte_order").get<std::string>();
        if (order != "little") throw ValidationError("unsupported byte order '" + order + "'");
        const std::string want = vol.kind == VolumeKind::mask ? "uint8" : "float32";
        if (dtype != want) throw ValidationError("dtype '" + dtype + "' does not match kind " + to_string(vol.kind));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("volume sidecar is missing or mistypes a field: ") + e.what());
    }
    for (auto s : vol.shape) {
        if (s <= 0) throw ValidationError("volume shape must be positive in every dimension");
    }
    const auto expected = static_cast<std::size_t>(vol.n_elements()) * vol.element_size();
    if (payload.size() != expected) {
        throw ValidationError("volume payload length mismatch: expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(payload.size()));
    }
    if (vol.kind == VolumeKind::mask) {
        vol.mask.assign(payload.begin(), payload.end());
    } else {
        vol.values.resize(static_cast<std::size_t>(vol.n_elements()));
        std::memcpy(vol.values.data(), payload.data(), payload.size());
    }
    vol.validate();
    return vol;
}

void write_volume(const Volume& vol, const std::string& path) {
    const auto payload = payload_bytes(vol);
    write_file_atomic(payload_path(path), payload);
    write_file_atomic(path, sidecar_json(vol));
}

Volume read_volume(const std::string& path) {
    return volume_from_parts(read_file(path), read_file(payload_path(path)));
}

Volume make_volume(const std::array<std::int64_t, 3>& dims, std::int64_t frames, VolumeKind kind) {
    Volume v;
    v.shape = {dims[0], dims[1], dims[2], frames};
    v.kind = kind;
    for (auto s : v.shape) {
        if (s <= 0) throw ValidationError("volume shape must be positive in every dimension");
    }
    if (kind == VolumeKind::mask) {
        v.mask.assign(static_cast<std::size_t>(v.n_elements()), 0);
    } else {
        v.values.assign(static_cast<std::size_t>(v.n_elements()), 0.0f);
    }
    return v;
}

std::vector<std::int64_t> masked_indices(const Volume& vol, const Volume* mask) {
    vol.validate();
    std::vector<std::int64_t> out;
    if (!mask) {
        out.resize(static_cast<std::size_t>(vol.n_spatial()));
        for (std::int64_t i = 0; i < vol.n_spatial(); ++i) out[static_cast<std::size_t>(i)] = i;
        return out;
    }
    mask->validate();
    if (mask->kind != VolumeKind::mask) throw ValidationError("mask volume must have kind 'mask'");
    if (mask->shape[0] != vol.shape[0] || mask->shape[1] != vol.shape[1] || mask->shape[2] != vol.shape[2] ||
        mask->shape[3] != 1) {
        throw ValidationError("mask shape does not match the volume");
    }
    for (std::int64_t i = 0; i < mask->n_spatial(); ++i) {
        if (mask->mask[static_cast<std::size_t>(i)]) out.push_back(i);
    }
    if (out.empty()) throw ValidationError("no voxels selected");
    return out;
}

Eigen::MatrixXd extract_rows(const Volume& vol, const std::vector<std::int64_t>& indices) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), vol.shape[3]);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] < 0 || indices[r] >= vol.n_spatial()) throw ValidationError("voxel index out of range");
        for (std::int64_t v = 0; v < vol.shape[3]; ++v) out(static_cast<Eigen::Index>(r), v) = vol.value(indices[r], v);
    }
    return out;
}

VoxelTable volume_to_table(const Volume& vol, const Volume* mask, const AcquisitionScheme& scheme, TableLayout layout,
                           std::size_t* dropped) {
    if (vol.kind != VolumeKind::signal) throw ValidationError("fitting needs a signal volume");
    if (static_cast<std::size_t>(vol.shape[3]) != scheme.size()) {
        throw ValidationError("volume has " + std::to_string(vol.shape[3]) + " frames but the scheme has " +
                              std::to_string(scheme.size()) + " entries");
    }
    const auto idx = masked_indices(vol, mask);
    VoxelTable t;
    t.dims = {vol.shape[0], vol.shape[1], vol.shape[2]};
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> raw(scheme.size());
    std::size_t n_dropped = 0;
    for (auto i : idx) {
        for (std::size_t v = 0; v < raw.size(); ++v) raw[v] = vol.value(i, static_cast<std::int64_t>(v));
        auto row = layout == TableLayout::averaged ? normalize_and_average(raw, scheme) : normalize_directions(raw, scheme);
        if (!row || !row->allFinite()) {
            ++n_dropped;
            continue;
        }
        rows.push_back(std::move(*row));
        t.voxel_indices.push_back(i);
    }
    if (rows.empty()) throw ValidationError("no voxels selected (every masked voxel lacks a positive b0)");
    t.signals.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) t.signals.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    if (dropped) *dropped = n_dropped;
    return t;
}

Volume values_to_map(const std::vector<double>& values, const std::vector<std::int64_t>& voxel_indices,
                     const std::array<std::int64_t, 3>& dims) {
    if (values.size() != voxel_indices.size()) throw ValidationError("map values and voxel indices differ in length");
    Volume v = make_volume(dims, 1, VolumeKind::parameter);
    std::fill(v.values.begin(), v.values.end(), kMapFill);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (voxel_indices[i] < 0 || voxel_indices[i] >= v.n_spatial()) throw ValidationError("voxel index out of range");
        v.values[static_cast<std::size_t>(voxel_indices[i])] = static_cast<float>(values[i]);
    }
    return v;
}

std::vector<std::pair<std::string, Volume>> table_to_maps(const FitResult& fit,
                                                          const std::vector<std::int64_t>& voxel_indices,
                                                          const std::array<std::int64_t, 3>& dims) {
    if (fit.size() != voxel_indices.size()) throw ValidationError("fit and voxel indices differ in length");
    std::vector<std::pair<std::string, Volume>> out;
    for (const auto& name : fit.parameter_names()) {
        std::vector<double> vals(fit.size());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = fit.parameter(i, name);
        out.emplace_back(name, values_to_map(vals, voxel_indices, dims));
    }
    return out;
}

}  // namespace verdict
