#include "verdict/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "verdict/error.hpp"
#include "verdict/io_util.hpp"

namespace verdict {

double b_from_s_mm2(double b_s_mm2) { return b_s_mm2 * 1e-3; }

namespace {

void validate_point(const AcquisitionPoint& p, std::size_t i) {
    auto fail = [i](const std::string& what) {
        throw ValidationError("acquisition entry " + std::to_string(i) + ": " + what);
    };
    if (!std::isfinite(p.b) || p.b < 0.0) fail("b must be >= 0");
    if (p.is_b0 != (p.b == 0.0)) fail("is_b0 must hold exactly when b == 0");
    if (!(p.te > 0.0)) fail("TE must be > 0");
    if (!p.is_b0) {
        if (!(p.delta > 0.0 && p.delta < p.Delta)) fail("requires 0 < delta < Delta");
        if (!p.direction_index) fail("DW entry needs a direction index");
    } else if (p.direction_index) {
        fail("b0 entry must not carry a direction index");
    }
}

}  // namespace

AcquisitionScheme::AcquisitionScheme(std::vector<AcquisitionPoint> points) : points_(std::move(points)) {
    const std::size_t n = points_.size();
    b0_pairing_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        validate_point(points_[i], i);
        if (points_[i].is_b0) {
            b0_pairing_[i] = i;
            b0_indices_.push_back(i);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (points_[i].is_b0) continue;
        // nearest preceding b0 with the same TE, otherwise nearest following
        std::optional<std::size_t> match;
        for (std::size_t j = i; j-- > 0;) {
            if (points_[j].is_b0 && points_[j].te == points_[i].te) {
                match = j;
                break;
            }
        }
        if (!match) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (points_[j].is_b0 && points_[j].te == points_[i].te) {
                    match = j;
                    break;
                }
            }
        }
        if (!match) {
            throw ValidationError("acquisition entry " + std::to_string(i) +
                                  ": no b0 entry with matching TE " + std::to_string(points_[i].te));
        }
        b0_pairing_[i] = *match;
    }

    using Key = std::tuple<double, double, double, double, std::size_t>;
    std::map<Key, std::size_t> shell_of;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = points_[i];
        if (p.is_b0) continue;
        const Key key{p.b, p.delta, p.Delta, p.te, b0_pairing_[i]};
        auto it = shell_of.find(key);
        if (it == shell_of.end()) {
            AcquisitionPoint rep = p;
            rep.direction_index.reset();
            shell_of.emplace(key, shells_.size());
            shells_.push_back(Shell{b0_pairing_[i], {i}, rep});
        } else {
            shells_[it->second].dw_indices.push_back(i);
        }
    }
}

std::size_t AcquisitionScheme::b0_for(std::size_t i) const { return b0_pairing_.at(i); }

std::vector<std::size_t> AcquisitionScheme::dw_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < points_.size(); ++i) {
        if (!points_[i].is_b0) out.push_back(i);
    }
    return out;
}

std::vector<AcquisitionPoint> AcquisitionScheme::averaged_layout() const {
    std::vector<AcquisitionPoint> out;
    out.reserve(n_volumes());
    for (const auto& s : shells_) out.push_back(s.dw_point);
    for (auto i : b0_indices_) out.push_back(points_[i]);
    return out;
}

AcquisitionScheme kidney_protocol() {
    constexpr std::array<double, 9> b{70, 90, 150, 500, 1000, 1500, 2000, 2200, 2500};
    constexpr std::array<double, 9> delta{4.8, 4.8, 4.8, 12.0, 12.0, 26.3, 16.8, 16.8, 21.4};
    constexpr std::array<double, 9> Delta{27.0, 27.0, 27.0, 34.0, 34.0, 47.0, 37.5, 37.5, 43.5};
    // Minimum TE per timing pair, spanning the published 54-87 ms range.
    constexpr std::array<double, 9> te{54.0, 54.0, 54.0, 65.0, 65.0, 87.0, 71.0, 71.0, 80.0};

    std::vector<AcquisitionPoint> pts;
    pts.reserve(36);
    for (std::size_t s = 0; s < b.size(); ++s) {
        pts.push_back(AcquisitionPoint{0.0, delta[s], Delta[s], te[s], std::nullopt, true});
        for (int d = 0; d < 3; ++d) {
            pts.push_back(AcquisitionPoint{b_from_s_mm2(b[s]), delta[s], Delta[s], te[s], d, false});
        }
    }
    return AcquisitionScheme(std::move(pts));
}

double pulse_strength_factor(const AcquisitionPoint& p) {
    if (p.is_b0 || p.b <= 0.0) throw std::domain_error("no gradient factor for b=0");
    return p.b / (p.delta * p.delta * (p.Delta - p.delta / 3.0));
}

void VoxelTable::validate() const {
    if (static_cast<std::size_t>(signals.rows()) != voxel_indices.size()) {
        throw ValidationError("voxel table: row count does not match voxel index count");
    }
    const std::int64_t total = dims[0] * dims[1] * dims[2];
    for (std::size_t i = 0; i < voxel_indices.size(); ++i) {
        if (voxel_indices[i] < 0 || voxel_indices[i] >= total) {
            throw ValidationError("voxel table: voxel index out of range");
        }
        if (i > 0 && voxel_indices[i] <= voxel_indices[i - 1]) {
            throw ValidationError("voxel table: voxel indices must be strictly increasing");
        }
    }
    for (Eigen::Index r = 0; r < signals.rows(); ++r) {
        for (Eigen::Index c = 0; c < signals.cols(); ++c) {
            if (!std::isfinite(signals(r, c))) {
                throw ValidationError("voxel table: non-finite signal at voxel " + std::to_string(r) +
                                      ", measurement " + std::to_string(c));
            }
        }
    }
}

std::optional<Eigen::VectorXd> normalize_and_average(std::span<const double> raw,
                                                     const AcquisitionScheme& scheme) {
    if (raw.size() != scheme.size()) {
        throw ValidationError("expected " + std::to_string(scheme.size()) + " raw values, got " +
                              std::to_string(raw.size()));
    }
    const auto& b0s = scheme.b0_indices();
    for (auto i : b0s) {
        if (!(raw[i] > 0.0)) return std::nullopt;
    }
    const auto& shells = scheme.shells();
    Eigen::VectorXd out(static_cast<Eigen::Index>(shells.size() + b0s.size()));
    Eigen::Index k = 0;
    for (const auto& s : shells) {
        // running mean: exact when all directions agree
        double mean = 0.0;
        double count = 0.0;
        for (auto i : s.dw_indices) {
            count += 1.0;
            mean += (raw[i] / raw[s.b0_index] - mean) / count;
        }
        out(k++) = mean;
    }
    if (!b0s.empty()) {
        std::size_t ref = b0s.front();
        for (auto i : b0s) {
            if (scheme[i].te < scheme[ref].te) ref = i;
        }
        for (auto i : b0s) out(k++) = raw[i] / raw[ref];
    }
    return out;
}

std::optional<Eigen::VectorXd> normalize_directions(std::span<const double> raw,
                                                    const AcquisitionScheme& scheme) {
    if (raw.size() != scheme.size()) {
        throw ValidationError("expected " + std::to_string(scheme.size()) + " raw values, got " +
                              std::to_string(raw.size()));
    }
    const auto dw = scheme.dw_indices();
    Eigen::VectorXd out(static_cast<Eigen::Index>(dw.size()));
    for (std::size_t k = 0; k < dw.size(); ++k) {
        const double s0 = raw[scheme.b0_for(dw[k])];
        if (!(s0 > 0.0)) return std::nullopt;
        out(static_cast<Eigen::Index>(k)) = raw[dw[k]] / s0;
    }
    return out;
}

double estimate_duration(const AcquisitionScheme& scheme, double seconds_per_volume) {
    if (!(seconds_per_volume > 0.0)) throw ValidationError("seconds_per_volume must be > 0");
    const double minutes = static_cast<double>(scheme.n_volumes()) * seconds_per_volume / 60.0;
    return std::round(minutes * 10.0) / 10.0;
}

double kidney_seconds_per_volume() {
    return 40.0 * 60.0 / static_cast<double>(kidney_protocol().n_volumes());
}

// CSV: index,b_s_mm2,delta_ms,Delta_ms,TE_ms,dir,is_b0

namespace {

// b values pass through a 1e-3 scale, so 12 significant digits absorb the rounding.
std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string scheme_to_csv(const AcquisitionScheme& scheme) {
    std::ostringstream os;
    os << "index,b_s_mm2,delta_ms,Delta_ms,TE_ms,dir,is_b0\n";
    for (std::size_t i = 0; i < scheme.size(); ++i) {
        const auto& p = scheme[i];
        os << i << ',' << format_number(p.b_s_mm2()) << ',' << format_number(p.delta) << ','
           << format_number(p.Delta) << ',' << format_number(p.te) << ',';
        if (p.direction_index) os << *p.direction_index;
        os << ',' << (p.is_b0 ? 1 : 0) << '\n';
    }
    return os.str();
}

AcquisitionScheme scheme_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("scheme file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "index,b_s_mm2,delta_ms,Delta_ms,TE_ms,dir,is_b0") {
        throw ValidationError("scheme file: unexpected header '" + line + "'");
    }
    std::vector<AcquisitionPoint> pts;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) {
            throw ValidationError("scheme file line " + std::to_string(lineno) + ": expected 7 fields");
        }
        try {
            if (std::stoul(f[0]) != pts.size()) {
                throw ValidationError("scheme file line " + std::to_string(lineno) + ": index out of order");
            }
            AcquisitionPoint p;
            p.b = b_from_s_mm2(std::stod(f[1]));
            p.delta = std::stod(f[2]);
            p.Delta = std::stod(f[3]);
            p.te = std::stod(f[4]);
            if (!f[5].empty()) p.direction_index = std::stoi(f[5]);
            if (f[6] != "0" && f[6] != "1") {
                throw ValidationError("scheme file line " + std::to_string(lineno) + ": is_b0 must be 0 or 1");
            }
            p.is_b0 = f[6] == "1";
            pts.push_back(p);
        } catch (const std::invalid_argument&) {
            throw ValidationError("scheme file line " + std::to_string(lineno) + ": malformed number");
        } catch (const std::out_of_range&) {
            throw ValidationError("scheme file line " + std::to_string(lineno) + ": number out of range");
        }
    }
    return AcquisitionScheme(std::move(pts));
}

AcquisitionScheme read_scheme_csv(const std::string& path) { return scheme_from_csv(read_file(path)); }

void write_scheme_csv(const AcquisitionScheme& scheme, const std::string& path) {
    write_file_atomic(path, scheme_to_csv(scheme));
}

}  // namespace verdict
