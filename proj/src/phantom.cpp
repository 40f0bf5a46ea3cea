#include "verdict/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "verdict/error.hpp"
#include "verdict/io_util.hpp"

namespace verdict {

void PhantomSpec::validate(const ParamRanges& ranges) const {
    if (n_voxels == 0) throw ValidationError("phantom needs at least one voxel");
    if (!(radius_min > 0.0 && radius_min <= radius_max)) throw ValidationError("phantom radius range is empty");
    if (radius_min < ranges.radius_min || radius_max > ranges.radius_max) {
        throw ValidationError("phantom radius range exceeds the parameter bounds");
    }
    if (!(snr > 0.0)) throw ValidationError("snr must be > 0 (inf allowed)");
    if (scheme.empty()) throw ValidationError("phantom needs a non-empty scheme");
    if (!planted_shells.empty() && planted_shells.size() != scheme.shells().size()) {
        throw ValidationError("planted shell flags must have one entry per shell (" +
                              std::to_string(scheme.shells().size()) + ")");
    }
}

double add_rician_noise(double signal, double snr, Rng& rng) {
    if (!(snr > 0.0)) throw std::invalid_argument("snr must be > 0");
    if (std::isinf(snr)) return signal;
    std::normal_distribution<double> n(0.0, 1.0 / snr);
    const double re = signal + n(rng);
    const double im = n(rng);
    return std::hypot(re, im);
}

RawPhantom generate_raw_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    RawPhantom out;
    out.truth.seed = spec.seed;
    out.truth.noise_sigma = std::isinf(spec.snr) ? 0.0 : 1.0 / spec.snr;
    out.truth.params.reserve(spec.n_voxels);
    const auto& pts = spec.scheme.points();
    out.raw.resize(static_cast<Eigen::Index>(spec.n_voxels), static_cast<Eigen::Index>(pts.size()));
    auto draw = [&] {
        const double u1 = uniform01(rng);
        const double u2 = uniform01(rng);
        const double lo = std::min(u1, u2);
        const double hi = std::max(u1, u2);
        TissueParams p;
        p.f_ic = lo;
        p.f_ees = hi - lo;
        p.radius = spec.radius_min + (spec.radius_max - spec.radius_min) * uniform01(rng);
        return p;
    };
    // shell of every entry, for planted mode
    std::vector<long> shell_of(pts.size(), -1);
    for (std::size_t s = 0; s < spec.scheme.shells().size(); ++s) {
        for (auto i : spec.scheme.shells()[s].dw_indices) shell_of[i] = static_cast<long>(s);
    }
    const bool planted = !spec.planted_shells.empty();
    std::vector<TissueParams> per_shell(spec.scheme.shells().size());
    for (std::size_t v = 0; v < spec.n_voxels; ++v) {
        const TissueParams p = draw();
        out.truth.params.push_back(p);
        if (planted) {
            bool first = true;
            for (std::size_t s = 0; s < per_shell.size(); ++s) {
                if (!spec.planted_shells[s]) continue;
                per_shell[s] = first ? p : draw();
                first = false;
            }
        }
        for (std::size_t j = 0; j < pts.size(); ++j) {
            const bool flat = planted && shell_of[j] >= 0 && !spec.planted_shells[static_cast<std::size_t>(shell_of[j])];
            const TissueParams& tp = !planted || shell_of[j] < 0 ? p
                                     : flat                     ? spec.planted_reference
                                                                : per_shell[static_cast<std::size_t>(shell_of[j])];
            const double s = verdict_signal(tp, spec.model, pts[j]);
            out.raw(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j)) =
                add_rician_noise(s, flat ? 10.0 * spec.snr : spec.snr, rng);
        }
    }
    return out;
}

namespace {

template <typename Normalize>
std::pair<VoxelTable, GroundTruth> tabulate(const PhantomSpec& spec, Normalize normalize) {
    auto raw = generate_raw_phantom(spec);
    VoxelTable table;
    GroundTruth truth;
    truth.noise_sigma = raw.truth.noise_sigma;
    truth.seed = raw.truth.seed;
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> row(static_cast<std::size_t>(raw.raw.cols()));
    for (Eigen::Index v = 0; v < raw.raw.rows(); ++v) {
        for (Eigen::Index j = 0; j < raw.raw.cols(); ++j) row[static_cast<std::size_t>(j)] = raw.raw(v, j);
        auto norm = normalize(std::span<const double>(row), spec.scheme);
        if (!norm) continue;
        rows.push_back(std::move(*norm));
        table.voxel_indices.push_back(v);
        truth.params.push_back(raw.truth.params[static_cast<std::size_t>(v)]);
    }
    table.dims = {static_cast<std::int64_t>(spec.n_voxels), 1, 1};
    const Eigen::Index cols = rows.empty() ? 0 : rows.front().size();
    table.signals.resize(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) table.signals.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return {std::move(table), std::move(truth)};
}

}  // namespace

std::pair<VoxelTable, GroundTruth> generate_phantom(const PhantomSpec& spec) {
    return tabulate(spec, [](std::span<const double> r, const AcquisitionScheme& s) {
        return normalize_and_average(r, s);
    });
}

std::pair<VoxelTable, GroundTruth> generate_direction_phantom(const PhantomSpec& spec) {
    return tabulate(spec, [](std::span<const double> r, const AcquisitionScheme& s) {
        return normalize_directions(r, s);
    });
}

double mc_max_dt(double radius, double d, double ratio) {
    const double step = radius / ratio;
    return step * step / (6.0 * d);
}

namespace {

struct Vec3 {
    double x, y, z;
};

Vec3 uniform_in_sphere(double radius, Rng& rng) {
    for (;;) {
        const double x = 2.0 * uniform01(rng) - 1.0;
        const double y = 2.0 * uniform01(rng) - 1.0;
        const double z = 2.0 * uniform01(rng) - 1.0;
        if (x * x + y * y + z * z <= 1.0) return {radius * x, radius * y, radius * z};
    }
}

// Moves `p` by `v`, reflecting specularly off the sphere wall as many times as needed.
void reflect_step(Vec3& p, Vec3 v, double r2) {
    for (int bounce = 0; bounce < 64; ++bounce) {
        const Vec3 t{p.x + v.x, p.y + v.y, p.z + v.z};
        if (t.x * t.x + t.y * t.y + t.z * t.z <= r2) {
            p = t;
            return;
        }
        const double vv = v.x * v.x + v.y * v.y + v.z * v.z;
        const double pv = p.x * v.x + p.y * v.y + p.z * v.z;
        const double pp = p.x * p.x + p.y * p.y + p.z * p.z;
        const double disc = std::max(0.0, pv * pv - vv * (pp - r2));
        const double s = std::clamp((-pv + std::sqrt(disc)) / vv, 0.0, 1.0);
        const Vec3 hit{p.x + s * v.x, p.y + s * v.y, p.z + s * v.z};
        const double inv = 1.0 / std::sqrt(hit.x * hit.x + hit.y * hit.y + hit.z * hit.z);
        const Vec3 n{hit.x * inv, hit.y * inv, hit.z * inv};
        Vec3 rest{(1.0 - s) * v.x, (1.0 - s) * v.y, (1.0 - s) * v.z};
        const double rn = 2.0 * (rest.x * n.x + rest.y * n.y + rest.z * n.z);
        rest = {rest.x - rn * n.x, rest.y - rn * n.y, rest.z - rn * n.z};
        p = hit;
        v = rest;
    }
    // pathological grazing sequence: pull back onto the wall
    const double norm = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    const double scale = std::sqrt(r2) / std::max(std::sqrt(r2), norm);
    p = {p.x * scale, p.y * scale, p.z * scale};
}

// Signed gradient weight integrated over [t0, t1): +1 on the first lobe, -1 on the second.
double lobe_overlap(double t0, double t1, double delta, double Delta) {
    auto overlap = [&](double a, double b) { return std::max(0.0, std::min(t1, b) - std::max(t0, a)); };
    return overlap(0.0, delta) - overlap(Delta, Delta + delta);
}

}  // namespace

std::vector<McEstimate> mc_sphere_signals(double radius, double d, std::span<const AcquisitionPoint> points,
                                          const McOptions& opts) {
    if (!(radius > 0.0) || !(d > 0.0)) throw std::invalid_argument("mc_sphere_signal: radius and d must be > 0");
    if (opts.n_walkers < 10000) throw std::invalid_argument("mc_sphere_signal: needs at least 1e4 walkers");
    if (!(opts.dt > 0.0) || std::sqrt(6.0 * d * opts.dt) >= radius / 10.0) {
        throw std::invalid_argument("mc_sphere_signal: dt too large for the sphere radius");
    }
    std::vector<McEstimate> out(points.size());
    std::vector<std::size_t> active;
    std::vector<double> gamma_g;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (p.is_b0 || p.b == 0.0) continue;
        if (!active.empty() && (p.delta != points[active.front()].delta || p.Delta != points[active.front()].Delta)) {
            throw std::invalid_argument("mc_sphere_signals: points must share delta and Delta");
        }
        active.push_back(i);
        gamma_g.push_back(std::sqrt(pulse_strength_factor(p)));   // um^-1 ms^-1
    }
    if (active.empty()) return out;

    const auto& timing = points[active.front()];
    const double total = timing.Delta + timing.delta;
    const auto n_steps = static_cast<std::size_t>(std::ceil(total / opts.dt));
    const double dt = total / static_cast<double>(n_steps);
    const double sigma = std::sqrt(2.0 * d * dt);
    const double r2 = radius * radius;
    const Eigen::Vector3d axis = opts.axis.normalized();

    std::vector<double> weights(n_steps);
    for (std::size_t s = 0; s < n_steps; ++s) {
        weights[s] = lobe_overlap(static_cast<double>(s) * dt, static_cast<double>(s + 1) * dt, timing.delta,
                                  timing.Delta);
    }

    std::vector<double> sum(active.size(), 0.0), sum_sq(active.size(), 0.0);
    const std::size_t chunk = std::max<std::size_t>(1, opts.chunk);
    for (std::size_t start = 0, c = 0; start < opts.n_walkers; start += chunk, ++c) {
        Rng rng(splitmix64(opts.seed ^ splitmix64(c + 1)));
        std::normal_distribution<double> normal(0.0, sigma);
        const std::size_t end = std::min(opts.n_walkers, start + chunk);
        for (std::size_t w = start; w < end; ++w) {
            Vec3 p = uniform_in_sphere(radius, rng);
            double phase = 0.0;
            for (std::size_t s = 0; s < n_steps; ++s) {
                const double before = p.x * axis.x() + p.y * axis.y() + p.z * axis.z();
                const double sx = normal(rng);
                const double sy = normal(rng);
                const double sz = normal(rng);
                reflect_step(p, Vec3{sx, sy, sz}, r2);
                if (weights[s] != 0.0) {
                    phase += weights[s] * 0.5 * (before + p.x * axis.x() + p.y * axis.y() + p.z * axis.z());
                }
            }
            for (std::size_t k = 0; k < active.size(); ++k) {
                const double cp = std::cos(gamma_g[k] * phase);
                sum[k] += cp;
                sum_sq[k] += cp * cp;
            }
        }
    }
    const double n = static_cast<double>(opts.n_walkers);
    for (std::size_t k = 0; k < active.size(); ++k) {
        const double mean = sum[k] / n;
        const double var = std::max(0.0, sum_sq[k] / n - mean * mean);
        out[active[k]] = McEstimate{mean, std::sqrt(var / (n - 1.0))};
    }
    return out;
}

McEstimate mc_sphere_signal(double radius, double d, const AcquisitionPoint& point, const McOptions& opts) {
    return mc_sphere_signals(radius, d, std::span<const AcquisitionPoint>(&point, 1), opts).front();
}

void write_ground_truth_csv(const GroundTruth& truth, const std::vector<std::int64_t>& voxel_indices,
                            const std::string& path) {
    if (truth.params.size() != voxel_indices.size()) {
        throw std::invalid_argument("ground truth and voxel indices differ in length");
    }
    std::ostringstream os;
    os << "voxel,f_ic,f_ees,f_vasc,R_um\n";
    char buf[160];
    for (std::size_t i = 0; i < truth.params.size(); ++i) {
        const auto& p = truth.params[i];
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(voxel_indices[i]),
                      p.f_ic, p.f_ees, p.f_vasc(), p.radius);
        os << buf;
    }
    write_file_atomic(path, os.str());
}

}  // namespace verdict
