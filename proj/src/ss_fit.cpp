#include "verdict/ss_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "verdict/error.hpp"
#include "verdict/random.hpp"
#include "train_util.hpp"

namespace verdict {

std::string to_string(FitModel m) {
    switch (m) {
        case FitModel::verdict: return "verdict";
        case FitModel::ivim: return "ivim";
        case FitModel::adc: return "adc";
    }
    return "unknown";
}

void SsFitConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ValidationError("dropout must be in [0, 1)");
    if (max_epochs < 1) throw ValidationError("max epochs must be >= 1");
    if (patience < 1) throw ValidationError("patience must be >= 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (!(min_delta >= 0.0)) throw ValidationError("min delta must be >= 0");
    if (!(output_init_scale > 0.0)) throw ValidationError("output init scale must be > 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ValidationError("validation fraction must be in [0, 1)");
    }
    if (!(ranges.radius_min > 0.0 && ranges.radius_min < ranges.radius_max)) {
        throw ValidationError("radius range must satisfy 0 < min < max");
    }
}

std::size_t FitResult::size() const {
    switch (model) {
        case FitModel::verdict: return verdict.size();
        case FitModel::ivim: return ivim.size();
        case FitModel::adc: return adc.size();
    }
    return 0;
}

std::vector<std::string> FitResult::parameter_names() const {
    switch (model) {
        case FitModel::verdict: return {"f_ic", "f_ees", "f_vasc", "R"};
        case FitModel::ivim: return {"s0", "f", "d_star", "d"};
        case FitModel::adc: return {"s0", "adc"};
    }
    return {};
}

double FitResult::parameter(std::size_t i, const std::string& name) const {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    switch (model) {
        case FitModel::verdict: {
            const auto& p = verdict.at(i);
            if (name == "f_ic") return p.f_ic;
            if (name == "f_ees") return p.f_ees;
            if (name == "f_vasc") return p.f_vasc();
            if (name == "R") return p.radius;
            break;
        }
        case FitModel::ivim: {
            const auto& p = ivim.at(i);
            if (p.missing) return nan;
            if (name == "s0") return p.s0;
            if (name == "f") return p.f;
            if (name == "d_star") return p.d_star_missing ? nan : p.d_star;
            if (name == "d") return p.d;
            break;
        }
        case FitModel::adc: {
            const auto& p = adc.at(i);
            if (p.missing) return nan;
            if (name == "s0") return p.s0;
            if (name == "adc") return p.adc;
            break;
        }
    }
    throw std::invalid_argument("unknown parameter '" + name + "' for model " + to_string(model));
}

TissueParams project_params(TissueParams p, const ParamRanges& ranges) {
    p.f_ic = std::clamp(p.f_ic, 0.0, 1.0);
    p.f_ees = std::clamp(p.f_ees, 0.0, 1.0);
    p.radius = std::clamp(p.radius, ranges.radius_min, ranges.radius_max);
    const double s = p.f_ic + p.f_ees;
    if (s > 1.0) {
        p.f_ic /= s;
        p.f_ees /= s;
    }
    return p;
}

namespace {

using detail::canonical_order;
using detail::gather_rows;
using detail::standardize_columns;

void check_layout(const VoxelTable& table, const AcquisitionScheme& scheme) {
    const auto cols = scheme.averaged_layout().size();
    if (table.n_meas() != cols) {
        throw ValidationError("voxel table has " + std::to_string(table.n_meas()) + " columns but the scheme yields " +
                              std::to_string(cols));
    }
}

// Per-column compartment constants; only the sphere depends on the voxel.
struct LayoutModel {
    std::vector<AcquisitionPoint> layout;
    std::vector<Eigen::Index> dw_cols;
    std::vector<double> vascular, ees;
    VerdictModel model;

    LayoutModel(const AcquisitionScheme& scheme, const VerdictModel& m) : layout(scheme.averaged_layout()), model(m) {
        for (std::size_t c = 0; c < layout.size(); ++c) {
            if (layout[c].is_b0) continue;
            dw_cols.push_back(static_cast<Eigen::Index>(c));
            const auto comp = compartment_signals(1.0, model, layout[c]);
            vascular.push_back(comp.vascular);
            ees.push_back(comp.ees);
        }
    }

    // Fills signal (all columns) and, when requested, per-DW-column partials.
    void evaluate(const TissueParams& p, Eigen::Ref<Eigen::VectorXd> signal, Eigen::MatrixXd* jac = nullptr) const {
        signal.setOnes();
        if (jac) jac->setZero(static_cast<Eigen::Index>(layout.size()), 3);
        const double fv = p.f_vasc();
        for (std::size_t k = 0; k < dw_cols.size(); ++k) {
            const auto c = dw_cols[k];
            const auto sph =
                sphere_gpd_signal_with_derivative(layout[static_cast<std::size_t>(c)], p.radius, model.diffusivities.d_ic);
            signal(c) = fv * vascular[k] + p.f_ic * sph.value + p.f_ees * ees[k];
            if (jac) {
                (*jac)(c, 0) = sph.value - vascular[k];
                (*jac)(c, 1) = ees[k] - vascular[k];
                (*jac)(c, 2) = p.f_ic * sph.d_radius;
            }
        }
    }
};

// Network outputs -> parameters. `jac` receives d(f_ic, f_ees, R)/d(outputs) including the
// zero gradient of the clamp rails.
TissueParams outputs_to_params(const Eigen::Ref<const Eigen::RowVectorXd>& o, const ParamRanges& r,
                               Eigen::Matrix3d* jac = nullptr) {
    const double span = r.radius_max - r.radius_min;
    const double a = std::clamp(o(0), 0.0, 1.0);
    const double e = std::clamp(o(1), 0.0, 1.0);
    const double u = std::clamp(o(2), 0.0, 1.0);
    TissueParams p{a, e, r.radius_min + span * u};
    Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
    j(0, 0) = 1.0;
    j(1, 1) = 1.0;
    j(2, 2) = span;
    const double s = a + e;
    if (s > 1.0) {
        p.f_ic = a / s;
        p.f_ees = e / s;
        const double s2 = s * s;
        j(0, 0) = e / s2;
        j(0, 1) = -a / s2;
        j(1, 0) = -e / s2;
        j(1, 1) = a / s2;
    }
    for (int k = 0; k < 3; ++k) {
        if (o(k) < 0.0 || o(k) > 1.0) j.col(k).setZero();
    }
    if (jac) *jac = j;
    return p;
}

// Mean squared error of the eval-mode network over the given rows.
double eval_loss(const nn::Mlp& net, const Eigen::MatrixXd& xs, const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows,
                 const LayoutModel& lm, const ParamRanges& ranges) {
    if (rows.empty()) return 0.0;
    double total = 0.0;
    Eigen::VectorXd pred(x.cols());
    constexpr std::size_t chunk = 4096;
    for (std::size_t b = 0; b < rows.size(); b += chunk) {
        const std::size_t e = std::min(rows.size(), b + chunk);
        const Eigen::MatrixXd xb = gather_rows(x, rows, b, e);
        const Eigen::MatrixXd out = net.predict(gather_rows(xs, rows, b, e));
        for (Eigen::Index i = 0; i < xb.rows(); ++i) {
            lm.evaluate(outputs_to_params(out.row(i), ranges), pred);
            total += (pred - xb.row(i).transpose()).squaredNorm();
        }
    }
    return total / static_cast<double>(rows.size() * static_cast<std::size_t>(x.cols()));
}

}  // namespace

FitResult fit_verdict_ss(const VoxelTable& table, const AcquisitionScheme& scheme, const SsFitConfig& cfg) {
    cfg.validate();
    if (table.n_voxels() == 0) throw ValidationError("cannot fit an empty voxel table");
    check_layout(table, scheme);
    for (Eigen::Index r = 0; r < table.signals.rows(); ++r) {
        if (!table.signals.row(r).allFinite()) {
            throw ValidationError("non-finite signal in voxel " + std::to_string(r) +
                                  (table.voxel_indices.size() == table.n_voxels()
                                       ? " (flat index " + std::to_string(table.voxel_indices[static_cast<std::size_t>(r)]) + ")"
                                       : std::string()));
        }
    }

    const LayoutModel lm(scheme, cfg.model);
    const Eigen::MatrixXd& x = table.signals;
    // Network inputs are z-scored per column; the loss still compares raw signals.
    const Eigen::MatrixXd xs = standardize_columns(x);
    const auto n = table.n_voxels();
    const auto m = static_cast<Eigen::Index>(table.n_meas());

    auto order = canonical_order(x);
    Rng split_rng(derive_seed(cfg.seed, "ss_fit/split"));
    std::shuffle(order.begin(), order.end(), split_rng);
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    const auto& monitor = val.empty() ? train : val;

    nn::MlpSpec spec;
    spec.sizes.push_back(m);
    spec.sizes.insert(spec.sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    spec.sizes.push_back(3);
    spec.dropout_p = cfg.dropout_p;
    nn::Mlp net = nn::init_seeded(spec, derive_seed(cfg.seed, "ss_fit/init"));
    // start mid-range so no output begins on a clamp rail
    net.layers().back().bias.setConstant(0.5);
    net.layers().back().weights *= cfg.output_init_scale;
    net.touch();

    auto adam = nn::make_adam(net, cfg.learning_rate);
    Rng shuffle_rng(derive_seed(cfg.seed, "ss_fit/shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "ss_fit/dropout"));
    nn::EarlyStopping stopper(cfg.patience, cfg.min_delta, cfg.relative_min_delta);
    nn::Mlp best = net;
    double best_loss = std::numeric_limits<double>::infinity();

    FitResult result;
    result.model = FitModel::verdict;
    result.verdict_model = cfg.model;

    Eigen::VectorXd pred(m);
    Eigen::MatrixXd jac;
    Eigen::Matrix3d out_jac;
    nn::ForwardCache cache;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < train.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(train.size(), b + cfg.batch_size);
            const Eigen::MatrixXd xb = gather_rows(x, train, b, e);
            const Eigen::MatrixXd out = net.forward(gather_rows(xs, train, b, e), nn::Mode::train, &dropout_rng, &cache);
            const double norm = 1.0 / static_cast<double>(xb.rows() * m);
            Eigen::MatrixXd dout(out.rows(), out.cols());
            for (Eigen::Index i = 0; i < xb.rows(); ++i) {
                const auto p = outputs_to_params(out.row(i), cfg.ranges, &out_jac);
                lm.evaluate(p, pred, &jac);
                const Eigen::VectorXd resid = pred - xb.row(i).transpose();
                epoch_loss += resid.squaredNorm();
                const Eigen::Vector3d dparams = jac.transpose() * (2.0 * norm * resid);
                dout.row(i) = (out_jac.transpose() * dparams).transpose();
            }
            const auto grads = net.backward(dout, cache);
            nn::adam_step(net, grads, adam);
        }
        result.log.train_loss.push_back(epoch_loss / static_cast<double>(train.size() * static_cast<std::size_t>(m)));
        const double vloss = eval_loss(net, xs, x, monitor, lm, cfg.ranges);
        result.log.validation_loss.push_back(vloss);
        if (vloss < best_loss) {
            best_loss = vloss;
            best = net;
            result.log.best_epoch = epoch;
        }
        if (stopper.update(vloss)) break;
    }
    net = best;

    const Eigen::MatrixXd out = net.predict(xs);
    std::size_t railed = 0;
    result.verdict.reserve(n);
    const auto layout = scheme.averaged_layout();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index k = 0; k < 3; ++k) {
            if (out(i, k) < 0.0 || out(i, k) > 1.0) ++railed;
        }
        auto p = outputs_to_params(out.row(i), cfg.ranges);
        if (cfg.refine) p = refine_verdict_voxel(x.row(i).transpose(), layout, cfg.model, cfg.ranges, p);
        result.verdict.push_back(p);
    }
    result.log.railed_fraction = static_cast<double>(railed) / static_cast<double>(3 * n);
    if (result.log.railed_fraction > 0.2) {
        result.log.warnings.push_back("more than 20% of network outputs sit on a clamp rail");
    }
    result.mse = goodness_of_fit(result, table, scheme);
    return result;
}

TissueParams refine_verdict_voxel(const Eigen::VectorXd& signal, const std::vector<AcquisitionPoint>& layout,
                                  const VerdictModel& model, const ParamRanges& ranges, TissueParams start,
                                  int max_iterations) {
    std::vector<Eigen::Index> dw;
    for (std::size_t c = 0; c < layout.size(); ++c) {
        if (!layout[c].is_b0) dw.push_back(static_cast<Eigen::Index>(c));
    }
    auto residual = [&](const TissueParams& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        r.resize(static_cast<Eigen::Index>(dw.size()));
        if (j) j->resize(static_cast<Eigen::Index>(dw.size()), 3);
        for (std::size_t k = 0; k < dw.size(); ++k) {
            const auto& pt = layout[static_cast<std::size_t>(dw[k])];
            const auto comp = compartment_signals(p.radius, model, pt);
            r(static_cast<Eigen::Index>(k)) =
                p.f_vasc() * comp.vascular + p.f_ic * comp.sphere + p.f_ees * comp.ees - signal(dw[k]);
            if (j) {
                (*j)(static_cast<Eigen::Index>(k), 0) = comp.sphere - comp.vascular;
                (*j)(static_cast<Eigen::Index>(k), 1) = comp.ees - comp.vascular;
                (*j)(static_cast<Eigen::Index>(k), 2) = p.f_ic * comp.sphere_d_radius;
            }
        }
        return r.squaredNorm();
    };

    auto solve_from = [&](TissueParams p) {
        p = project_params(p, ranges);
        Eigen::VectorXd r, r_try;
        Eigen::MatrixXd j;
        double cost = residual(p, r, &j);
        double lambda = 1e-3;
        for (int it = 0; it < max_iterations && cost > 0.0; ++it) {
            const Eigen::Matrix3d jtj = j.transpose() * j;
            const Eigen::Vector3d g = j.transpose() * r;
            bool accepted = false;
            while (lambda < 1e12) {
                Eigen::Matrix3d a = jtj;
                for (int k = 0; k < 3; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
                const Eigen::Vector3d step = a.ldlt().solve(-g);
                const TissueParams trial =
                    project_params({p.f_ic + step(0), p.f_ees + step(1), p.radius + step(2)}, ranges);
                const double c = residual(trial, r_try, nullptr);
                if (c < cost) {
                    const double gain = cost - c;
                    p = trial;
                    cost = residual(p, r, &j);
                    lambda = std::max(lambda / 3.0, 1e-12);
                    accepted = true;
                    if (gain <= 1e-15 * cost) it = max_iterations;
                    break;
                }
                lambda *= 4.0;
            }
            if (!accepted) break;
        }
        return std::pair{p, cost};
    };

    auto best = solve_from(start);
    // coarse radius restarts guard against the shallow valley at small R
    for (double frac : {0.2, 0.4, 0.6, 0.8}) {
        TissueParams s = start;
        s.radius = ranges.radius_min + frac * (ranges.radius_max - ranges.radius_min);
        auto cand = solve_from(s);
        if (cand.second < best.second) best = cand;
    }
    return best.first;
}

FitResult fit_adc(const VoxelTable& table, const AcquisitionScheme& scheme) {
    check_layout(table, scheme);
    const auto layout = scheme.averaged_layout();
    FitResult result;
    result.model = FitModel::adc;
    result.adc.reserve(table.n_voxels());
    for (Eigen::Index v = 0; v < table.signals.rows(); ++v) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
        double bmin = std::numeric_limits<double>::infinity(), bmax = -bmin;
        for (std::size_t c = 0; c < layout.size(); ++c) {
            const double s = table.signals(v, static_cast<Eigen::Index>(c));
            if (layout[c].is_b0 || !(s > 0.0)) continue;
            const double b = layout[c].b;
            const double y = std::log(s);
            sx += b;
            sy += y;
            sxx += b * b;
            sxy += b * y;
            n += 1.0;
            bmin = std::min(bmin, b);
            bmax = std::max(bmax, b);
        }
        AdcParams p;
        if (n < 2.0 || !(bmax > bmin)) {
            p.missing = true;
        } else {
            const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            const double intercept = (sy - slope * sx) / n;
            p.adc = -slope;
            p.s0 = std::exp(intercept);
        }
        result.adc.push_back(p);
    }
    result.mse = goodness_of_fit(result, table, scheme);
    return result;
}

namespace {

// Golden-section search for a unimodal objective on [lo, hi].
template <typename F>
double golden_min(F f, double lo, double hi, double tol) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

FitResult fit_ivim(const VoxelTable& table, const AcquisitionScheme& scheme) {
    check_layout(table, scheme);
    const auto layout = scheme.averaged_layout();
    bool has_low = false, has_high = false;
    for (const auto& p : layout) {
        if (p.is_b0) continue;
        (p.b >= kIvimSegmentationB ? has_high : has_low) = true;
    }
    if (!has_low || !has_high) {
        throw ValidationError("IVIM fit needs b-values both below and above 250 s/mm^2");
    }
    FitResult result;
    result.model = FitModel::ivim;
    result.ivim.reserve(table.n_voxels());
    for (Eigen::Index v = 0; v < table.signals.rows(); ++v) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
        std::vector<std::pair<double, double>> low;
        for (std::size_t c = 0; c < layout.size(); ++c) {
            if (layout[c].is_b0) continue;
            const double s = table.signals(v, static_cast<Eigen::Index>(c));
            const double b = layout[c].b;
            if (b < kIvimSegmentationB) {
                low.emplace_back(b, s);
                continue;
            }
            if (!(s > 0.0)) continue;
            sx += b;
            sy += std::log(s);
            sxx += b * b;
            sxy += b * std::log(s);
            n += 1.0;
        }
        IvimParams p;
        if (n < 2.0 || !(n * sxx - sx * sx > 0.0)) {
            p.missing = true;
            result.ivim.push_back(p);
            continue;
        }
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        const double intercept = std::exp((sy - slope * sx) / n);
        p.s0 = 1.0;   // DW columns are already divided by their matched b0
        p.d = std::max(0.0, -slope);
        const double gap = p.s0 - intercept;
        if (!(gap > 0.0)) {
            p.f = 0.0;
            p.d_star_missing = true;
            result.ivim.push_back(p);
            continue;
        }
        p.f = std::min(1.0, gap / p.s0);
        const double lo = std::max(kIvimDStarMin, p.d);
        if (lo >= kIvimDStarMax) {
            p.d_star = kIvimDStarMax;
        } else {
            auto cost = [&](double log_ds) {
                const double ds = std::exp(log_ds);
                double acc = 0.0;
                for (const auto& [b, s] : low) {
                    const double r = ivim_signal(p.s0, p.f, ds, p.d, b) - s;
                    acc += r * r;
                }
                return acc;
            };
            // coarse scan then golden refinement in log d_star
            const double a = std::log(lo), bnd = std::log(kIvimDStarMax);
            constexpr int kScan = 64;
            int best = 0;
            double best_cost = std::numeric_limits<double>::infinity();
            for (int i = 0; i <= kScan; ++i) {
                const double c = cost(a + (bnd - a) * i / kScan);
                if (c < best_cost) {
                    best_cost = c;
                    best = i;
                }
            }
            const double left = a + (bnd - a) * std::max(0, best - 1) / kScan;
            const double right = a + (bnd - a) * std::min(kScan, best + 1) / kScan;
            p.d_star = std::exp(golden_min(cost, left, right, 1e-10));
        }
        result.ivim.push_back(p);
    }
    result.mse = goodness_of_fit(result, table, scheme);
    return result;
}

Eigen::VectorXd predict_signal(const FitResult& result, std::size_t voxel, const AcquisitionScheme& scheme) {
    const auto layout = scheme.averaged_layout();
    Eigen::VectorXd out(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t c = 0; c < layout.size(); ++c) {
        const auto& pt = layout[c];
        double s = std::numeric_limits<double>::quiet_NaN();
        switch (result.model) {
            case FitModel::verdict: s = verdict_signal(result.verdict.at(voxel), result.verdict_model, pt); break;
            case FitModel::adc: {
                const auto& p = result.adc.at(voxel);
                if (!p.missing) s = adc_signal(p.s0, p.adc, pt.b);
                break;
            }
            case FitModel::ivim: {
                const auto& p = result.ivim.at(voxel);
                if (!p.missing) {
                    s = p.d_star_missing ? adc_signal(p.s0, p.d, pt.b) : ivim_signal(p.s0, p.f, p.d_star, p.d, pt.b);
                }
                break;
            }
        }
        out(static_cast<Eigen::Index>(c)) = s;
    }
    return out;
}

std::vector<double> goodness_of_fit(const FitResult& result, const VoxelTable& table, const AcquisitionScheme& scheme) {
    check_layout(table, scheme);
    if (result.size() != table.n_voxels()) throw ValidationError("fit result and voxel table differ in size");
    const auto layout = scheme.averaged_layout();
    std::vector<double> mse(table.n_voxels());
    for (std::size_t v = 0; v < table.n_voxels(); ++v) {
        const auto pred = predict_signal(result, v, scheme);
        double acc = 0.0;
        double n = 0.0;
        for (std::size_t c = 0; c < layout.size(); ++c) {
            if (layout[c].is_b0) continue;
            const double r = pred(static_cast<Eigen::Index>(c)) - table.signals(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(c));
            acc += r * r;
            n += 1.0;
        }
        mse[v] = n > 0.0 ? acc / n : 0.0;
    }
    return mse;
}

double roi_mse(const std::vector<double>& voxel_mse, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw ValidationError("ROI has no voxels");
    double acc = 0.0;
    for (auto r : rows) acc += voxel_mse.at(r);
    return acc / static_cast<double>(rows.size());
}

VariantComparison compare_vascular_variants(const VoxelTable& table, const AcquisitionScheme& scheme,
                                            const SsFitConfig& cfg) {
    if (table.n_voxels() == 0) throw ValidationError("variant comparison needs at least one voxel");
    VariantComparison out;
    out.n_measurements = table.n_meas();
    const auto layout = scheme.averaged_layout();
    for (auto geometry : {VascularGeometry::astrosticks, VascularGeometry::ball}) {
        for (double d_vasc : {10.0, 50.0}) {
            SsFitConfig c = cfg;
            c.model.vascular = geometry;
            c.model.diffusivities.d_vasc = d_vasc;
            c.refine = true;
            const auto fit = fit_verdict_ss(table, scheme, c);
            double rss_sum = 0.0, aic_sum = 0.0, bic_sum = 0.0;
            for (std::size_t v = 0; v < table.n_voxels(); ++v) {
                const auto pred = predict_signal(fit, v, scheme);
                const double rss = (pred - table.signals.row(static_cast<Eigen::Index>(v)).transpose()).squaredNorm();
                const auto ic = information_criteria(rss, table.n_meas(), 3);
                rss_sum += rss;
                aic_sum += ic.aic;
                bic_sum += ic.bic;
            }
            const double nv = static_cast<double>(table.n_voxels());
            out.variants.push_back(VariantScore{geometry, d_vasc, rss_sum / nv, aic_sum / nv, bic_sum / nv});
        }
    }
    for (std::size_t i = 1; i < out.variants.size(); ++i) {
        if (out.variants[i].mean_aic < out.variants[out.best_aic].mean_aic) out.best_aic = i;
        if (out.variants[i].mean_bic < out.variants[out.best_bic].mean_bic) out.best_bic = i;
    }
    return out;
}

}  // namespace verdict
