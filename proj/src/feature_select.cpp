#include "verdict/feature_select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "train_util.hpp"
#include "verdict/error.hpp"
#include "verdict/random.hpp"

namespace verdict {

void SelectionConfig::validate() const {
    if (k_selected < 1 || k_selected > kDirectionMeasurements) {
        throw ValidationError("k_selected must be in [1, 27]");
    }
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ValidationError("dropout must be in [0, 1)");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (warmup_epochs < 0) throw ValidationError("warmup epochs must be >= 0");
    if (n_bvalues < 1) throw ValidationError("n_bvalues must be >= 1");
}

std::vector<std::size_t> top_k(const Eigen::VectorXd& scores, std::size_t k) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(scores.size()));
    std::iota(idx.begin(), idx.end(), 0);
    k = std::min(k, idx.size());
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace {

// Measurement index (position in dw_indices()) of every scheme entry, -1 for b0s.
std::vector<long> measurement_of_entry(const AcquisitionScheme& scheme) {
    std::vector<long> m(scheme.size(), -1);
    const auto dw = scheme.dw_indices();
    for (std::size_t i = 0; i < dw.size(); ++i) m[dw[i]] = static_cast<long>(i);
    return m;
}

void check_measurements(const Eigen::VectorXd& scores, const AcquisitionScheme& scheme) {
    const auto n_dw = scheme.dw_indices().size();
    if (static_cast<std::size_t>(scores.size()) != n_dw) {
        throw ValidationError("score vector has " + std::to_string(scores.size()) + " entries but the scheme has " +
                              std::to_string(n_dw) + " DW measurements");
    }
}

}  // namespace

Eigen::VectorXd shell_scores(const Eigen::VectorXd& scores, const AcquisitionScheme& scheme) {
    check_measurements(scores, scheme);
    const auto meas = measurement_of_entry(scheme);
    const auto& shells = scheme.shells();
    Eigen::VectorXd out(static_cast<Eigen::Index>(shells.size()));
    for (std::size_t s = 0; s < shells.size(); ++s) {
        double sum = 0.0;
        for (auto i : shells[s].dw_indices) sum += scores(meas[i]);
        out(static_cast<Eigen::Index>(s)) = sum / static_cast<double>(shells[s].dw_indices.size());
    }
    return out;
}

ScoreReport report_from_scores(const Eigen::MatrixXd& subject_scores, const std::vector<std::size_t>& voxel_counts,
                               const AcquisitionScheme& scheme, std::size_t k_selected, std::size_t n_bvalues) {
    if (subject_scores.rows() == 0 || static_cast<std::size_t>(subject_scores.rows()) != voxel_counts.size()) {
        throw ValidationError("score matrix rows must match the voxel counts");
    }
    const double total = static_cast<double>(std::accumulate(voxel_counts.begin(), voxel_counts.end(), std::size_t{0}));
    if (!(total > 0.0)) throw ValidationError("score matrix covers no voxels");
    Eigen::VectorXd scores = Eigen::VectorXd::Zero(subject_scores.cols());
    for (Eigen::Index s = 0; s < subject_scores.rows(); ++s) {
        scores += subject_scores.row(s).transpose() * (static_cast<double>(voxel_counts[static_cast<std::size_t>(s)]) / total);
    }
    const auto sh = shell_scores(scores, scheme);
    if (n_bvalues > static_cast<std::size_t>(sh.size())) {
        throw ValidationError("n_bvalues exceeds the number of shells (" + std::to_string(sh.size()) + ")");
    }

    ScoreReport r;
    r.scores = scores;
    r.subject_scores = subject_scores;
    r.voxel_counts = voxel_counts;
    r.selected = top_k(scores, k_selected);
    for (auto s : top_k(sh, n_bvalues)) r.b_values.push_back(scheme.shells()[s].dw_point.b_s_mm2());
    return r;
}

AcquisitionScheme extract_protocol(const ScoreReport& report, const AcquisitionScheme& full, std::size_t n_bvalues) {
    const auto sh = shell_scores(report.scores, full);
    if (n_bvalues < 1 || n_bvalues > static_cast<std::size_t>(sh.size())) {
        throw ValidationError("n_bvalues must be in [1, " + std::to_string(sh.size()) + "]");
    }
    std::vector<bool> keep(full.size(), false);
    for (auto s : top_k(sh, n_bvalues)) {
        const auto& shell = full.shells()[s];
        keep[shell.b0_index] = true;
        for (auto i : shell.dw_indices) keep[i] = true;
    }
    std::vector<AcquisitionPoint> pts;
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (keep[i]) pts.push_back(full[i]);
    }
    return AcquisitionScheme(std::move(pts));
}

std::vector<std::size_t> scheme_subset(const AcquisitionScheme& full, const AcquisitionScheme& reduced) {
    std::vector<bool> used(full.size(), false);
    std::vector<std::size_t> out;
    out.reserve(reduced.size());
    for (std::size_t r = 0; r < reduced.size(); ++r) {
        const auto& p = reduced[r];
        bool found = false;
        for (std::size_t f = 0; f < full.size() && !found; ++f) {
            const auto& q = full[f];
            if (!used[f] && q.b == p.b && q.delta == p.delta && q.Delta == p.Delta && q.te == p.te &&
                q.is_b0 == p.is_b0 && q.direction_index == p.direction_index) {
                used[f] = true;
                out.push_back(f);
                found = true;
            }
        }
        if (!found) throw ValidationError("reduced scheme entry " + std::to_string(r) + " is not in the full scheme");
    }
    return out;
}

ScoreReport train_selector(const std::vector<VoxelTable>& datasets, const AcquisitionScheme& scheme,
                           const SelectionConfig& cfg) {
    cfg.validate();
    if (datasets.empty()) throw ValidationError("no subjects given");
    if (scheme.dw_indices().size() != kDirectionMeasurements) {
        throw ValidationError("scheme must have 27 DW measurements, got " + std::to_string(scheme.dw_indices().size()));
    }
    for (std::size_t s = 0; s < datasets.size(); ++s) {
        datasets[s].validate();
        if (datasets[s].n_meas() != kDirectionMeasurements) {
            throw ValidationError("subject " + std::to_string(s) + " has " + std::to_string(datasets[s].n_meas()) +
                                  " measurements, expected 27");
        }
        if (datasets[s].n_voxels() == 0) throw ValidationError("subject " + std::to_string(s) + " has no voxels");
    }

    std::vector<std::string> warnings;
    if (cfg.k_selected >= kDirectionMeasurements) {
        warnings.push_back("k_selected >= 27: the gate keeps every measurement");
    }
    std::size_t n_test = 0;
    if (cfg.holdout) {
        if (datasets.size() < 2) {
            throw ValidationError("a train/test split needs at least 2 subjects (disable holdout to train on one)");
        }
        n_test = std::clamp<std::size_t>(cfg.n_test_subjects, 1, datasets.size() - 1);
    } else {
        warnings.push_back("no held-out subjects: test MSE is measured on the training data");
    }
    const std::size_t n_train = datasets.size() - n_test;

    Eigen::Index n_rows = 0;
    for (std::size_t s = 0; s < n_train; ++s) n_rows += datasets[s].signals.rows();
    Eigen::MatrixXd x(n_rows, static_cast<Eigen::Index>(kDirectionMeasurements));
    {
        Eigen::Index at = 0;
        for (std::size_t s = 0; s < n_train; ++s) {
            x.middleRows(at, datasets[s].signals.rows()) = datasets[s].signals;
            at += datasets[s].signals.rows();
        }
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::RowVectorXd sd = (x.rowwise() - mean).array().square().colwise().mean().sqrt().matrix();
    for (Eigen::Index c = 0; c < sd.size(); ++c)
        if (!(sd(c) > 1e-8)) sd(c) = 1.0;
    auto scorer_input = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
        return ((m.rowwise() - mean).array().rowwise() / sd.array()).matrix();
    };
    // The gate acts on centred values so a constant measurement carries nothing through it.
    auto gate_input = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd { return m.rowwise() - mean; };
    const Eigen::MatrixXd xs = scorer_input(x);
    const Eigen::MatrixXd xg = gate_input(x);

    const auto n_meas = static_cast<Eigen::Index>(kDirectionMeasurements);
    nn::MlpSpec scorer_spec;
    scorer_spec.sizes = {n_meas, 64, n_meas};
    scorer_spec.hidden_batchnorm = true;
    scorer_spec.output = nn::Activation::sigmoid;
    scorer_spec.dropout_p = cfg.dropout_p;
    nn::MlpSpec predictor_spec;
    predictor_spec.sizes = {n_meas, 64, n_meas};
    predictor_spec.dropout_p = cfg.dropout_p;
    nn::Mlp scorer = nn::init_seeded(scorer_spec, derive_seed(cfg.seed, "select/scorer"));
    nn::Mlp predictor = nn::init_seeded(predictor_spec, derive_seed(cfg.seed, "select/predictor"));
    auto adam_s = nn::make_adam(scorer, cfg.learning_rate);
    auto adam_p = nn::make_adam(predictor, cfg.learning_rate);
    Rng shuffle_rng(derive_seed(cfg.seed, "select/shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "select/dropout"));

    std::vector<std::size_t> order(static_cast<std::size_t>(n_rows));
    std::iota(order.begin(), order.end(), 0);
    nn::ForwardCache cache_s, cache_p;
    ScoreReport report;
    const Eigen::RowVectorXd all_ones = Eigen::RowVectorXd::Ones(n_meas);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const bool warm = epoch < cfg.warmup_epochs;
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            const Eigen::MatrixXd xb = detail::gather_rows(x, order, b, e);
            const Eigen::MatrixXd gb = detail::gather_rows(xg, order, b, e);
            const Eigen::MatrixXd sc = scorer.forward(detail::gather_rows(xs, order, b, e), nn::Mode::train,
                                                      &dropout_rng, &cache_s);
            Eigen::RowVectorXd mask = Eigen::RowVectorXd::Zero(n_meas);
            if (warm) {
                mask = all_ones;
            } else {
                for (auto j : top_k(sc.colwise().mean().transpose(), cfg.k_selected)) mask(static_cast<Eigen::Index>(j)) = 1.0;
            }
            const Eigen::MatrixXd soft = (gb.array() * sc.array()).matrix();
            const Eigen::MatrixXd gated = (soft.array().rowwise() * mask.array()).matrix();
            const Eigen::MatrixXd y = predictor.forward(gated, nn::Mode::train, &dropout_rng, &cache_p);
            // Straight-through: the backward pass sees the unmasked gate, so predictor columns of
            // unselected measurements still learn and their scores get a meaningful gradient.
            cache_p.layers.front().input = soft;
            const Eigen::MatrixXd resid = y - xb;
            epoch_loss += resid.squaredNorm();
            const Eigen::MatrixXd dy = resid * (2.0 / static_cast<double>(resid.size()));
            const auto gp = predictor.backward(dy, cache_p);
            const Eigen::MatrixXd dscore = (gp.input.array() * gb.array()).matrix();
            const auto gs = scorer.backward(dscore, cache_s);
            nn::adam_step(predictor, gp, adam_p);
            nn::adam_step(scorer, gs, adam_s);
        }
        report.train_loss.push_back(epoch_loss / static_cast<double>(x.size()));
    }

    Eigen::MatrixXd subject_scores(static_cast<Eigen::Index>(n_train), n_meas);
    std::vector<std::size_t> counts(n_train);
    for (std::size_t s = 0; s < n_train; ++s) {
        const auto sc = scorer.predict(scorer_input(datasets[s].signals));
        subject_scores.row(static_cast<Eigen::Index>(s)) = sc.colwise().mean();
        counts[s] = datasets[s].n_voxels();
    }
    auto final_report = report_from_scores(subject_scores, counts, scheme, cfg.k_selected, cfg.n_bvalues);
    final_report.train_loss = std::move(report.train_loss);
    final_report.warnings = std::move(warnings);
    final_report.seed = cfg.seed;
    final_report.config = cfg;

    Eigen::RowVectorXd mask = Eigen::RowVectorXd::Zero(n_meas);
    for (auto j : final_report.selected) mask(static_cast<Eigen::Index>(j)) = 1.0;
    const std::size_t first_test = cfg.holdout ? n_train : 0;
    double sq = 0.0;
    double count = 0.0;
    for (std::size_t s = first_test; s < datasets.size(); ++s) {
        const auto& sig = datasets[s].signals;
        const Eigen::MatrixXd sc = scorer.predict(scorer_input(sig));
        const Eigen::MatrixXd gated = (gate_input(sig).array() * sc.array()).rowwise() * mask.array();
        sq += (predictor.predict(gated) - sig).squaredNorm();
        count += static_cast<double>(sig.size());
    }
    final_report.test_mse = sq / count;
    return final_report;
}

double pearson_r(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw ValidationError("pearson_r needs two samples of equal, nonzero length");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

ReducedComparison evaluate_reduced(const FitResult& full_fit, const FitResult& reduced_fit) {
    if (full_fit.model != FitModel::verdict || reduced_fit.model != FitModel::verdict) {
        throw ValidationError("evaluate_reduced compares VERDICT fits");
    }
    if (full_fit.size() != reduced_fit.size()) {
        throw ValidationError("voxel mismatch: full fit has " + std::to_string(full_fit.size()) + " voxels, reduced fit " +
                              std::to_string(reduced_fit.size()));
    }
    ReducedComparison out;
    for (const auto& name : full_fit.parameter_names()) {
        ParameterComparison pc;
        pc.name = name;
        std::vector<double> a(full_fit.size()), b(full_fit.size());
        double abs_sum = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = full_fit.parameter(i, name);
            b[i] = reduced_fit.parameter(i, name);
            pc.difference.push_back(b[i] - a[i]);
            abs_sum += std::abs(b[i] - a[i]);
        }
        pc.mean_abs_diff = a.empty() ? 0.0 : abs_sum / static_cast<double>(a.size());
        pc.pearson_r = a.empty() ? std::numeric_limits<double>::quiet_NaN() : pearson_r(a, b);
        out.parameters.push_back(std::move(pc));
    }
    return out;
}

std::string score_report_json(const ScoreReport& report, const AcquisitionScheme& scheme) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["scores"] = std::vector<double>(report.scores.data(), report.scores.data() + report.scores.size());
    j["selected"] = report.selected;
    j["b_values"] = report.b_values;
    j["test_mse"] = report.test_mse;
    j["seed"] = report.seed;
    const auto& c = report.config;
    j["config"] = {{"k_selected", c.k_selected},
                   {"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"dropout_p", c.dropout_p},
                   {"batch_size", c.batch_size},
                   {"n_test_subjects", c.holdout ? c.n_test_subjects : 0},
                   {"holdout", c.holdout},
                   {"warmup_epochs", c.warmup_epochs},
                   {"n_bvalues", c.n_bvalues}};
    std::vector<std::vector<double>> rows;
    for (Eigen::Index s = 0; s < report.subject_scores.rows(); ++s) {
        auto& row = rows.emplace_back();
        for (Eigen::Index m = 0; m < report.subject_scores.cols(); ++m) row.push_back(report.subject_scores(s, m));
    }
    j["subject_scores"] = rows;
    j["voxel_counts"] = report.voxel_counts;
    j["shell_scores"] = [&] {
        const auto sh = shell_scores(report.scores, scheme);
        return std::vector<double>(sh.data(), sh.data() + sh.size());
    }();
    j["train_loss"] = report.train_loss;
    j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

}  // namespace verdict
