// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>

#include <json.hpp>

#include "cli_util.hpp"
#include "nn_fd.hpp"
#include "score_fixture.hpp"
#include "verdict/acquisition.hpp"
#include "verdict/feature_select.hpp"
#include "verdict/phantom.hpp"
#include "verdict/signal_models.hpp"
#include "verdict/ss_fit.hpp"
#include "verdict/stats.hpp"
#include "verdict/volume_io.hpp"
#include "wilcoxon_oracle.hpp"

using namespace verdict;
namespace fs = std::filesystem;

namespace {

const fs::path kTmp(VERDICT_TEST_TMP);

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

// Fit configuration used wherever the self-supervised network runs in this gate.
SsFitConfig gate_fit_config() {
    SsFitConfig c;
    c.learning_rate = 1e-3;
    c.dropout_p = 0.0;
    c.patience = 20;
    return c;
}

std::vector<std::string> gate_fit_flags() { return {"--lr", "1e-3", "--dropout", "0", "--patience", "20"}; }

PhantomSpec recovery_phantom(double snr) {
    PhantomSpec spec;
    spec.n_voxels = 10000;
    spec.snr = snr;
    spec.seed = 11;
    return spec;
}

double mae(const std::vector<TissueParams>& a, const std::vector<TissueParams>& b, double TissueParams::*field) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i].*field - b[i].*field);
    return s / static_cast<double>(a.size());
}

// Exhaustive search over fractions on a 0.01 simplex grid and R on a 0.1 um grid,
// minimising squared error over the DW columns.
std::vector<TissueParams> grid_search(const VoxelTable& t, const AcquisitionScheme& scheme, std::size_t n) {
    const auto layout = scheme.averaged_layout();
    const VerdictModel model{};
    std::vector<std::size_t> dw;
    for (std::size_t c = 0; c < layout.size(); ++c) {
        if (!layout[c].is_b0) dw.push_back(c);
    }
    std::vector<double> radii;
    for (int k = 1; k <= 150; ++k) radii.push_back(0.1 * k);
    std::vector<std::vector<double>> sphere(radii.size(), std::vector<double>(dw.size()));
    std::vector<double> ees(dw.size()), vasc(dw.size());
    for (std::size_t j = 0; j < dw.size(); ++j) {
        const auto cs = compartment_signals(1.0, model, layout[dw[j]]);
        ees[j] = cs.ees;
        vasc[j] = cs.vascular;
        for (std::size_t r = 0; r < radii.size(); ++r) sphere[r][j] = compartment_signals(radii[r], model, layout[dw[j]]).sphere;
    }
    std::vector<TissueParams> out;
    for (std::size_t v = 0; v < n; ++v) {
        double best = std::numeric_limits<double>::infinity();
        TissueParams bp;
        for (std::size_t r = 0; r < radii.size(); ++r) {
            for (int a = 0; a <= 100; ++a) {
                for (int b = 0; a + b <= 100; ++b) {
                    const double fi = a / 100.0, fe = b / 100.0, fv = 1.0 - fi - fe;
                    double e = 0.0;
                    for (std::size_t j = 0; j < dw.size(); ++j) {
                        const double d = fi * sphere[r][j] + fe * ees[j] + fv * vasc[j] -
                                         t.signals(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(dw[j]));
                        e += d * d;
                    }
                    if (e < best) {
                        best = e;
                        bp = {fi, fe, radii[r]};
                    }
                }
            }
        }
        out.push_back(bp);
    }
    return out;
}

// State shared by the recovery and reduced-protocol criteria.
struct Recovery {
    RawPhantom raw;
    FitResult full_fit;
};
Recovery g_recovery;

VoxelTable table_from_raw(const Eigen::MatrixXd& raw, const AcquisitionScheme& scheme, const std::vector<std::size_t>* cols) {
    VoxelTable t;
    const auto n = raw.rows();
    t.dims = {n, 1, 1};
    t.signals.resize(n, static_cast<Eigen::Index>(scheme.n_volumes()));
    std::vector<double> row;
    for (Eigen::Index v = 0; v < n; ++v) {
        row.clear();
        if (cols) {
            for (auto c : *cols) row.push_back(raw(v, static_cast<Eigen::Index>(c)));
        } else {
            for (Eigen::Index c = 0; c < raw.cols(); ++c) row.push_back(raw(v, c));
        }
        t.signals.row(v) = normalize_and_average(row, scheme)->transpose();
        t.voxel_indices.push_back(v);
    }
    return t;
}

Outcome protocol_fidelity() {
    const double b[9] = {70, 90, 150, 500, 1000, 1500, 2000, 2200, 2500};
    const double delta[9] = {4.8, 4.8, 4.8, 12.0, 12.0, 26.3, 16.8, 16.8, 21.4};
    const double Delta[9] = {27.0, 27.0, 27.0, 34.0, 34.0, 47.0, 37.5, 37.5, 43.5};
    const auto s = kidney_protocol();
    bool ok = s.shells().size() == 9 && s.n_volumes() == 18 && s.b0_indices().size() == 9 && s.dw_indices().size() == 27;
    for (std::size_t i = 0; ok && i < 9; ++i) {
        const auto& p = s.shells()[i].dw_point;
        ok = std::abs(p.b_s_mm2() - b[i]) < 1e-9 && p.delta == delta[i] && p.Delta == Delta[i] &&
             s.shells()[i].dw_indices.size() == 3 && s[s.shells()[i].b0_index].te == p.te;
    }
    return {ok, "9 shells, " + std::to_string(s.n_volumes()) + " volumes"};
}

Outcome sphere_oracle() {
    const auto scheme = kidney_protocol();
    const double d = FixedDiffusivities{}.d_ic;
    std::vector<std::vector<AcquisitionPoint>> timings{{scheme.shells()[3].dw_point, scheme.shells()[4].dw_point},
                                                        {scheme.shells()[6].dw_point}};
    double worst = 0.0;
    bool ok = true;
    for (double radius : {5.0, 10.0, 15.0}) {
        for (const auto& pts : timings) {
            McOptions opts;
            opts.n_walkers = 200000;
            opts.dt = 0.95 * mc_max_dt(radius, d);
            opts.seed = derive_seed(static_cast<std::uint64_t>(radius), "mc");
            const auto est = mc_sphere_signals(radius, d, pts, opts);
            for (std::size_t k = 0; k < pts.size(); ++k) {
                const double diff = std::abs(sphere_gpd_signal(pts[k], radius, d) - est[k].signal);
                ok = ok && diff <= std::max(0.02, 3.0 * est[k].standard_error);
                worst = std::max(worst, diff);
            }
        }
    }
    return {ok, "max |GPD - MC| " + fmt("%.4f", worst)};
}

Outcome gradient_suites() {
    Rng rng(derive_seed(3, "acceptance/gradients"));
    const auto scheme = kidney_protocol();
    const auto dws = scheme.dw_indices();
    double worst_model = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const double a = uniform01(rng), b = uniform01(rng);
        const TissueParams t{std::min(a, b), std::abs(a - b), 1.0 + 14.0 * uniform01(rng)};
        VerdictModel m;
        m.vascular = draw % 2 ? VascularGeometry::ball : VascularGeometry::astrosticks;
        const auto& p = scheme[dws[static_cast<std::size_t>(draw) % dws.size()]];
        const auto g = verdict_gradient(t, m, p);
        const double h[3] = {1e-6, 1e-6, 1e-5};
        for (int k = 0; k < 3; ++k) {
            TissueParams up = t, dn = t;
            (k == 0 ? up.f_ic : k == 1 ? up.f_ees : up.radius) += h[k];
            (k == 0 ? dn.f_ic : k == 1 ? dn.f_ees : dn.radius) -= h[k];
            const double fd = (verdict_signal(up, m, p) - verdict_signal(dn, m, p)) / (2.0 * h[k]);
            worst_model = std::max(worst_model, std::abs(g[static_cast<std::size_t>(k)] - fd) / std::max(1e-3, std::abs(fd)));
        }
    }
    double worst_net = 0.0;
    for (int trial = 0; trial < 10; ++trial) worst_net = std::max(worst_net, nn_fd::worst_relative_error(trial));
    return {worst_model < 1e-6 && worst_net < 1e-4,
            "model " + fmt("%.2e", worst_model) + ", network " + fmt("%.2e", worst_net)};
}

Outcome self_supervised_recovery() {
    const auto scheme = kidney_protocol();
    const auto cfg = gate_fit_config();

    g_recovery.raw = generate_raw_phantom(recovery_phantom(std::numeric_limits<double>::infinity()));
    const auto clean = table_from_raw(g_recovery.raw.raw, scheme, nullptr);
    g_recovery.full_fit = fit_verdict_ss(clean, scheme, cfg);
    const auto& truth = g_recovery.raw.truth.params;
    const double mae_fic = mae(g_recovery.full_fit.verdict, truth, &TissueParams::f_ic);
    const double mae_r = mae(g_recovery.full_fit.verdict, truth, &TissueParams::radius);

    const auto [noisy, noisy_truth] = generate_phantom(recovery_phantom(50.0));
    const auto noisy_fit = fit_verdict_ss(noisy, scheme, cfg);
    const double mae_noisy = mae(noisy_fit.verdict, noisy_truth.params, &TissueParams::f_ic);

    // the thresholds must be reachable by an exhaustive per-voxel search
    const std::size_t n_grid = 150;
    const std::vector<TissueParams> clean_truth(truth.begin(), truth.begin() + n_grid);
    const std::vector<TissueParams> noisy_sub(noisy_truth.params.begin(), noisy_truth.params.begin() + n_grid);
    const auto grid_clean = grid_search(clean, scheme, n_grid);
    const auto grid_noisy = grid_search(noisy, scheme, n_grid);
    const double g_fic = mae(grid_clean, clean_truth, &TissueParams::f_ic);
    const double g_r = mae(grid_clean, clean_truth, &TissueParams::radius);
    const double g_noisy = mae(grid_noisy, noisy_sub, &TissueParams::f_ic);
    const bool oracle_ok = g_fic <= 0.02 && g_r <= 1.0 && g_noisy <= 0.07;

    return {mae_fic <= 0.02 && mae_r <= 1.0 && mae_noisy <= 0.07 && oracle_ok,
            "MAE f_ic " + fmt("%.4f", mae_fic) + ", R " + fmt("%.3f", mae_r) + " um, f_ic@SNR50 " + fmt("%.4f", mae_noisy) +
                "; grid oracle " + fmt("%.4f", g_fic) + "/" + fmt("%.3f", g_r) + "/" + fmt("%.4f", g_noisy)};
}

Outcome model_ordering() {
    PhantomSpec spec;
    spec.n_voxels = 2000;
    spec.seed = 21;
    const auto [table, truth] = generate_phantom(spec);
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    const double v = mean(fit_verdict_ss(table, spec.scheme, gate_fit_config()).mse);
    const double i = mean(fit_ivim(table, spec.scheme).mse);
    const double a = mean(fit_adc(table, spec.scheme).mse);
    return {v < i && i < a, "MSE verdict " + fmt("%.2e", v) + " < ivim " + fmt("%.2e", i) + " < adc " + fmt("%.2e", a)};
}

Outcome variant_selection() {
    int wins = 0;
    std::string names;
    for (int seed = 1; seed <= 10; ++seed) {
        const auto sim = cli_util::fresh_dir(kTmp / ("compare_sim" + std::to_string(seed)));
        const auto out = cli_util::fresh_dir(kTmp / ("compare_out" + std::to_string(seed)));
        const auto s = cli_util::run({"simulate", "--n-voxels", "300", "--snr", "50", "--seed", std::to_string(seed), "--out",
                                      sim.string()});
        std::vector<std::string> args{"compare", "--volume", (sim / "phantom.json").string(), "--seed", std::to_string(seed),
                                      "--out", out.string()};
        const auto flags = gate_fit_flags();
        args.insert(args.end(), flags.begin(), flags.end());
        const auto c = cli_util::run(args);
        if (s.code != 0 || c.code != 0) {
            std::fprintf(stderr, "%s%s", s.err.c_str(), c.err.c_str());
            continue;
        }
        const auto rep = nlohmann::json::parse(read_file((out / "compare_report.json").string()));
        const bool win = rep["best_aic"] == "astrosticks-d50" && rep["best_bic"] == "astrosticks-d50";
        wins += win;
        if (!win) names += " seed " + std::to_string(seed) + "->" + rep["best_aic"].get<std::string>();
    }
    return {wins >= 9, std::to_string(wins) + "/10 seeds rank astrosticks-d50 first" + names};
}

Outcome feature_selection() {
    const auto scheme = kidney_protocol();
    int good = 0;
    std::string hits;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(derive_seed(seed, "planted"));
        std::vector<std::size_t> order(9);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> planted(9, false);
        for (int i = 0; i < 4; ++i) planted[order[static_cast<std::size_t>(i)]] = true;
        std::vector<VoxelTable> subjects;
        for (int s = 0; s < 15; ++s) {
            PhantomSpec spec;
            spec.n_voxels = 400;
            spec.snr = 50.0;
            spec.seed = derive_seed(seed, "subject" + std::to_string(s));
            spec.planted_shells = planted;
            subjects.push_back(generate_direction_phantom(spec).first);
        }
        SelectionConfig cfg;
        cfg.learning_rate = 1e-4;
        cfg.dropout_p = 0.1;
        cfg.seed = seed;
        const auto report = train_selector(subjects, scheme, cfg);
        int hit = 0;
        for (auto s : top_k(shell_scores(report.scores, scheme), 4)) hit += planted[s];
        good += hit >= 3;
        hits += std::to_string(hit);
    }
    const auto fixture = report_from_scores(fixture::four_shell_scores(), fixture::four_shell_voxel_counts(), scheme, 12, 4);
    const bool fixture_ok = fixture.b_values == std::vector<double>{70, 150, 1000, 2000};
    return {good >= 8 && fixture_ok, std::to_string(good) + "/10 seeds with >=3 of 4 planted shells (hits " + hits +
                                         "); fixture b = " + (fixture_ok ? "[70, 150, 1000, 2000]" : "WRONG")};
}

Outcome reduced_protocol() {
    const auto full = kidney_protocol();
    if (g_recovery.full_fit.size() == 0) {
        g_recovery.raw = generate_raw_phantom(recovery_phantom(std::numeric_limits<double>::infinity()));
        g_recovery.full_fit = fit_verdict_ss(table_from_raw(g_recovery.raw.raw, full, nullptr), full, gate_fit_config());
    }
    const auto report = report_from_scores(fixture::four_shell_scores(), fixture::four_shell_voxel_counts(), full, 12, 4);
    const auto reduced = extract_protocol(report, full, 4);
    const auto cols = scheme_subset(full, reduced);
    const auto fit = fit_verdict_ss(table_from_raw(g_recovery.raw.raw, reduced, &cols), reduced, gate_fit_config());
    const auto cmp = evaluate_reduced(g_recovery.full_fit, fit);
    const double r = cmp.parameters[0].pearson_r;
    const double spv = kidney_seconds_per_volume();
    const double d_full = estimate_duration(full, spv), d_red = estimate_duration(reduced, spv);
    return {r >= 0.9 && d_full == 40.0 && d_red < d_full,
            "r(f_ic) " + fmt("%.4f", r) + ", duration " + fmt("%.1f", d_full) + " -> " + fmt("%.1f", d_red) + " min"};
}

Outcome statistics() {
    Rng rng(derive_seed(5, "acceptance/wilcoxon"));
    int exact = 0;
    for (int c = 0; c < 200; ++c) {
        const auto n = 1 + static_cast<std::size_t>(uniform01(rng) * 10.0);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = std::floor(uniform01(rng) * 7.0);
            y[i] = std::floor(uniform01(rng) * 7.0);
        }
        if (x == y) x[0] += 1.0;
        const auto o = oracle::wilcoxon_enumerate(x, y);
        const auto r = wilcoxon_signed_rank(x, y);
        exact += r.w == o.w && r.p_value == o.p && r.n_effective == o.n && r.method == WilcoxonMethod::exact;
    }
    const auto five = wilcoxon_signed_rank({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
    const bool bands = significance_band(0.05) == "n.s." && significance_band(0.0499) == "*" &&
                       significance_band(0.01) == "*" && significance_band(0.0099) == "**" &&
                       significance_band(0.001) == "**" && significance_band(0.00099) == "***" &&
                       significance_band(0.0001) == "***" && significance_band(0.000099) == "****";
    return {exact == 200 && five.p_value == 0.0625 && five.band == "n.s." && bands,
            std::to_string(exact) + "/200 bit-exact, n=5 p " + fmt("%.4f", five.p_value) + " " + five.band};
}

Outcome determinism_io() {
    using cli_util::run;
    using cli_util::snapshot;
    auto twice = [](const std::string& name, const std::function<std::vector<std::string>(const fs::path&)>& args) {
        std::map<std::string, std::string> snaps[2];
        for (int k = 0; k < 2; ++k) {
            const auto dir = cli_util::fresh_dir(kTmp / (name + std::to_string(k)));
            const auto r = run(args(dir));
            if (r.code != 0) {
                std::fprintf(stderr, "%s: %s", name.c_str(), r.err.c_str());
                return false;
            }
            snaps[k] = snapshot(dir);
        }
        return !snaps[0].empty() && snaps[0] == snaps[1];
    };
    std::string failed;
    auto note = [&](bool ok, const std::string& what) {
        if (!ok) failed += " " + what;
    };
    const auto sim = kTmp / "det_simulate0";
    note(twice("det_simulate", [](const fs::path& d) {
             return std::vector<std::string>{"simulate", "--n-voxels", "80", "--snr", "40", "--seed", "7", "--out", d.string()};
         }),
         "simulate");
    const auto sim2 = cli_util::fresh_dir(kTmp / "det_subject2");
    run({"simulate", "--n-voxels", "80", "--snr", "40", "--seed", "8", "--out", sim2.string()});
    const auto vol = (sim / "phantom.json").string();
    note(twice("det_fit", [&](const fs::path& d) {
             return std::vector<std::string>{"fit", "--volume", vol, "--max-epochs", "5", "--seed", "3", "--out", d.string()};
         }),
         "fit");
    note(twice("det_compare", [&](const fs::path& d) {
             return std::vector<std::string>{"compare", "--volume", vol, "--max-epochs", "3", "--out", d.string()};
         }),
         "compare");
    note(twice("det_optimize", [&](const fs::path& d) {
             return std::vector<std::string>{"optimize", "--subject", vol, "--subject", (sim2 / "phantom.json").string(),
                                             "--epochs", "3", "--n-test", "1", "--out", d.string()};
         }),
         "optimize");
    Volume a = make_volume({80, 1, 1}, 1, VolumeKind::mask), b = a;
    for (int i = 0; i < 80; ++i) (i % 2 ? a : b).mask[static_cast<std::size_t>(i)] = 1;
    write_volume(a, (kTmp / "det_roi_a.json").string());
    write_volume(b, (kTmp / "det_roi_b.json").string());
    std::vector<std::string> stats_args{"stats"};
    for (int s = 0; s < 6; ++s) {
        const auto dir = cli_util::fresh_dir(kTmp / ("det_adc" + std::to_string(s)));
        const auto simd = cli_util::fresh_dir(kTmp / ("det_adc_sim" + std::to_string(s)));
        run({"simulate", "--n-voxels", "80", "--snr", "30", "--seed", std::to_string(100 + s), "--out", simd.string()});
        run({"fit", "--volume", (simd / "phantom.json").string(), "--model", "adc", "--out", dir.string()});
        const std::string subj = "s" + std::to_string(s);
        stats_args.insert(stats_args.end(), {"--fit", subj + "=" + dir.string(), "--roi",
                                             subj + ",tumour," + (kTmp / "det_roi_a.json").string(), "--roi",
                                             subj + ",normal," + (kTmp / "det_roi_b.json").string()});
    }
    note(twice("det_stats", [&](const fs::path& d) {
             auto args = stats_args;
             args.insert(args.end(), {"--out", d.string()});
             return args;
         }),
         "stats");

    const auto v = read_volume(vol);
    const auto rt = kTmp / "det_roundtrip.json";
    write_volume(v, rt.string());
    const bool io = read_file(rt.string()) == read_file(vol) &&
                    read_file(payload_path(rt.string())) == read_file(payload_path(vol)) &&
                    payload_bytes(read_volume(rt.string())) == payload_bytes(v);
    note(io, "volume-roundtrip");
    return {failed.empty(), failed.empty() ? "5 commands byte-identical, volume round trip exact" : "failed:" + failed};
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    fs::create_directories(kTmp);
    const std::vector<Criterion> criteria{
        {1, "protocol fidelity", 1.0, protocol_fidelity},
        {2, "sphere oracle", 300.0, sphere_oracle},
        {3, "gradient suites", 60.0, gradient_suites},
        {4, "self-supervised recovery", 300.0, self_supervised_recovery},
        {5, "model ordering", 120.0, model_ordering},
        {6, "variant selection", 300.0, variant_selection},
        {7, "feature selection", 600.0, feature_selection},
        {8, "reduced-protocol fidelity", 300.0, reduced_protocol},
        {9, "statistics", 60.0, statistics},
        {10, "determinism and I/O", 60.0, determinism_io},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = s <= c.limit_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("criterion %2d %-26s %s  %s  [%.1f s of %.0f s%s]\n", c.id, c.name, pass ? "PASS" : "FAIL",
                    o.detail.c_str(), s, c.limit_s, in_time ? "" : ", over limit");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
