#include "verdict/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "verdict/acquisition.hpp"
#include "verdict/error.hpp"
#include "verdict/feature_select.hpp"
#include "verdict/io_util.hpp"
#include "verdict/phantom.hpp"
#include "verdict/random.hpp"
#include "verdict/ss_fit.hpp"
#include "verdict/stats.hpp"
#include "verdict/volume_io.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace verdict {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Held for the whole command; a second run against the same output directory fails fast.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw ValidationError("cannot create output directory '" + dir.string() + "': " + ec.message());
        path_ = dir / ".verdict.lock";
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw ValidationError("output directory '" + dir.string() + "' is in use (remove " + path_.string() +
                                  " if no other run is active)");
        }
    }
    ~OutputLock() {
        ::close(fd_);
        ::unlink(path_.c_str());
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

void write_json(const fs::path& path, const ojson& j) { write_file_atomic(path.string(), j.dump(2) + "\n"); }

void write_timing(const fs::path& dir, const std::string& command, std::chrono::steady_clock::time_point t0) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(dir / "timing.json", ojson{{"command", command}, {"runtime_s", s}});
}

// Scheme from --scheme, else the sidecar's reference resolved next to the sidecar.
AcquisitionScheme resolve_scheme(const std::string& flag, const Volume& vol, const std::string& volume_path) {
    if (!flag.empty()) return read_scheme_csv(flag);
    if (vol.scheme.empty()) throw ValidationError("no scheme: pass --scheme or set it in the volume sidecar");
    fs::path p(vol.scheme);
    if (p.is_relative()) p = fs::path(volume_path).parent_path() / p;
    return read_scheme_csv(p.string());
}

std::pair<std::string, std::string> split_pair(const std::string& s, char sep, const std::string& what) {
    const auto at = s.find(sep);
    if (at == std::string::npos || at == 0 || at + 1 == s.size()) {
        throw ValidationError(what + " must look like A" + std::string(1, sep) + "B, got '" + s + "'");
    }
    return {s.substr(0, at), s.substr(at + 1)};
}

ojson fit_config_json(const SsFitConfig& c) {
    return ojson{{"learning_rate", c.learning_rate},
                 {"dropout_p", c.dropout_p},
                 {"max_epochs", c.max_epochs},
                 {"patience", c.patience},
                 {"min_delta", c.min_delta},
                 {"relative_min_delta", c.relative_min_delta},
                 {"output_init_scale", c.output_init_scale},
                 {"batch_size", c.batch_size},
                 {"validation_fraction", c.validation_fraction},
                 {"hidden", c.hidden},
                 {"radius_min_um", c.ranges.radius_min},
                 {"radius_max_um", c.ranges.radius_max},
                 {"vascular", to_string(c.model.vascular)},
                 {"d_ees", c.model.diffusivities.d_ees},
                 {"d_ic", c.model.diffusivities.d_ic},
                 {"d_vasc", c.model.diffusivities.d_vasc},
                 {"refine", c.refine}};
}

struct FitOptions {
    double lr = SsFitConfig{}.learning_rate;
    double dropout = SsFitConfig{}.dropout_p;
    int max_epochs = SsFitConfig{}.max_epochs;
    int patience = SsFitConfig{}.patience;
    std::size_t batch = SsFitConfig{}.batch_size;
    double radius_min = ParamRanges{}.radius_min;
    double radius_max = ParamRanges{}.radius_max;
    bool refine = false;

    void add_to(CLI::App* app) {
        app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
        app->add_option("--dropout", dropout, "Dropout probability")->capture_default_str();
        app->add_option("--max-epochs", max_epochs, "Epoch cap")->capture_default_str();
        app->add_option("--patience", patience, "Early-stopping patience in epochs")->capture_default_str();
        app->add_option("--batch-size", batch, "Mini-batch size")->capture_default_str();
        app->add_option("--radius-min", radius_min, "Lower sphere radius bound (um)")->capture_default_str();
        app->add_option("--radius-max", radius_max, "Upper sphere radius bound (um)")->capture_default_str();
        app->add_flag("--refine", refine, "Polish each voxel with bounded Levenberg-Marquardt");
    }
    SsFitConfig config(std::uint64_t seed) const {
        SsFitConfig c;
        c.learning_rate = lr;
        c.dropout_p = dropout;
        c.max_epochs = max_epochs;
        c.patience = patience;
        c.batch_size = batch;
        c.ranges.radius_min = radius_min;
        c.ranges.radius_max = radius_max;
        c.refine = refine;
        c.seed = derive_seed(seed, "fit");
        c.validate();
        return c;
    }
};

struct Inputs {
    std::string volume, mask, scheme;
    void add_to(CLI::App* app) {
        app->add_option("--volume", volume, "Signal volume sidecar (.json)")->required();
        app->add_option("--mask", mask, "Mask volume sidecar; default selects every voxel");
        app->add_option("--scheme", scheme, "Scheme CSV; default is the sidecar's reference");
    }
};

struct Loaded {
    Volume vol;
    std::optional<Volume> mask;
    AcquisitionScheme scheme;
    VoxelTable table;
    std::size_t dropped = 0;
};

Loaded load_inputs(const Inputs& in, TableLayout layout) {
    Loaded l;
    l.vol = read_volume(in.volume);
    if (!in.mask.empty()) l.mask = read_volume(in.mask);
    l.scheme = resolve_scheme(in.scheme, l.vol, in.volume);
    l.table = volume_to_table(l.vol, l.mask ? &*l.mask : nullptr, l.scheme, layout, &l.dropped);
    return l;
}

int cmd_fit(const Inputs& in, const FitOptions& fo, const std::string& model_name,
            const std::vector<std::string>& rois, std::uint64_t seed, const fs::path& out_dir, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = fo.config(seed);
    OutputLock lock(out_dir);
    const auto l = load_inputs(in, TableLayout::averaged);

    FitResult fit;
    if (model_name == "verdict") {
        fit = fit_verdict_ss(l.table, l.scheme, cfg);
    } else if (model_name == "adc") {
        fit = fit_adc(l.table, l.scheme);
    } else {
        fit = fit_ivim(l.table, l.scheme);
    }

    fs::create_directories(out_dir / "maps");
    const std::array<std::int64_t, 3> dims{l.vol.shape[0], l.vol.shape[1], l.vol.shape[2]};
    for (auto& [name, map] : table_to_maps(fit, l.table.voxel_indices, dims)) {
        map.voxel_size_mm = l.vol.voxel_size_mm;
        write_volume(map, (out_dir / "maps" / (name + ".json")).string());
    }

    std::vector<std::size_t> all(fit.size());
    std::iota(all.begin(), all.end(), 0);
    ojson roi_mse;
    roi_mse["mask"] = verdict::roi_mse(fit.mse, all);
    std::unordered_map<std::int64_t, std::size_t> row_of;
    for (std::size_t r = 0; r < l.table.voxel_indices.size(); ++r) row_of.emplace(l.table.voxel_indices[r], r);
    for (const auto& spec : rois) {
        const auto [label, path] = split_pair(spec, '=', "--roi");
        const auto roi = read_volume(path);
        std::vector<std::size_t> rows;
        for (auto i : masked_indices(l.vol, &roi)) {
            if (auto it = row_of.find(i); it != row_of.end()) rows.push_back(it->second);
        }
        roi_mse[label] = rows.empty() ? ojson(nullptr) : ojson(verdict::roi_mse(fit.mse, rows));
    }

    ojson report;
    report["command"] = "fit";
    report["model"] = model_name;
    report["seed"] = seed;
    report["n_voxels"] = fit.size();
    report["n_dropped"] = l.dropped;
    report["dims"] = dims;
    report["parameters"] = fit.parameter_names();
    if (fit.model == FitModel::verdict) report["config"] = fit_config_json(cfg);
    report["loss"] = {{"train", fit.log.train_loss}, {"validation", fit.log.validation_loss}};
    report["best_epoch"] = fit.log.best_epoch;
    report["railed_fraction"] = fit.log.railed_fraction;
    report["roi_mse"] = roi_mse;
    report["warnings"] = fit.log.warnings;
    report["runtime_file"] = "timing.json";
    write_json(out_dir / "fit_report.json", report);
    write_timing(out_dir, "fit", t0);
    for (const auto& w : fit.log.warnings) out << "warning: " << w << "\n";
    out << "fitted " << fit.size() << " voxels (" << model_name << ") -> " << out_dir.string() << "\n";
    return 0;
}


int cmd_simulate(std::size_t n_voxels, const std::string& snr_text, double radius_min, double radius_max,
                 const std::string& scheme_path, const std::vector<int>& planted, std::uint64_t seed,
                 const fs::path& out_dir, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    PhantomSpec spec;
    spec.n_voxels = n_voxels;
    try {
        std::size_t used = 0;
        spec.snr = std::stod(snr_text, &used);
        if (used != snr_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ValidationError("--snr must be a positive number or 'inf', got '" + snr_text + "'");
    }
    spec.radius_min = radius_min;
    spec.radius_max = radius_max;
    spec.seed = derive_seed(seed, "simulate");
    if (!scheme_path.empty()) spec.scheme = read_scheme_csv(scheme_path);
    if (!planted.empty()) {
        spec.planted_shells.assign(spec.scheme.shells().size(), false);
        for (int s : planted) {
            if (s < 0 || static_cast<std::size_t>(s) >= spec.planted_shells.size()) {
                throw ValidationError("--planted shell index " + std::to_string(s) + " is out of range");
            }
            spec.planted_shells[static_cast<std::size_t>(s)] = true;
        }
    }
    spec.validate();
    OutputLock lock(out_dir);
    const auto raw = generate_raw_phantom(spec);

    const std::array<std::int64_t, 3> dims{static_cast<std::int64_t>(n_voxels), 1, 1};
    Volume vol = make_volume(dims, static_cast<std::int64_t>(spec.scheme.size()), VolumeKind::signal);
    vol.scheme = "scheme.csv";
    for (Eigen::Index v = 0; v < raw.raw.rows(); ++v) {
        for (Eigen::Index j = 0; j < raw.raw.cols(); ++j) {
            vol.values[static_cast<std::size_t>(j * raw.raw.rows() + v)] = static_cast<float>(raw.raw(v, j));
        }
    }
    Volume mask = make_volume(dims, 1, VolumeKind::mask);
    std::fill(mask.mask.begin(), mask.mask.end(), std::uint8_t{1});
    write_file_atomic((out_dir / "scheme.csv").string(), scheme_to_csv(spec.scheme));
    write_volume(vol, (out_dir / "phantom.json").string());
    write_volume(mask, (out_dir / "mask.json").string());
    std::vector<std::int64_t> idx(n_voxels);
    std::iota(idx.begin(), idx.end(), 0);
    write_ground_truth_csv(raw.truth, idx, (out_dir / "ground_truth.csv").string());
    write_timing(out_dir, "simulate", t0);
    out << "simulated " << n_voxels << " voxels -> " << out_dir.string() << "\n";
    return 0;
}

struct OptimizeOptions {
    std::vector<std::string> subjects, masks;
    std::string scheme;
    std::size_t k = 12;
    std::size_t n_bvalues = 4;
    int epochs = 100;
    double lr = SelectionConfig{}.learning_rate;
    double dropout = SelectionConfig{}.dropout_p;
    std::size_t batch = SelectionConfig{}.batch_size;
    std::size_t n_test = 3;
    bool no_holdout = false;
};

int cmd_optimize(const OptimizeOptions& o, std::uint64_t seed, const fs::path& out_dir, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!o.masks.empty() && o.masks.size() != o.subjects.size()) {
        throw ValidationError("give one --mask per --subject or none");
    }
    SelectionConfig cfg;
    cfg.k_selected = o.k;
    cfg.n_bvalues = o.n_bvalues;
    cfg.epochs = o.epochs;
    cfg.learning_rate = o.lr;
    cfg.dropout_p = o.dropout;
    cfg.batch_size = o.batch;
    cfg.n_test_subjects = o.n_test;
    cfg.holdout = !o.no_holdout;
    cfg.seed = derive_seed(seed, "optimize");
    cfg.validate();
    OutputLock lock(out_dir);

    std::vector<VoxelTable> tables;
    std::optional<AcquisitionScheme> scheme;
    for (std::size_t s = 0; s < o.subjects.size(); ++s) {
        Inputs in{o.subjects[s], o.masks.empty() ? std::string() : o.masks[s], o.scheme};
        auto l = load_inputs(in, TableLayout::directions);
        if (scheme && scheme_to_csv(*scheme) != scheme_to_csv(l.scheme)) {
            throw ValidationError("subject " + o.subjects[s] + " uses a different scheme");
        }
        scheme = l.scheme;
        tables.push_back(std::move(l.table));
    }
    if (cfg.n_bvalues > scheme->shells().size()) {
        throw ValidationError("--n-bvalues exceeds the " + std::to_string(scheme->shells().size()) + " shells");
    }
    auto report = train_selector(tables, *scheme, cfg);
    report.seed = seed;
    const auto reduced = extract_protocol(report, *scheme, cfg.n_bvalues);

    write_file_atomic((out_dir / "score_report.json").string(), score_report_json(report, *scheme));
    write_scheme_csv(reduced, (out_dir / "reduced_scheme.csv").string());
    const double spv = kidney_seconds_per_volume();
    std::vector<double> b_values;
    for (const auto& sh : reduced.shells()) b_values.push_back(sh.dw_point.b_s_mm2());
    write_json(out_dir / "protocol.json",
               ojson{{"b_values", b_values},
                     {"n_volumes_full", scheme->n_volumes()},
                     {"n_volumes_reduced", reduced.n_volumes()},
                     {"seconds_per_volume", spv},
                     {"duration_min_full", estimate_duration(*scheme, spv)},
                     {"duration_min_reduced", estimate_duration(reduced, spv)}});
    write_timing(out_dir, "optimize", t0);
    for (const auto& w : report.warnings) out << "warning: " << w << "\n";
    out << "selected b-values:";
    for (double b : b_values) out << " " << b;
    out << " -> " << out_dir.string() << "\n";
    return 0;
}

struct LoadedFit {
    FitResult fit;
    std::vector<std::int64_t> voxel_indices;
    Volume first_map;
};

// Rebuilds a FitResult from the maps written by `fit`.
LoadedFit load_fit_dir(const fs::path& dir) {
    nlohmann::json report;
    try {
        report = nlohmann::json::parse(read_file((dir / "fit_report.json").string()));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("cannot parse " + (dir / "fit_report.json").string() + ": " + e.what());
    }
    const auto model = report.value("model", std::string());
    LoadedFit lf;
    std::map<std::string, Volume> maps;
    std::vector<std::string> names;
    if (model == "verdict") {
        lf.fit.model = FitModel::verdict;
        names = {"f_ic", "f_ees", "R"};
    } else if (model == "adc") {
        lf.fit.model = FitModel::adc;
        names = {"s0", "adc"};
    } else if (model == "ivim") {
        lf.fit.model = FitModel::ivim;
        names = {"s0", "f", "d_star", "d"};
    } else {
        throw ValidationError("unknown model '" + model + "' in " + dir.string());
    }
    for (const auto& n : names) maps[n] = read_volume((dir / "maps" / (n + ".json")).string());
    const auto& lead = maps.at(names.front());
    for (const auto& [n, m] : maps) {
        if (m.shape != lead.shape) throw ValidationError("maps in " + dir.string() + " differ in shape");
    }
    auto val = [&](const std::string& n, std::int64_t i) { return static_cast<double>(maps.at(n).values[static_cast<std::size_t>(i)]); };
    for (std::int64_t i = 0; i < lead.n_spatial(); ++i) {
        if (!std::isfinite(val(names.front(), i))) continue;
        lf.voxel_indices.push_back(i);
        switch (lf.fit.model) {
            case FitModel::verdict: lf.fit.verdict.push_back({val("f_ic", i), val("f_ees", i), val("R", i)}); break;
            case FitModel::adc: lf.fit.adc.push_back({val("s0", i), val("adc", i), false}); break;
            case FitModel::ivim: {
                IvimParams p{val("s0", i), val("f", i), val("d_star", i), val("d", i)};
                p.d_star_missing = !std::isfinite(p.d_star);
                lf.fit.ivim.push_back(p);
                break;
            }
        }
    }
    lf.first_map = lead;
    return lf;
}

int cmd_stats(const std::vector<std::string>& fits, const std::vector<std::string>& rois,
              const std::vector<std::string>& groups, const std::string& groups_csv, const std::string& roi_a,
              const std::string& roi_b, const fs::path& out_dir, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<GroupRow> rows;
    if (!groups_csv.empty()) {
        if (!fits.empty() || !rois.empty()) throw ValidationError("--groups-csv cannot be combined with --fit/--roi");
        rows = group_rows_from_csv(read_file(groups_csv));
    } else {
        if (fits.empty()) throw ValidationError("give --fit SUBJECT=DIR entries or --groups-csv");
        std::map<std::string, LoadedFit> loaded;
        for (const auto& f : fits) {
            const auto [subject, dir] = split_pair(f, '=', "--fit");
            if (loaded.count(subject)) throw ValidationError("subject '" + subject + "' given twice");
            loaded.emplace(subject, load_fit_dir(dir));
        }
        std::map<std::string, std::vector<RoiMask>> by_subject;
        for (const auto& r : rois) {
            std::vector<std::string> parts;
            std::stringstream ss(r);
            for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
            if (parts.size() < 3 || parts.size() > 4) throw ValidationError("--roi must be SUBJECT,LABEL,MASK[,GROUP]");
            auto it = loaded.find(parts[0]);
            if (it == loaded.end()) throw ValidationError("--roi names unknown subject '" + parts[0] + "'");
            const auto mask = read_volume(parts[2]);
            RoiMask m;
            m.label = parts[1];
            m.indices = masked_indices(it->second.first_map, &mask);
            if (parts.size() == 4) m.groups.push_back(parts[3]);
            by_subject[parts[0]].push_back(std::move(m));
        }
        std::map<std::string, std::string> grouping;
        for (const auto& g : groups) {
            const auto [subject, group] = split_pair(g, '=', "--group");
            grouping[subject] = group;
        }
        std::vector<SubjectFit> sfs;
        for (auto& [subject, lf] : loaded) {
            sfs.push_back({subject, &lf.fit, lf.voxel_indices, by_subject[subject]});
        }
        rows = export_group_data(sfs, grouping);
    }
    std::vector<std::string> skipped;
    const auto tests = paired_roi_tests(rows, roi_a, roi_b, &skipped);
    if (tests.empty()) {
        throw ValidationError("degenerate: no parameter has a nonzero " + roi_a + "/" + roi_b + " pair");
    }
    OutputLock lock(out_dir);
    write_file_atomic((out_dir / "group_data.csv").string(), group_rows_to_csv(rows));
    write_file_atomic((out_dir / "wilcoxon.csv").string(), paired_tests_to_csv(tests, roi_a, roi_b));
    ojson summary;
    summary["sd"] = "population";
    summary["roi_values"] = "median per ROI";
    summary["roi_a"] = roi_a;
    summary["roi_b"] = roi_b;
    summary["skipped"] = skipped;
    write_json(out_dir / "stats_report.json", summary);
    write_timing(out_dir, "stats", t0);
    for (const auto& t : tests) {
        out << t.parameter << ": p=" << t.result.p_value << " " << t.result.band << " (n=" << t.result.n_effective
            << ")\n";
    }
    return 0;
}

int cmd_compare(const Inputs& in, const FitOptions& fo, std::uint64_t seed, const fs::path& out_dir,
                std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = fo.config(seed);
    OutputLock lock(out_dir);
    const auto l = load_inputs(in, TableLayout::averaged);
    const auto cmp = compare_vascular_variants(l.table, l.scheme, cfg);
    ojson variants = ojson::array();
    for (const auto& v : cmp.variants) {
        variants.push_back({{"geometry", to_string(v.geometry)},
                            {"d_vasc", v.d_vasc},
                            {"mean_rss", v.mean_rss},
                            {"mean_aic", v.mean_aic},
                            {"mean_bic", v.mean_bic}});
    }
    auto name = [&](std::size_t i) {
        const auto& v = cmp.variants[i];
        std::ostringstream os;
        os << to_string(v.geometry) << "-d" << v.d_vasc;
        return os.str();
    };
    ojson report{{"command", "compare"},
                 {"seed", seed},
                 {"n_voxels", l.table.n_voxels()},
                 {"n_measurements", cmp.n_measurements},
                 {"k", 3},
                 {"variants", variants},
                 {"best_aic", name(cmp.best_aic)},
                 {"best_bic", name(cmp.best_bic)},
                 {"config", fit_config_json(cfg)}};
    write_json(out_dir / "compare_report.json", report);
    write_timing(out_dir, "compare", t0);
    out << "best by AIC: " << name(cmp.best_aic) << ", by BIC: " << name(cmp.best_bic) << "\n";
    return 0;
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::vector<std::string> paths;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (i >= 1 && args[i] == "--config") {
            if (i + 1 >= args.size()) throw ValidationError("--config needs a file path");
            paths.push_back(args[++i]);
        } else if (i >= 1 && args[i].rfind("--config=", 0) == 0) {
            paths.push_back(args[i].substr(9));
        } else {
            rest.push_back(args[i]);
        }
    }
    if (paths.empty()) return args;
    if (paths.size() > 1) throw ValidationError("--config given more than once");
    if (rest.size() < 2) throw ValidationError("--config needs a command");
    std::vector<std::string> from_file;
    std::istringstream in(read_file(paths.front()));
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? std::string() : trim(line.substr(0, eq));
        if (key.empty() || key == "config") {
            throw ValidationError(paths.front() + ":" + std::to_string(line_no) + ": expected key=value");
        }
        from_file.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
    }
    std::vector<std::string> out(rest.begin(), rest.begin() + 2);
    out.insert(out.end(), from_file.begin(), from_file.end());
    out.insert(out.end(), rest.begin() + 2, rest.end());
    return out;
}

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    try {
        const auto args = expand_config(raw_args);

        CLI::App app{"Renal VERDICT diffusion MRI: fitting, simulation, protocol optimisation and statistics"};
        app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        app.require_subcommand(1);
        std::string config_path;
        app.add_option("--config", config_path, "key=value file; explicit flags override it");

        std::uint64_t seed = 1;
        std::string out_dir;
        auto common = [&](CLI::App* sub, bool needs_out = true) {
            sub->add_option("--seed", seed, "Root seed for every random stream")->capture_default_str();
            auto* o = sub->add_option("--out", out_dir, "Output directory");
            if (needs_out) o->required();
        };

        Inputs fit_in;
        FitOptions fit_opts;
        std::string model = "verdict";
        std::vector<std::string> fit_rois;
        auto* fit = app.add_subcommand("fit", "Fit VERDICT, IVIM or ADC and write parameter maps");
        fit_in.add_to(fit);
        fit->add_option("--model", model, "verdict, ivim or adc")
            ->check(CLI::IsMember({"verdict", "ivim", "adc"}))
            ->capture_default_str();
        fit_opts.add_to(fit);
        fit->add_option("--roi", fit_rois, "LABEL=MASK.json; adds that ROI's MSE to the report")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        common(fit);

        std::size_t n_voxels = 1000;
        std::string snr = "inf";
        double sim_rmin = PhantomSpec{}.radius_min, sim_rmax = PhantomSpec{}.radius_max;
        std::string sim_scheme;
        std::vector<int> planted;
        auto* sim = app.add_subcommand("simulate", "Write a phantom volume, mask, scheme and ground truth");
        sim->add_option("--n-voxels", n_voxels, "Number of voxels")->capture_default_str();
        sim->add_option("--snr", snr, "b0 SNR for Rician noise, or inf")->capture_default_str();
        sim->add_option("--radius-min", sim_rmin, "Smallest sphere radius (um)")->capture_default_str();
        sim->add_option("--radius-max", sim_rmax, "Largest sphere radius (um)")->capture_default_str();
        sim->add_option("--scheme", sim_scheme, "Scheme CSV; default is the kidney protocol");
        sim->add_option("--planted", planted, "Comma-separated shell indices for a planted-information phantom")
            ->delimiter(',')
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        common(sim);

        OptimizeOptions opt_o;
        auto* opt = app.add_subcommand("optimize", "Score the 27 DW measurements and extract a reduced protocol");
        opt->add_option("--subject", opt_o.subjects, "Subject signal volume (repeat per subject)")
            ->required()
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        opt->add_option("--mask", opt_o.masks, "Mask per subject, same order")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        opt->add_option("--scheme", opt_o.scheme, "Scheme CSV; default is each sidecar's reference");
        opt->add_option("--k", opt_o.k, "Measurements kept by the gate")->capture_default_str();
        opt->add_option("--n-bvalues", opt_o.n_bvalues, "Shells in the reduced protocol")->capture_default_str();
        opt->add_option("--epochs", opt_o.epochs, "Training epochs")->capture_default_str();
        opt->add_option("--lr", opt_o.lr, "Adam learning rate")->capture_default_str();
        opt->add_option("--dropout", opt_o.dropout, "Dropout probability")->capture_default_str();
        opt->add_option("--batch-size", opt_o.batch, "Mini-batch size")->capture_default_str();
        opt->add_option("--n-test", opt_o.n_test, "Subjects held out (taken from the end)")->capture_default_str();
        opt->add_flag("--no-holdout", opt_o.no_holdout, "Train on every subject; test MSE uses training data");
        common(opt);

        std::vector<std::string> st_fits, st_rois, st_groups;
        std::string groups_csv, roi_a = "tumour", roi_b = "normal";
        auto* st = app.add_subcommand("stats", "ROI medians, group export and paired Wilcoxon tests");
        st->add_option("--fit", st_fits, "SUBJECT=DIR of a fit output")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        st->add_option("--roi", st_rois, "SUBJECT,LABEL,MASK.json[,GROUP]")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        st->add_option("--group", st_groups, "SUBJECT=GROUP")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        st->add_option("--groups-csv", groups_csv, "Existing group export to test instead of --fit/--roi");
        st->add_option("--roi-a", roi_a, "First ROI label of each pair")->capture_default_str();
        st->add_option("--roi-b", roi_b, "Second ROI label of each pair")->capture_default_str();
        common(st);

        Inputs cmp_in;
        FitOptions cmp_opts;
        auto* cmp = app.add_subcommand("compare", "Rank vascular variants by AIC and BIC");
        cmp_in.add_to(cmp);
        cmp_opts.add_to(cmp);
        common(cmp);

        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        try {
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e, out, err);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e, out, err);
        } catch (const CLI::ParseError& e) {
            app.exit(e, out, err);
            return 2;
        }

        const fs::path dir(out_dir);
        if (*fit) return cmd_fit(fit_in, fit_opts, model, fit_rois, seed, dir, out);
        if (*sim) return cmd_simulate(n_voxels, snr, sim_rmin, sim_rmax, sim_scheme, planted, seed, dir, out);
        if (*opt) return cmd_optimize(opt_o, seed, dir, out);
        if (*st) return cmd_stats(st_fits, st_rois, st_groups, groups_csv, roi_a, roi_b, dir, out);
        if (*cmp) return cmd_compare(cmp_in, cmp_opts, seed, dir, out);
        return 2;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace verdict
