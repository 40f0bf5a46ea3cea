#include "verdict/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "verdict/error.hpp"

namespace verdict {

void RoiMask::validate() const {
    std::set<std::int64_t> seen;
    for (auto i : indices) {
        if (i < 0) throw ValidationError("ROI '" + label + "' has a negative voxel index");
        if (!seen.insert(i).second) {
            throw ValidationError("ROI '" + label + "' lists voxel " + std::to_string(i) + " twice");
        }
    }
}

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

RoiSummary roi_summary(const FitResult& fit, const std::vector<std::int64_t>& voxel_indices, const RoiMask& mask) {
    mask.validate();
    if (voxel_indices.size() != fit.size()) {
        throw ValidationError("fit has " + std::to_string(fit.size()) + " voxels but " +
                              std::to_string(voxel_indices.size()) + " indices were given");
    }
    std::unordered_map<std::int64_t, std::size_t> row_of;
    for (std::size_t r = 0; r < voxel_indices.size(); ++r) row_of.emplace(voxel_indices[r], r);
    std::vector<std::size_t> rows;
    RoiSummary out;
    out.label = mask.label;
    for (auto i : mask.indices) {
        auto it = row_of.find(i);
        if (it == row_of.end()) {
            ++out.n_unresolved;
        } else {
            rows.push_back(it->second);
        }
    }
    if (rows.empty()) throw ValidationError("ROI '" + mask.label + "' does not overlap the fitted voxels");

    for (const auto& name : fit.parameter_names()) {
        ParameterSummary ps;
        ps.name = name;
        std::vector<double> v;
        for (auto r : rows) {
            const double x = fit.parameter(r, name);
            if (std::isfinite(x)) {
                v.push_back(x);
            } else {
                ++ps.n_missing;
            }
        }
        ps.n = v.size();
        if (!v.empty()) {
            const double n = static_cast<double>(v.size());
            ps.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
            double ss = 0.0;
            for (double x : v) ss += (x - ps.mean) * (x - ps.mean);
            ps.sd = std::sqrt(ss / n);
            ps.median = median_of(v);
        } else {
            ps.mean = ps.median = ps.sd = std::numeric_limits<double>::quiet_NaN();
        }
        out.parameters.push_back(ps);
    }
    return out;
}

std::string significance_band(double p) {
    if (p < 1e-4) return "****";
    if (p < 1e-3) return "***";
    if (p < 1e-2) return "**";
    if (p < 0.05) return "*";
    return "n.s.";
}

std::string to_string(WilcoxonMethod m) {
    return m == WilcoxonMethod::exact ? "exact" : "normal-approximation";
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValidationError("paired samples differ in length");
    if (x.empty()) throw ValidationError("paired samples are empty");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double di = x[i] - y[i];
        if (!std::isfinite(di)) throw ValidationError("paired samples contain non-finite values");
        if (di != 0.0) d.push_back(di);
    }
    if (d.empty()) throw ValidationError("degenerate: no nonzero pairs");
    const std::size_t n = d.size();

    // average ranks of |d|, kept doubled so they stay integral
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
    std::vector<long long> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const long long r2 = static_cast<long long>(i + 1 + j + 1);   // 2 x average of ranks i+1..j+1
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    long long wp2 = 0, total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (d[i] > 0.0) wp2 += rank2[i];
    }
    WilcoxonResult r;
    r.n_effective = n;
    r.w_plus = static_cast<double>(wp2) / 2.0;
    r.w_minus = static_cast<double>(total2 - wp2) / 2.0;
    const long long w2 = std::min(wp2, total2 - wp2);
    r.w = static_cast<double>(w2) / 2.0;

    if (n <= kWilcoxonExactMaxN) {
        r.method = WilcoxonMethod::exact;
        // number of sign assignments per doubled positive-rank sum
        std::vector<std::uint64_t> count(static_cast<std::size_t>(total2) + 1, 0);
        count[0] = 1;
        long long reach = 0;
        for (auto rk : rank2) {
            for (long long s = reach; s >= 0; --s) {
                if (count[static_cast<std::size_t>(s)]) count[static_cast<std::size_t>(s + rk)] += count[static_cast<std::size_t>(s)];
            }
            reach += rk;
        }
        std::uint64_t tail = 0;
        for (long long s = 0; s <= w2; ++s) tail += count[static_cast<std::size_t>(s)];
        r.p_value = std::min(1.0, 2.0 * static_cast<double>(tail) / std::ldexp(1.0, static_cast<int>(n)));
    } else {
        r.method = WilcoxonMethod::normal_approximation;
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double z = std::max(0.0, std::abs(r.w - mean) - 0.5) / std::sqrt(var);
        r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    }
    r.band = significance_band(r.p_value);
    return r;
}

std::vector<GroupRow> export_group_data(const std::vector<SubjectFit>& fits,
                                        const std::map<std::string, std::string>& grouping) {
    std::vector<GroupRow> rows;
    for (const auto& sf : fits) {
        if (!sf.fit) throw ValidationError("subject '" + sf.subject + "' has no fit");
        for (const auto& roi : sf.rois) {
            const auto summary = roi_summary(*sf.fit, sf.voxel_indices, roi);
            std::string group;
            if (auto it = grouping.find(sf.subject); it != grouping.end()) {
                group = it->second;
            } else if (!roi.groups.empty()) {
                group = roi.groups.front();
            }
            for (const auto& p : summary.parameters) rows.push_back({sf.subject, roi.label, group, p.name, p.median});
        }
    }
    return rows;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            rec.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                rec.push_back(std::move(field));
                records.push_back(std::move(rec));
            }
            rec.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) throw ValidationError("CSV ends inside a quoted field");
    if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
    }
    return records;
}

namespace {

std::string format9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

std::string group_rows_to_csv(const std::vector<GroupRow>& rows) {
    std::string out = "subject,roi_label,group,parameter,value\n";
    for (const auto& r : rows) {
        out += csv_field(r.subject) + ',' + csv_field(r.roi_label) + ',' + csv_field(r.group) + ',' +
               csv_field(r.parameter) + ',' + format9(r.value) + '\n';
    }
    return out;
}

std::vector<GroupRow> group_rows_from_csv(const std::string& text) {
    const auto recs = parse_csv(text);
    if (recs.empty() || recs.front() != std::vector<std::string>{"subject", "roi_label", "group", "parameter", "value"}) {
        throw ValidationError("group CSV must start with the header subject,roi_label,group,parameter,value");
    }
    std::vector<GroupRow> rows;
    for (std::size_t i = 1; i < recs.size(); ++i) {
        const auto& f = recs[i];
        if (f.size() != 5) throw ValidationError("group CSV record " + std::to_string(i) + " has " + std::to_string(f.size()) + " fields");
        GroupRow r{f[0], f[1], f[2], f[3], 0.0};
        try {
            std::size_t used = 0;
            r.value = std::stod(f[4], &used);
            if (used != f[4].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            if (f[4] == "nan" || f[4] == "-nan") {
                r.value = std::numeric_limits<double>::quiet_NaN();
            } else {
                throw ValidationError("group CSV record " + std::to_string(i) + " has a bad value '" + f[4] + "'");
            }
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<PairedTest> paired_roi_tests(const std::vector<GroupRow>& rows, const std::string& roi_a,
                                         const std::string& roi_b, std::vector<std::string>* skipped) {
    // parameter -> subject -> (a, b)
    std::map<std::string, std::map<std::string, std::pair<double, double>>> table;
    std::map<std::string, std::map<std::string, int>> seen;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : rows) {
        if (r.roi_label != roi_a && r.roi_label != roi_b) continue;
        auto [it, fresh] = table[r.parameter].try_emplace(r.subject, nan, nan);
        (void)fresh;
        auto& slot = r.roi_label == roi_a ? it->second.first : it->second.second;
        if (++seen[r.parameter][r.subject + "\x1f" + r.roi_label] > 1) {
            throw ValidationError("subject '" + r.subject + "' has ROI '" + r.roi_label + "' twice for " + r.parameter);
        }
        slot = r.value;
    }
    std::vector<PairedTest> out;
    for (const auto& [param, subjects] : table) {
        PairedTest t;
        t.parameter = param;
        std::vector<double> a, b;
        for (const auto& [subject, v] : subjects) {
            if (std::isfinite(v.first) && std::isfinite(v.second)) {
                t.subjects.push_back(subject);
                a.push_back(v.first);
                b.push_back(v.second);
            }
        }
        if (a.empty() || a == b) {
            if (skipped) skipped->push_back(param + ": no nonzero pairs");
            continue;
        }
        t.result = wilcoxon_signed_rank(a, b);
        out.push_back(std::move(t));
    }
    return out;
}

std::string paired_tests_to_csv(const std::vector<PairedTest>& tests, const std::string& roi_a,
                                const std::string& roi_b) {
    std::string out = "parameter,roi_a,roi_b,n_pairs,n_effective,W,W_plus,W_minus,p_value,method,band\n";
    for (const auto& t : tests) {
        const auto& r = t.result;
        out += csv_field(t.parameter) + ',' + csv_field(roi_a) + ',' + csv_field(roi_b) + ',' +
               std::to_string(t.subjects.size()) + ',' + std::to_string(r.n_effective) + ',' + format9(r.w) + ',' +
               format9(r.w_plus) + ',' + format9(r.w_minus) + ',' + format9(r.p_value) + ',' + to_string(r.method) +
               ',' + csv_field(r.band) + '\n';
    }
    return out;
}

}  // namespace verdict
