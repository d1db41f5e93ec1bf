#include "ltx/feedback.hpp"

#include "ltx/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace ltx::feedback {

IndexList JudgedExplanation::correct_set() const {
    std::vector<char> wrong(dim(), 0);
    for (auto i : wrong_set) wrong.at(i) = 1;
    IndexList out;
    for (std::size_t i = 0; i < dim(); ++i)
        if (!wrong[i]) out.push_back(i);
    return out;
}

void JudgmentConfig::validate() const {
    require(tau_z >= -1.0 && tau_z <= 1.0, "tau_z must lie in [-1, 1]");
    require(u_pct > 0.0 && u_pct < 1.0, "u_pct must lie in (0, 1)");
}

double pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "pearson: vectors differ in length");
    require(a.size() >= 2, "pearson: need at least two entries");
    const double ma = mean(a), mb = mean(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

IndexList wrong_prefix(std::span<const double> abs_diff, double q) {
    IndexList order(abs_diff.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return abs_diff[x] > abs_diff[y]; });
    double total = 0.0;
    for (double v : abs_diff) total += v;
    const double target = q * total;
    // Relative slack absorbs rounding in the running sum.
    const double slack = 1e-12 * total;
    IndexList out;
    double cum = 0.0;
    for (auto i : order) {
        if (cum >= target - slack) break;
        out.push_back(i);
        cum += abs_diff[i];
    }
    std::sort(out.begin(), out.end());
    return out;
}

JudgedExplanation simulate_judgment(const Explanation& z, const Explanation& z_oracle, const JudgmentConfig& cfg) {
    cfg.validate();
    require(z.dim() == z_oracle.dim(), "explanation and oracle explanation differ in dimension");
    JudgedExplanation j;
    j.explanation = z;
    std::vector<double> diff(z.dim());
    double l1 = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
        diff[i] = std::abs(z.relevance[static_cast<Eigen::Index>(i)] - z_oracle.relevance[static_cast<Eigen::Index>(i)]);
        l1 += diff[i];
    }
    if (l1 == 0.0) {
        j.label = 1;
        return j;
    }
    j.label = pearson(z.relevance, z_oracle.relevance) >= cfg.tau_z ? 1 : 0;
    j.wrong_set = wrong_prefix(diff, j.label == 0 ? cfg.u_pct : 1.0 - cfg.u_pct);
    return j;
}

namespace {

std::string fmt_cutoff(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

AggregationResult aggregate_annotations(const std::vector<AnnotationRecord>& records,
                                        const std::vector<Explanation>& explanations, const AggregationConfig& cfg) {
    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < explanations.size(); ++i) {
        auto [it, inserted] = position.emplace(explanations[i].instance_id, i);
        require(inserted, "duplicate explanation id '" + explanations[i].instance_id + "'");
    }

    std::set<std::string> unmatched;
    for (const auto& r : records) {
        if (!position.count(r.explanation_id)) unmatched.insert(r.explanation_id);
        require(r.rating >= 1 && r.rating <= 5, "rating out of range 1..5 for annotator " + r.annotator_id);
    }
    if (!unmatched.empty()) {
        std::string list;
        for (const auto& id : unmatched) list += (list.empty() ? "" : ", ") + id;
        fail(ErrorKind::InvalidArgument, "annotations reference unknown explanation ids: " + list);
    }

    struct AnnotatorStats {
        std::size_t failed_checks = 0;
        std::set<int> ratings;
        std::size_t n_ratings = 0;
        std::size_t flags = 0;
    };
    std::map<std::string, AnnotatorStats> annotators;
    for (const auto& r : records) {
        auto& s = annotators[r.annotator_id];
        s.failed_checks += r.attention_pass ? 0 : 1;
        s.ratings.insert(r.rating);
        ++s.n_ratings;
        s.flags += r.flagged_features.size();
    }

    AggregationResult result;
    std::set<std::string> dropped;
    for (const auto& [id, s] : annotators) {
        std::string reason;
        if (s.failed_checks > cfg.attention_failures_allowed) reason = "failed-attention-check";
        else if (s.n_ratings >= 2 && s.ratings.size() == 1) reason = "all-identical-ratings";
        else if (s.flags == 0) reason = "no-flagged-features";
        if (reason.empty()) continue;
        dropped.insert(id);
        result.report.annotators.push_back({id, reason});
    }

    std::vector<std::vector<const AnnotationRecord*>> per_expl(explanations.size());
    for (const auto& r : records)
        if (!dropped.count(r.annotator_id)) per_expl[position.at(r.explanation_id)].push_back(&r);

    for (std::size_t e = 0; e < explanations.size(); ++e) {
        const auto& expl = explanations[e];
        const auto& recs = per_expl[e];
        if (recs.empty()) {
            result.report.explanations.push_back({expl.instance_id, "no surviving annotations"});
            continue;
        }
        std::vector<double> ratings;
        std::map<std::size_t, std::size_t> flag_counts;
        for (const auto* r : recs) {
            ratings.push_back(r->rating);
            for (auto f : std::set<std::size_t>(r->flagged_features.begin(), r->flagged_features.end())) {
                require(f < expl.dim(), "flagged feature index " + std::to_string(f) + " out of range for explanation " +
                                            expl.instance_id);
                ++flag_counts[f];
            }
        }
        const double sd = population_std(ratings);
        if (sd > cfg.sd_cutoff) {
            result.report.explanations.push_back({expl.instance_id, "rating stddev > " + fmt_cutoff(cfg.sd_cutoff)});
            continue;
        }
        JudgedExplanation j;
        j.explanation = expl;
        j.label = mean(ratings) >= cfg.rating_cutoff ? 1 : 0;
        for (const auto& [f, count] : flag_counts)
            if (2 * count > recs.size()) j.wrong_set.push_back(f);
        result.judged.push_back(std::move(j));
    }

    if (result.judged.empty()) {
        std::ostringstream msg;
        msg << "no explanations survive annotation filtering (" << result.report.annotators.size()
            << " annotators and " << result.report.explanations.size() << " explanations excluded)";
        for (const auto& a : result.report.annotators) msg << "; annotator " << a.id << ": " << a.reason;
        for (const auto& x : result.report.explanations) msg << "; explanation " << x.id << ": " << x.reason;
        fail(ErrorKind::InvalidArgument, msg.str());
    }
    return result;
}

std::string format_index_set(const IndexList& set) {
    std::string out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(set[i]);
    }
    return out;
}

IndexList parse_index_set(const std::string& text) {
    IndexList out;
    std::string item;
    std::istringstream ss(text);
    while (std::getline(ss, item, ';')) {
        if (item.empty()) continue;
        const auto v = csv::to_integer(item, 0, "index set");
        require(v >= 0, "negative feature index in '" + text + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<AnnotationRecord> read_annotations_csv(std::istream& in) {
    const auto t = csv::read(in);
    const auto c_expl = t.column("explanation_id"), c_ann = t.column("annotator_id"), c_rating = t.column("rating"),
               c_flags = t.column("flagged_features"), c_att = t.column("attention_pass");
    std::vector<AnnotationRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto line = t.line_numbers[r];
        AnnotationRecord rec;
        rec.explanation_id = row[c_expl];
        rec.annotator_id = row[c_ann];
        const auto rating = csv::to_integer(row[c_rating], line, "rating");
        if (rating < 1 || rating > 5)
            fail(ErrorKind::Parse, "line " + std::to_string(line) + ": rating must be in 1..5, got " + row[c_rating]);
        rec.rating = static_cast<int>(rating);
        try {
            rec.flagged_features = parse_index_set(row[c_flags]);
        } catch (const Error& e) {
            fail(ErrorKind::Parse, "line " + std::to_string(line) + ", column 'flagged_features': " + e.what());
        }
        const auto att = csv::to_integer(row[c_att], line, "attention_pass");
        if (att != 0 && att != 1) fail(ErrorKind::Parse, "line " + std::to_string(line) + ": attention_pass must be 0 or 1");
        rec.attention_pass = att == 1;
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

std::vector<std::size_t> relevance_columns(const csv::Table& t) {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (t.header[c].rfind("z_", 0) == 0) cols.push_back(c);
    if (cols.empty()) fail(ErrorKind::Parse, "no relevance columns (z_0, z_1, ...) in explanation CSV");
    return cols;
}

Explanation parse_explanation(const csv::Table& t, std::size_t r, std::size_t c_id, std::size_t c_base,
                              const std::vector<std::size_t>& z_cols) {
    const auto& row = t.rows[r];
    const auto line = t.line_numbers[r];
    Explanation e;
    e.instance_id = row[c_id];
    e.base_value = csv::to_double(row[c_base], line, "base_value");
    e.relevance.resize(static_cast<Eigen::Index>(z_cols.size()));
    for (std::size_t k = 0; k < z_cols.size(); ++k)
        e.relevance[static_cast<Eigen::Index>(k)] = csv::to_double(row[z_cols[k]], line, t.header[z_cols[k]]);
    return e;
}

void write_explanation_header(std::ostream& out, std::size_t d) {
    out << "instance_id,base_value";
    for (std::size_t i = 0; i < d; ++i) out << ",z_" << i;
}

void write_explanation_cells(std::ostream& out, const Explanation& e) {
    out << e.instance_id << ',' << csv::format(e.base_value);
    for (Eigen::Index i = 0; i < e.relevance.size(); ++i) out << ',' << csv::format(e.relevance[i]);
}

}  // namespace

std::vector<Explanation> read_explanations_csv(std::istream& in) {
    const auto t = csv::read(in);
    const auto c_id = t.column("instance_id"), c_base = t.column("base_value");
    const auto z_cols = relevance_columns(t);
    std::vector<Explanation> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) out.push_back(parse_explanation(t, r, c_id, c_base, z_cols));
    return out;
}

void write_explanations_csv(std::ostream& out, const std::vector<Explanation>& explanations, const std::string& preamble) {
    out << preamble;
    const std::size_t d = explanations.empty() ? 0 : explanations.front().dim();
    write_explanation_header(out, d);
    out << '\n';
    for (const auto& e : explanations) {
        require(e.dim() == d, "explanations differ in dimension");
        write_explanation_cells(out, e);
        out << '\n';
    }
}

std::vector<JudgedExplanation> read_judged_csv(std::istream& in) {
    const auto t = csv::read(in);
    const auto c_id = t.column("instance_id"), c_base = t.column("base_value"), c_label = t.column("label"),
               c_wrong = t.column("wrong_set");
    const auto z_cols = relevance_columns(t);
    std::vector<JudgedExplanation> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        JudgedExplanation j;
        j.explanation = parse_explanation(t, r, c_id, c_base, z_cols);
        const auto label = csv::to_integer(t.rows[r][c_label], t.line_numbers[r], "label");
        if (label != 0 && label != 1) fail(ErrorKind::Parse, "line " + std::to_string(t.line_numbers[r]) + ": label must be 0 or 1");
        j.label = static_cast<int>(label);
        j.wrong_set = parse_index_set(t.rows[r][c_wrong]);
        for (auto i : j.wrong_set)
            if (i >= j.dim()) fail(ErrorKind::Parse, "line " + std::to_string(t.line_numbers[r]) + ": wrong_set index out of range");
        out.push_back(std::move(j));
    }
    return out;
}

void write_judged_csv(std::ostream& out, const std::vector<JudgedExplanation>& judged, const std::string& preamble) {
    out << preamble;
    const std::size_t d = judged.empty() ? 0 : judged.front().dim();
    write_explanation_header(out, d);
    out << ",label,wrong_set\n";
    for (const auto& j : judged) {
        require(j.dim() == d, "explanations differ in dimension");
        write_explanation_cells(out, j.explanation);
        out << ',' << j.label << ',' << format_index_set(j.wrong_set) << '\n';
    }
}

}  // namespace ltx::feedback
