#pragma once

#include "ltx/common.hpp"
#include "ltx/explain.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ltx::feedback {

using explain::Explanation;

/// An explanation with a binary quality label (0 = low, 1 = high) and the
/// features the judge considers wrong. The correct set is the complement.
struct JudgedExplanation {
    Explanation explanation;
    int label = 1;
    IndexList wrong_set;

    IndexList correct_set() const;
    std::size_t dim() const { return explanation.dim(); }
};

struct JudgmentConfig {
    double tau_z = 0.25;
    double u_pct = 0.75;

    void validate() const;
};

/// Pearson correlation; 0 when either vector is constant.
double pearson(std::span<const double> a, std::span<const double> b);
inline double pearson(const Vector& a, const Vector& b) { return pearson(as_span(a), as_span(b)); }

/// Indices sorted by |diff| descending (ties by ascending index), keeping the
/// shortest prefix whose cumulative sum reaches q * sum(|diff|).
IndexList wrong_prefix(std::span<const double> abs_diff, double q);

JudgedExplanation simulate_judgment(const Explanation& z, const Explanation& z_oracle, const JudgmentConfig& cfg = {});

struct AnnotationRecord {
    std::string explanation_id;
    std::string annotator_id;
    int rating = 3;
    IndexList flagged_features;
    bool attention_pass = true;
};

struct AggregationConfig {
    double sd_cutoff = 1.25;
    /// Mean rating strictly below this is low quality.
    double rating_cutoff = 3.0;
    /// Annotators with at least this many failed attention checks are dropped.
    std::size_t attention_failures_allowed = 0;
};

struct Exclusion {
    std::string id;
    std::string reason;
};

struct ExclusionReport {
    std::vector<Exclusion> annotators;
    std::vector<Exclusion> explanations;
};

struct AggregationResult {
    std::vector<JudgedExplanation> judged;
    ExclusionReport report;
};

/// Output follows the order of `explanations`; input record order is irrelevant.
AggregationResult aggregate_annotations(const std::vector<AnnotationRecord>& records,
                                        const std::vector<Explanation>& explanations,
                                        const AggregationConfig& cfg = {});

// CSV formats. Index sets are semicolon-separated 0-based feature indices.
std::vector<AnnotationRecord> read_annotations_csv(std::istream& in);
std::vector<Explanation> read_explanations_csv(std::istream& in);
void write_explanations_csv(std::ostream& out, const std::vector<Explanation>& explanations,
                            const std::string& preamble = {});
std::vector<JudgedExplanation> read_judged_csv(std::istream& in);
void write_judged_csv(std::ostream& out, const std::vector<JudgedExplanation>& judged, const std::string& preamble = {});

std::string format_index_set(const IndexList& set);
IndexList parse_index_set(const std::string& text);

}  // namespace ltx::feedback
