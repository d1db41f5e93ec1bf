#include "ltx/ltx.h"

#include "ltx/bench.hpp"
#include "ltx/csv.hpp"
#include "ltx/data.hpp"
#include "ltx/explain.hpp"
#include "ltx/feedback.hpp"
#include "ltx/models.hpp"
#include "ltx/reject.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <new>
#include <sstream>
#include <string>

struct ltx_dataset {
    ltx::data::Dataset ds;
};

struct ltx_predictor {
    ltx::models::Predictor p;
};

struct ltx_rejector {
    ltx::reject::Rejector r;
};

namespace {

using nlohmann::json;

thread_local std::string g_error;

ltx_status status_of(ltx::ErrorKind kind) {
    switch (kind) {
        case ltx::ErrorKind::InvalidArgument: return LTX_ERR_INVALID_ARGUMENT;
        case ltx::ErrorKind::Io: return LTX_ERR_IO;
        case ltx::ErrorKind::Parse: return LTX_ERR_PARSE;
        case ltx::ErrorKind::Numeric: return LTX_ERR_NUMERIC;
        case ltx::ErrorKind::Config: return LTX_ERR_CONFIG;
        case ltx::ErrorKind::State: return LTX_ERR_STATE;
    }
    return LTX_ERR_INTERNAL;
}

template <class F>
ltx_status guarded(F&& body) {
    g_error.clear();
    try {
        body();
        return LTX_OK;
    } catch (const ltx::Error& e) {
        g_error = e.what();
        return status_of(e.kind());
    } catch (const json::exception& e) {
        g_error = std::string("JSON error: ") + e.what();
        return LTX_ERR_PARSE;
    } catch (const std::bad_alloc&) {
        g_error = "out of memory";
        return LTX_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_error = e.what();
        return LTX_ERR_INTERNAL;
    } catch (...) {
        g_error = "unknown error";
        return LTX_ERR_INTERNAL;
    }
}

void need(const void* p, const char* name) {
    if (!p) ltx::fail(ltx::ErrorKind::InvalidArgument, std::string(name) + " must not be NULL");
}

ltx::Task task_of(ltx_task t) {
    if (t == LTX_CLASSIFICATION) return ltx::Task::Classification;
    if (t == LTX_REGRESSION) return ltx::Task::Regression;
    ltx::fail(ltx::ErrorKind::InvalidArgument, "task must be LTX_CLASSIFICATION or LTX_REGRESSION");
}

std::ifstream open_in(const char* path) {
    need(path, "path");
    std::ifstream in(path, std::ios::binary);
    if (!in) ltx::fail(ltx::ErrorKind::Io, std::string("cannot open ") + path);
    return in;
}

std::ofstream open_out(const char* path) {
    need(path, "path");
    std::ofstream out(path, std::ios::binary);
    if (!out) ltx::fail(ltx::ErrorKind::Io, std::string("cannot write ") + path);
    return out;
}

void finish(std::ofstream& out, const char* path) {
    out.flush();
    if (!out) ltx::fail(ltx::ErrorKind::Io, std::string("write failed for ") + path);
}

std::string comment_block(const char* text) {
    if (!text || !*text) return {};
    std::string out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out += "# " + line + "\n";
    return out;
}

json read_json(std::istream& in, const char* what) {
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        ltx::fail(ltx::ErrorKind::Parse, std::string(what) + " is not valid JSON: " + e.what());
    }
}

json parse_params(const char* params_json) {
    if (!params_json || !*params_json) return json::object();
    json j;
    try {
        j = json::parse(params_json);
    } catch (const json::parse_error& e) {
        ltx::fail(ltx::ErrorKind::Parse, std::string("rejector parameters are not valid JSON: ") + e.what());
    }
    if (!j.is_object()) ltx::fail(ltx::ErrorKind::InvalidArgument, "rejector parameters must be a JSON object");
    return j;
}

ltx::reject::RejectorParams rejector_params(const char* kind, const json& p) {
    need(kind, "kind");
    ltx::reject::RejectorParams params;
    params.kind = ltx::reject::rejector_kind_from_string(kind);
    if (!ltx::reject::uses_explanation_only(params.kind))
        ltx::fail(ltx::ErrorKind::InvalidArgument,
                  std::string(kind) + " needs instance-level side information; fit it through an experiment config");
    for (auto it = p.begin(); it != p.end(); ++it) {
        const auto& key = it.key();
        if (key == "kernel") params.svm.kernel = ltx::svm::kernel_from_string(it->get<std::string>());
        else if (key == "C") params.svm.C = it->get<double>();
        else if (key == "tolerance") params.svm.tolerance = it->get<double>();
        else if (key == "k") params.augmentation.k = it->get<std::size_t>();
        else if (key == "epsilon0") params.augmentation.epsilon0 = it->get<double>();
        else if (key == "sigma_as_variance") params.augmentation.sigma_as_variance = it->get<bool>();
        else if (key == "k_nn") params.k_nn = it->get<std::size_t>();
        else if (key == "l2") params.l2 = it->get<double>();
        else if (key == "seed") params.seed = it->get<std::uint64_t>();
        else ltx::fail(ltx::ErrorKind::InvalidArgument, "unknown rejector parameter '" + key + "'");
    }
    params.augmentation.seed = ltx::derive_seed({params.seed, 1});
    return params;
}

std::vector<ltx::reject::Context> key_contexts(const std::vector<ltx::feedback::JudgedExplanation>& judged) {
    std::vector<ltx::reject::Context> out(judged.size());
    for (std::size_t i = 0; i < judged.size(); ++i) out[i].key = ltx::hash_string(judged[i].explanation.instance_id);
    return out;
}

std::vector<ltx::feedback::JudgedExplanation> read_judged(const char* path) {
    auto in = open_in(path);
    auto judged = ltx::feedback::read_judged_csv(in);
    if (judged.empty()) ltx::fail(ltx::ErrorKind::InvalidArgument, std::string("no judged explanations in ") + path);
    return judged;
}

ltx::explain::Explanation explanation_of(const double* z, std::size_t d, const char* id) {
    need(z, "z");
    if (d == 0) ltx::fail(ltx::ErrorKind::InvalidArgument, "explanation dimension must be >= 1");
    ltx::explain::Explanation e;
    e.relevance = Eigen::Map<const ltx::Vector>(z, static_cast<Eigen::Index>(d));
    if (id) e.instance_id = id;
    return e;
}

ltx::reject::Context context_of(const char* id) {
    ltx::reject::Context c;
    if (id) c.key = ltx::hash_string(id);
    return c;
}

ltx::reject::CalibrationStrategy strategy_of(ltx_calibration s, double rate) {
    if (s == LTX_TARGET_RATE) return ltx::reject::CalibrationStrategy::target_rate(rate);
    if (s == LTX_MATCH_TRAIN_LOW_QUALITY) return ltx::reject::CalibrationStrategy::match_low_quality_fraction(rate);
    ltx::fail(ltx::ErrorKind::InvalidArgument, "unknown calibration strategy");
}

}  // namespace

extern "C" {

const char* ltx_version(void) { return LTX_VERSION; }

const char* ltx_last_error(void) { return g_error.c_str(); }

const char* ltx_status_string(ltx_status status) {
    switch (status) {
        case LTX_OK: return "ok";
        case LTX_ERR_INVALID_ARGUMENT: return "invalid argument";
        case LTX_ERR_IO: return "I/O error";
        case LTX_ERR_PARSE: return "parse error";
        case LTX_ERR_NUMERIC: return "numerical error";
        case LTX_ERR_CONFIG: return "configuration error";
        case LTX_ERR_STATE: return "invalid state";
        case LTX_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

ltx_status ltx_dataset_synthetic(size_t n, size_t d, ltx_task task, double mismatch_strength, uint64_t seed,
                                 ltx_dataset** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        ltx::data::SyntheticSpec spec{n, d, task_of(task), mismatch_strength, seed};
        *out = new ltx_dataset{ltx::data::make_synthetic(spec)};
    });
}

ltx_status ltx_dataset_load_csv(const char* path, const char* target_column, ltx_task task, ltx_dataset** out) {
    return guarded([&] {
        need(out, "out");
        need(path, "path");
        need(target_column, "target_column");
        *out = nullptr;
        *out = new ltx_dataset{ltx::data::load_csv(path, target_column, task_of(task))};
    });
}

ltx_status ltx_dataset_write_csv(const ltx_dataset* ds, const char* path, const char* target_column, const char* preamble) {
    return guarded([&] {
        need(ds, "dataset");
        auto out = open_out(path);
        ltx::data::write_csv(out, ds->ds, target_column ? target_column : "y", comment_block(preamble));
        finish(out, path);
    });
}

size_t ltx_dataset_rows(const ltx_dataset* ds) { return ds ? ds->ds.rows() : 0; }

size_t ltx_dataset_cols(const ltx_dataset* ds) { return ds ? ds->ds.cols() : 0; }

ltx_status ltx_dataset_row(const ltx_dataset* ds, size_t row, double* out, size_t len) {
    return guarded([&] {
        need(ds, "dataset");
        need(out, "out");
        if (row >= ds->ds.rows()) ltx::fail(ltx::ErrorKind::InvalidArgument, "row index out of range");
        if (len != ds->ds.cols()) ltx::fail(ltx::ErrorKind::InvalidArgument, "buffer length must equal the column count");
        const auto r = ltx::row_span(ds->ds.features, static_cast<Eigen::Index>(row));
        std::copy(r.begin(), r.end(), out);
    });
}

ltx_status ltx_dataset_target(const ltx_dataset* ds, size_t row, double* out) {
    return guarded([&] {
        need(ds, "dataset");
        need(out, "out");
        if (row >= ds->ds.rows()) ltx::fail(ltx::ErrorKind::InvalidArgument, "row index out of range");
        *out = ds->ds.targets[static_cast<Eigen::Index>(row)];
    });
}

void ltx_dataset_free(ltx_dataset* ds) { delete ds; }

ltx_status ltx_synth_write(size_t n, size_t d, ltx_task task, double mismatch_strength, uint64_t seed, const char* csv_path,
                           const char* json_path) {
    return guarded([&] {
        ltx::data::SyntheticSpec spec{n, d, task_of(task), mismatch_strength, seed};
        const json spec_json = spec;
        const auto ds = ltx::data::make_synthetic(spec);
        const std::string header = ltx::provenance_line(spec_json.dump(), seed) + "\n";
        {
            auto out = open_out(csv_path);
            ltx::data::write_csv(out, ds, "y", header);
            finish(out, csv_path);
        }
        if (json_path) {
            auto out = open_out(json_path);
            json prov = {{"tool", "ltx"},
                         {"version", LTX_VERSION},
                         {"config_hash", ltx::hex64(ltx::hash_string(spec_json.dump()))},
                         {"master_seed", seed},
                         {"spec", spec_json},
                         {"rows", ds.rows()},
                         {"columns", ds.cols() + 1}};
            out << prov.dump(2) << '\n';
            finish(out, json_path);
        }
    });
}

ltx_status ltx_predictor_fit(const ltx_dataset* ds, const char* kind, double l2, double bandwidth, uint64_t seed,
                             ltx_predictor** out) {
    return guarded([&] {
        need(ds, "dataset");
        need(kind, "kind");
        need(out, "out");
        *out = nullptr;
        ltx::models::PredictorParams params;
        params.kind = ltx::models::predictor_kind_from_string(kind);
        params.l2 = l2;
        if (bandwidth > 0.0) params.bandwidth = bandwidth;
        const bool cls = ltx::models::is_classifier(params.kind);
        if (cls != (ds->ds.task == ltx::Task::Classification))
            ltx::fail(ltx::ErrorKind::InvalidArgument, std::string(kind) + " does not match the dataset task " +
                                                           ltx::to_string(ds->ds.task));
        *out = new ltx_predictor{ltx::models::fit(params, ds->ds.features, ds->ds.targets, seed)};
    });
}

ltx_status ltx_predictor_predict(const ltx_predictor* p, const double* x, size_t d, double* out) {
    return guarded([&] {
        need(p, "predictor");
        need(x, "x");
        need(out, "out");
        *out = p->p.predict(std::span<const double>(x, d));
    });
}

ltx_status ltx_predictor_save(const ltx_predictor* p, const char* path) {
    return guarded([&] {
        need(p, "predictor");
        auto out = open_out(path);
        out << json(p->p).dump(2) << '\n';
        finish(out, path);
    });
}

ltx_status ltx_predictor_load(const char* path, ltx_predictor** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        auto in = open_in(path);
        const json j = read_json(in, path);
        *out = new ltx_predictor{j.get<ltx::models::Predictor>()};
    });
}

void ltx_predictor_free(ltx_predictor* p) { delete p; }

ltx_status ltx_explain(const ltx_predictor* p, const double* x, size_t d, const ltx_dataset* background, size_t n_samples,
                       size_t background_cap, uint64_t seed, double* relevance_out, double* base_value_out) {
    return guarded([&] {
        need(p, "predictor");
        need(x, "x");
        need(background, "background");
        need(relevance_out, "relevance_out");
        const auto bg = ltx::explain::make_background(background->ds.features, background_cap, seed);
        ltx::explain::ExplainerConfig cfg{n_samples, background_cap, seed};
        const auto z = ltx::explain::kernel_shap(p->p, std::span<const double>(x, d), bg, cfg);
        std::copy(z.relevance.data(), z.relevance.data() + z.relevance.size(), relevance_out);
        if (base_value_out) *base_value_out = z.base_value;
    });
}

ltx_status ltx_explain_dataset(const ltx_predictor* p, const ltx_dataset* data, const ltx_dataset* background,
                               size_t n_samples, size_t background_cap, uint64_t seed, size_t threads, const char* out_csv) {
    return guarded([&] {
        need(p, "predictor");
        need(data, "data");
        need(background, "background");
        const auto bg = ltx::explain::make_background(background->ds.features, background_cap, seed);
        const auto f = ltx::explain::as_batch_model(p->p);
        std::vector<ltx::explain::Explanation> out(data->ds.rows());
        ltx::bench::parallel_for(out.size(), threads == 0 ? 1 : threads, [&](std::size_t i) {
            ltx::explain::ExplainerConfig cfg{n_samples, background_cap, ltx::derive_seed({seed, i})};
            out[i] = ltx::explain::kernel_shap(f, ltx::row_span(data->ds.features, static_cast<Eigen::Index>(i)), bg, cfg);
            out[i].instance_id = std::to_string(i);
        });
        const json canon = {{"command", "explain"},
                            {"predictor", json(p->p)},
                            {"rows", data->ds.rows()},
                            {"n_samples", n_samples},
                            {"background_cap", background_cap}};
        auto file = open_out(out_csv);
        ltx::feedback::write_explanations_csv(file, out, ltx::provenance_line(canon.dump(), seed) + "\n");
        finish(file, out_csv);
    });
}

ltx_status ltx_ingest_annotations(const char* annotations_csv, const char* explanations_csv, const char* judged_out_csv,
                                  const char* report_out_json) {
    return guarded([&] {
        std::vector<ltx::feedback::AnnotationRecord> records;
        std::vector<ltx::explain::Explanation> explanations;
        {
            auto in = open_in(annotations_csv);
            records = ltx::feedback::read_annotations_csv(in);
        }
        {
            auto in = open_in(explanations_csv);
            explanations = ltx::feedback::read_explanations_csv(in);
        }
        const ltx::feedback::AggregationConfig agg;
        const auto result = ltx::feedback::aggregate_annotations(records, explanations, agg);
        const json canon = {{"command", "ingest-annotations"},
                            {"annotations", std::string(annotations_csv)},
                            {"explanations", std::string(explanations_csv)},
                            {"sd_cutoff", agg.sd_cutoff},
                            {"rating_cutoff", agg.rating_cutoff},
                            {"attention_failures_allowed", agg.attention_failures_allowed}};
        const std::string prov = ltx::provenance_line(canon.dump(), std::nullopt);
        {
            auto out = open_out(judged_out_csv);
            ltx::feedback::write_judged_csv(out, result.judged, prov + "\n");
            finish(out, judged_out_csv);
        }
        if (report_out_json) {
            auto list = [](const std::vector<ltx::feedback::Exclusion>& ex) {
                auto a = json::array();
                for (const auto& e : ex) a.push_back({{"id", e.id}, {"reason", e.reason}});
                return a;
            };
            std::size_t low = 0;
            for (const auto& j : result.judged) low += j.label == 0;
            json report = {{"provenance",
                            {{"tool", "ltx"},
                             {"version", LTX_VERSION},
                             {"config_hash", ltx::hex64(ltx::hash_string(canon.dump()))},
                             {"master_seed", nullptr}}},
                           {"excluded_annotators", list(result.report.annotators)},
                           {"excluded_explanations", list(result.report.explanations)},
                           {"n_judged", result.judged.size()},
                           {"n_low_quality", low}};
            auto out = open_out(report_out_json);
            out << report.dump(2) << '\n';
            finish(out, report_out_json);
        }
    });
}

ltx_status ltx_rejector_fit(const char* kind, const char* judged_csv, const char* params_json, ltx_rejector** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        const auto params = rejector_params(kind, parse_params(params_json));
        const auto judged = read_judged(judged_csv);
        *out = new ltx_rejector{ltx::reject::Rejector::fit(params, judged, key_contexts(judged))};
    });
}

ltx_status ltx_rejector_score(const ltx_rejector* r, const double* z, size_t d, const char* instance_id, double* out) {
    return guarded([&] {
        need(r, "rejector");
        need(out, "out");
        *out = r->r.score(explanation_of(z, d, instance_id), context_of(instance_id));
    });
}

ltx_status ltx_rejector_calibrate(ltx_rejector* r, const double* val_scores, size_t n, ltx_calibration strategy, double rate) {
    return guarded([&] {
        need(r, "rejector");
        need(val_scores, "val_scores");
        r->r.calibrate(std::span<const double>(val_scores, n), strategy_of(strategy, rate));
    });
}

ltx_status ltx_rejector_threshold(const ltx_rejector* r, double* out) {
    return guarded([&] {
        need(r, "rejector");
        need(out, "out");
        *out = r->r.threshold();
    });
}

ltx_status ltx_rejector_decide(const ltx_rejector* r, const double* z, size_t d, const char* instance_id, int* rejected_out,
                               double* score_out) {
    return guarded([&] {
        need(r, "rejector");
        need(rejected_out, "rejected_out");
        const auto decision = r->r.decide(explanation_of(z, d, instance_id), context_of(instance_id));
        *rejected_out = decision.rejected ? 1 : 0;
        if (score_out) *score_out = decision.score;
    });
}

ltx_status ltx_rejector_save(const ltx_rejector* r, const char* path) {
    return guarded([&] {
        need(r, "rejector");
        auto out = open_out(path);
        out << json(r->r).dump(2) << '\n';
        finish(out, path);
    });
}

ltx_status ltx_rejector_load(const char* path, ltx_rejector** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        auto in = open_in(path);
        const json j = read_json(in, path);
        *out = new ltx_rejector{j.get<ltx::reject::Rejector>()};
    });
}

void ltx_rejector_free(ltx_rejector* r) { delete r; }

ltx_status ltx_calibrate(const char* kind, const char* train_csv, const char* val_csv, const char* params_json,
                         ltx_calibration strategy, double rate, const char* model_out, double* tau_out) {
    return guarded([&] {
        const auto params = rejector_params(kind, parse_params(params_json));
        const auto train = read_judged(train_csv);
        const auto val = read_judged(val_csv);
        auto rejector = ltx::reject::Rejector::fit(params, train, key_contexts(train));
        std::vector<ltx::explain::Explanation> zs;
        for (const auto& j : val) zs.push_back(j.explanation);
        const auto scores = rejector.score_batch(zs, key_contexts(val));
        if (strategy == LTX_MATCH_TRAIN_LOW_QUALITY) rate = ltx::reject::low_quality_fraction(train);
        rejector.calibrate(scores, strategy_of(strategy, rate));
        if (model_out) {
            auto out = open_out(model_out);
            out << json(rejector).dump(2) << '\n';
            finish(out, model_out);
        }
        if (tau_out) *tau_out = rejector.threshold();
    });
}

ltx_status ltx_run_experiment(const char* config_path, const char* overrides_json, const char* out_dir, ltx_log_fn log,
                              void* user) {
    return guarded([&] {
        need(config_path, "config_path");
        need(out_dir, "out_dir");
        auto in = open_in(config_path);
        json doc = read_json(in, config_path);
        if (overrides_json && *overrides_json) {
            json patch;
            try {
                patch = json::parse(overrides_json);
            } catch (const json::parse_error& e) {
                ltx::fail(ltx::ErrorKind::Parse, std::string("overrides are not valid JSON: ") + e.what());
            }
            if (!patch.is_object()) ltx::fail(ltx::ErrorKind::InvalidArgument, "overrides must be a JSON object");
            doc.merge_patch(patch);
        }
        const auto cfg = ltx::bench::parse_config(doc, std::filesystem::path(config_path).parent_path());
        ltx::bench::Logger logger;
        if (log) logger = [log, user](const std::string& line) { log(line.c_str(), user); };
        const auto result = ltx::bench::run_experiment(cfg, logger);
        ltx::bench::write_outputs(out_dir, result, cfg);
    });
}

}  // extern "C"
