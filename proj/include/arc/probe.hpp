#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "arc/common.hpp"
#include "arc/data.hpp"
#include "arc/model.hpp"
#include "arc/tensor.hpp"
#include "arc/trainer.hpp"

namespace arc {

/// Fraction of total attention mass contributed by the answer rows of a
/// query-response attention map. Rows [0, question_len) belong to the
/// question, rows [question_len, question_len + answer_len) to the appended
/// answer. Scale-invariant in W.
inline double attention_ratio(const Tensor& attention, int question_len, int answer_len) {
    if (attention.rank() != 2)
        throw ShapeError("attention_ratio: expected rank 2, got " + attention.shape_str());
    if (question_len < 0 || answer_len < 0 ||
        attention.dim(0) != question_len + answer_len)
        throw ShapeError("attention_ratio: map has " + std::to_string(attention.dim(0)) +
                         " rows, composition says " + std::to_string(question_len) + " + " +
                         std::to_string(answer_len));
    double total = 0.0, answer_mass = 0.0;
    for (int i = 0; i < attention.dim(0); ++i)
        for (int j = 0; j < attention.dim(1); ++j) {
            double w = attention.at(i, j);
            if (w < 0.0) throw ParamError("attention_ratio: negative attention weight");
            total += w;
            if (i >= question_len) answer_mass += w;
        }
    if (total == 0.0) throw NumericError("attention_ratio: undefined for an all-zero map");
    return answer_mass / total;
}

namespace detail {

// type-7 quantile (linear interpolation between order statistics)
inline double quantile(std::vector<double> sorted, double p) {
    if (sorted.empty()) throw ParamError("quantile of an empty list");
    double idx = p * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(idx));
    std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
    double frac = idx - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace detail

struct RatioStats {
    std::vector<double> ratios;  // per instance, gold-rationale map
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

/// Attention-contribution statistics of the reasoning branch over a split:
/// one ratio per instance, computed on the gold rationale's map. The map in
/// question is the query-axis-normalized one (each rationale token's
/// distribution over query tokens); a row-stochastic map would make the
/// ratio the constant l_a / (l_q + l_a) regardless of the model.
inline RatioStats ratio_statistics(const BranchModel& reasoning,
                                   const std::vector<Instance>& split) {
    if (split.empty()) throw ParamError("ratio_statistics: empty split");
    RatioStats stats;
    stats.ratios.reserve(split.size());
    for (const Instance& inst : split) {
        Tape tape;
        auto comp = compose_query(BranchKind::Reasoning, inst);
        auto out = forward(tape, reasoning, comp);
        const Tensor& w = out.query_attention[static_cast<std::size_t>(inst.rationale_label)];
        stats.ratios.push_back(attention_ratio(w, comp.question_len, comp.suffix_len));
    }
    std::vector<double> sorted = stats.ratios;
    std::sort(sorted.begin(), sorted.end());
    stats.median = detail::quantile(sorted, 0.5);
    stats.q1 = detail::quantile(sorted, 0.25);
    stats.q3 = detail::quantile(sorted, 0.75);
    return stats;
}

/// Rationale accuracy with the full query versus with the question stripped
/// to a single padding token. Returns (full, answer_only).
inline std::pair<double, double> answer_only_eval(const BranchModel& reasoning,
                                                  const std::vector<Instance>& split) {
    EvalModels models;
    models.reasoning = &reasoning;
    MetricsRecord full = evaluate(models, split, EvalMode::Standard);
    MetricsRecord stripped = evaluate(models, split, EvalMode::AnswerOnly);
    return {full.acc_rationale, stripped.acc_rationale};
}

/// Side-by-side metrics on the original and paraphrased validation split.
inline std::pair<MetricsRecord, MetricsRecord> skew_eval(const EvalModels& models,
                                                         const std::vector<Instance>& split,
                                                         const SynonymMap& map) {
    MetricsRecord original =
        evaluate(models, split, EvalMode::Standard, nullptr, "val/original");
    MetricsRecord rewritten =
        evaluate(models, split, EvalMode::Paraphrased, &map, "val/paraphrased");
    return {original, rewritten};
}

/// All probe outputs for one model pair on one split, plus optional external
/// comparison rows rendered alongside the measured medians.
struct ProbeReport {
    std::vector<double> ratios;
    std::vector<int> instance_ids;
    std::vector<bool> qa2r_correct;
    std::vector<bool> a2r_correct;
    double ratio_median = 0.0;
    double ratio_q1 = 0.0;
    double ratio_q3 = 0.0;
    double acc_qar = 0.0;  // rationale accuracy, full query
    double acc_ar = 0.0;   // rationale accuracy, question stripped
    MetricsRecord standard;
    MetricsRecord paraphrased;
    std::vector<std::pair<std::string, double>> external_rows;
    nlohmann::json config_snapshot;

    void validate() const {
        if (ratios.empty()) throw ParamError("probe report: empty ratio list");
        if (ratios.size() != instance_ids.size() || ratios.size() != qa2r_correct.size() ||
            ratios.size() != a2r_correct.size())
            throw ParamError("probe report: per-instance columns disagree in length");
        for (double r : ratios)
            if (r < 0.0 || r > 1.0)
                throw ParamError("probe report: ratio outside [0,1]");
    }
};

inline ProbeReport build_probe_report(const EvalModels& models,
                                      const std::vector<Instance>& split, const SynonymMap& map,
                                      nlohmann::json config_snapshot = {}) {
    if (!models.reasoning) throw ParamError("probe: a reasoning branch is required");
    ProbeReport report;
    report.config_snapshot = std::move(config_snapshot);

    RatioStats stats = ratio_statistics(*models.reasoning, split);
    report.ratios = stats.ratios;
    report.ratio_median = stats.median;
    report.ratio_q1 = stats.q1;
    report.ratio_q3 = stats.q3;

    report.instance_ids.reserve(split.size());
    report.qa2r_correct.reserve(split.size());
    report.a2r_correct.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        report.instance_ids.push_back(static_cast<int>(i));
        {
            Tape tape;
            auto out = forward(tape, *models.reasoning,
                               compose_query(BranchKind::Reasoning, split[i]));
            report.qa2r_correct.push_back(predict(out) == split[i].rationale_label);
        }
        {
            Tape tape;
            Instance stripped = strip_question(split[i]);
            auto out = forward(tape, *models.reasoning,
                               compose_query(BranchKind::Reasoning, stripped));
            report.a2r_correct.push_back(predict(out) == stripped.rationale_label);
        }
    }
    double n = static_cast<double>(split.size());
    double full_hits = 0.0, stripped_hits = 0.0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        full_hits += report.qa2r_correct[i];
        stripped_hits += report.a2r_correct[i];
    }
    report.acc_qar = full_hits / n;
    report.acc_ar = stripped_hits / n;

    if (models.answering) {
        auto [original, rewritten] = skew_eval(models, split, map);
        report.standard = original;
        report.paraphrased = rewritten;
    }
    report.validate();
    return report;
}

inline nlohmann::ordered_json probe_summary_json(const ProbeReport& report) {
    nlohmann::ordered_json summary;
    summary["ratio_median"] = report.ratio_median;
    summary["ratio_q1"] = report.ratio_q1;
    summary["ratio_q3"] = report.ratio_q3;
    summary["acc_qar"] = report.acc_qar;
    summary["acc_ar"] = report.acc_ar;
    summary["acc_std"] = {{"qa", report.standard.acc_answer},
                          {"qar", report.standard.acc_rationale},
                          {"joint", report.standard.acc_joint}};
    summary["acc_skew"] = {{"qa", report.paraphrased.acc_answer},
                           {"qar", report.paraphrased.acc_rationale},
                           {"joint", report.paraphrased.acc_joint}};
    if (!report.external_rows.empty()) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::object();
        for (const auto& [name, value] : report.external_rows) rows[name] = value;
        summary["external_medians"] = rows;
    }
    summary["config"] = report.config_snapshot;
    return summary;
}

/// Machine-readable report: CSV header, one row per instance, then a single
/// summary line in object notation.
inline void emit_report(const ProbeReport& report, const std::string& path) {
    report.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "instance_id, ratio_ans, qa2r_correct, a2r_correct\n";
    char buf[48];
    for (std::size_t i = 0; i < report.ratios.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", report.ratios[i]);
        out << report.instance_ids[i] << ',' << buf << ',' << (report.qa2r_correct[i] ? 1 : 0)
            << ',' << (report.a2r_correct[i] ? 1 : 0) << '\n';
    }
    out << probe_summary_json(report).dump() << '\n';
    if (!out) throw IoError("failed while writing " + path);
}

/// Parses a file produced by emit_report. Per-instance columns and summary
/// fields round-trip exactly.
inline ProbeReport parse_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::string line;
    if (!std::getline(in, line) || line != "instance_id, ratio_ans, qa2r_correct, a2r_correct")
        throw ParseError(path + ": missing report header");
    ProbeReport report;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line.front() == '{') {
            nlohmann::json summary;
            try {
                summary = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(path + ": line " + std::to_string(line_no) + ": " + e.what());
            }
            report.ratio_median = summary.at("ratio_median").get<double>();
            report.ratio_q1 = summary.at("ratio_q1").get<double>();
            report.ratio_q3 = summary.at("ratio_q3").get<double>();
            report.acc_qar = summary.at("acc_qar").get<double>();
            report.acc_ar = summary.at("acc_ar").get<double>();
            report.standard.acc_answer = summary.at("acc_std").at("qa").get<double>();
            report.standard.acc_rationale = summary.at("acc_std").at("qar").get<double>();
            report.standard.acc_joint = summary.at("acc_std").at("joint").get<double>();
            report.paraphrased.acc_answer = summary.at("acc_skew").at("qa").get<double>();
            report.paraphrased.acc_rationale = summary.at("acc_skew").at("qar").get<double>();
            report.paraphrased.acc_joint = summary.at("acc_skew").at("joint").get<double>();
            if (summary.contains("external_medians"))
                for (auto it = summary["external_medians"].begin();
                     it != summary["external_medians"].end(); ++it)
                    report.external_rows.emplace_back(it.key(), it.value().get<double>());
            report.config_snapshot = summary.value("config", nlohmann::json{});
            return report;
        }
        std::istringstream row(line);
        std::string field;
        try {
            std::getline(row, field, ',');
            report.instance_ids.push_back(std::stoi(field));
            std::getline(row, field, ',');
            report.ratios.push_back(std::stod(field));
            std::getline(row, field, ',');
            report.qa2r_correct.push_back(std::stoi(field) != 0);
            std::getline(row, field, ',');
            report.a2r_correct.push_back(std::stoi(field) != 0);
        } catch (const std::exception&) {
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": malformed report row");
        }
    }
    throw ParseError(path + ": missing summary line");
}

/// Fixed-width human-readable table.
inline std::string render_report_table(const ProbeReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "attention contribution of the answer side (gold rationale maps)\n";
    os << "  median " << report.ratio_median << "   q1 " << report.ratio_q1 << "   q3 "
       << report.ratio_q3 << "   n " << report.ratios.size() << '\n';
    for (const auto& [name, value] : report.external_rows)
        os << "  external median  " << std::left << std::setw(18) << name << std::right << value
           << '\n';
    os << "rationale accuracy: full query " << report.acc_qar << "   answer-only "
       << report.acc_ar << "   gap " << (report.acc_qar - report.acc_ar) << '\n';
    os << "                     qa      qar     joint\n";
    os << "  original         " << std::setw(6) << report.standard.acc_answer << "  "
       << std::setw(6) << report.standard.acc_rationale << "  " << std::setw(6)
       << report.standard.acc_joint << '\n';
    os << "  paraphrased      " << std::setw(6) << report.paraphrased.acc_answer << "  "
       << std::setw(6) << report.paraphrased.acc_rationale << "  " << std::setw(6)
       << report.paraphrased.acc_joint << '\n';
    return os.str();
}

}  // namespace arc
