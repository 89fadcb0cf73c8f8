#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tagkit/common.hpp"
#include "tagkit/corpus.hpp"

// Evaluation: average precision (PR-AUC), threshold fitting on validation,
// per-tag reports, Pearson correlation of per-tag metric lists, and label
// audit suggestions.

namespace tagkit {

// Average precision with ties processed as one group: sort by descending
// score, AP = sum over score groups of (recall gain) * (precision after the
// group). Undefined (nullopt) when there are no positive labels.
inline std::optional<double> pr_auc(const std::vector<double>& scores,
                                    const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("pr_auc: scores/labels length mismatch");
    std::size_t total_pos = 0;
    for (int y : labels) total_pos += y != 0;
    if (total_pos == 0) return std::nullopt;

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t seen = 0, tp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::size_t group_pos = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            group_pos += labels[order[j]] != 0;
            ++j;
        }
        seen += j - i;
        tp += group_pos;
        if (group_pos > 0) {
            double delta_recall = static_cast<double>(group_pos) / static_cast<double>(total_pos);
            double precision = static_cast<double>(tp) / static_cast<double>(seen);
            ap += delta_recall * precision;
        }
        i = j;
    }
    return ap;
}

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Conventions: precision = 1 when nothing is predicted positive; recall = 1
// when there are no actual positives; F1 = 0 when precision + recall = 0.
inline Prf precision_recall_f1(const std::vector<int>& predicted, const std::vector<int>& labels) {
    if (predicted.size() != labels.size())
        throw std::invalid_argument("precision_recall_f1: length mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        bool p = predicted[i] != 0, y = labels[i] != 0;
        tp += p && y;
        fp += p && !y;
        fn += !p && y;
    }
    Prf out;
    out.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    out.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    out.f1 = (out.precision + out.recall) == 0.0
                 ? 0.0
                 : 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

inline int decide(double score, double threshold) { return score >= threshold ? 1 : 0; }

struct ThresholdVector {
    std::vector<double> values;  // tag order fixed by the tag vocabulary

    void save(const std::filesystem::path& path, const std::vector<std::string>& tags) const {
        nlohmann::json j;
        for (std::size_t i = 0; i < values.size(); ++i) j[tags.at(i)] = values[i];
        write_text_file(path, j.dump(2) + "\n");
    }

    static ThresholdVector load(const std::filesystem::path& path,
                                const std::vector<std::string>& tags) {
        if (!std::filesystem::exists(path))
            throw MissingArtifactError("missing thresholds file: " + path.string());
        auto j = nlohmann::json::parse(read_text_file(path));
        ThresholdVector t;
        for (const auto& tag : tags) {
            if (!j.contains(tag)) throw DataError("thresholds file lacks tag: " + tag);
            t.values.push_back(j.at(tag).get<double>());
        }
        return t;
    }
};

// Best-F1 threshold for one tag: candidates are 0, 1, and midpoints between
// consecutive distinct sorted scores; ties resolved toward the smallest
// (recall-favoring) threshold. A tag with no positives gets threshold 1.0.
inline double fit_threshold_single(const std::vector<double>& scores,
                                   const std::vector<int>& labels, Warnings* warnings = nullptr,
                                   const std::string& tag_name = "") {
    bool any_positive = false;
    for (int y : labels) any_positive |= y != 0;
    if (!any_positive) {
        warn(warnings, "tag " + tag_name + ": no validation positives, threshold set to 1.0");
        return 1.0;
    }
    std::vector<double> distinct = scores;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<double> candidates{0.0, 1.0};
    for (std::size_t i = 1; i < distinct.size(); ++i)
        candidates.push_back(0.5 * (distinct[i - 1] + distinct[i]));
    std::sort(candidates.begin(), candidates.end());

    double best_threshold = 0.0, best_f1 = -1.0;
    std::vector<int> predicted(scores.size());
    for (double t : candidates) {
        for (std::size_t i = 0; i < scores.size(); ++i) predicted[i] = decide(scores[i], t);
        double f1 = precision_recall_f1(predicted, labels).f1;
        if (f1 > best_f1) {  // strict: ties keep the earlier (smaller) threshold
            best_f1 = f1;
            best_threshold = t;
        }
    }
    return best_threshold;
}

// scores_by_tag[t][i] / labels_by_tag[t][i]: score/label of item i for tag t.
inline ThresholdVector fit_thresholds(const std::vector<std::vector<double>>& scores_by_tag,
                                      const std::vector<std::vector<int>>& labels_by_tag,
                                      Warnings* warnings = nullptr,
                                      const std::vector<std::string>* tag_names = nullptr) {
    if (scores_by_tag.size() != labels_by_tag.size())
        throw std::invalid_argument("fit_thresholds: tag count mismatch");
    ThresholdVector out;
    for (std::size_t t = 0; t < scores_by_tag.size(); ++t) {
        std::string name = tag_names ? (*tag_names)[t] : std::to_string(t);
        out.values.push_back(
            fit_threshold_single(scores_by_tag[t], labels_by_tag[t], warnings, name));
    }
    return out;
}

struct PrCurvePoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct TagMetrics {
    std::string tag;
    std::size_t support = 0;
    std::optional<double> ap;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    double threshold = 0.0;
    std::vector<PrCurvePoint> curve;
};

struct EvalReport {
    std::vector<TagMetrics> per_tag;
    double macro_ap = 0.0, macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    std::size_t tags_in_macro = 0;

    std::string to_csv() const {
        std::string out = "tag,support,ap,precision,recall,f1,threshold\n";
        auto fmt = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", v);
            return std::string(buf);
        };
        for (const auto& m : per_tag) {
            out += m.tag + "," + std::to_string(m.support) + "," +
                   (m.ap ? fmt(*m.ap) : std::string("")) + "," + fmt(m.precision) + "," +
                   fmt(m.recall) + "," + fmt(m.f1) + "," + fmt(m.threshold) + "\n";
        }
        out += "macro," + std::to_string(tags_in_macro) + "," + fmt(macro_ap) + "," +
               fmt(macro_precision) + "," + fmt(macro_recall) + "," + fmt(macro_f1) + ",\n";
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& m : per_tag) {
            nlohmann::json tag_json{{"support", m.support},
                                    {"precision", m.precision},
                                    {"recall", m.recall},
                                    {"f1", m.f1},
                                    {"threshold", m.threshold}};
            tag_json["ap"] = m.ap ? nlohmann::json(*m.ap) : nlohmann::json();
            auto curve = nlohmann::json::array();
            for (const auto& pt : m.curve) curve.push_back({{"recall", pt.recall}, {"precision", pt.precision}});
            tag_json["pr_curve"] = curve;
            j["per_tag"][m.tag] = tag_json;
        }
        j["macro"] = {{"ap", macro_ap},
                      {"precision", macro_precision},
                      {"recall", macro_recall},
                      {"f1", macro_f1},
                      {"tags", tags_in_macro}};
        return j;
    }
};

namespace detail {

inline std::vector<PrCurvePoint> pr_curve(const std::vector<double>& scores,
                                          const std::vector<int>& labels) {
    std::size_t total_pos = 0;
    for (int y : labels) total_pos += y != 0;
    std::vector<PrCurvePoint> curve;
    if (total_pos == 0) return curve;
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t seen = 0, tp = 0, i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            tp += labels[order[j]] != 0;
            ++j;
        }
        seen = j;
        curve.push_back({static_cast<double>(tp) / static_cast<double>(total_pos),
                         static_cast<double>(tp) / static_cast<double>(seen)});
        i = j;
    }
    return curve;
}

}  // namespace detail

// Per-tag AP from raw scores, P/R/F1 from thresholded decisions, macro
// averages over tags with positive support. Thresholds must come from the
// validation split, never from the split being evaluated.
inline EvalReport evaluate_split(const std::vector<std::vector<double>>& scores_by_tag,
                                 const std::vector<std::vector<int>>& labels_by_tag,
                                 const ThresholdVector& thresholds,
                                 const std::vector<std::string>& tag_names,
                                 Warnings* warnings = nullptr) {
    if (scores_by_tag.size() != labels_by_tag.size() ||
        scores_by_tag.size() != thresholds.values.size() ||
        scores_by_tag.size() != tag_names.size())
        throw std::invalid_argument("evaluate_split: tag dimension mismatch");
    EvalReport report;
    double sum_ap = 0, sum_p = 0, sum_r = 0, sum_f1 = 0;
    for (std::size_t t = 0; t < scores_by_tag.size(); ++t) {
        TagMetrics m;
        m.tag = tag_names[t];
        m.threshold = thresholds.values[t];
        for (int y : labels_by_tag[t]) m.support += y != 0;
        m.ap = pr_auc(scores_by_tag[t], labels_by_tag[t]);
        m.curve = detail::pr_curve(scores_by_tag[t], labels_by_tag[t]);
        std::vector<int> predicted(scores_by_tag[t].size());
        for (std::size_t i = 0; i < predicted.size(); ++i)
            predicted[i] = decide(scores_by_tag[t][i], m.threshold);
        Prf prf = precision_recall_f1(predicted, labels_by_tag[t]);
        m.precision = prf.precision;
        m.recall = prf.recall;
        m.f1 = prf.f1;
        if (m.support > 0) {
            sum_ap += *m.ap;
            sum_p += m.precision;
            sum_r += m.recall;
            sum_f1 += m.f1;
            ++report.tags_in_macro;
        } else {
            warn(warnings, "tag " + m.tag + ": zero support in evaluated split, excluded from macro");
        }
        report.per_tag.push_back(std::move(m));
    }
    if (report.tags_in_macro > 0) {
        double n = static_cast<double>(report.tags_in_macro);
        report.macro_ap = sum_ap / n;
        report.macro_precision = sum_p / n;
        report.macro_recall = sum_r / n;
        report.macro_f1 = sum_f1 / n;
    }
    return report;
}

// Convenience for training loops: macro average of per-tag AP over tags with
// at least one positive, from per-item score/label rows.
inline double macro_pr_auc(const std::vector<std::vector<double>>& scores_by_item,
                           const std::vector<std::vector<double>>& labels_by_item) {
    if (scores_by_item.empty()) return 0.0;
    std::size_t tags = scores_by_item.front().size();
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t t = 0; t < tags; ++t) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t i = 0; i < scores_by_item.size(); ++i) {
            scores.push_back(scores_by_item[i][t]);
            labels.push_back(labels_by_item[i][t] > 0.5 ? 1 : 0);
        }
        if (auto ap = pr_auc(scores, labels)) {
            sum += *ap;
            ++counted;
        }
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Pearson correlation of per-tag AP lists across models
// ---------------------------------------------------------------------------

struct CorrelationMatrix {
    std::vector<std::string> model_names;
    std::vector<std::vector<std::optional<double>>> values;  // symmetric, unit diagonal

    std::string to_csv() const {
        std::string out = "model";
        for (const auto& n : model_names) out += "," + n;
        out += "\n";
        for (std::size_t i = 0; i < values.size(); ++i) {
            out += model_names[i];
            for (std::size_t j = 0; j < values.size(); ++j) {
                char buf[32] = "";
                if (values[i][j]) std::snprintf(buf, sizeof buf, "%.6f", *values[i][j]);
                out += ",";
                out += buf;
            }
            out += "\n";
        }
        return out;
    }
};

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty()) return std::nullopt;
    double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;  // zero variance
    return sxy / std::sqrt(sxx * syy);
}

// Each model contributes a per-tag AP list (nullopt where AP is undefined);
// undefined tags are dropped pairwise before computing Pearson r.
inline CorrelationMatrix per_tag_correlation(
    const std::vector<std::string>& model_names,
    const std::vector<std::vector<std::optional<double>>>& ap_lists) {
    if (model_names.size() != ap_lists.size() || ap_lists.size() < 2)
        throw std::invalid_argument("per_tag_correlation: need at least two models");
    for (const auto& list : ap_lists)
        if (list.size() != ap_lists.front().size())
            throw std::invalid_argument("per_tag_correlation: unequal tag sets");
    CorrelationMatrix m;
    m.model_names = model_names;
    m.values.assign(ap_lists.size(), std::vector<std::optional<double>>(ap_lists.size()));
    for (std::size_t i = 0; i < ap_lists.size(); ++i) {
        m.values[i][i] = 1.0;
        for (std::size_t j = i + 1; j < ap_lists.size(); ++j) {
            std::vector<double> x, y;
            for (std::size_t t = 0; t < ap_lists[i].size(); ++t) {
                if (ap_lists[i][t] && ap_lists[j][t]) {
                    x.push_back(*ap_lists[i][t]);
                    y.push_back(*ap_lists[j][t]);
                }
            }
            m.values[i][j] = m.values[j][i] = pearson(x, y);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// label audit
// ---------------------------------------------------------------------------

struct TagSuggestion {
    std::string problem_id;
    std::string tag;
    double probability = 0.0;
};

// (problem, tag) pairs where the combined probability is at least `confidence`
// but the tag is absent from the problem's labels, sorted by descending
// probability.
inline std::vector<TagSuggestion> suggest_missing_tags(
    const std::vector<std::pair<std::string, std::vector<double>>>& combined_predictions,
    const std::map<std::string, std::set<std::string>>& labels, const TagVocabulary& vocab,
    double confidence = 0.9) {
    std::vector<TagSuggestion> out;
    for (const auto& [problem_id, probs] : combined_predictions) {
        auto label_it = labels.find(problem_id);
        for (std::size_t t = 0; t < probs.size() && t < vocab.size(); ++t) {
            if (probs[t] < confidence) continue;
            const std::string& tag = vocab.tags()[t];
            if (label_it != labels.end() && label_it->second.count(tag)) continue;
            out.push_back({problem_id, tag, probs[t]});
        }
    }
    std::sort(out.begin(), out.end(), [](const TagSuggestion& a, const TagSuggestion& b) {
        if (a.probability != b.probability) return a.probability > b.probability;
        return std::tie(a.problem_id, a.tag) < std::tie(b.problem_id, b.tag);
    });
    return out;
}

}  // namespace tagkit
