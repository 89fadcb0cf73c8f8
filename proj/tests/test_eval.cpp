#include "tagkit/eval.hpp"

#include <cmath>

#include "catch_amalgamated.hpp"
#include "tagkit/rng.hpp"

using namespace tagkit;

namespace {

// Independent AP oracle: enumerate achievable operating points by
// thresholding at each distinct score (set arithmetic, no sort-group sharing
// with the implementation) and accumulate rectangle areas.
std::optional<double> ap_threshold_oracle(const std::vector<double>& scores,
                                          const std::vector<int>& labels) {
    std::size_t total_pos = 0;
    for (int y : labels) total_pos += y != 0;
    if (total_pos == 0) return std::nullopt;
    std::vector<double> distinct = scores;
    std::sort(distinct.begin(), distinct.end(), std::greater<double>());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    double ap = 0.0, prev_recall = 0.0;
    for (double threshold : distinct) {
        std::size_t selected = 0, tp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= threshold) {
                ++selected;
                tp += labels[i] != 0;
            }
        }
        double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        double precision = static_cast<double>(tp) / static_cast<double>(selected);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

// Exhaustive best-F1 search across every distinct decision the threshold can
// induce.
double best_f1_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> candidates{0.0, 1.0, 2.0};
    for (double s : scores) {
        candidates.push_back(s);
        candidates.push_back(std::nextafter(s, 2.0));
    }
    double best = -1.0;
    for (double t : candidates) {
        std::vector<int> predicted(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) predicted[i] = scores[i] >= t ? 1 : 0;
        best = std::max(best, precision_recall_f1(predicted, labels).f1);
    }
    return best;
}

}  // namespace

TEST_CASE("pr_auc matches the worked example") {
    auto ap = pr_auc({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0});
    REQUIRE(ap.has_value());
    CHECK(*ap == Catch::Approx(1.0 * 0.5 + (2.0 / 3.0) * 0.5).epsilon(1e-12));
    CHECK(*ap == Catch::Approx(0.833333).margin(1e-6));
}

TEST_CASE("pr_auc is 1 when all positives rank above all negatives") {
    auto ap = pr_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    REQUIRE(ap.has_value());
    CHECK(*ap == Catch::Approx(1.0));
}

TEST_CASE("pr_auc of a single tie group is the positive rate") {
    auto ap = pr_auc({0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0, 0});
    REQUIRE(ap.has_value());
    CHECK(*ap == Catch::Approx(2.0 / 5.0).epsilon(1e-12));
}

TEST_CASE("pr_auc is undefined without positives") {
    CHECK_FALSE(pr_auc({0.9, 0.1}, {0, 0}).has_value());
}

TEST_CASE("pr_auc equals the threshold-set oracle on grid instances") {
    const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    // n <= 4: every score tuple and every labeling
    for (std::size_t n = 1; n <= 4; ++n) {
        std::size_t score_combos = 1;
        for (std::size_t i = 0; i < n; ++i) score_combos *= grid.size();
        for (std::size_t sc = 0; sc < score_combos; ++sc) {
            std::vector<double> scores(n);
            std::size_t code = sc;
            for (std::size_t i = 0; i < n; ++i) {
                scores[i] = grid[code % grid.size()];
                code /= grid.size();
            }
            for (std::size_t mask = 0; mask < (1u << n); ++mask) {
                std::vector<int> labels(n);
                for (std::size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1;
                auto got = pr_auc(scores, labels);
                auto want = ap_threshold_oracle(scores, labels);
                REQUIRE(got.has_value() == want.has_value());
                if (got) REQUIRE(*got == Catch::Approx(*want).margin(1e-12));
            }
        }
    }
    // n in 5..8: all labelings, seeded-random grid scores
    Rng rng(2024);
    for (std::size_t n = 5; n <= 8; ++n) {
        for (int rep = 0; rep < 400; ++rep) {
            std::vector<double> scores(n);
            for (auto& s : scores) s = grid[rng.next_below(grid.size())];
            for (std::size_t mask = 0; mask < (1u << n); ++mask) {
                std::vector<int> labels(n);
                for (std::size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1;
                auto got = pr_auc(scores, labels);
                auto want = ap_threshold_oracle(scores, labels);
                REQUIRE(got.has_value() == want.has_value());
                if (got) REQUIRE(*got == Catch::Approx(*want).margin(1e-12));
            }
        }
    }
}

TEST_CASE("pr_auc is invariant under strictly monotone score transforms") {
    Rng rng(55);
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t n = 2 + rng.next_below(12);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (auto& s : scores) s = rng.next_below(6) * 0.2;  // with ties
        bool any = false;
        for (auto& y : labels) any |= (y = rng.next_below(2) != 0) != 0;
        if (!any) labels[0] = 1;
        std::vector<double> transformed(n);
        for (std::size_t i = 0; i < n; ++i) transformed[i] = std::exp(3.0 * scores[i]) - 0.5;
        auto a = pr_auc(scores, labels);
        auto b = pr_auc(transformed, labels);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(*a == Catch::Approx(*b).margin(1e-12));
    }
}

TEST_CASE("precision_recall_f1 hand cases") {
    // TP=2, FP=1, FN=1
    Prf prf = precision_recall_f1({1, 1, 1, 0}, {1, 1, 0, 1});
    CHECK(prf.precision == Catch::Approx(2.0 / 3.0));
    CHECK(prf.recall == Catch::Approx(2.0 / 3.0));
    CHECK(prf.f1 == Catch::Approx(2.0 / 3.0));

    Prf none = precision_recall_f1({0, 0, 0}, {1, 0, 1});
    CHECK(none.precision == 1.0);
    CHECK(none.recall == 0.0);
    CHECK(none.f1 == 0.0);

    Prf perfect = precision_recall_f1({1, 0, 1}, {1, 0, 1});
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);
}

TEST_CASE("fit_thresholds picks the midpoint on the worked example") {
    double t = fit_threshold_single({0.9, 0.4, 0.2}, {1, 1, 0});
    CHECK(t == Catch::Approx(0.3));
}

TEST_CASE("fit_thresholds with all-positive labels returns zero") {
    double t = fit_threshold_single({0.9, 0.4, 0.2}, {1, 1, 1});
    CHECK(t == 0.0);
    std::vector<int> predicted{1, 1, 1};
    CHECK(precision_recall_f1(predicted, {1, 1, 1}).f1 == 1.0);
}

TEST_CASE("fit_thresholds warns and never predicts without positives") {
    Warnings w;
    double t = fit_threshold_single({0.5, 0.4}, {0, 0}, &w, "rare");
    CHECK(t == 1.0);
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("rare") != std::string::npos);
}

TEST_CASE("fit_thresholds achieves the exhaustive-search F1 on random instances") {
    Rng rng(7331);
    for (int rep = 0; rep < 1000; ++rep) {
        std::size_t n = 1 + rng.next_below(20);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (auto& s : scores) s = rng.next_below(9) * 0.125;  // ties likely
        bool any = false;
        for (auto& y : labels) any |= (y = rng.next_below(2) != 0) != 0;
        if (!any) labels[rng.next_below(n)] = 1;

        double t = fit_threshold_single(scores, labels);
        std::vector<int> predicted(n);
        for (std::size_t i = 0; i < n; ++i) predicted[i] = decide(scores[i], t);
        double achieved = precision_recall_f1(predicted, labels).f1;
        double best = best_f1_oracle(scores, labels);
        REQUIRE(achieved == Catch::Approx(best).margin(1e-12));
    }
}

TEST_CASE("evaluate_split reports the pr_auc example and macro exclusions") {
    std::vector<std::vector<double>> scores{{0.9, 0.8, 0.7, 0.6}, {0.5, 0.6, 0.7, 0.8}};
    std::vector<std::vector<int>> labels{{1, 0, 1, 0}, {0, 0, 0, 0}};
    ThresholdVector thresholds{{0.75, 0.75}};
    Warnings w;
    EvalReport report = evaluate_split(scores, labels, thresholds, {"alpha", "beta"}, &w);
    REQUIRE(report.per_tag.size() == 2);
    REQUIRE(report.per_tag[0].ap.has_value());
    CHECK(*report.per_tag[0].ap == Catch::Approx(0.833333).margin(1e-6));
    CHECK_FALSE(report.per_tag[1].ap.has_value());
    CHECK(report.tags_in_macro == 1);
    CHECK(report.macro_ap == Catch::Approx(0.833333).margin(1e-6));
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("beta") != std::string::npos);

    // thresholds at 1.0 kill recall for scores strictly below 1
    ThresholdVector ones{{1.0, 1.0}};
    EvalReport strict = evaluate_split(scores, labels, ones, {"alpha", "beta"});
    CHECK(strict.per_tag[0].recall == 0.0);
}

TEST_CASE("evaluate_split emits csv with per-tag rows and a macro row") {
    std::vector<std::vector<double>> scores{{0.9, 0.1}};
    std::vector<std::vector<int>> labels{{1, 0}};
    ThresholdVector thresholds{{0.5}};
    EvalReport report = evaluate_split(scores, labels, thresholds, {"dp"});
    std::string csv = report.to_csv();
    CHECK(csv.find("tag,support,ap,precision,recall,f1,threshold") == 0);
    CHECK(csv.find("\ndp,") != std::string::npos);
    CHECK(csv.find("\nmacro,") != std::string::npos);
    auto j = report.to_json();
    CHECK(j["per_tag"].contains("dp"));
    CHECK(j["macro"]["ap"].get<double>() == 1.0);
}

TEST_CASE("pearson correlation hand cases") {
    auto r1 = pearson({1, 2, 3}, {2, 4, 6});
    REQUIRE(r1.has_value());
    CHECK(*r1 == Catch::Approx(1.0).margin(1e-12));

    auto r2 = pearson({1, 2, 3}, {3, 2, 1});
    REQUIRE(r2.has_value());
    CHECK(*r2 == Catch::Approx(-1.0).margin(1e-12));

    CHECK_FALSE(pearson({1, 1, 1}, {1, 2, 3}).has_value());
}

TEST_CASE("per_tag_correlation is symmetric with unit diagonal") {
    std::vector<std::vector<std::optional<double>>> lists{
        {0.9, 0.8, 0.4, 0.2},
        {0.7, 0.9, 0.3, 0.1},
        {0.1, 0.2, 0.8, 0.9},
    };
    auto m = per_tag_correlation({"ggnn", "agg", "text"}, lists);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(m.values[i][i].has_value());
        CHECK(*m.values[i][i] == 1.0);
        for (std::size_t j = 0; j < 3; ++j) {
            REQUIRE(m.values[i][j].has_value() == m.values[j][i].has_value());
            if (m.values[i][j]) {
                CHECK(*m.values[i][j] == Catch::Approx(*m.values[j][i]));
                CHECK(*m.values[i][j] >= -1.0);
                CHECK(*m.values[i][j] <= 1.0);
            }
        }
    }
    std::string csv = m.to_csv();
    CHECK(csv.find("model,ggnn,agg,text") == 0);
}

TEST_CASE("per_tag_correlation drops undefined APs pairwise") {
    std::vector<std::vector<std::optional<double>>> lists{
        {1.0, std::nullopt, 3.0, 4.0},
        {2.0, 5.0, 6.0, 8.0},
    };
    auto m = per_tag_correlation({"a", "b"}, lists);
    // pairs used: (1,2), (3,6), (4,8) — exactly linear
    REQUIRE(m.values[0][1].has_value());
    CHECK(*m.values[0][1] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("suggest_missing_tags keeps confident unlabeled tags only") {
    std::map<std::string, std::size_t> counts{{"strings", 10}, {"hashing", 9}, {"math", 8}};
    TagVocabulary vocab = TagVocabulary::from_counts(counts, 1);
    std::vector<std::pair<std::string, std::vector<double>>> predictions{
        {"1073G", {0.95, 0.97, 0.3}},  // strings, hashing, math
        {"200A", {0.91, 0.2, 0.99}},
    };
    std::map<std::string, std::set<std::string>> labels{
        {"1073G", {"math"}},
        {"200A", {"strings", "math"}},
    };
    auto suggestions = suggest_missing_tags(predictions, labels, vocab, 0.9);
    REQUIRE(suggestions.size() == 2);
    CHECK(suggestions[0].problem_id == "1073G");
    CHECK(suggestions[0].tag == "hashing");
    CHECK(suggestions[0].probability == Catch::Approx(0.97));
    CHECK(suggestions[1].problem_id == "1073G");
    CHECK(suggestions[1].tag == "strings");
}

TEST_CASE("threshold vector persists by tag name") {
    auto path = std::filesystem::temp_directory_path() / "tagkit_thresholds_test.json";
    ThresholdVector t{{0.25, 0.5}};
    t.save(path, {"dp", "graphs"});
    ThresholdVector back = ThresholdVector::load(path, {"dp", "graphs"});
    CHECK(back.values == t.values);
    CHECK_THROWS_AS(ThresholdVector::load(path, {"dp", "missing"}), DataError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(ThresholdVector::load(path, {"dp"}), MissingArtifactError);
}
