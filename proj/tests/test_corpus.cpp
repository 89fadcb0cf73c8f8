#include "tagkit/corpus.hpp"

#include <filesystem>
#include <fstream>

#include "catch_amalgamated.hpp"

using namespace tagkit;
namespace fs = std::filesystem;

namespace {

Contest contest(std::string id, std::int64_t start, int division = 1) {
    return Contest{std::move(id), start, division};
}

Problem problem(std::string id, std::string contest_id, std::string statement = "find the answer",
                std::set<std::string> tags = {"math"}) {
    return Problem{std::move(id), std::move(contest_id), std::move(statement), std::move(tags)};
}

Solution solution(std::string id, std::string problem_id, std::int64_t t, std::string source) {
    return Solution{std::move(id), std::move(problem_id), t, std::move(source)};
}

fs::path write_corpus_dir(const std::string& contests, const std::string& problems,
                          const std::string& solutions) {
    auto dir = fs::temp_directory_path() / ("tagkit_corpus_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    write_text_file(dir / "contests.jsonl", contests);
    write_text_file(dir / "problems.jsonl", problems);
    write_text_file(dir / "solutions.jsonl", solutions);
    return dir;
}

// 10 single-problem contests on consecutive days, one solution each submitted
// the same day.
Corpus ten_contest_corpus() {
    Corpus c;
    for (int i = 0; i < 10; ++i) {
        std::string n = std::to_string(i);
        c.contests.push_back(contest("c" + n, 86400 * (i + 1)));
        c.problems.push_back(problem("p" + n, "c" + n, "statement number " + n + " unique words " + n));
        c.solutions.push_back(solution("s" + n, "p" + n, 86400 * (i + 1) + 100, "int main(){return " + n + ";}"));
    }
    return c;
}

}  // namespace

TEST_CASE("load_corpus preserves counts") {
    auto dir = write_corpus_dir(
        R"({"id":"c1","start_time":100,"division":1})"
        "\n"
        R"({"id":"c2","start_time":200,"division":2})"
        "\n",
        R"({"id":"p1","contest_id":"c1","statement_latex":"a","tags":["math"]})"
        "\n"
        R"({"id":"p2","contest_id":"c1","statement_latex":"b","tags":[]})"
        "\n"
        R"({"id":"p3","contest_id":"c2","statement_latex":"c","tags":["dp","graphs"]})"
        "\n",
        R"({"id":"s1","problem_id":"p1","submit_time":101,"source":"int main(){}"})"
        "\n"
        R"({"id":"s2","problem_id":"p1","submit_time":102,"source":"int main(){return 0;}"})"
        "\n"
        R"({"id":"s3","problem_id":"p2","submit_time":103,"source":"int x;"})"
        "\n"
        R"({"id":"s4","problem_id":"p3","submit_time":104,"source":"int y;"})"
        "\n"
        R"({"id":"s5","problem_id":"p3","submit_time":105,"source":"int z;"})"
        "\n");
    Corpus c = load_corpus(dir);
    CHECK(c.contests.size() == 2);
    CHECK(c.problems.size() == 3);
    CHECK(c.solutions.size() == 5);
    fs::remove_all(dir);
}

TEST_CASE("load_corpus accepts empty solutions file") {
    auto dir = write_corpus_dir(R"({"id":"c1","start_time":100,"division":1})" "\n",
                                R"({"id":"p1","contest_id":"c1","statement_latex":"a","tags":[]})" "\n",
                                "");
    Corpus c = load_corpus(dir);
    CHECK(c.solutions.empty());
    fs::remove_all(dir);
}

TEST_CASE("load_corpus reports dangling references by id") {
    auto dir = write_corpus_dir(R"({"id":"c1","start_time":100,"division":1})" "\n",
                                R"({"id":"p1","contest_id":"c1","statement_latex":"a","tags":[]})" "\n",
                                R"({"id":"s1","problem_id":"nope","submit_time":1,"source":"x"})" "\n");
    CHECK_THROWS_WITH(load_corpus(dir), Catch::Matchers::ContainsSubstring("nope"));
    fs::remove_all(dir);
}

TEST_CASE("load_corpus reports malformed lines with their number") {
    auto dir = write_corpus_dir(R"({"id":"c1","start_time":100,"division":1})"
                                "\nnot json\n",
                                "", "");
    CHECK_THROWS_WITH(load_corpus(dir), Catch::Matchers::ContainsSubstring("line 2"));
    fs::remove_all(dir);
}

TEST_CASE("load_corpus requires all three files") {
    auto dir = fs::temp_directory_path() / "tagkit_missing_files";
    fs::create_directories(dir);
    write_text_file(dir / "contests.jsonl", "");
    CHECK_THROWS_AS(load_corpus(dir), DataError);
    fs::remove_all(dir);
}

TEST_CASE("dedup keeps the earliest of identical sources") {
    Corpus c;
    c.contests.push_back(contest("c1", 10));
    c.problems.push_back(problem("p1", "c1"));
    c.solutions.push_back(solution("s1", "p1", 5, "int main(){}"));
    c.solutions.push_back(solution("s2", "p1", 3, "int main(){}"));
    std::size_t removed = 0;
    Corpus d = dedup_solutions(c, &removed);
    REQUIRE(d.solutions.size() == 1);
    CHECK(d.solutions[0].id == "s2");
    CHECK(removed == 1);
}

TEST_CASE("dedup is byte-exact: whitespace differences survive") {
    Corpus c;
    c.contests.push_back(contest("c1", 10));
    c.problems.push_back(problem("p1", "c1"));
    c.solutions.push_back(solution("s1", "p1", 5, "int main(){}"));
    c.solutions.push_back(solution("s2", "p1", 6, "int main() {}"));
    Corpus d = dedup_solutions(c);
    CHECK(d.solutions.size() == 2);
}

TEST_CASE("dedup leaves no byte-identical pair") {
    Corpus c = ten_contest_corpus();
    for (int i = 0; i < 5; ++i)
        c.solutions.push_back(solution("dup" + std::to_string(i), "p0", 1000 + i, "int main(){return 0;}"));
    Corpus d = dedup_solutions(c);
    std::set<std::string> seen;
    for (const auto& s : d.solutions) REQUIRE(seen.insert(s.source).second);
}

TEST_CASE("sha256 matches the standard test vector") {
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("near-duplicate detection at the 0.9 boundary") {
    Corpus c;
    c.contests.push_back(contest("c1", 10));
    // A has 10 distinct tokens, B has 9 of them: Jaccard = 9/10.
    c.problems.push_back(problem("pa", "c1", "t1 t2 t3 t4 t5 t6 t7 t8 t9 t10", {}));
    c.problems.push_back(problem("pb", "c1", "t1 t2 t3 t4 t5 t6 t7 t8 t9", {}));
    auto pairs = find_near_duplicate_statements(c, 0.9);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].problem_a == "pa");
    CHECK(pairs[0].problem_b == "pb");
    CHECK(pairs[0].jaccard == Catch::Approx(0.9));
}

TEST_CASE("identical statements give Jaccard 1.0, disjoint give none") {
    Corpus c;
    c.contests.push_back(contest("c1", 10));
    c.problems.push_back(problem("pa", "c1", "same words here", {}));
    c.problems.push_back(problem("pb", "c1", "same words here", {}));
    c.problems.push_back(problem("pc", "c1", "totally different text", {}));
    auto pairs = find_near_duplicate_statements(c, 0.9);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].jaccard == Catch::Approx(1.0));
}

TEST_CASE("empty statements are excluded from pairing and logged") {
    Corpus c;
    c.contests.push_back(contest("c1", 10));
    c.problems.push_back(problem("pa", "c1", "!!!", {}));
    c.problems.push_back(problem("pb", "c1", "words", {}));
    Warnings w;
    auto pairs = find_near_duplicate_statements(c, 0.9, &w);
    CHECK(pairs.empty());
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("pa") != std::string::npos);
}

TEST_CASE("chronological split partitions 10 contests as 6/2/2") {
    Corpus c = ten_contest_corpus();
    SplitSpec spec = chronological_split(c, {0.6, 0.2, 0.2});
    int train = 0, val = 0, test = 0;
    for (int i = 0; i < 10; ++i) {
        Split s = spec.split_of("c" + std::to_string(i));
        if (s == Split::Train) {
            ++train;
            CHECK(i < 6);
        } else if (s == Split::Validation) {
            ++val;
            CHECK((i == 6 || i == 7));
        } else {
            ++test;
            CHECK(i >= 8);
        }
    }
    CHECK(train == 6);
    CHECK(val == 2);
    CHECK(test == 2);
}

TEST_CASE("split requires at least one contest per split") {
    Corpus c;
    c.contests.push_back(contest("c1", 100));
    c.contests.push_back(contest("c2", 200));
    c.problems.push_back(problem("p1", "c1"));
    c.problems.push_back(problem("p2", "c2"));
    CHECK_THROWS_AS(chronological_split(c, {0.6, 0.2, 0.2}), DataError);
}

TEST_CASE("train solution at the validation boundary is removed") {
    Corpus c = ten_contest_corpus();
    // earliest validation submission is s6 at t = 86400*7+100; give train a
    // solution at exactly that time
    c.solutions.push_back(solution("late", "p0", 86400 * 7 + 100, "int late;"));
    SplitSpec spec = chronological_split(c, {0.6, 0.2, 0.2});
    REQUIRE(spec.validation_boundary.has_value());
    CHECK(*spec.validation_boundary == 86400 * 7 + 100);
    Corpus train = split_corpus(c, spec, Split::Train);
    for (const auto& s : train.solutions) CHECK(s.id != "late");
}

TEST_CASE("split leakage invariants hold on surviving solutions") {
    Corpus c = ten_contest_corpus();
    c.solutions.push_back(solution("x1", "p1", 86400 * 9, "int a;"));   // train problem, late submit
    c.solutions.push_back(solution("x2", "p7", 86400 * 20, "int b;"));  // validation problem, late submit
    SplitSpec spec = chronological_split(c, {0.6, 0.2, 0.2});
    Corpus train = split_corpus(c, spec, Split::Train);
    Corpus val = split_corpus(c, spec, Split::Validation);
    Corpus test = split_corpus(c, spec, Split::Test);
    std::int64_t max_train = 0, max_val = 0;
    std::int64_t min_val = INT64_MAX, min_test = INT64_MAX;
    for (const auto& s : train.solutions) max_train = std::max(max_train, s.submit_time);
    for (const auto& s : val.solutions) {
        max_val = std::max(max_val, s.submit_time);
        min_val = std::min(min_val, s.submit_time);
    }
    for (const auto& s : test.solutions) min_test = std::min(min_test, s.submit_time);
    CHECK(max_train < min_val);
    CHECK(max_val < min_test);
}

TEST_CASE("near-duplicate pair across splits drops the later-split problem") {
    Corpus c = ten_contest_corpus();
    std::string shared = "exactly the same statement tokens for both problems";
    c.problems[1].statement_latex = shared;  // p1 -> train
    c.problems[9].statement_latex = shared;  // p9 -> test
    SplitSpec spec = chronological_split(c, {0.6, 0.2, 0.2});
    REQUIRE(spec.removed_problems.size() == 1);
    CHECK(spec.removed_problems[0] == "p9");
    Corpus test = split_corpus(c, spec, Split::Test);
    for (const auto& p : test.problems) CHECK(p.id != "p9");

    // no surviving cross-split pair at >= 0.9
    Corpus train = split_corpus(c, spec, Split::Train);
    for (const auto& tp : train.problems) {
        auto t1 = word_tokens(tp.statement_latex);
        std::set<std::string> a(t1.begin(), t1.end());
        for (const auto& sp : test.problems) {
            auto t2 = word_tokens(sp.statement_latex);
            std::set<std::string> b(t2.begin(), t2.end());
            std::size_t inter = 0;
            for (const auto& t : a) inter += b.count(t);
            double jac = static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
            CHECK(jac < 0.9);
        }
    }
}

TEST_CASE("subsample caps solution counts and is deterministic") {
    Corpus c;
    c.contests.push_back(contest("c1", 10));
    c.problems.push_back(problem("p1", "c1"));
    c.problems.push_back(problem("p2", "c1"));
    for (int i = 0; i < 1500; ++i)
        c.solutions.push_back(solution("s" + std::to_string(i), "p1", 100 + i,
                                       "int x = " + std::to_string(i) + ";"));
    for (int i = 0; i < 7; ++i)
        c.solutions.push_back(solution("t" + std::to_string(i), "p2", 100 + i,
                                       "int y = " + std::to_string(i) + ";"));

    Corpus a = subsample_solutions(c, 1000, Rng(42));
    auto by_problem = a.solutions_by_problem();
    CHECK(by_problem.at("p1").size() == 1000);
    CHECK(by_problem.at("p2").size() == 7);

    Corpus b = subsample_solutions(c, 1000, Rng(42));
    REQUIRE(a.solutions.size() == b.solutions.size());
    for (std::size_t i = 0; i < a.solutions.size(); ++i)
        CHECK(a.solutions[i].id == b.solutions[i].id);

    // idempotent for the same seed
    Corpus again = subsample_solutions(a, 1000, Rng(42));
    CHECK(again.solutions.size() == a.solutions.size());

    Corpus other = subsample_solutions(c, 1000, Rng(43));
    bool identical = other.solutions.size() == a.solutions.size();
    if (identical)
        for (std::size_t i = 0; i < a.solutions.size(); ++i)
            identical = identical && other.solutions[i].id == a.solutions[i].id;
    CHECK_FALSE(identical);
}

TEST_CASE("tag vocabulary orders by frequency and filters rare tags") {
    std::map<std::string, std::size_t> counts{{"a", 100}, {"b", 40}, {"c", 3}};
    TagVocabulary v = TagVocabulary::from_counts(counts, 10);
    REQUIRE(v.size() == 2);
    CHECK(v.tags()[0] == "a");
    CHECK(v.tags()[1] == "b");
    CHECK_FALSE(v.id_of("c").has_value());
}

TEST_CASE("tag vocabulary errors when empty after filtering") {
    std::map<std::string, std::size_t> counts{{"a", 1}, {"b", 2}};
    CHECK_THROWS_AS(TagVocabulary::from_counts(counts, 10), DataError);
}

TEST_CASE("tag vocabulary persists order and hash") {
    std::map<std::string, std::size_t> counts{{"dp", 9}, {"graphs", 9}, {"math", 20}};
    TagVocabulary v = TagVocabulary::from_counts(counts, 1);
    REQUIRE(v.tags().size() == 3);
    CHECK(v.tags()[0] == "math");
    CHECK(v.tags()[1] == "dp");  // tie broken by name
    CHECK(v.tags()[2] == "graphs");

    auto path = fs::temp_directory_path() / "tagkit_tags_test.json";
    v.save(path);
    TagVocabulary loaded = TagVocabulary::load(path);
    CHECK(loaded.content_hash() == v.content_hash());
    CHECK(loaded.label_vector({"dp"}) == std::vector<double>{0.0, 1.0, 0.0});
    fs::remove(path);
}

TEST_CASE("build_tag_vocabulary counts train-split problems only") {
    Corpus c = ten_contest_corpus();
    for (int i = 0; i < 10; ++i)
        c.problems[static_cast<std::size_t>(i)].tags =
            i < 6 ? std::set<std::string>{"common", "trainy"} : std::set<std::string>{"common", "laty"};
    SplitSpec spec = chronological_split(c, {0.6, 0.2, 0.2});
    TagVocabulary v = build_tag_vocabulary(c, spec, 1);
    CHECK(v.id_of("common").has_value());
    CHECK(v.id_of("trainy").has_value());
    CHECK_FALSE(v.id_of("laty").has_value());
    CHECK(v.train_frequency(*v.id_of("common")) == 6);
}
