#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "tagkit/common.hpp"
#include "tagkit/preprocess.hpp"
#include "tagkit/rng.hpp"
#include "tagkit/sha256.hpp"

// Contest/problem/solution corpus: loading, validation, deduplication,
// chronological splitting, and subsampling.

namespace tagkit {

struct Contest {
    std::string id;
    std::int64_t start_time = 0;  // seconds since epoch
    int division = 0;
};

struct Problem {
    std::string id;
    std::string contest_id;
    std::string statement_latex;
    std::set<std::string> tags;
};

struct Solution {
    std::string id;
    std::string problem_id;
    std::int64_t submit_time = 0;
    std::string source;
};

struct Corpus {
    std::vector<Contest> contests;
    std::vector<Problem> problems;
    std::vector<Solution> solutions;

    const Contest* find_contest(const std::string& id) const {
        for (const auto& c : contests)
            if (c.id == id) return &c;
        return nullptr;
    }

    std::unordered_map<std::string, std::size_t> problem_index() const {
        std::unordered_map<std::string, std::size_t> idx;
        for (std::size_t i = 0; i < problems.size(); ++i) idx.emplace(problems[i].id, i);
        return idx;
    }

    std::unordered_map<std::string, std::vector<std::size_t>> solutions_by_problem() const {
        std::unordered_map<std::string, std::vector<std::size_t>> idx;
        for (std::size_t i = 0; i < solutions.size(); ++i)
            idx[solutions[i].problem_id].push_back(i);
        return idx;
    }

    void validate() const {
        std::unordered_set<std::string> contest_ids, problem_ids, solution_ids;
        for (const auto& c : contests) {
            if (!contest_ids.insert(c.id).second)
                throw DataError("duplicate contest id: " + c.id);
            if (c.start_time <= 0) throw DataError("contest " + c.id + ": start_time must be > 0");
        }
        for (const auto& p : problems) {
            if (!problem_ids.insert(p.id).second)
                throw DataError("duplicate problem id: " + p.id);
            if (!contest_ids.count(p.contest_id))
                throw DataError("problem " + p.id + " references unknown contest " + p.contest_id);
        }
        for (const auto& s : solutions) {
            if (!solution_ids.insert(s.id).second)
                throw DataError("duplicate solution id: " + s.id);
            if (!problem_ids.count(s.problem_id))
                throw DataError("solution " + s.id + " references unknown problem " + s.problem_id);
            if (s.submit_time <= 0) throw DataError("solution " + s.id + ": submit_time must be > 0");
            if (s.source.empty()) throw DataError("solution " + s.id + ": empty source");
        }
    }
};

namespace detail {

inline std::vector<nlohmann::json> parse_jsonl(const std::filesystem::path& path) {
    std::string text = read_text_file(path);
    std::vector<nlohmann::json> records;
    auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (collapse_whitespace(lines[i]).empty()) continue;
        try {
            records.push_back(nlohmann::json::parse(lines[i]));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.filename().string() + " line " + std::to_string(i + 1) +
                            ": malformed JSON (" + e.what() + ")");
        }
    }
    return records;
}

template <typename T>
T require_field(const nlohmann::json& j, const char* field, const std::filesystem::path& path) {
    if (!j.contains(field))
        throw DataError(path.filename().string() + ": missing field '" + field + "'");
    try {
        return j.at(field).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw DataError(path.filename().string() + ": field '" + field + "' has the wrong type");
    }
}

}  // namespace detail

// Loads contests.jsonl / problems.jsonl / solutions.jsonl from a directory and
// checks all referential invariants.
inline Corpus load_corpus(const std::filesystem::path& root) {
    Corpus corpus;
    const auto contests_path = root / "contests.jsonl";
    const auto problems_path = root / "problems.jsonl";
    const auto solutions_path = root / "solutions.jsonl";
    for (const auto& p : {contests_path, problems_path, solutions_path})
        if (!std::filesystem::exists(p)) throw DataError("missing corpus file: " + p.string());

    for (const auto& j : detail::parse_jsonl(contests_path)) {
        Contest c;
        c.id = detail::require_field<std::string>(j, "id", contests_path);
        c.start_time = detail::require_field<std::int64_t>(j, "start_time", contests_path);
        c.division = detail::require_field<int>(j, "division", contests_path);
        corpus.contests.push_back(std::move(c));
    }
    for (const auto& j : detail::parse_jsonl(problems_path)) {
        Problem p;
        p.id = detail::require_field<std::string>(j, "id", problems_path);
        p.contest_id = detail::require_field<std::string>(j, "contest_id", problems_path);
        p.statement_latex = detail::require_field<std::string>(j, "statement_latex", problems_path);
        for (auto& t : detail::require_field<std::vector<std::string>>(j, "tags", problems_path))
            p.tags.insert(t);
        corpus.problems.push_back(std::move(p));
    }
    for (const auto& j : detail::parse_jsonl(solutions_path)) {
        Solution s;
        s.id = detail::require_field<std::string>(j, "id", solutions_path);
        s.problem_id = detail::require_field<std::string>(j, "problem_id", solutions_path);
        s.submit_time = detail::require_field<std::int64_t>(j, "submit_time", solutions_path);
        s.source = detail::require_field<std::string>(j, "source", solutions_path);
        corpus.solutions.push_back(std::move(s));
    }
    corpus.validate();
    return corpus;
}

// Removes byte-identical solutions (SHA-256 of raw source); within each group
// only the earliest submission survives, ties broken by solution id.
inline Corpus dedup_solutions(const Corpus& corpus, std::size_t* removed = nullptr) {
    std::unordered_map<std::string, std::size_t> keeper;  // hash -> index of survivor
    for (std::size_t i = 0; i < corpus.solutions.size(); ++i) {
        const Solution& s = corpus.solutions[i];
        std::string h = sha256_hex(s.source);
        auto [it, inserted] = keeper.emplace(h, i);
        if (!inserted) {
            const Solution& cur = corpus.solutions[it->second];
            if (s.submit_time < cur.submit_time ||
                (s.submit_time == cur.submit_time && s.id < cur.id))
                it->second = i;
        }
    }
    std::unordered_set<std::size_t> keep;
    for (const auto& [h, idx] : keeper) keep.insert(idx);

    Corpus out;
    out.contests = corpus.contests;
    out.problems = corpus.problems;
    for (std::size_t i = 0; i < corpus.solutions.size(); ++i)
        if (keep.count(i)) out.solutions.push_back(corpus.solutions[i]);
    if (removed) *removed = corpus.solutions.size() - out.solutions.size();
    return out;
}

struct NearDuplicatePair {
    std::string problem_a;  // ordered: problem_a < problem_b
    std::string problem_b;
    double jaccard = 0.0;
};

// All unordered problem pairs whose statement word-token sets have Jaccard
// similarity >= threshold. Problems with empty token sets are excluded and
// logged.
inline std::vector<NearDuplicatePair> find_near_duplicate_statements(
    const Corpus& corpus, double threshold = 0.9, Warnings* warnings = nullptr) {
    std::vector<std::pair<std::string, std::set<std::string>>> token_sets;
    for (const auto& p : corpus.problems) {
        auto words = word_tokens(p.statement_latex);
        std::set<std::string> tokens(words.begin(), words.end());
        if (tokens.empty()) {
            warn(warnings, "problem " + p.id + ": empty statement token set, excluded from pairing");
            continue;
        }
        token_sets.emplace_back(p.id, std::move(tokens));
    }
    std::vector<NearDuplicatePair> pairs;
    for (std::size_t i = 0; i < token_sets.size(); ++i) {
        for (std::size_t j = i + 1; j < token_sets.size(); ++j) {
            const auto& [id_a, set_a] = token_sets[i];
            const auto& [id_b, set_b] = token_sets[j];
            std::size_t inter = 0;
            for (const auto& t : set_a) inter += set_b.count(t);
            std::size_t uni = set_a.size() + set_b.size() - inter;
            double jac = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
            if (jac >= threshold) {
                NearDuplicatePair p;
                p.problem_a = std::min(id_a, id_b);
                p.problem_b = std::max(id_a, id_b);
                p.jaccard = jac;
                pairs.push_back(std::move(p));
            }
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
        return std::tie(a.problem_a, a.problem_b) < std::tie(b.problem_a, b.problem_b);
    });
    return pairs;
}

enum class Split { Train, Validation, Test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        default: return "test";
    }
}

inline Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "validation") return Split::Validation;
    if (name == "test") return Split::Test;
    throw DataError("unknown split name: " + name);
}

struct SplitSpec {
    std::map<std::string, Split> contest_split;
    // First surviving submission time of the validation / test splits; empty
    // when the split has no solutions.
    std::optional<std::int64_t> validation_boundary;
    std::optional<std::int64_t> test_boundary;
    // Problems removed to isolate near-duplicate statement groups.
    std::vector<std::string> removed_problems;

    Split split_of(const std::string& contest_id) const {
        auto it = contest_split.find(contest_id);
        if (it == contest_split.end())
            throw DataError("contest not covered by split: " + contest_id);
        return it->second;
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json j;
        for (const auto& [id, split] : contest_split) j["contests"][id] = split_name(split);
        j["validation_boundary"] =
            validation_boundary ? nlohmann::json(*validation_boundary) : nlohmann::json();
        j["test_boundary"] = test_boundary ? nlohmann::json(*test_boundary) : nlohmann::json();
        j["removed_problems"] = removed_problems;
        write_text_file(path, j.dump(2) + "\n");
    }

    static SplitSpec load(const std::filesystem::path& path) {
        auto j = nlohmann::json::parse(read_text_file(path));
        SplitSpec spec;
        for (auto& [id, name] : j.at("contests").items())
            spec.contest_split[id] = split_from_name(name.get<std::string>());
        if (!j.at("validation_boundary").is_null())
            spec.validation_boundary = j.at("validation_boundary").get<std::int64_t>();
        if (!j.at("test_boundary").is_null())
            spec.test_boundary = j.at("test_boundary").get<std::int64_t>();
        for (auto& id : j.at("removed_problems")) spec.removed_problems.push_back(id.get<std::string>());
        return spec;
    }
};

struct SplitFractions {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

// Orders contests chronologically (ties broken by id), partitions them by
// cumulative problem count, removes near-duplicate statement groups that span
// a boundary (keeping the earliest-split members), and records the leakage
// boundaries used by split_corpus.
inline SplitSpec chronological_split(const Corpus& corpus, SplitFractions fractions,
                                     double near_dup_threshold = 0.9,
                                     Warnings* warnings = nullptr) {
    if (fractions.train <= 0 || fractions.validation <= 0 || fractions.test <= 0)
        throw DataError("split fractions must be positive");
    double sum = fractions.train + fractions.validation + fractions.test;
    if (std::abs(sum - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");
    if (corpus.contests.size() < 3)
        throw DataError("chronological_split: fewer contests than splits");

    std::vector<const Contest*> ordered;
    for (const auto& c : corpus.contests) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(), [](const Contest* a, const Contest* b) {
        return std::tie(a->start_time, a->id) < std::tie(b->start_time, b->id);
    });

    std::unordered_map<std::string, std::size_t> problems_per_contest;
    for (const auto& p : corpus.problems) ++problems_per_contest[p.contest_id];
    std::size_t total_problems = corpus.problems.size();

    SplitSpec spec;
    const double t_train = fractions.train * static_cast<double>(total_problems);
    const double t_val = (fractions.train + fractions.validation) * static_cast<double>(total_problems);
    std::size_t cumulative = 0;
    std::vector<std::vector<const Contest*>> buckets(3);
    for (const Contest* c : ordered) {
        cumulative += problems_per_contest[c->id];
        int b = static_cast<double>(cumulative) <= t_train + 1e-9   ? 0
                : static_cast<double>(cumulative) <= t_val + 1e-9 ? 1
                                                                  : 2;
        buckets[static_cast<std::size_t>(b)].push_back(c);
    }
    // keep every split non-empty by shifting boundary contests
    while (buckets[1].empty() && buckets[0].size() > 1) {
        buckets[1].insert(buckets[1].begin(), buckets[0].back());
        buckets[0].pop_back();
    }
    while (buckets[2].empty() && buckets[1].size() > 1) {
        buckets[2].insert(buckets[2].begin(), buckets[1].back());
        buckets[1].pop_back();
    }
    if (buckets[0].empty() || buckets[1].empty() || buckets[2].empty())
        throw DataError("chronological_split: fewer contests than splits");
    for (std::size_t b = 0; b < 3; ++b)
        for (const Contest* c : buckets[b]) spec.contest_split[c->id] = static_cast<Split>(b);

    // Near-duplicate groups that span splits: connected components over the
    // >=threshold pairs; members outside the earliest-split member's split are
    // removed.
    auto pairs = find_near_duplicate_statements(corpus, near_dup_threshold, warnings);
    std::unordered_map<std::string, std::string> parent;
    std::function<std::string(const std::string&)> find = [&](const std::string& x) -> std::string {
        auto it = parent.find(x);
        if (it == parent.end() || it->second == x) return x;
        std::string root = find(it->second);
        parent[x] = root;
        return root;
    };
    for (const auto& pr : pairs) {
        parent.try_emplace(pr.problem_a, pr.problem_a);
        parent.try_emplace(pr.problem_b, pr.problem_b);
        parent[find(pr.problem_a)] = find(pr.problem_b);
    }
    std::unordered_map<std::string, std::vector<const Problem*>> groups;
    std::unordered_map<std::string, const Problem*> by_id;
    for (const auto& p : corpus.problems) by_id[p.id] = &p;
    for (const auto& [id, _] : parent) groups[find(id)].push_back(by_id.at(id));
    std::set<std::string> removed;
    for (auto& [root, members] : groups) {
        Split earliest = Split::Test;
        for (const Problem* p : members)
            earliest = std::min(earliest, spec.split_of(p->contest_id));
        for (const Problem* p : members)
            if (spec.split_of(p->contest_id) != earliest) removed.insert(p->id);
    }
    spec.removed_problems.assign(removed.begin(), removed.end());

    // Leakage boundaries: the earliest surviving submission of validation/test.
    std::optional<std::int64_t> val_min, test_min;
    for (const auto& s : corpus.solutions) {
        if (removed.count(s.problem_id)) continue;
        Split sp = spec.split_of(by_id.at(s.problem_id)->contest_id);
        if (sp == Split::Validation && (!val_min || s.submit_time < *val_min))
            val_min = s.submit_time;
        if (sp == Split::Test && (!test_min || s.submit_time < *test_min)) test_min = s.submit_time;
    }
    spec.validation_boundary = val_min;
    spec.test_boundary = test_min;
    return spec;
}

// Materializes one split: drops removed problems, keeps the split's contests,
// and removes boundary-leaking solutions (a train solution submitted at or
// after the first validation submission does not survive, and likewise for
// validation against test).
inline Corpus split_corpus(const Corpus& corpus, const SplitSpec& spec, Split which) {
    std::unordered_set<std::string> removed(spec.removed_problems.begin(),
                                            spec.removed_problems.end());
    Corpus out;
    std::unordered_set<std::string> kept_contests, kept_problems;
    for (const auto& c : corpus.contests)
        if (spec.split_of(c.id) == which) {
            out.contests.push_back(c);
            kept_contests.insert(c.id);
        }
    for (const auto& p : corpus.problems)
        if (kept_contests.count(p.contest_id) && !removed.count(p.id)) {
            out.problems.push_back(p);
            kept_problems.insert(p.id);
        }
    std::optional<std::int64_t> cutoff;
    if (which == Split::Train) cutoff = spec.validation_boundary;
    if (which == Split::Validation) cutoff = spec.test_boundary;
    for (const auto& s : corpus.solutions) {
        if (!kept_problems.count(s.problem_id)) continue;
        if (cutoff && s.submit_time >= *cutoff) continue;
        out.solutions.push_back(s);
    }
    return out;
}

// Caps the number of solutions per problem by uniform random subsampling, one
// sub-stream per problem id so the result is independent of iteration order.
inline Corpus subsample_solutions(const Corpus& corpus, std::size_t cap, const Rng& rng) {
    if (cap < 1) throw DataError("subsample_solutions: cap must be >= 1");
    auto by_problem = corpus.solutions_by_problem();
    std::unordered_set<std::size_t> kept;
    for (auto& [problem_id, indices] : by_problem) {
        if (indices.size() <= cap) {
            kept.insert(indices.begin(), indices.end());
            continue;
        }
        std::vector<std::string> ids;
        for (auto i : indices) ids.push_back(corpus.solutions[i].id);
        std::sort(ids.begin(), ids.end());
        Rng stream = rng.stream("subsample").stream(problem_id);
        auto chosen = stream.sample(ids, cap);
        std::unordered_set<std::string> chosen_set(chosen.begin(), chosen.end());
        for (auto i : indices)
            if (chosen_set.count(corpus.solutions[i].id)) kept.insert(i);
    }
    Corpus out;
    out.contests = corpus.contests;
    out.problems = corpus.problems;
    for (std::size_t i = 0; i < corpus.solutions.size(); ++i)
        if (kept.count(i)) out.solutions.push_back(corpus.solutions[i]);
    return out;
}

// Fixed, persisted tag order shared by every model output vector.
class TagVocabulary {
public:
    static TagVocabulary from_counts(const std::map<std::string, std::size_t>& counts,
                                     std::size_t min_train_frequency) {
        std::vector<std::pair<std::string, std::size_t>> kept;
        for (const auto& [tag, freq] : counts)
            if (freq >= min_train_frequency) kept.emplace_back(tag, freq);
        if (kept.empty()) throw DataError("tag vocabulary empty after frequency filtering");
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        TagVocabulary v;
        for (auto& [tag, freq] : kept) {
            v.index_.emplace(tag, static_cast<int>(v.tags_.size()));
            v.tags_.push_back(tag);
            v.frequency_.push_back(freq);
        }
        return v;
    }

    const std::vector<std::string>& tags() const { return tags_; }
    std::size_t size() const { return tags_.size(); }
    std::optional<int> id_of(const std::string& tag) const {
        auto it = index_.find(tag);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    std::size_t train_frequency(int id) const { return frequency_.at(static_cast<std::size_t>(id)); }

    // Multi-hot label vector in vocabulary order; unknown tags are ignored.
    std::vector<double> label_vector(const std::set<std::string>& tags) const {
        std::vector<double> y(tags_.size(), 0.0);
        for (const auto& t : tags)
            if (auto id = id_of(t)) y[static_cast<std::size_t>(*id)] = 1.0;
        return y;
    }

    std::uint64_t content_hash() const {
        std::uint64_t h = 14695981039346656037ull;
        for (const auto& t : tags_) {
            h = fnv1a64(t, h);
            h = fnv1a64("\n", h);
        }
        return h;
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json j;
        j["tags"] = tags_;
        j["train_frequency"] = frequency_;
        write_text_file(path, j.dump(2) + "\n");
    }

    static TagVocabulary load(const std::filesystem::path& path) {
        auto j = nlohmann::json::parse(read_text_file(path));
        TagVocabulary v;
        auto tags = j.at("tags").get<std::vector<std::string>>();
        auto freq = j.at("train_frequency").get<std::vector<std::size_t>>();
        for (std::size_t i = 0; i < tags.size(); ++i) {
            v.index_.emplace(tags[i], static_cast<int>(i));
            v.tags_.push_back(tags[i]);
            v.frequency_.push_back(i < freq.size() ? freq[i] : 0);
        }
        return v;
    }

private:
    std::vector<std::string> tags_;
    std::vector<std::size_t> frequency_;
    std::unordered_map<std::string, int> index_;
};

// Tags ordered by descending train-split problem frequency (ties by name);
// tags below min_train_frequency are dropped.
inline TagVocabulary build_tag_vocabulary(const Corpus& corpus, const SplitSpec& spec,
                                          std::size_t min_train_frequency) {
    Corpus train = split_corpus(corpus, spec, Split::Train);
    std::map<std::string, std::size_t> counts;
    for (const auto& p : train.problems)
        for (const auto& t : p.tags) ++counts[t];
    return TagVocabulary::from_counts(counts, min_train_frequency);
}

}  // namespace tagkit
