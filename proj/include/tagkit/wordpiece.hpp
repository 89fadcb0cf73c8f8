#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tagkit/common.hpp"
#include "tagkit/preprocess.hpp"

namespace tagkit {

// Subword vocabulary for WordPiece tokenization. Continuation pieces carry a
// "##" prefix; [PAD] always has id 0. Stored one token per line, line index =
// id.
class SubwordVocabulary {
public:
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kUnk = "[UNK]";
    static constexpr const char* kCls = "[CLS]";

    static SubwordVocabulary from_tokens(std::vector<std::string> tokens) {
        SubwordVocabulary v;
        v.tokens_ = std::move(tokens);
        for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
            if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second)
                throw DataError("duplicate subword token: " + v.tokens_[i]);
        }
        for (const char* special : {kPad, kUnk, kCls})
            if (!v.index_.count(special))
                throw DataError(std::string("missing special token: ") + special);
        if (v.index_.at(kPad) != 0) throw DataError("[PAD] must have id 0");
        return v;
    }

    static SubwordVocabulary load(const std::filesystem::path& path) {
        std::string text = read_text_file(path);
        std::vector<std::string> tokens;
        for (auto& line : split_lines(text))
            if (!line.empty()) tokens.push_back(line);
        return from_tokens(std::move(tokens));
    }

    void save(const std::filesystem::path& path) const {
        std::string out;
        for (const auto& t : tokens_) {
            out += t;
            out += '\n';
        }
        write_text_file(path, out);
    }

    std::optional<int> id_of(std::string_view token) const {
        auto it = index_.find(std::string(token));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    int pad_id() const { return 0; }
    int unk_id() const { return index_.at(kUnk); }
    int cls_id() const { return index_.at(kCls); }

    std::uint64_t content_hash() const {
        std::uint64_t h = 14695981039346656037ull;
        for (const auto& t : tokens_) {
            h = fnv1a64(t, h);
            h = fnv1a64("\n", h);
        }
        return h;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

namespace detail {

constexpr std::size_t kMaxWordChars = 100;

// Greedy longest-match-first segmentation of one lowercased word. Returns
// empty when the word cannot be covered by the vocabulary.
inline std::vector<int> wordpiece_segment(std::string_view word, const SubwordVocabulary& vocab) {
    std::vector<int> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
        std::size_t end = word.size();
        std::optional<int> match;
        while (end > start) {
            std::string candidate = start == 0 ? std::string(word.substr(0, end))
                                               : "##" + std::string(word.substr(start, end - start));
            if (auto id = vocab.id_of(candidate)) {
                match = id;
                break;
            }
            --end;
        }
        if (!match) return {};
        pieces.push_back(*match);
        start = end;
    }
    return pieces;
}

// Splits a UTF-8 string into single-codepoint strings (invalid bytes pass
// through as single bytes).
inline std::vector<std::string> utf8_chars(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 1;
        len = std::min(len, s.size() - i);
        out.emplace_back(s.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace detail

// Lowercases, pre-splits on whitespace/punctuation, and segments each word by
// greedy longest match. Unmatched or over-long words map to [UNK]. The result
// starts with [CLS] and is truncated to max_len ids.
inline std::vector<int> wordpiece_tokenize(std::string_view text, const SubwordVocabulary& vocab,
                                           std::size_t max_len) {
    std::vector<int> ids{vocab.cls_id()};
    for (const std::string& word : basic_tokens(text)) {
        if (ids.size() >= max_len) break;
        std::vector<int> pieces;
        if (detail::utf8_chars(word).size() <= detail::kMaxWordChars)
            pieces = detail::wordpiece_segment(word, vocab);
        if (pieces.empty()) pieces.push_back(vocab.unk_id());
        ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
    if (ids.size() > max_len) ids.resize(max_len);
    return ids;
}

// Frequency-based vocabulary over statement text: special tokens, all single
// characters, then the most frequent words and word prefixes/suffixes until
// target_size is reached. Deterministic for a fixed corpus.
inline SubwordVocabulary build_subword_vocab(const std::vector<std::string>& statements,
                                             std::size_t target_size) {
    if (statements.empty()) throw DataError("build_subword_vocab: no statements");

    std::map<std::string, std::uint64_t> word_freq;
    for (const auto& statement : statements)
        for (auto& w : basic_tokens(statement)) ++word_freq[w];

    std::set<std::string> chars;
    for (const auto& [word, freq] : word_freq)
        for (auto& c : detail::utf8_chars(word)) chars.insert(c);

    const std::size_t n_special = 3;
    if (target_size < n_special + chars.size())
        throw DataError("build_subword_vocab: target_size " + std::to_string(target_size) +
                        " below minimum " + std::to_string(n_special + chars.size()));

    // Candidate pieces: whole words, prefixes, and ##-continuations.
    constexpr std::size_t kMaxEnumeratedWord = 24;
    std::map<std::string, std::uint64_t> candidates;
    for (const auto& [word, freq] : word_freq) {
        auto cps = detail::utf8_chars(word);
        if (cps.size() < 2 || cps.size() > kMaxEnumeratedWord) continue;
        std::vector<std::size_t> offsets(cps.size() + 1);
        std::size_t off = 0;
        for (std::size_t i = 0; i < cps.size(); ++i) {
            offsets[i] = off;
            off += cps[i].size();
        }
        offsets[cps.size()] = off;
        for (std::size_t j = 2; j <= cps.size(); ++j)  // prefixes, incl. whole word
            candidates[word.substr(0, offsets[j])] += freq;
        for (std::size_t i = 1; i < cps.size(); ++i)  // continuations
            for (std::size_t j = i + 1; j <= cps.size(); ++j)
                candidates["##" + word.substr(offsets[i], offsets[j] - offsets[i])] += freq;
    }

    std::vector<std::string> tokens{SubwordVocabulary::kPad, SubwordVocabulary::kUnk,
                                    SubwordVocabulary::kCls};
    for (const auto& c : chars) tokens.push_back(c);

    std::vector<std::pair<std::string, std::uint64_t>> ranked(candidates.begin(),
                                                              candidates.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [piece, freq] : ranked) {
        if (tokens.size() >= target_size) break;
        tokens.push_back(piece);
    }
    return SubwordVocabulary::from_tokens(std::move(tokens));
}

}  // namespace tagkit
