#include "tagkit/wordpiece.hpp"

#include <filesystem>

#include "catch_amalgamated.hpp"

using namespace tagkit;

namespace {

SubwordVocabulary tiny_vocab(std::vector<std::string> extra) {
    std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]"};
    tokens.insert(tokens.end(), extra.begin(), extra.end());
    return SubwordVocabulary::from_tokens(std::move(tokens));
}

}  // namespace

TEST_CASE("wordpiece greedy longest match") {
    auto vocab = tiny_vocab({"un", "##aff", "##able"});
    auto ids = wordpiece_tokenize("unaffable", vocab, 16);
    REQUIRE(ids.size() == 4);
    CHECK(ids[0] == vocab.cls_id());
    CHECK(vocab.token(ids[1]) == "un");
    CHECK(vocab.token(ids[2]) == "##aff");
    CHECK(vocab.token(ids[3]) == "##able");
}

TEST_CASE("wordpiece unmatched word becomes UNK") {
    auto vocab = tiny_vocab({"un"});
    auto ids = wordpiece_tokenize("xyz", vocab, 16);
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == vocab.cls_id());
    CHECK(ids[1] == vocab.unk_id());
}

TEST_CASE("wordpiece partial coverage without continuation becomes UNK") {
    auto vocab = tiny_vocab({"un"});  // matches prefix but cannot continue
    auto ids = wordpiece_tokenize("unaffable", vocab, 16);
    REQUIRE(ids.size() == 2);
    CHECK(ids[1] == vocab.unk_id());
}

TEST_CASE("wordpiece truncates to max_len") {
    auto vocab = tiny_vocab({"a", "b", "c"});
    auto ids = wordpiece_tokenize("a b c a b c", vocab, 2);
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == vocab.cls_id());
}

TEST_CASE("wordpiece empty text yields CLS only") {
    auto vocab = tiny_vocab({"a"});
    auto ids = wordpiece_tokenize("", vocab, 16);
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == vocab.cls_id());
}

TEST_CASE("wordpiece over-long words map to UNK") {
    auto vocab = tiny_vocab({"a", "##a"});
    std::string word(101, 'a');
    auto ids = wordpiece_tokenize(word, vocab, 400);
    REQUIRE(ids.size() == 2);
    CHECK(ids[1] == vocab.unk_id());
}

TEST_CASE("wordpiece round-trips in-vocab words") {
    auto vocab = tiny_vocab({"loop", "##ing", "##s"});
    for (std::string word : {"looping", "loops", "loop"}) {
        auto ids = wordpiece_tokenize(word, vocab, 16);
        std::string joined;
        for (std::size_t i = 1; i < ids.size(); ++i) {
            std::string t = vocab.token(ids[i]);
            joined += t.rfind("##", 0) == 0 ? t.substr(2) : t;
        }
        CHECK(joined == word);
    }
}

TEST_CASE("build_subword_vocab contains chars and frequent words") {
    auto vocab = build_subword_vocab({"aa aa ab"}, 10);
    CHECK(vocab.id_of("a").has_value());
    CHECK(vocab.id_of("b").has_value());
    CHECK(vocab.id_of("aa").has_value());
    CHECK(vocab.id_of("[PAD]") == 0);
}

TEST_CASE("build_subword_vocab rejects too-small targets") {
    CHECK_THROWS_AS(build_subword_vocab({"abc"}, 4), DataError);
}

TEST_CASE("build_subword_vocab is deterministic and persists") {
    auto v1 = build_subword_vocab({"solve the array problem", "sort the array"}, 40);
    auto v2 = build_subword_vocab({"solve the array problem", "sort the array"}, 40);
    CHECK(v1.content_hash() == v2.content_hash());

    auto path = std::filesystem::temp_directory_path() / "tagkit_vocab_test.txt";
    v1.save(path);
    auto v3 = SubwordVocabulary::load(path);
    CHECK(v3.content_hash() == v1.content_hash());
    std::filesystem::remove(path);
}

TEST_CASE("subword vocabulary validates specials") {
    CHECK_THROWS_AS(SubwordVocabulary::from_tokens({"[PAD]", "[UNK]"}), DataError);
    CHECK_THROWS_AS(SubwordVocabulary::from_tokens({"[UNK]", "[PAD]", "[CLS]"}), DataError);
    CHECK_THROWS_AS(SubwordVocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "x", "x"}),
                    DataError);
}
