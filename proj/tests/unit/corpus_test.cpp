#include <doctest.h>

#include <algorithm>
#include <memory>
#include <set>

#include "core/corpus.hpp"
#include "core/rng.hpp"

using namespace memsig;

namespace {

std::shared_ptr<const Corpus> toy_corpus(int lines, std::uint64_t seed = 0) {
    // deterministic lines of varying length over the standard alphabet
    Rng rng(seed ? seed : 101);
    std::vector<std::string> text;
    const std::string pool = "abcdefghijklmnopqrstuvwxyz .,#'";
    for (int i = 0; i < lines; ++i) {
        const int len = 4 + int(rng.below(20));
        std::string line;
        for (int j = 0; j < len; ++j) line.push_back(pool[rng.below(pool.size())]);
        text.push_back(line);
    }
    return std::make_shared<Corpus>(corpus_from_lines(text, SymbolSet::standard()));
}

} // namespace

TEST_CASE("empty lines are dropped and content ids react to content") {
    const SymbolSet s = SymbolSet::standard();
    const Corpus a = corpus_from_lines({"abc", "", "de"}, s);
    CHECK(a.segments.size() == 2);
    CHECK(a.segments[0].ids.size() == 3);

    const Corpus b = corpus_from_lines({"abc", "de"}, s);
    CHECK(a.content_id() == b.content_id());
    const Corpus c = corpus_from_lines({"abc", "df"}, s);
    CHECK(a.content_id() != c.content_id());
    // segmentation matters, not just the character stream
    const Corpus d = corpus_from_lines({"abcde"}, s);
    CHECK(a.content_id() != d.content_id());
    CHECK_THROWS_AS(corpus_from_lines({}, s), EmptyData);
    CHECK_THROWS_AS(corpus_from_lines({"", ""}, s), EmptyData);
}

TEST_CASE("splits cover every segment exactly once with pinned sizes") {
    const auto corpus = toy_corpus(10);
    const CorpusSplit split = split_corpus(corpus, {}, 7);
    CHECK(split.train.size() == 8);
    CHECK(split.dev.size() == 1);
    CHECK(split.eval.size() == 1);

    std::set<std::uint32_t> seen;
    for (const auto& part : {split.train, split.dev, split.eval})
        for (const auto idx : part) CHECK(seen.insert(idx).second);
    CHECK(seen.size() == 10);

    const CorpusSplit again = split_corpus(corpus, {}, 7);
    CHECK(again.train == split.train);
    CHECK(again.dev == split.dev);
    CHECK(again.eval == split.eval);

    const CorpusSplit other = split_corpus(corpus, {}, 8);
    CHECK(other.train != split.train); // 10!/(8!)= plenty of room; seed must matter
}

TEST_CASE("split guards its inputs") {
    CHECK_THROWS_AS(split_corpus(toy_corpus(2), {}, 1), InsufficientData);
    CHECK_THROWS_AS(split_corpus(toy_corpus(10), {0.5, 0.2, 0.2}, 1), UsageError);
    CHECK_THROWS_AS(split_corpus(toy_corpus(10), {1.0, 0.0, 0.0}, 1), UsageError);
    // tiny corpora still give three non-empty parts
    const CorpusSplit s = split_corpus(toy_corpus(3), {0.98, 0.01, 0.01}, 1);
    CHECK(s.train.size() == 1);
    CHECK(s.dev.size() == 1);
    CHECK(s.eval.size() == 1);
}

TEST_CASE("train fraction subsampling keeps dev and eval intact") {
    const auto corpus = toy_corpus(20);
    const CorpusSplit split = split_corpus(corpus, {}, 3);
    const CorpusSplit small = sample_train_fraction(split, 0.25, 99);
    CHECK(small.train.size() == 4);
    CHECK(small.dev == split.dev);
    CHECK(small.eval == split.eval);
    for (const auto idx : small.train)
        CHECK(std::count(split.train.begin(), split.train.end(), idx) == 1);
    // deterministic given the seed
    const CorpusSplit small2 = sample_train_fraction(split, 0.25, 99);
    CHECK(small2.train == small.train);

    const CorpusSplit all = sample_train_fraction(split, 1.0, 5);
    CHECK(all.train.size() == split.train.size());
    CHECK_THROWS_AS(sample_train_fraction(split, 0.0, 1), UsageError);
    CHECK_THROWS_AS(sample_train_fraction(split, 1.5, 1), UsageError);
}

TEST_CASE("window batches tile every adjacent pair exactly once per epoch") {
    const auto corpus = toy_corpus(12, 404);
    const CorpusSplit split = split_corpus(corpus, {}, 11);
    const int window = 8, batch = 3;
    WindowBatcher batcher(split, "train", window, batch, 21);

    std::size_t expected_pairs = 0;
    for (const auto idx : split.train) expected_pairs += split.segment(idx).ids.size() - 1;

    // Is in_run/tg_run a run of adjacent pairs inside one train segment?
    auto run_in_some_segment = [&](const std::vector<std::int32_t>& in_run,
                                   const std::vector<std::int32_t>& tg_run) {
        for (const auto idx : split.train) {
            const auto& ids = split.segment(idx).ids;
            if (ids.size() < in_run.size() + 1) continue;
            for (std::size_t p = 0; p + in_run.size() + 1 <= ids.size(); ++p) {
                bool ok = true;
                for (std::size_t j = 0; j < in_run.size() && ok; ++j)
                    ok = ids[p + j] == in_run[j] && ids[p + j + 1] == tg_run[j];
                if (ok) return true;
            }
        }
        return false;
    };

    IdBatch out;
    std::size_t live_total = 0;
    while (batcher.next(out)) {
        CHECK(out.window == window);
        CHECK(out.batch >= 1);
        CHECK(out.batch <= batch);
        for (int b = 0; b < out.batch; ++b) {
            std::vector<std::int32_t> in_run, tg_run;
            bool in_padding = false;
            for (int t = 0; t < out.window; ++t) {
                const std::size_t at = std::size_t(b) * window + t;
                if (out.mask[at]) {
                    CHECK_FALSE(in_padding); // live never follows padding
                    in_run.push_back(out.inputs[at]);
                    tg_run.push_back(out.targets[at]);
                    ++live_total;
                } else {
                    in_padding = true;
                    CHECK(out.inputs[at] == 0);
                }
            }
            REQUIRE(!in_run.empty());
            CHECK(run_in_some_segment(in_run, tg_run));
        }
    }
    CHECK(live_total == expected_pairs);

    // a fresh epoch revisits the same windows in a new order
    batcher.reset(22);
    std::size_t second_epoch = 0;
    while (batcher.next(out))
        for (const auto m : out.mask) second_epoch += m ? 1 : 0;
    CHECK(second_epoch == expected_pairs);
}

TEST_CASE("window batcher rejects degenerate setups") {
    const auto corpus = toy_corpus(6);
    const CorpusSplit split = split_corpus(corpus, {}, 1);
    CHECK_THROWS_AS(WindowBatcher(split, "train", 1, 4, 0), UsageError);
    CHECK_THROWS_AS(WindowBatcher(split, "train", 8, 0, 0), UsageError);
    CHECK_THROWS_AS(WindowBatcher(split, "nope", 8, 4, 0), UsageError);
}

TEST_CASE("bigram frequencies normalize in-segment pair counts") {
    const SymbolSet s = SymbolSet::from_chars("ab ", false);
    const Corpus corpus = corpus_from_lines({"ab", "ba"}, s);
    const auto freq = bigram_frequencies(corpus.segments, s);
    REQUIRE(freq.size() == 9);
    const int a = s.id_of('a'), b = s.id_of('b');
    CHECK(freq[std::size_t(a) * 3 + b] == doctest::Approx(0.5));
    CHECK(freq[std::size_t(b) * 3 + a] == doctest::Approx(0.5));
    double total = 0;
    for (const double f : freq) total += f;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // pairs never straddle segments: "ab","ba" has no a->a or b->b mass
    CHECK(freq[std::size_t(a) * 3 + a] == 0.0);
    CHECK(freq[std::size_t(b) * 3 + b] == 0.0);

    const Corpus empty_pairs = corpus_from_lines({"a", "b"}, s);
    CHECK_THROWS_AS(bigram_frequencies(empty_pairs.segments, s), InsufficientData);
}
