#include "corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rng.hpp"

namespace memsig {

std::uint64_t Corpus::content_id() const {
    std::uint64_t h = fnv1a(symbols.chars().data(), symbols.chars().size());
    const std::uint8_t fold = symbols.digit_fold() ? 1 : 0;
    h = fnv1a(&fold, 1, h);
    for (const auto& seg : segments) {
        const std::uint32_t n = std::uint32_t(seg.ids.size());
        h = fnv1a(&n, sizeof n, h);
        h = fnv1a(seg.ids.data(), seg.ids.size() * sizeof(std::int32_t), h);
    }
    return h;
}

const std::vector<std::uint32_t>& CorpusSplit::part(const std::string& name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "eval") return eval;
    throw UsageError("unknown corpus part: " + name + " (expected train|dev|eval)");
}

Corpus corpus_from_lines(const std::vector<std::string>& lines, const SymbolSet& symbols) {
    Corpus corpus;
    corpus.symbols = symbols;
    corpus.segments.reserve(lines.size());
    for (const auto& line : lines) {
        if (line.empty()) continue;
        corpus.segments.push_back(encode_text(line, symbols));
    }
    if (corpus.segments.empty()) throw EmptyData("corpus has no usable segments");
    return corpus;
}

Corpus load_corpus_file(const std::string& path, const SymbolSet& symbols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus: " + path);
    Corpus corpus;
    corpus.symbols = symbols;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        corpus.segments.push_back(encode_text(line, symbols));
    }
    if (corpus.segments.empty()) throw EmptyData("corpus has no usable segments: " + path);
    return corpus;
}

CorpusSplit split_corpus(std::shared_ptr<const Corpus> corpus, SplitRatios ratios, std::uint64_t seed) {
    const double sum = ratios.train + ratios.dev + ratios.eval;
    if (ratios.train <= 0 || ratios.dev <= 0 || ratios.eval <= 0 || std::abs(sum - 1.0) > 1e-9)
        throw UsageError("split ratios must be positive and sum to 1");
    const std::size_t n = corpus->segments.size();
    if (n < 3) throw InsufficientData("split_corpus: need at least 3 segments, got " + std::to_string(n));

    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = std::uint32_t(i);
    Rng rng(seed);
    rng.shuffle(order);

    std::size_t n_train = std::size_t(std::llround(ratios.train * double(n)));
    std::size_t n_dev = std::size_t(std::llround(ratios.dev * double(n)));
    n_train = std::min(n_train, n - 2);
    n_dev = std::min(std::max<std::size_t>(n_dev, 1), n - n_train - 1);
    if (n_train == 0) n_train = 1;
    const std::size_t n_eval = n - n_train - n_dev;

    CorpusSplit split;
    split.corpus = std::move(corpus);
    split.seed = seed;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.dev.assign(order.begin() + n_train, order.begin() + n_train + n_dev);
    split.eval.assign(order.begin() + n_train + n_dev, order.end());
    (void)n_eval;
    return split;
}

CorpusSplit sample_train_fraction(const CorpusSplit& split, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) throw UsageError("fraction must be in (0, 1]");
    CorpusSplit out = split;
    if (fraction == 1.0) return out;
    std::vector<std::uint32_t> pool = split.train;
    Rng rng(seed);
    rng.shuffle(pool);
    std::size_t keep = std::max<std::size_t>(1, std::size_t(std::llround(fraction * double(pool.size()))));
    pool.resize(keep);
    std::sort(pool.begin(), pool.end());
    out.train = std::move(pool);
    return out;
}

WindowBatcher::WindowBatcher(const CorpusSplit& split, const std::string& part, int window, int batch,
                             std::uint64_t seed)
    : corpus_(split.corpus.get()), window_(window), batch_(batch) {
    if (window < 2) throw UsageError("batch_windows: window must be >= 2");
    if (batch < 1) throw UsageError("batch_windows: batch must be >= 1");
    for (std::uint32_t idx : split.part(part)) {
        const auto& seg = corpus_->segments[idx];
        const std::size_t pairs = seg.ids.size() >= 2 ? seg.ids.size() - 1 : 0;
        for (std::size_t start = 0; start < pairs; start += std::size_t(window)) {
            const std::uint32_t len = std::uint32_t(std::min<std::size_t>(window, pairs - start));
            windows_.push_back({idx, std::uint32_t(start), len});
        }
    }
    reset(seed);
}

void WindowBatcher::reset(std::uint64_t seed) {
    Rng rng(seed);
    rng.shuffle(windows_);
    cursor_ = 0;
}

bool WindowBatcher::next(IdBatch& out) {
    if (cursor_ >= windows_.size()) return false;
    const int rows = int(std::min<std::size_t>(batch_, windows_.size() - cursor_));
    out.batch = rows;
    out.window = window_;
    out.inputs.assign(std::size_t(rows) * window_, 0);
    out.targets.assign(std::size_t(rows) * window_, 0);
    out.mask.assign(std::size_t(rows) * window_, 0);
    for (int r = 0; r < rows; ++r) {
        const WindowRef& w = windows_[cursor_ + std::size_t(r)];
        const auto& ids = corpus_->segments[w.segment].ids;
        for (std::uint32_t t = 0; t < w.len; ++t) {
            const std::size_t at = std::size_t(r) * window_ + t;
            out.inputs[at] = ids[w.start + t];
            out.targets[at] = ids[w.start + t + 1];
            out.mask[at] = 1;
        }
    }
    cursor_ += std::size_t(rows);
    return true;
}

std::vector<double> bigram_frequencies(const std::vector<EncodedSegment>& segments,
                                       const SymbolSet& symbols) {
    const int v = symbols.size();
    std::vector<std::uint64_t> counts(std::size_t(v) * v, 0);
    std::uint64_t total = 0;
    for (const auto& seg : segments) {
        for (std::size_t t = 0; t + 1 < seg.ids.size(); ++t) {
            counts[std::size_t(seg.ids[t]) * v + seg.ids[t + 1]]++;
            ++total;
        }
    }
    if (total == 0) throw InsufficientData("bigram_frequencies: need at least 2 characters");
    std::vector<double> freq(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) freq[i] = double(counts[i]) / double(total);
    return freq;
}

std::vector<double> bigram_frequencies(const CorpusSplit& split, const std::string& part) {
    std::vector<EncodedSegment> segs;
    segs.reserve(split.part(part).size());
    for (std::uint32_t idx : split.part(part)) segs.push_back(split.segment(idx));
    return bigram_frequencies(segs, split.symbols());
}

} // namespace memsig
