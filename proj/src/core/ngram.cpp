#include "core/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "json.hpp"

#include "core/error.hpp"

namespace memsig {

namespace {

constexpr int kIdBits = 7;
constexpr int kMaxOrder = 9; // (order-1) context ids + target at 7 bits each

std::uint64_t context_mask(int order) {
    int bits = kIdBits * (order - 1);
    return bits == 0 ? 0 : (std::uint64_t(1) << bits) - 1;
}

// Rolling context key: shifting in the newest id keeps block j at bits
// [7j, 7j+7) = symbol j+1 steps back.
std::uint64_t shift_in(std::uint64_t key, std::int32_t id, std::uint64_t mask) {
    return ((key << kIdBits) | std::uint64_t(id)) & mask;
}

void check_model(const NgramLm& m) {
    if (m.order < 1 || m.order > kMaxOrder)
        throw UsageError("ngram order must be in [1, " + std::to_string(kMaxOrder) + "]");
    if (m.add_k <= 0.0)
        throw UsageError("add-k smoothing constant must be positive");
    if (m.vocab() < 1 || m.pad_id() >= (1 << kIdBits))
        throw UsageError("symbol set does not fit the ngram key packing");
}

double prob_from_key(const NgramLm& m, std::uint64_t ctx_key, std::int32_t target) {
    auto total = m.ctx_totals.find(ctx_key);
    if (total == m.ctx_totals.end()) return 1.0 / double(m.vocab());
    std::uint64_t pair_key = (ctx_key << kIdBits) | std::uint64_t(target);
    auto pair = m.pair_counts.find(pair_key);
    double count = pair == m.pair_counts.end() ? 0.0 : double(pair->second);
    return (count + m.add_k) / (double(total->second) + m.add_k * double(m.vocab()));
}

} // namespace

NgramLm train_ngram(const CorpusSplit& split, int order, double add_k) {
    NgramLm m;
    m.symbols = split.symbols();
    m.order = order;
    m.add_k = add_k;
    check_model(m);

    const std::uint64_t mask = context_mask(order);
    const std::int32_t pad = m.pad_id();
    std::uint64_t events = 0;
    for (std::uint32_t idx : split.train) {
        const auto& ids = split.segment(idx).ids;
        std::uint64_t key = 0;
        for (int j = 0; j < m.context_len(); ++j) key = shift_in(key, pad, mask);
        for (std::size_t t = 1; t < ids.size(); ++t) {
            key = shift_in(key, ids[t - 1], mask);
            m.ctx_totals[key] += 1;
            m.pair_counts[(key << kIdBits) | std::uint64_t(ids[t])] += 1;
            ++events;
        }
    }
    if (events == 0) throw EmptyData("train partition has no in-segment transitions");
    return m;
}

double ngram_prob(const NgramLm& m, std::span<const std::int32_t> recent, std::int32_t target) {
    check_model(m);
    if (target < 0 || target >= m.vocab()) throw UsageError("ngram target id out of range");
    const std::uint64_t mask = context_mask(m.order);
    std::uint64_t key = 0;
    // Oldest first so recent[0] ends up in the low block.
    for (int j = m.context_len() - 1; j >= 0; --j) {
        std::int32_t id = j < int(recent.size()) ? recent[std::size_t(j)] : m.pad_id();
        if (id < 0 || id > m.pad_id()) throw UsageError("ngram context id out of range");
        key = shift_in(key, id, mask);
    }
    return prob_from_key(m, key, target);
}

double perplexity(const NgramLm& m, const CorpusSplit& split, const std::string& part) {
    check_model(m);
    if (!(m.symbols == split.symbols()))
        throw IncompatibleCheckpoint("corpus symbol set does not match the model");

    const std::uint64_t mask = context_mask(m.order);
    const std::int32_t pad = m.pad_id();
    double total_nll = 0.0;
    std::uint64_t events = 0;
    for (std::uint32_t idx : split.part(part)) {
        const auto& ids = split.segment(idx).ids;
        std::uint64_t key = 0;
        for (int j = 0; j < m.context_len(); ++j) key = shift_in(key, pad, mask);
        double seg_nll = 0.0;
        for (std::size_t t = 1; t < ids.size(); ++t) {
            key = shift_in(key, ids[t - 1], mask);
            seg_nll -= std::log(prob_from_key(m, key, ids[t]));
            ++events;
        }
        total_nll += seg_nll;
    }
    if (events == 0) throw InsufficientData("perplexity needs at least one in-segment transition");
    return std::exp(total_nll / double(events));
}

StateTrace ngram_state_trace(const NgramLm& m, const CorpusSplit& split, const std::string& part,
                             std::size_t max_positions) {
    check_model(m);
    if (m.order < 2) throw UsageError("order-1 ngram has an empty state; nothing to trace");
    if (!(m.symbols == split.symbols()))
        throw IncompatibleCheckpoint("corpus symbol set does not match the model");

    const auto& indices = split.part(part);
    std::vector<std::uint32_t> take;     // segment index
    std::vector<std::uint32_t> take_len; // rows used from it
    std::size_t total = 0;
    for (std::uint32_t idx : indices) {
        if (max_positions && total >= max_positions) break;
        std::size_t len = split.segment(idx).ids.size();
        if (max_positions && total + len > max_positions) len = max_positions - total;
        take.push_back(idx);
        take_len.push_back(std::uint32_t(len));
        total += len;
    }
    if (total == 0) throw InsufficientData("trace part has no positions");

    const int blocks = m.context_len();
    const int vocab = m.vocab();
    StateTrace trace;
    trace.symbols = m.symbols;
    trace.choice = StateChoice::output;
    trace.width = blocks * vocab;
    trace.states.emplace_back(int(total), trace.width);
    trace.ids.resize(total);
    trace.segments.reserve(take.size());

    std::uint32_t begin = 0;
    for (std::size_t s = 0; s < take.size(); ++s) {
        const auto& ids = split.segment(take[s]).ids;
        const std::uint32_t len = take_len[s];
        for (std::uint32_t t = 0; t < len; ++t) {
            trace.ids[begin + t] = ids[t];
            float* row = trace.states[0].row(int(begin + t));
            for (int j = 0; j < blocks && j < int(t); ++j)
                row[j * vocab + ids[t - 1 - std::uint32_t(j)]] = 1.0f;
        }
        trace.segments.emplace_back(begin, begin + len);
        begin += len;
    }
    return trace;
}

namespace {

nlohmann::json sorted_counts(const std::unordered_map<std::uint64_t, std::int64_t>& table) {
    std::vector<std::pair<std::uint64_t, std::int64_t>> rows(table.begin(), table.end());
    std::sort(rows.begin(), rows.end());
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [key, count] : rows) out.push_back({key, count});
    return out;
}

void load_counts(const nlohmann::json& rows,
                 std::unordered_map<std::uint64_t, std::int64_t>& table, const char* what) {
    for (const auto& row : rows) {
        if (!row.is_array() || row.size() != 2)
            throw FileFormatError(std::string("ngram file: bad ") + what + " row");
        const std::int64_t count = row[1].get<std::int64_t>();
        if (count < 1) throw FileFormatError(std::string("ngram file: non-positive ") + what);
        if (!table.emplace(row[0].get<std::uint64_t>(), count).second)
            throw FileFormatError(std::string("ngram file: duplicate ") + what + " key");
    }
}

} // namespace

void save_ngram(const NgramLm& m, const std::string& path) {
    check_model(m);
    nlohmann::json doc;
    doc["format"] = "memsig-ngram";
    doc["version"] = kNgramFileVersion;
    doc["symbols"] = {{"chars", m.symbols.chars()}, {"digit_fold", m.symbols.digit_fold()}};
    doc["order"] = m.order;
    doc["add_k"] = m.add_k;
    doc["pairs"] = sorted_counts(m.pair_counts);
    doc["contexts"] = sorted_counts(m.ctx_totals);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    const std::string bytes = doc.dump() + "\n";
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out.good()) throw IoError("write failed: " + path);
}

NgramLm load_ngram(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(
            std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
    } catch (const nlohmann::json::exception& e) {
        throw FileFormatError("ngram file " + path + ": " + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "memsig-ngram")
            throw FileFormatError("ngram file " + path + ": wrong format marker");
        if (doc.at("version").get<std::uint32_t>() != kNgramFileVersion)
            throw FileFormatError("ngram file " + path + ": unsupported version");
        NgramLm m;
        const auto& sym = doc.at("symbols");
        m.symbols = SymbolSet::from_chars(sym.at("chars").get<std::string>(),
                                          sym.at("digit_fold").get<bool>());
        m.order = doc.at("order").get<int>();
        m.add_k = doc.at("add_k").get<double>();
        check_model(m);
        load_counts(doc.at("pairs"), m.pair_counts, "pair count");
        load_counts(doc.at("contexts"), m.ctx_totals, "context count");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FileFormatError("ngram file " + path + ": " + e.what());
    }
}

} // namespace memsig
