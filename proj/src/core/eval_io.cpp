#include "core/eval_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "json.hpp"

#include "core/error.hpp"

namespace memsig {

namespace {

using nlohmann::json;

json acc_array(const std::vector<double>& values) {
    json out = json::array();
    for (double v : values) {
        if (std::isnan(v))
            out.push_back(nullptr);
        else
            out.push_back(v);
    }
    return out;
}

std::vector<double> parse_acc_array(const json& arr) {
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (v.is_null())
            out.push_back(std::numeric_limits<double>::quiet_NaN());
        else
            out.push_back(v.get<double>());
    }
    return out;
}

} // namespace

std::string eval_cell_json(const ProbeRun& run, const ProbeCell& cell, const std::string& model,
                           std::uint64_t corpus_id, std::uint64_t seed) {
    json doc;
    doc["format"] = "memsig-eval";
    doc["version"] = kEvalFileVersion;
    doc["model"] = model;
    doc["corpus_id"] = corpus_id;
    doc["seed"] = seed;
    doc["state_choice"] = state_choice_name(run.choice);
    doc["symbols"] = {{"chars", run.symbols.chars()}, {"digit_fold", run.symbols.digit_fold()}};
    doc["delta"] = cell.delta;
    doc["layer"] = cell.layer;
    doc["keep_hidden"] = cell.keep;
    doc["accuracy"] = cell.eval.accuracy;
    doc["total"] = cell.eval.total;
    doc["per_symbol"] = acc_array(cell.eval.per_symbol);
    doc["support"] = cell.eval.support;
    doc["confusion"] = cell.eval.confusion;
    json sweep = json::array();
    for (const auto& row : cell.sweep) sweep.push_back({row.keep, row.accuracy});
    doc["sweep"] = std::move(sweep);
    return doc.dump() + "\n";
}

EvalFile parse_eval_cell(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FileFormatError(std::string("evaluation file: ") + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "memsig-eval")
            throw FileFormatError("evaluation file: wrong format marker");
        if (doc.at("version").get<std::uint32_t>() != kEvalFileVersion)
            throw FileFormatError("evaluation file: unsupported version");

        EvalFile out;
        out.model = doc.at("model").get<std::string>();
        out.corpus_id = doc.at("corpus_id").get<std::uint64_t>();
        out.seed = doc.at("seed").get<std::uint64_t>();
        out.choice = state_choice_from_name(doc.at("state_choice").get<std::string>());
        const auto& sym = doc.at("symbols");
        out.symbols = SymbolSet::from_chars(sym.at("chars").get<std::string>(),
                                            sym.at("digit_fold").get<bool>());
        const std::size_t v = std::size_t(out.symbols.size());

        out.cell.delta = doc.at("delta").get<int>();
        out.cell.layer = doc.at("layer").get<int>();
        if (out.cell.delta < 1 || out.cell.layer < 0)
            throw FileFormatError("evaluation file: bad delta or layer");
        out.cell.keep = doc.at("keep_hidden").get<double>();
        out.cell.eval.accuracy = doc.at("accuracy").get<double>();
        out.cell.eval.total = doc.at("total").get<std::int64_t>();
        out.cell.eval.per_symbol = parse_acc_array(doc.at("per_symbol"));
        out.cell.eval.support = doc.at("support").get<std::vector<std::int64_t>>();
        out.cell.eval.confusion = doc.at("confusion").get<std::vector<std::int64_t>>();
        if (out.cell.eval.per_symbol.size() != v || out.cell.eval.support.size() != v ||
            out.cell.eval.confusion.size() != v * v)
            throw FileFormatError("evaluation file: per-symbol tables do not match the alphabet");
        for (const auto& row : doc.at("sweep")) {
            if (!row.is_array() || row.size() != 2)
                throw FileFormatError("evaluation file: bad sweep row");
            out.cell.sweep.push_back({row[0].get<double>(), row[1].get<double>()});
        }
        return out;
    } catch (const json::exception& e) {
        throw FileFormatError(std::string("evaluation file: ") + e.what());
    }
}

MemorySignature compile_signature_cells(const std::vector<EvalFile>& cells, int layer) {
    if (cells.empty()) throw UsageError("no evaluation cells to compile");
    const EvalFile& head = cells[0];
    for (const auto& c : cells) {
        if (c.model != head.model || c.corpus_id != head.corpus_id || c.seed != head.seed ||
            c.choice != head.choice || !(c.symbols == head.symbols))
            throw UsageError("evaluation cells come from different probe runs");
    }
    if (layer < 0) {
        std::set<int> layers;
        for (const auto& c : cells) layers.insert(c.cell.layer);
        if (layers.size() > 1)
            throw UsageError("evaluations cover " + std::to_string(layers.size()) +
                             " layers; pick one");
        layer = *layers.begin();
    }

    std::vector<DeltaEvaluation> evals;
    for (const auto& c : cells)
        if (c.cell.layer == layer)
            evals.push_back({c.cell.delta, c.cell.eval.per_symbol, c.cell.eval.support});
    if (evals.empty())
        throw UsageError("no evaluations for layer " + std::to_string(layer));

    SignatureMeta meta{head.model, layer, head.choice, head.corpus_id, head.seed};
    return compile_signature(head.symbols.chars(), evals, meta);
}

} // namespace memsig
