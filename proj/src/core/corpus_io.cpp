#include "core/corpus_io.hpp"

#include <fstream>
#include <memory>

#include "json.hpp"

#include "core/error.hpp"

namespace memsig {

namespace {

using nlohmann::json;

void write_text(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out.good()) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

void save_corpus(const CorpusSplit& split, const std::string& path) {
    if (!split.corpus) throw UsageError("corpus split has no corpus");
    json doc;
    doc["format"] = "memsig-corpus";
    doc["version"] = kCorpusFileVersion;
    doc["symbols"] = {{"chars", split.symbols().chars()},
                      {"digit_fold", split.symbols().digit_fold()}};
    doc["seed"] = split.seed;
    json segments = json::array();
    for (const auto& seg : split.corpus->segments) segments.push_back(seg.ids);
    doc["segments"] = std::move(segments);
    doc["split"] = {{"train", split.train}, {"dev", split.dev}, {"eval", split.eval}};
    write_text(path, doc.dump() + "\n");
}

CorpusSplit load_corpus(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw FileFormatError("corpus file " + path + ": " + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "memsig-corpus")
            throw FileFormatError("corpus file " + path + ": wrong format marker");
        if (doc.at("version").get<std::uint32_t>() != kCorpusFileVersion)
            throw FileFormatError("corpus file " + path + ": unsupported version");

        const auto& sym = doc.at("symbols");
        const SymbolSet symbols = SymbolSet::from_chars(sym.at("chars").get<std::string>(),
                                                        sym.at("digit_fold").get<bool>());

        auto corpus = std::make_shared<Corpus>();
        corpus->symbols = symbols;
        for (const auto& seg : doc.at("segments")) {
            EncodedSegment enc;
            enc.ids = seg.get<std::vector<std::int32_t>>();
            if (enc.ids.empty())
                throw FileFormatError("corpus file " + path + ": empty segment");
            for (auto id : enc.ids)
                if (id < 0 || id >= symbols.size())
                    throw FileFormatError("corpus file " + path + ": symbol id out of range");
            corpus->segments.push_back(std::move(enc));
        }

        CorpusSplit split;
        split.corpus = corpus;
        split.seed = doc.at("seed").get<std::uint64_t>();
        split.train = doc.at("split").at("train").get<std::vector<std::uint32_t>>();
        split.dev = doc.at("split").at("dev").get<std::vector<std::uint32_t>>();
        split.eval = doc.at("split").at("eval").get<std::vector<std::uint32_t>>();
        if (split.train.empty() || split.dev.empty() || split.eval.empty())
            throw FileFormatError("corpus file " + path + ": a partition is empty");
        std::vector<std::uint8_t> used(corpus->segments.size(), 0);
        for (const auto* part : {&split.train, &split.dev, &split.eval})
            for (auto idx : *part) {
                if (idx >= corpus->segments.size())
                    throw FileFormatError("corpus file " + path + ": split index out of range");
                if (used[idx]++)
                    throw FileFormatError("corpus file " + path + ": split partitions overlap");
            }
        return split;
    } catch (const json::exception& e) {
        throw FileFormatError("corpus file " + path + ": " + e.what());
    }
}

} // namespace memsig
