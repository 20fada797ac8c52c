#include "symbols.hpp"

#include <cctype>
#include <fstream>

namespace memsig {

namespace {

// Advances over one UTF-8 codepoint; a malformed byte counts as one
// codepoint so that every input byte is consumed exactly once.
std::size_t codepoint_len(const std::string& text, std::size_t i) {
    unsigned char b = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((b & 0x80u) == 0x00u)
        len = 1;
    else if ((b & 0xe0u) == 0xc0u)
        len = 2;
    else if ((b & 0xf0u) == 0xe0u)
        len = 3;
    else if ((b & 0xf8u) == 0xf0u)
        len = 4;
    else
        return 1; // stray continuation byte
    for (std::size_t k = 1; k < len; ++k) {
        if (i + k >= text.size()) return 1;
        if ((static_cast<unsigned char>(text[i + k]) & 0xc0u) != 0x80u) return 1;
    }
    return len;
}

} // namespace

void SymbolSet::build_index() {
    for (int& v : index_) v = -1;
    for (std::size_t i = 0; i < chars_.size(); ++i) {
        unsigned char u = static_cast<unsigned char>(chars_[i]);
        if (u >= 128) throw UsageError("symbol set: non-ASCII symbol");
        if (index_[u] != -1)
            throw UsageError(std::string("symbol set: duplicate symbol '") + chars_[i] + "'");
        index_[u] = int(i);
    }
    space_id_ = index_[static_cast<unsigned char>(' ')];
    if (space_id_ < 0) throw UsageError("symbol set: must contain the space character");
}

SymbolSet SymbolSet::standard() {
    return from_chars("abcdefghijklmnopqrstuvwxyz .,#'", true);
}

SymbolSet SymbolSet::from_chars(const std::string& chars, bool digit_fold) {
    SymbolSet s;
    s.chars_ = chars;
    s.digit_fold_ = digit_fold;
    s.build_index();
    if (digit_fold && s.index_[static_cast<unsigned char>('#')] < 0)
        throw UsageError("symbol set: digit folding requires '#'");
    return s;
}

SymbolSet SymbolSet::from_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open symbol config: " + path);
    std::string chars;
    bool fold = false;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue; // a space symbol is a line with one ' '
        if (line == "\\d") {
            fold = true;
            continue;
        }
        if (line.size() != 1)
            throw UsageError("symbol config: expected one character per line, got \"" + line + "\"");
        chars.push_back(line[0]);
    }
    if (fold && chars.find('#') == std::string::npos) chars.push_back('#');
    return from_chars(chars, fold);
}

EncodedSegment encode_text(const std::string& text, const SymbolSet& s) {
    EncodedSegment seg;
    seg.ids.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        const std::size_t len = codepoint_len(text, i);
        int id = s.space_id();
        if (len == 1) {
            char c = text[i];
            if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
            if (s.digit_fold() && c >= '0' && c <= '9') c = '#';
            const int mapped = s.id_of(c);
            if (mapped >= 0) id = mapped;
        }
        seg.ids.push_back(id);
        i += len;
    }
    if (seg.ids.empty()) throw EmptySegment("encode_text: empty result");
    return seg;
}

std::string decode_segment(const EncodedSegment& seg, const SymbolSet& s) {
    std::string out;
    out.reserve(seg.ids.size());
    for (std::int32_t id : seg.ids) {
        if (id < 0 || id >= s.size())
            throw UsageError("decode_segment: id " + std::to_string(id) + " out of range");
        out.push_back(s.symbol(id));
    }
    return out;
}

} // namespace memsig
