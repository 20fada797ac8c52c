#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"

namespace memsig {

struct EncodedSegment {
    std::vector<std::int32_t> ids;
};

// The grapheme alphabet. Ids are contiguous from 0 in declaration order.
// ASCII only; encode_text lowercases, folds digits to '#' when enabled,
// and maps anything unknown to the space symbol.
class SymbolSet {
public:
    // "[a-z .,#']" with digit folding.
    static SymbolSet standard();

    // One character per line; the literal token "\d" enables the digit-fold
    // rule (and implies '#'). The set must contain a space.
    static SymbolSet from_config_file(const std::string& path);
    static SymbolSet from_chars(const std::string& chars, bool digit_fold);

    int size() const { return int(chars_.size()); }
    char symbol(int id) const { return chars_[std::size_t(id)]; }
    const std::string& chars() const { return chars_; }
    bool digit_fold() const { return digit_fold_; }
    int space_id() const { return space_id_; }

    // -1 when the character is not in the set.
    int id_of(char c) const {
        unsigned char u = static_cast<unsigned char>(c);
        return u < 128 ? index_[u] : -1;
    }

    bool operator==(const SymbolSet& other) const {
        return chars_ == other.chars_ && digit_fold_ == other.digit_fold_;
    }

private:
    std::string chars_;
    bool digit_fold_ = false;
    int space_id_ = -1;
    int index_[128];

    void build_index();
};

// Lowercase ASCII, fold digits, map unknown codepoints (one per codepoint,
// not per byte) to space. Throws EmptySegment when nothing survives.
EncodedSegment encode_text(const std::string& text, const SymbolSet& s);

std::string decode_segment(const EncodedSegment& seg, const SymbolSet& s);

} // namespace memsig
