#include "core/signature.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "core/error.hpp"

namespace memsig {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string escape_symbol(char c) {
    if (c == ' ') return "\"<sp>\"";
    if (c == ',') return "\"<comma>\"";
    return std::string(1, c);
}

char unescape_symbol(const std::string& tok) {
    if (tok == "\"<sp>\"") return ' ';
    if (tok == "\"<comma>\"") return ',';
    if (tok.size() == 1) return tok[0];
    throw UsageError("bad symbol token in csv: " + tok);
}

long long parse_int(const std::string& s, const char* what) {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw UsageError(std::string("bad ") + what + " in csv: " + s);
    return v;
}

double parse_double(const std::string& s, const char* what) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw UsageError(std::string("bad ") + what + " in csv: " + s);
    return v;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out.good()) throw IoError("write failed: " + path);
}

} // namespace

MemorySignature compile_signature(const std::string& symbols,
                                  const std::vector<DeltaEvaluation>& evaluations,
                                  const SignatureMeta& meta) {
    if (symbols.empty()) throw UsageError("signature needs a non-empty symbol axis");
    if (evaluations.empty()) throw IncompleteProbe("no evaluations to compile");
    const std::size_t v = symbols.size();

    int max_delta = 0;
    for (const auto& e : evaluations) {
        if (e.delta < 1) throw UsageError("delta must be >= 1");
        max_delta = std::max(max_delta, e.delta);
    }
    std::vector<bool> seen(std::size_t(max_delta) + 1, false);

    MemorySignature sig;
    sig.symbols = symbols;
    sig.max_delta = max_delta;
    sig.accuracy.assign(std::size_t(max_delta) * v, kNaN);
    sig.support.assign(std::size_t(max_delta) * v, 0);
    sig.meta = meta;

    for (const auto& e : evaluations) {
        if (seen[std::size_t(e.delta)])
            throw UsageError("duplicate delta " + std::to_string(e.delta));
        seen[std::size_t(e.delta)] = true;
        if (e.per_symbol.size() != v || e.support.size() != v)
            throw ShapeError("evaluation at delta " + std::to_string(e.delta) + " covers " +
                             std::to_string(e.per_symbol.size()) + " symbols, axis has " +
                             std::to_string(v));
        for (std::size_t s = 0; s < v; ++s) {
            const double acc = e.per_symbol[s];
            const std::int64_t sup = e.support[s];
            if (sup < 0) throw UsageError("negative support");
            if (std::isnan(acc) != (sup == 0))
                throw UsageError("absent accuracy and zero support must coincide (delta " +
                                 std::to_string(e.delta) + ")");
            if (!std::isnan(acc) && !(acc >= 0.0 && acc <= 1.0))
                throw UsageError("accuracy out of [0,1]: " + std::to_string(acc));
            const std::size_t at = std::size_t(e.delta - 1) * v + s;
            sig.accuracy[at] = acc;
            sig.support[at] = sup;
        }
    }
    for (int d = 1; d <= max_delta; ++d)
        if (!seen[std::size_t(d)])
            throw IncompleteProbe("missing delta " + std::to_string(d) + " of " +
                                  std::to_string(max_delta));
    return sig;
}

MemorySignature signature_from_probe(const ProbeRun& run, int layer, SignatureMeta meta) {
    std::vector<DeltaEvaluation> evals;
    for (const auto& cell : run.cells)
        if (cell.layer == layer)
            evals.push_back({cell.delta, cell.eval.per_symbol, cell.eval.support});
    if (evals.empty()) throw UsageError("layer " + std::to_string(layer) + " was not probed");
    meta.layer = layer;
    meta.choice = run.choice;
    const SymbolSet symbols = run.symbols;
    return compile_signature(symbols.chars(), evals, meta);
}

std::vector<double> marginal_recall(const MemorySignature& sig) {
    std::vector<double> out(std::size_t(sig.max_delta), kNaN);
    for (int d = 1; d <= sig.max_delta; ++d) {
        double num = 0.0;
        std::int64_t den = 0;
        for (int s = 0; s < sig.vocab(); ++s) {
            const double acc = sig.acc_at(d, s);
            if (std::isnan(acc)) continue;
            num += acc * double(sig.support_at(d, s));
            den += sig.support_at(d, s);
        }
        if (den > 0) out[std::size_t(d - 1)] = num / double(den);
    }
    return out;
}

std::vector<double> marginal_recall_unweighted(const MemorySignature& sig) {
    std::vector<double> out(std::size_t(sig.max_delta), kNaN);
    for (int d = 1; d <= sig.max_delta; ++d) {
        double num = 0.0;
        int den = 0;
        for (int s = 0; s < sig.vocab(); ++s) {
            const double acc = sig.acc_at(d, s);
            if (std::isnan(acc)) continue;
            num += acc;
            den += 1;
        }
        if (den > 0) out[std::size_t(d - 1)] = num / double(den);
    }
    return out;
}

SignatureDiff diff_signatures(const MemorySignature& a, const MemorySignature& b) {
    if (a.symbols != b.symbols)
        throw IncompatibleSignatures("signatures cover different symbol axes");
    if (a.max_delta != b.max_delta)
        throw IncompatibleSignatures("signatures cover different delta ranges: " +
                                     std::to_string(a.max_delta) + " vs " +
                                     std::to_string(b.max_delta));
    SignatureDiff d;
    d.symbols = a.symbols;
    d.max_delta = a.max_delta;
    d.a = a.accuracy;
    d.b = b.accuracy;
    d.meta_a = a.meta;
    d.meta_b = b.meta;
    d.diff.assign(a.accuracy.size(), kNaN);
    for (std::size_t i = 0; i < a.accuracy.size(); ++i)
        if (!std::isnan(a.accuracy[i]) && !std::isnan(b.accuracy[i]))
            d.diff[i] = a.accuracy[i] - b.accuracy[i];
    return d;
}

double diff_l1(const SignatureDiff& d) {
    double sum = 0.0;
    for (double x : d.diff)
        if (!std::isnan(x)) sum += std::abs(x);
    return sum;
}

// ---- CSV -------------------------------------------------------------------

std::string signature_csv(const MemorySignature& sig) {
    std::string out = "delta,symbol,accuracy,support\n";
    for (int d = 1; d <= sig.max_delta; ++d)
        for (int s = 0; s < sig.vocab(); ++s) {
            const double acc = sig.acc_at(d, s);
            if (std::isnan(acc)) continue; // absent cells are omitted
            out += std::to_string(d);
            out += ',';
            out += escape_symbol(sig.symbols[std::size_t(s)]);
            out += ',';
            out += fmt6(acc);
            out += ',';
            out += std::to_string(sig.support_at(d, s));
            out += '\n';
        }
    return out;
}

std::string diff_csv(const SignatureDiff& d) {
    std::string out = "delta,symbol,accuracy_a,accuracy_b,diff\n";
    for (int delta = 1; delta <= d.max_delta; ++delta)
        for (int s = 0; s < d.vocab(); ++s) {
            const std::size_t at = d.cell(delta, s);
            if (std::isnan(d.diff[at])) continue;
            out += std::to_string(delta);
            out += ',';
            out += escape_symbol(d.symbols[std::size_t(s)]);
            out += ',';
            out += fmt6(d.a[at]);
            out += ',';
            out += fmt6(d.b[at]);
            out += ',';
            out += fmt6(d.diff[at]);
            out += '\n';
        }
    return out;
}

MemorySignature parse_signature_csv(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t nl = text.find('\n', at);
        if (nl == std::string::npos) nl = text.size();
        lines.push_back(text.substr(at, nl - at));
        at = nl + 1;
    }
    if (lines.empty() || lines[0] != "delta,symbol,accuracy,support")
        throw UsageError("bad csv header; expected delta,symbol,accuracy,support");

    struct Row {
        int delta;
        char sym;
        double acc;
        std::int64_t sup;
    };
    std::vector<Row> rows;
    std::string axis;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            std::size_t comma = lines[i].find(',', start);
            // The escaped-comma token contains no raw comma, so a plain
            // split is exact.
            if (comma == std::string::npos) {
                fields.push_back(lines[i].substr(start));
                break;
            }
            fields.push_back(lines[i].substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 4)
            throw UsageError("csv row " + std::to_string(i) + " has " +
                             std::to_string(fields.size()) + " fields, expected 4");
        Row row;
        row.delta = int(parse_int(fields[0], "delta"));
        row.sym = unescape_symbol(fields[1]);
        row.acc = parse_double(fields[2], "accuracy");
        row.sup = parse_int(fields[3], "support");
        if (row.delta < 1) throw UsageError("csv delta must be >= 1");
        if (row.sup < 1) throw UsageError("csv rows must carry positive support");
        if (!(row.acc >= 0.0 && row.acc <= 1.0)) throw UsageError("csv accuracy out of [0,1]");
        if (axis.find(row.sym) == std::string::npos) axis += row.sym;
        rows.push_back(row);
    }
    if (rows.empty()) throw IncompleteProbe("csv has no data rows");

    // Only deltas with rows become evaluations: a delta missing from the
    // file must trip the completeness check, not be fabricated as absent.
    std::map<int, DeltaEvaluation> by_delta;
    for (const auto& r : rows) {
        auto& e = by_delta[r.delta];
        if (e.per_symbol.empty()) {
            e.delta = r.delta;
            e.per_symbol.assign(axis.size(), kNaN);
            e.support.assign(axis.size(), 0);
        }
        const std::size_t s = axis.find(r.sym);
        if (!std::isnan(e.per_symbol[s]))
            throw UsageError("duplicate csv cell at delta " + std::to_string(r.delta));
        e.per_symbol[s] = r.acc;
        e.support[s] = r.sup;
    }
    std::vector<DeltaEvaluation> evals;
    for (auto& [d, e] : by_delta) evals.push_back(std::move(e));
    return compile_signature(axis, evals, SignatureMeta{});
}

SignatureDiff parse_diff_csv(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t nl = text.find('\n', at);
        if (nl == std::string::npos) nl = text.size();
        lines.push_back(text.substr(at, nl - at));
        at = nl + 1;
    }
    if (lines.empty() || lines[0] != "delta,symbol,accuracy_a,accuracy_b,diff")
        throw UsageError("bad diff csv header; expected delta,symbol,accuracy_a,accuracy_b,diff");

    struct Row {
        int delta;
        char sym;
        double a, b, d;
    };
    std::vector<Row> rows;
    std::string axis;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            std::size_t comma = lines[i].find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(lines[i].substr(start));
                break;
            }
            fields.push_back(lines[i].substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 5)
            throw UsageError("diff csv row " + std::to_string(i) + " has " +
                             std::to_string(fields.size()) + " fields, expected 5");
        Row row;
        row.delta = int(parse_int(fields[0], "delta"));
        row.sym = unescape_symbol(fields[1]);
        row.a = parse_double(fields[2], "accuracy_a");
        row.b = parse_double(fields[3], "accuracy_b");
        row.d = parse_double(fields[4], "diff");
        if (row.delta < 1) throw UsageError("diff csv delta must be >= 1");
        if (!(row.a >= 0.0 && row.a <= 1.0) || !(row.b >= 0.0 && row.b <= 1.0))
            throw UsageError("diff csv accuracy out of [0,1]");
        if (std::abs((row.a - row.b) - row.d) > 1e-9)
            throw UsageError("diff csv row " + std::to_string(i) +
                             " is inconsistent: diff != accuracy_a - accuracy_b");
        if (axis.find(row.sym) == std::string::npos) axis += row.sym;
        rows.push_back(row);
    }
    if (rows.empty()) throw IncompleteProbe("diff csv has no data rows");

    SignatureDiff d;
    d.symbols = axis;
    for (const auto& r : rows) d.max_delta = std::max(d.max_delta, r.delta);
    const std::size_t cells = std::size_t(d.max_delta) * axis.size();
    d.a.assign(cells, kNaN);
    d.b.assign(cells, kNaN);
    d.diff.assign(cells, kNaN);
    for (const auto& r : rows) {
        const std::size_t at_cell = d.cell(r.delta, int(axis.find(r.sym)));
        if (!std::isnan(d.diff[at_cell]))
            throw UsageError("duplicate diff csv cell at delta " + std::to_string(r.delta));
        d.a[at_cell] = r.a;
        d.b[at_cell] = r.b;
        d.diff[at_cell] = r.d;
    }
    return d;
}

void export_csv(const MemorySignature& sig, const std::string& path) {
    write_file(path, signature_csv(sig));
}

void export_csv(const SignatureDiff& d, const std::string& path) {
    write_file(path, diff_csv(d));
}

// ---- SVG heatmaps ----------------------------------------------------------

const char* palette_name(Palette p) {
    switch (p) {
    case Palette::purple: return "purple";
    case Palette::green: return "green";
    case Palette::diverging: return "diverging";
    }
    throw UsageError("unknown palette");
}

Palette palette_from_name(const std::string& name) {
    if (name == "purple") return Palette::purple;
    if (name == "green") return Palette::green;
    if (name == "diverging") return Palette::diverging;
    throw UsageError("unknown palette: " + name + " (use purple, green or diverging)");
}

namespace {

struct Rgb {
    int r, g, b;
};

Rgb mix(Rgb lo, Rgb hi, double t) {
    auto ch = [&](int a, int b) { return int(std::lround(double(a) + (double(b) - a) * t)); };
    return {ch(lo.r, hi.r), ch(lo.g, hi.g), ch(lo.b, hi.b)};
}

std::string hex(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
    return buf;
}

// Sequential ramps run 0 -> 1; the diverging ramp runs -1 -> +1 through a
// neutral midpoint (positive = red, negative = blue).
std::string heat_color(double v, Palette palette) {
    switch (palette) {
    case Palette::purple: return hex(mix({255, 255, 255}, {84, 39, 143}, v));
    case Palette::green: return hex(mix({0, 68, 27}, {237, 248, 233}, v));
    case Palette::diverging:
        if (v >= 0.0) return hex(mix({247, 247, 247}, {178, 24, 43}, v));
        return hex(mix({247, 247, 247}, {33, 102, 172}, -v));
    }
    throw UsageError("unknown palette");
}

std::string xml_symbol(char c) {
    if (c == ' ') return "\xe2\x90\xa3"; // open-box glyph, keeps the cell visible
    if (c == '&') return "&amp;";
    if (c == '<') return "&lt;";
    if (c == '>') return "&gt;";
    return std::string(1, c);
}

std::string svg_heatmap(const std::string& symbols, int max_delta,
                        std::span<const double> values, Palette palette,
                        const std::string& title, const std::string& tick_top,
                        const std::string& tick_mid, const std::string& tick_bottom) {
    const int v = int(symbols.size());
    const int cell = 26;
    const int left = 52;
    const int grid_top = 34;
    const int grid_w = v * cell;
    const int grid_h = max_delta * cell;
    const int bar_h = std::max(grid_h, 52);
    const int legend_x = left + grid_w + 18;
    const int bar_w = 14;
    const int width = legend_x + bar_w + 64;
    const int height = std::max(grid_top + grid_h + 44, grid_top + bar_h + 72);

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\">\n";
    s += "<defs>\n<pattern id=\"hatch\" patternUnits=\"userSpaceOnUse\" width=\"6\" "
         "height=\"6\">\n<rect width=\"6\" height=\"6\" fill=\"#e0e0e0\"/>\n"
         "<path d=\"M0 6 L6 0\" stroke=\"#9e9e9e\" stroke-width=\"1\"/>\n</pattern>\n</defs>\n";
    s += "<rect width=\"" + std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" fill=\"#ffffff\"/>\n";
    s += "<text x=\"" + std::to_string(left) + "\" y=\"20\" font-family=\"monospace\" "
         "font-size=\"13\" fill=\"#333333\">" + title + "</text>\n";

    for (int d = 1; d <= max_delta; ++d)
        for (int sym = 0; sym < v; ++sym) {
            const double val = values[std::size_t(d - 1) * std::size_t(v) + std::size_t(sym)];
            const std::string fill = std::isnan(val) ? "url(#hatch)" : heat_color(val, palette);
            s += "<rect x=\"" + std::to_string(left + sym * cell) + "\" y=\"" +
                 std::to_string(grid_top + (d - 1) * cell) + "\" width=\"" + std::to_string(cell) +
                 "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill +
                 "\" stroke=\"#ffffff\" stroke-width=\"1\"/>\n";
        }

    for (int d = 1; d <= max_delta; ++d)
        s += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" +
             std::to_string(grid_top + (d - 1) * cell + cell / 2 + 4) +
             "\" font-family=\"monospace\" font-size=\"12\" fill=\"#333333\" "
             "text-anchor=\"end\">" + std::to_string(d) + "</text>\n";
    for (int sym = 0; sym < v; ++sym)
        s += "<text x=\"" + std::to_string(left + sym * cell + cell / 2) + "\" y=\"" +
             std::to_string(grid_top + grid_h + 16) +
             "\" font-family=\"monospace\" font-size=\"12\" fill=\"#333333\" "
             "text-anchor=\"middle\">" + xml_symbol(symbols[std::size_t(sym)]) + "</text>\n";
    s += "<text x=\"" + std::to_string(left + grid_w / 2) + "\" y=\"" +
         std::to_string(grid_top + grid_h + 34) +
         "\" font-family=\"monospace\" font-size=\"12\" fill=\"#333333\" "
         "text-anchor=\"middle\">symbol</text>\n";
    s += "<text transform=\"rotate(-90 14 " + std::to_string(grid_top + grid_h / 2) + ")\" x=\"14\" y=\"" +
         std::to_string(grid_top + grid_h / 2) +
         "\" font-family=\"monospace\" font-size=\"12\" fill=\"#333333\" "
         "text-anchor=\"middle\">delta</text>\n";

    // Color-scale legend: 2px strips from the top (max) to the bottom (min).
    const bool diverging = palette == Palette::diverging;
    for (int i = 0; i < bar_h / 2; ++i) {
        const double frac = (double(i) + 0.5) / (double(bar_h) / 2.0);
        const double val = diverging ? 1.0 - 2.0 * frac : 1.0 - frac;
        s += "<rect x=\"" + std::to_string(legend_x) + "\" y=\"" +
             std::to_string(grid_top + i * 2) + "\" width=\"" + std::to_string(bar_w) +
             "\" height=\"2\" fill=\"" + heat_color(val, palette) + "\"/>\n";
    }
    const int tick_x = legend_x + bar_w + 5;
    s += "<text x=\"" + std::to_string(tick_x) + "\" y=\"" + std::to_string(grid_top + 5) +
         "\" font-family=\"monospace\" font-size=\"11\" fill=\"#333333\">" + tick_top +
         "</text>\n";
    s += "<text x=\"" + std::to_string(tick_x) + "\" y=\"" + std::to_string(grid_top + bar_h / 2 + 4) +
         "\" font-family=\"monospace\" font-size=\"11\" fill=\"#333333\">" + tick_mid +
         "</text>\n";
    s += "<text x=\"" + std::to_string(tick_x) + "\" y=\"" + std::to_string(grid_top + bar_h + 3) +
         "\" font-family=\"monospace\" font-size=\"11\" fill=\"#333333\">" + tick_bottom +
         "</text>\n";
    s += "<rect x=\"" + std::to_string(legend_x) + "\" y=\"" +
         std::to_string(grid_top + bar_h + 16) + "\" width=\"14\" height=\"14\" "
         "fill=\"url(#hatch)\" stroke=\"#bbbbbb\" stroke-width=\"1\"/>\n";
    s += "<text x=\"" + std::to_string(tick_x) + "\" y=\"" +
         std::to_string(grid_top + bar_h + 27) +
         "\" font-family=\"monospace\" font-size=\"11\" fill=\"#333333\">absent</text>\n";
    s += "</svg>\n";
    return s;
}

std::string describe(const SignatureMeta& meta, const char* fallback) {
    std::string name = meta.model.empty() ? fallback : meta.model;
    name += " layer " + std::to_string(meta.layer);
    name += " ";
    name += state_choice_name(meta.choice);
    return name;
}

} // namespace

std::string render_heatmap_svg(const MemorySignature& sig, Palette palette) {
    if (palette == Palette::diverging)
        throw UsageError("the diverging palette is reserved for signature diffs");
    return svg_heatmap(sig.symbols, sig.max_delta, sig.accuracy, palette,
                       describe(sig.meta, "signature"), "1.0", "0.5", "0.0");
}

std::string render_heatmap_svg(const SignatureDiff& d) {
    return svg_heatmap(d.symbols, d.max_delta, d.diff, Palette::diverging,
                       describe(d.meta_a, "A") + " minus " + describe(d.meta_b, "B"), "+1.0",
                       "0.0", "-1.0");
}

void render_heatmap(const MemorySignature& sig, const std::string& path, Palette palette) {
    write_file(path, render_heatmap_svg(sig, palette));
}

void render_heatmap(const SignatureDiff& d, const std::string& path) {
    write_file(path, render_heatmap_svg(d));
}

} // namespace memsig
