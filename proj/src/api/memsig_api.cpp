#include "memsig/memsig.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "core/checkpoint.hpp"
#include "core/corpus.hpp"
#include "core/corpus_io.hpp"
#include "core/error.hpp"
#include "core/eval_io.hpp"
#include "core/ngram.hpp"
#include "core/probe.hpp"
#include "core/rng.hpp"
#include "core/rnn.hpp"
#include "core/signature.hpp"
#include "core/train.hpp"

struct memsig_corpus {
    memsig::CorpusSplit split;
};
struct memsig_checkpoint {
    memsig::Checkpoint ckpt;
};
struct memsig_ngram {
    memsig::NgramLm model;
};
struct memsig_probe_run {
    memsig::ProbeRun run;
    std::string model_desc;
    std::uint64_t corpus_id = 0;
    std::uint64_t seed = 0;
};
struct memsig_signature {
    memsig::MemorySignature sig;
};
struct memsig_diff {
    memsig::SignatureDiff diff;
};

namespace {

using nlohmann::json;

thread_local std::string g_error;

memsig_status status_of(memsig::ErrorCategory cat) {
    switch (cat) {
        case memsig::ErrorCategory::usage: return MEMSIG_ERR_USAGE;
        case memsig::ErrorCategory::data: return MEMSIG_ERR_DATA;
        case memsig::ErrorCategory::numeric: return MEMSIG_ERR_NUMERIC;
        case memsig::ErrorCategory::io: return MEMSIG_ERR_IO;
        case memsig::ErrorCategory::format: return MEMSIG_ERR_FORMAT;
    }
    return MEMSIG_ERR_INTERNAL;
}

template <class Fn>
memsig_status wrap(Fn&& fn) {
    try {
        fn();
        g_error.clear();
        return MEMSIG_OK;
    } catch (const memsig::Error& e) {
        g_error = e.what();
        return status_of(e.category());
    } catch (const std::exception& e) {
        g_error = e.what();
        return MEMSIG_ERR_INTERNAL;
    } catch (...) {
        g_error = "unknown failure";
        return MEMSIG_ERR_INTERNAL;
    }
}

void require(const void* p, const char* name) {
    if (!p) throw memsig::UsageError(std::string("null ") + name);
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw memsig::IoError("cannot read " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

memsig::TrainConfig to_train(const memsig_train_config& c) {
    memsig::TrainConfig out;
    out.adam.lr = c.lr;
    out.adam.beta1 = c.beta1;
    out.adam.beta2 = c.beta2;
    out.adam.eps = c.eps;
    out.batch = c.batch;
    out.window = c.window;
    out.max_epochs = c.max_epochs;
    out.patience = c.patience;
    out.keep_state = c.keep_state;
    out.keep_hidden = c.keep_hidden;
    out.clip_norm = c.clip_norm;
    out.seed = c.seed;
    return out;
}

memsig::ProbeConfig to_probe(const memsig_probe_config& c) {
    memsig::ProbeConfig out;
    out.max_delta = c.max_delta;
    if (c.layers) {
        if (c.layer_count < 1)
            throw memsig::UsageError("layer_count must be positive when layers is set");
        out.layers.assign(c.layers, c.layers + c.layer_count);
    } else if (c.layer_count != 0) {
        throw memsig::UsageError("layer_count without a layers array");
    }
    out.choice = c.use_cell_state ? memsig::StateChoice::cell : memsig::StateChoice::output;
    out.depth = c.decoder_depth;
    out.sweep = c.sweep != 0;
    if (c.keep_grid) {
        if (c.keep_grid_len < 1)
            throw memsig::UsageError("keep_grid_len must be positive when keep_grid is set");
        out.keep_grid.assign(c.keep_grid, c.keep_grid + c.keep_grid_len);
    } else if (c.keep_grid_len != 0) {
        throw memsig::UsageError("keep_grid_len without a keep_grid array");
    }
    out.train = to_train(c.train);
    out.max_positions = c.max_positions;
    out.jobs = c.jobs;
    return out;
}

std::string lm_desc(const memsig::CharLm<float>& m) {
    return std::string(memsig::cell_kind_name(m.kind)) + " [" +
           std::to_string(m.layer_count()) + "," + std::to_string(m.state) + "]";
}

memsig::Palette sequential_palette(const char* name) {
    const memsig::Palette p =
        memsig::palette_from_name(name ? name : "purple");
    if (p == memsig::Palette::diverging)
        throw memsig::UsageError("signatures take a sequential palette (purple|green)");
    return p;
}

} // namespace

extern "C" {

const char* memsig_version(void) { return "0.1.0"; }

const char* memsig_last_error(void) { return g_error.c_str(); }

void memsig_string_free(char* s) { std::free(s); }

memsig_status memsig_hash_file(const char* path, uint64_t* out) {
    return wrap([&] {
        require(path, "path");
        require(out, "out");
        const std::string bytes = read_bytes(path);
        *out = memsig::fnv1a(bytes.data(), bytes.size());
    });
}

/* ---- corpus ------------------------------------------------------------ */

memsig_status memsig_corpus_prepare(const char* text_path, const char* alphabet,
                                    int32_t digit_fold, double train_ratio, double dev_ratio,
                                    double eval_ratio, uint64_t seed, memsig_corpus** out) {
    return wrap([&] {
        require(text_path, "text_path");
        require(out, "out");
        const memsig::SymbolSet symbols =
            alphabet ? memsig::SymbolSet::from_chars(alphabet, digit_fold != 0)
                     : memsig::SymbolSet::standard();
        auto corpus =
            std::make_shared<memsig::Corpus>(memsig::load_corpus_file(text_path, symbols));
        const memsig::SplitRatios ratios{train_ratio, dev_ratio, eval_ratio};
        *out = new memsig_corpus{memsig::split_corpus(std::move(corpus), ratios, seed)};
    });
}

memsig_status memsig_corpus_save(const memsig_corpus* c, const char* path) {
    return wrap([&] {
        require(c, "corpus");
        require(path, "path");
        memsig::save_corpus(c->split, path);
    });
}

memsig_status memsig_corpus_load(const char* path, memsig_corpus** out) {
    return wrap([&] {
        require(path, "path");
        require(out, "out");
        *out = new memsig_corpus{memsig::load_corpus(path)};
    });
}

void memsig_corpus_free(memsig_corpus* c) { delete c; }

memsig_status memsig_corpus_content_id(const memsig_corpus* c, uint64_t* out) {
    return wrap([&] {
        require(c, "corpus");
        require(out, "out");
        *out = c->split.corpus->content_id();
    });
}

memsig_status memsig_corpus_stats_json(const memsig_corpus* c, char** out) {
    return wrap([&] {
        require(c, "corpus");
        require(out, "out");
        json doc;
        doc["alphabet"] = c->split.symbols().chars();
        doc["digit_fold"] = c->split.symbols().digit_fold();
        doc["vocab"] = c->split.symbols().size();
        doc["seed"] = c->split.seed;
        doc["content_id"] = c->split.corpus->content_id();
        json segments, symbols;
        for (const char* part : {"train", "dev", "eval"}) {
            const auto& idx = c->split.part(part);
            std::size_t chars = 0;
            for (auto i : idx) chars += c->split.corpus->segments[i].ids.size();
            segments[part] = idx.size();
            symbols[part] = chars;
        }
        doc["segments"] = std::move(segments);
        doc["symbols"] = std::move(symbols);
        *out = dup_string(doc.dump());
    });
}

memsig_status memsig_corpus_sample_train(const memsig_corpus* c, double fraction, uint64_t seed,
                                         memsig_corpus** out) {
    return wrap([&] {
        require(c, "corpus");
        require(out, "out");
        *out = new memsig_corpus{memsig::sample_train_fraction(c->split, fraction, seed)};
    });
}

/* ---- recurrent language models ------------------------------------------ */

void memsig_train_config_init(memsig_train_config* cfg) {
    if (!cfg) return;
    const memsig::TrainConfig d;
    cfg->lr = d.adam.lr;
    cfg->beta1 = d.adam.beta1;
    cfg->beta2 = d.adam.beta2;
    cfg->eps = d.adam.eps;
    cfg->batch = d.batch;
    cfg->window = d.window;
    cfg->max_epochs = d.max_epochs;
    cfg->patience = d.patience;
    cfg->keep_state = d.keep_state;
    cfg->keep_hidden = d.keep_hidden;
    cfg->clip_norm = d.clip_norm;
    cfg->seed = d.seed;
}

memsig_status memsig_lm_train(const memsig_corpus* corpus, const char* arch, int32_t layers,
                              int32_t state_size, const memsig_train_config* cfg,
                              memsig_checkpoint** out) {
    return wrap([&] {
        require(corpus, "corpus");
        require(arch, "arch");
        require(cfg, "cfg");
        require(out, "out");
        const memsig::CellKind kind = memsig::cell_kind_from_name(arch);
        auto model = memsig::make_char_lm<float>(corpus->split.symbols(), kind, layers,
                                                 state_size, cfg->seed);
        if (kind == memsig::CellKind::lstm_factorized)
            memsig::set_lambda(model, memsig::bigram_frequencies(corpus->split, "train"));
        *out = new memsig_checkpoint{memsig::train_lm(model, corpus->split, to_train(*cfg))};
    });
}

memsig_status memsig_lm_retrain(const memsig_checkpoint* base, const memsig_corpus* corpus,
                                const memsig_train_config* cfg, memsig_checkpoint** out) {
    return wrap([&] {
        require(base, "base checkpoint");
        require(corpus, "corpus");
        require(cfg, "cfg");
        require(out, "out");
        memsig::Checkpoint start = base->ckpt;
        // Lambda carries input-domain bigram statistics; retraining targets a
        // new domain, so it is re-derived before the weights move.
        if (start.model.kind == memsig::CellKind::lstm_factorized &&
            start.model.symbols == corpus->split.symbols())
            memsig::set_lambda(start.model, memsig::bigram_frequencies(corpus->split, "train"));
        *out = new memsig_checkpoint{
            memsig::retrain_lm(start, corpus->split, to_train(*cfg))};
    });
}

memsig_status memsig_lm_eval(const memsig_checkpoint* ckpt, const memsig_corpus* corpus,
                             const char* part, double* perplexity) {
    return wrap([&] {
        require(ckpt, "checkpoint");
        require(corpus, "corpus");
        require(part, "part");
        require(perplexity, "perplexity");
        *perplexity = memsig::perplexity(ckpt->ckpt.model, corpus->split, part);
    });
}

memsig_status memsig_checkpoint_save(const memsig_checkpoint* ckpt, const char* path) {
    return wrap([&] {
        require(ckpt, "checkpoint");
        require(path, "path");
        memsig::save_checkpoint(ckpt->ckpt, path);
    });
}

memsig_status memsig_checkpoint_load(const char* path, memsig_checkpoint** out) {
    return wrap([&] {
        require(path, "path");
        require(out, "out");
        *out = new memsig_checkpoint{memsig::load_checkpoint(path)};
    });
}

void memsig_checkpoint_free(memsig_checkpoint* ckpt) { delete ckpt; }

memsig_status memsig_checkpoint_param_hash(const memsig_checkpoint* ckpt, uint64_t* out) {
    return wrap([&] {
        require(ckpt, "checkpoint");
        require(out, "out");
        *out = memsig::lm_param_hash(ckpt->ckpt.model);
    });
}

memsig_status memsig_checkpoint_describe_json(const memsig_checkpoint* ckpt, char** out) {
    return wrap([&] {
        require(ckpt, "checkpoint");
        require(out, "out");
        const auto& m = ckpt->ckpt.model;
        json doc;
        doc["arch"] = memsig::cell_kind_name(m.kind);
        doc["layers"] = m.layer_count();
        doc["state"] = m.state;
        doc["embed"] = m.embed;
        doc["vocab"] = m.symbols.size();
        doc["alphabet"] = m.symbols.chars();
        doc["digit_fold"] = m.symbols.digit_fold();
        doc["params"] = memsig::lm_param_count(m);
        doc["param_hash"] = memsig::lm_param_hash(m);
        doc["epochs"] = ckpt->ckpt.history.epochs.size();
        doc["best_epoch"] = ckpt->ckpt.history.best_epoch;
        if (ckpt->ckpt.history.best_epoch >= 0)
            doc["best_dev_ppx"] =
                ckpt->ckpt.history.epochs[std::size_t(ckpt->ckpt.history.best_epoch)].dev_ppx;
        else
            doc["best_dev_ppx"] = nullptr;
        doc["optimizer"] = ckpt->ckpt.optimizer.has_value();
        *out = dup_string(doc.dump());
    });
}

/* ---- n-gram language models ---------------------------------------------- */

memsig_status memsig_ngram_train(const memsig_corpus* corpus, int32_t order, double add_k,
                                 memsig_ngram** out) {
    return wrap([&] {
        require(corpus, "corpus");
        require(out, "out");
        *out = new memsig_ngram{memsig::train_ngram(corpus->split, order, add_k)};
    });
}

memsig_status memsig_ngram_eval(const memsig_ngram* m, const memsig_corpus* corpus,
                                const char* part, double* perplexity) {
    return wrap([&] {
        require(m, "ngram");
        require(corpus, "corpus");
        require(part, "part");
        require(perplexity, "perplexity");
        *perplexity = memsig::perplexity(m->model, corpus->split, part);
    });
}

memsig_status memsig_ngram_save(const memsig_ngram* m, const char* path) {
    return wrap([&] {
        require(m, "ngram");
        require(path, "path");
        memsig::save_ngram(m->model, path);
    });
}

memsig_status memsig_ngram_load(const char* path, memsig_ngram** out) {
    return wrap([&] {
        require(path, "path");
        require(out, "out");
        *out = new memsig_ngram{memsig::load_ngram(path)};
    });
}

void memsig_ngram_free(memsig_ngram* m) { delete m; }

memsig_status memsig_ngram_describe_json(const memsig_ngram* m, char** out) {
    return wrap([&] {
        require(m, "ngram");
        require(out, "out");
        json doc;
        doc["order"] = m->model.order;
        doc["add_k"] = m->model.add_k;
        doc["vocab"] = m->model.vocab();
        doc["alphabet"] = m->model.symbols.chars();
        doc["digit_fold"] = m->model.symbols.digit_fold();
        doc["pairs"] = m->model.pair_counts.size();
        doc["contexts"] = m->model.ctx_totals.size();
        *out = dup_string(doc.dump());
    });
}

/* ---- recall probes ------------------------------------------------------- */

void memsig_probe_config_init(memsig_probe_config* cfg) {
    if (!cfg) return;
    const memsig::ProbeConfig d;
    cfg->max_delta = d.max_delta;
    cfg->layers = nullptr;
    cfg->layer_count = 0;
    cfg->use_cell_state = d.choice == memsig::StateChoice::cell ? 1 : 0;
    cfg->decoder_depth = d.depth;
    cfg->sweep = d.sweep ? 1 : 0;
    cfg->keep_grid = nullptr;
    cfg->keep_grid_len = 0;
    memsig_train_config_init(&cfg->train);
    cfg->max_positions = d.max_positions;
    cfg->jobs = d.jobs;
}

memsig_status memsig_probe_checkpoint(const memsig_checkpoint* ckpt, const memsig_corpus* corpus,
                                      const memsig_probe_config* cfg, memsig_probe_run** out) {
    return wrap([&] {
        require(ckpt, "checkpoint");
        require(corpus, "corpus");
        require(cfg, "cfg");
        require(out, "out");
        const memsig::ProbeConfig pc = to_probe(*cfg);
        auto run = memsig::probe_model(ckpt->ckpt.model, corpus->split, pc);
        *out = new memsig_probe_run{std::move(run), lm_desc(ckpt->ckpt.model),
                                    corpus->split.corpus->content_id(), pc.train.seed};
    });
}

memsig_status memsig_probe_ngram(const memsig_ngram* m, const memsig_corpus* corpus,
                                 const memsig_probe_config* cfg, memsig_probe_run** out) {
    return wrap([&] {
        require(m, "ngram");
        require(corpus, "corpus");
        require(cfg, "cfg");
        require(out, "out");
        const memsig::ProbeConfig pc = to_probe(*cfg);
        if (pc.choice == memsig::StateChoice::cell)
            throw memsig::UsageError("n-gram state has no cell component");
        const auto train_trace =
            memsig::ngram_state_trace(m->model, corpus->split, "train", pc.max_positions);
        const auto eval_trace =
            memsig::ngram_state_trace(m->model, corpus->split, "eval", pc.max_positions);
        // No kernel to match; the floor is the input-projection analog.
        const std::size_t floors[1] = {std::size_t(train_trace.width) *
                                       std::size_t(m->model.vocab())};
        auto run = memsig::probe_traces(train_trace, eval_trace, floors, pc);
        *out = new memsig_probe_run{std::move(run),
                                    std::to_string(m->model.order) + "-gram",
                                    corpus->split.corpus->content_id(), pc.train.seed};
    });
}

memsig_status memsig_probe_cell_count(const memsig_probe_run* run, int32_t* out) {
    return wrap([&] {
        require(run, "run");
        require(out, "out");
        *out = int32_t(run->run.cells.size());
    });
}

memsig_status memsig_probe_cell_coords(const memsig_probe_run* run, int32_t index, int32_t* delta,
                                       int32_t* layer) {
    return wrap([&] {
        require(run, "run");
        require(delta, "delta");
        require(layer, "layer");
        if (index < 0 || std::size_t(index) >= run->run.cells.size())
            throw memsig::UsageError("cell index out of range");
        *delta = run->run.cells[std::size_t(index)].delta;
        *layer = run->run.cells[std::size_t(index)].layer;
    });
}

memsig_status memsig_probe_cell_json(const memsig_probe_run* run, int32_t index, char** out) {
    return wrap([&] {
        require(run, "run");
        require(out, "out");
        if (index < 0 || std::size_t(index) >= run->run.cells.size())
            throw memsig::UsageError("cell index out of range");
        *out = dup_string(memsig::eval_cell_json(run->run, run->run.cells[std::size_t(index)],
                                                 run->model_desc, run->corpus_id, run->seed));
    });
}

void memsig_probe_run_free(memsig_probe_run* run) { delete run; }

/* ---- signatures ----------------------------------------------------------- */

memsig_status memsig_signature_compile(const char* const* eval_paths, int32_t count,
                                       int32_t layer, memsig_signature** out) {
    return wrap([&] {
        require(eval_paths, "eval_paths");
        require(out, "out");
        if (count < 1) throw memsig::UsageError("need at least one evaluation file");
        std::vector<memsig::EvalFile> cells;
        cells.reserve(std::size_t(count));
        for (int32_t i = 0; i < count; ++i) {
            require(eval_paths[i], "eval path");
            cells.push_back(memsig::parse_eval_cell(read_bytes(eval_paths[i])));
        }
        *out = new memsig_signature{memsig::compile_signature_cells(cells, layer)};
    });
}

memsig_status memsig_signature_save_csv(const memsig_signature* sig, const char* path) {
    return wrap([&] {
        require(sig, "signature");
        require(path, "path");
        memsig::export_csv(sig->sig, path);
    });
}

memsig_status memsig_signature_load_csv(const char* path, memsig_signature** out) {
    return wrap([&] {
        require(path, "path");
        require(out, "out");
        *out = new memsig_signature{memsig::parse_signature_csv(read_bytes(path))};
    });
}

void memsig_signature_free(memsig_signature* sig) { delete sig; }

memsig_status memsig_signature_shape(const memsig_signature* sig, int32_t* max_delta,
                                     int32_t* vocab) {
    return wrap([&] {
        require(sig, "signature");
        require(max_delta, "max_delta");
        require(vocab, "vocab");
        *max_delta = sig->sig.max_delta;
        *vocab = sig->sig.vocab();
    });
}

memsig_status memsig_signature_marginals(const memsig_signature* sig, int32_t unweighted,
                                         double* out, int32_t cap, int32_t* len) {
    return wrap([&] {
        require(sig, "signature");
        require(len, "len");
        *len = sig->sig.max_delta;
        if (!out) {
            if (cap != 0) throw memsig::UsageError("null out with nonzero cap");
            return; // length query
        }
        if (cap < sig->sig.max_delta)
            throw memsig::UsageError("marginal buffer holds " + std::to_string(cap) + ", need " +
                                     std::to_string(sig->sig.max_delta));
        const auto values = unweighted ? memsig::marginal_recall_unweighted(sig->sig)
                                       : memsig::marginal_recall(sig->sig);
        std::memcpy(out, values.data(), values.size() * sizeof(double));
    });
}

memsig_status memsig_signature_render(const memsig_signature* sig, const char* palette,
                                      const char* svg_path) {
    return wrap([&] {
        require(sig, "signature");
        require(svg_path, "svg_path");
        memsig::render_heatmap(sig->sig, svg_path, sequential_palette(palette));
    });
}

/* ---- signature diffs ------------------------------------------------------ */

memsig_status memsig_signature_diff(const memsig_signature* a, const memsig_signature* b,
                                    memsig_diff** out) {
    return wrap([&] {
        require(a, "signature a");
        require(b, "signature b");
        require(out, "out");
        *out = new memsig_diff{memsig::diff_signatures(a->sig, b->sig)};
    });
}

memsig_status memsig_diff_save_csv(const memsig_diff* d, const char* path) {
    return wrap([&] {
        require(d, "diff");
        require(path, "path");
        memsig::export_csv(d->diff, path);
    });
}

memsig_status memsig_diff_load_csv(const char* path, memsig_diff** out) {
    return wrap([&] {
        require(path, "path");
        require(out, "out");
        *out = new memsig_diff{memsig::parse_diff_csv(read_bytes(path))};
    });
}

void memsig_diff_free(memsig_diff* d) { delete d; }

memsig_status memsig_diff_l1(const memsig_diff* d, double* out) {
    return wrap([&] {
        require(d, "diff");
        require(out, "out");
        *out = memsig::diff_l1(d->diff);
    });
}

memsig_status memsig_diff_render(const memsig_diff* d, const char* svg_path) {
    return wrap([&] {
        require(d, "diff");
        require(svg_path, "svg_path");
        memsig::render_heatmap(d->diff, svg_path);
    });
}

memsig_status memsig_render_csv(const char* csv_path, const char* palette,
                                const char* svg_path) {
    return wrap([&] {
        require(csv_path, "csv_path");
        require(svg_path, "svg_path");
        const std::string text = read_bytes(csv_path);
        const std::string head = text.substr(0, text.find('\n'));
        if (head == "delta,symbol,accuracy,support") {
            memsig::render_heatmap(memsig::parse_signature_csv(text), svg_path,
                                   sequential_palette(palette));
        } else if (head == "delta,symbol,accuracy_a,accuracy_b,diff") {
            if (palette && memsig::palette_from_name(palette) != memsig::Palette::diverging)
                throw memsig::UsageError("diffs always render on the diverging palette");
            memsig::render_heatmap(memsig::parse_diff_csv(text), svg_path);
        } else {
            throw memsig::FileFormatError("unrecognized csv header in " +
                                          std::string(csv_path));
        }
    });
}

} // extern "C"
