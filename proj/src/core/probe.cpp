#include "core/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>

#include "core/adam.hpp"
#include "core/error.hpp"

namespace memsig {

namespace {

std::vector<std::span<float>> decoder_spans(Decoder<float>& d) {
    std::vector<std::span<float>> out;
    visit_params(d, [&](const std::string&, std::span<float> p) { out.push_back(p); });
    return out;
}

std::vector<std::span<const float>> decoder_spans(const Decoder<float>& d) {
    std::vector<std::span<const float>> out;
    visit_params(d, [&](const std::string&, std::span<const float> p) { out.push_back(p); });
    return out;
}

void gather_rows(const MatF& src, std::span<const std::uint32_t> rows, MatF& dst) {
    if (dst.rows != int(rows.size()) || dst.cols != src.cols)
        dst = MatF(int(rows.size()), src.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::memcpy(dst.row(int(i)), src.row(int(rows[i])), sizeof(float) * std::size_t(src.cols));
}

void check_layer(const StateTrace& trace, int layer) {
    if (layer < 0 || layer >= trace.layer_count())
        throw UsageError("layer index " + std::to_string(layer) + " out of range (trace has " +
                         std::to_string(trace.layer_count()) + ")");
}

} // namespace

ProbePairs probe_pairs(const StateTrace& trace, int delta) {
    if (delta < 1) throw UsageError("delta must be >= 1");
    ProbePairs out;
    for (const auto& [begin, end] : trace.segments) {
        for (std::uint32_t t = begin + std::uint32_t(delta); t < end; ++t) {
            out.rows.push_back(t);
            out.targets.push_back(trace.ids[t - std::uint32_t(delta)]);
        }
    }
    if (out.rows.empty())
        throw EmptyDataset("delta " + std::to_string(delta) +
                           " is at least the longest segment; no recall pairs exist");
    return out;
}

ProbeDataset build_probe_dataset(const StateTrace& train_trace, const StateTrace& eval_trace,
                                 int delta, int layer) {
    check_layer(train_trace, layer);
    check_layer(eval_trace, layer);
    if (train_trace.width != eval_trace.width)
        throw ShapeError("train/eval trace widths differ: " + std::to_string(train_trace.width) +
                         " vs " + std::to_string(eval_trace.width));
    if (!(train_trace.symbols == eval_trace.symbols))
        throw UsageError("train and eval traces carry different symbol sets");
    ProbeDataset ds;
    ds.delta = delta;
    ds.layer = layer;
    ds.train_trace = &train_trace;
    ds.eval_trace = &eval_trace;
    ds.train = probe_pairs(train_trace, delta);
    ds.eval = probe_pairs(eval_trace, delta);
    return ds;
}

void validate_decoder_config(const DecoderConfig& cfg) {
    for (int w : cfg.hidden)
        if (w < 1) throw UsageError("decoder hidden widths must be >= 1");
    if (cfg.keep_grid.empty()) throw UsageError("dropout keep grid must be non-empty");
    for (double k : cfg.keep_grid)
        if (!(k > 0.0 && k <= 1.0)) throw UsageError("dropout keep probabilities must be in (0, 1]");
    if (!std::is_sorted(cfg.keep_grid.begin(), cfg.keep_grid.end()))
        throw UsageError("dropout keep grid must be ascending");
    validate_train_config(cfg.train);
}

DecoderEval evaluate_decoder(const Decoder<float>& dec, const StateTrace& trace, int layer,
                             const ProbePairs& pairs) {
    check_layer(trace, layer);
    if (pairs.size() == 0) throw EmptyData("no evaluation pairs");
    if (pairs.targets.size() != pairs.rows.size())
        throw ShapeError("probe pairs: row/target count mismatch");
    const int v = trace.symbols.size();
    if (dec.output != v)
        throw ShapeError("decoder output width " + std::to_string(dec.output) +
                         " != vocab " + std::to_string(v));

    DecoderEval ev;
    ev.total = std::int64_t(pairs.size());
    ev.support.assign(std::size_t(v), 0);
    ev.confusion.assign(std::size_t(v) * std::size_t(v), 0);

    constexpr std::size_t kChunk = 512;
    MatF x;
    DecoderCache<float> cache;
    std::int64_t correct = 0;
    for (std::size_t at = 0; at < pairs.size(); at += kChunk) {
        const std::size_t nb = std::min(kChunk, pairs.size() - at);
        gather_rows(trace.states[std::size_t(layer)],
                    std::span<const std::uint32_t>(pairs.rows).subspan(at, nb), x);
        decoder_forward(dec, x, DropoutMode::off, 1.0, nullptr, cache);
        for (std::size_t i = 0; i < nb; ++i) {
            const std::int32_t truth = pairs.targets[at + i];
            if (truth < 0 || truth >= v)
                throw UsageError("probe target id " + std::to_string(truth) + " out of range");
            const int pred = argmax(cache.logits.row(int(i)), v);
            ev.support[std::size_t(truth)] += 1;
            ev.confusion[std::size_t(truth) * std::size_t(v) + std::size_t(pred)] += 1;
            if (pred == truth) correct += 1;
        }
    }
    ev.accuracy = double(correct) / double(ev.total);
    ev.per_symbol.assign(std::size_t(v), std::numeric_limits<double>::quiet_NaN());
    for (int s = 0; s < v; ++s)
        if (ev.support[std::size_t(s)] > 0)
            ev.per_symbol[std::size_t(s)] =
                double(ev.confusion[std::size_t(s) * std::size_t(v) + std::size_t(s)]) /
                double(ev.support[std::size_t(s)]);
    return ev;
}

TrainedDecoder train_decoder(const ProbeDataset& ds, const DecoderConfig& cfg) {
    validate_decoder_config(cfg);
    if (!ds.train_trace || !ds.eval_trace) throw UsageError("probe dataset has no traces");
    if (ds.train.size() == 0 || ds.eval.size() == 0)
        throw EmptyDataset("probe dataset has an empty partition");
    const StateTrace& traced = *ds.train_trace;
    const int v = traced.symbols.size();
    const int width = traced.width;
    const std::size_t params = decoder_param_count(width, cfg.hidden, v);
    if (params < cfg.param_floor)
        throw UsageError("decoder has " + std::to_string(params) +
                         " parameters, below the floor of " + std::to_string(cfg.param_floor));

    Rng root(cfg.train.seed);
    Decoder<float> dec = make_decoder<float>(width, cfg.hidden, v, root.next_u64());
    Decoder<float> grads = clone_zeroed(dec);
    AdamState opt = adam_init_spans(decoder_spans(std::as_const(dec)));
    Rng shuffle_rng = root.fork(0x73687566);
    Rng drop_rng = root.fork(0x64726f70);
    const DropoutMode mode = cfg.train.keep_hidden < 1.0 ? DropoutMode::train : DropoutMode::off;

    const MatF& states = traced.states[std::size_t(ds.layer)];
    std::vector<std::uint32_t> order(ds.train.size());
    std::iota(order.begin(), order.end(), 0u);

    TrainedDecoder out;
    out.keep_hidden = cfg.train.keep_hidden;
    double best_acc = -1.0;
    int since_best = 0;
    MatF x, dlogits;
    DecoderCache<float> cache;
    std::vector<std::uint32_t> batch_rows(std::size_t(cfg.train.batch));
    std::vector<std::int32_t> batch_targets(std::size_t(cfg.train.batch));

    try {
        for (int epoch = 0; epoch < cfg.train.max_epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            double loss_sum = 0.0;
            std::size_t seen = 0;
            for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg.train.batch)) {
                const std::size_t nb = std::min(std::size_t(cfg.train.batch), order.size() - at);
                batch_rows.resize(nb);
                batch_targets.resize(nb);
                for (std::size_t i = 0; i < nb; ++i) {
                    batch_rows[i] = ds.train.rows[order[at + i]];
                    batch_targets[i] = ds.train.targets[order[at + i]];
                }
                gather_rows(states, batch_rows, x);
                visit_params(grads, [](const std::string&, std::span<float> p) {
                    std::fill(p.begin(), p.end(), 0.0f);
                });
                decoder_forward(dec, x, mode, cfg.train.keep_hidden, &drop_rng, cache);
                const double loss = cross_entropy(cache.logits,
                                                  std::span<const std::int32_t>(batch_targets),
                                                  {}, &dlogits);
                if (!std::isfinite(loss)) throw NumericalError("training loss is not finite");
                decoder_backward(dec, x, cache, dlogits, grads);
                adam_step_spans(decoder_spans(dec), decoder_spans(std::as_const(grads)), opt,
                                cfg.train.adam, cfg.train.clip_norm);
                loss_sum += loss * double(nb);
                seen += nb;
            }
            DecoderEval ev = evaluate_decoder(dec, *ds.eval_trace, ds.layer, ds.eval);
            out.history.push_back({loss_sum / double(seen), ev.accuracy});
            if (ev.accuracy > best_acc) {
                best_acc = ev.accuracy;
                out.decoder = dec;
                out.eval = std::move(ev);
                out.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= cfg.train.patience) {
                break;
            }
        }
    } catch (const NumericalError& e) {
        throw DivergedError(std::string("decoder training diverged: ") + e.what());
    }
    if (out.best_epoch < 0) { // max_epochs == 0: score the initial decoder
        out.decoder = std::move(dec);
        out.eval = evaluate_decoder(out.decoder, *ds.eval_trace, ds.layer, ds.eval);
    }
    return out;
}

DropoutSweep sweep_dropout(const ProbeDataset& ds, const DecoderConfig& cfg) {
    validate_decoder_config(cfg);
    DropoutSweep sweep;
    double best_acc = -1.0;
    for (double keep : cfg.keep_grid) {
        DecoderConfig point = cfg;
        point.train.keep_hidden = keep;
        TrainedDecoder trained = train_decoder(ds, point);
        sweep.table.push_back({keep, trained.eval.accuracy});
        if (trained.eval.accuracy >= best_acc) { // ties go to the higher keep
            best_acc = trained.eval.accuracy;
            sweep.best = std::move(trained);
        }
    }
    return sweep;
}

// ---- full probe runs ------------------------------------------------------

void validate_probe_config(const ProbeConfig& cfg) {
    if (cfg.max_delta < 1) throw UsageError("max delta must be >= 1");
    if (cfg.depth < 1) throw UsageError("decoder depth must be >= 1");
    if (cfg.jobs < 1) throw UsageError("job count must be >= 1");
    DecoderConfig dcfg;
    dcfg.hidden = {1};
    dcfg.keep_grid = cfg.keep_grid;
    dcfg.train = cfg.train;
    validate_decoder_config(dcfg);
}

namespace {

struct ProbeJob {
    std::size_t cell = 0; // index into the (layer, delta) cell list
    int layer = 0;
    int delta = 0;
    double keep = 1.0;
    std::size_t grid_index = 0;
};

} // namespace

ProbeRun probe_traces(const StateTrace& train_trace, const StateTrace& eval_trace,
                      std::span<const std::size_t> layer_floors, const ProbeConfig& cfg) {
    validate_probe_config(cfg);
    std::vector<int> layers = cfg.layers;
    if (layers.empty()) {
        layers.resize(std::size_t(train_trace.layer_count()));
        std::iota(layers.begin(), layers.end(), 0);
    }
    for (int l : layers) check_layer(train_trace, l);
    {
        std::vector<int> seen = layers;
        std::sort(seen.begin(), seen.end());
        if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
            throw UsageError("duplicate layer in probe config");
    }
    if (layer_floors.size() != std::size_t(train_trace.layer_count()))
        throw ShapeError("floor count " + std::to_string(layer_floors.size()) +
                         " != traced layer count " + std::to_string(train_trace.layer_count()));

    const int v = train_trace.symbols.size();
    std::vector<std::vector<int>> hidden_by_layer(std::size_t(train_trace.layer_count()));
    for (int l : layers)
        hidden_by_layer[std::size_t(l)] =
            size_decoder(train_trace.width, layer_floors[std::size_t(l)], v, cfg.depth);

    ProbeRun run;
    run.symbols = train_trace.symbols;
    run.choice = train_trace.choice;
    run.width = train_trace.width;
    for (int l : layers)
        for (int d = 1; d <= cfg.max_delta; ++d) {
            ProbeCell cell;
            cell.layer = l;
            cell.delta = d;
            run.cells.push_back(std::move(cell));
        }

    const std::vector<double> grid = cfg.sweep ? cfg.keep_grid
                                               : std::vector<double>{cfg.train.keep_hidden};
    std::vector<ProbeJob> jobs;
    for (std::size_t c = 0; c < run.cells.size(); ++c)
        for (std::size_t g = 0; g < grid.size(); ++g)
            jobs.push_back({c, run.cells[c].layer, run.cells[c].delta, grid[g], g});

    // One trained decoder per (cell, grid point); reduced after the pool joins.
    std::vector<TrainedDecoder> results(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;

    auto worker = [&]() {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_error) return;
            }
            try {
                const ProbeJob& job = jobs[j];
                ProbeDataset ds =
                    build_probe_dataset(train_trace, eval_trace, job.delta, job.layer);
                DecoderConfig dcfg;
                dcfg.hidden = hidden_by_layer[std::size_t(job.layer)];
                dcfg.keep_grid = cfg.keep_grid;
                dcfg.param_floor = layer_floors[std::size_t(job.layer)];
                dcfg.train = cfg.train;
                dcfg.train.keep_hidden = job.keep;
                // Same seed across the keep grid of a cell, distinct across cells.
                const std::uint64_t key[3] = {cfg.train.seed, std::uint64_t(job.layer),
                                              std::uint64_t(job.delta)};
                dcfg.train.seed = fnv1a(key, sizeof key);
                results[j] = train_decoder(ds, dcfg);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const std::size_t pool = std::min<std::size_t>(std::size_t(cfg.jobs), jobs.size());
    if (pool <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < pool; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    // Merge by key: grid order within a cell, arg-max accuracy, ties -> higher keep.
    std::vector<std::vector<const TrainedDecoder*>> by_cell(run.cells.size());
    for (auto& slots : by_cell) slots.resize(grid.size(), nullptr);
    for (std::size_t j = 0; j < jobs.size(); ++j)
        by_cell[jobs[j].cell][jobs[j].grid_index] = &results[j];
    for (std::size_t c = 0; c < run.cells.size(); ++c) {
        ProbeCell& cell = run.cells[c];
        const TrainedDecoder* best = nullptr;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const TrainedDecoder* t = by_cell[c][g];
            if (cfg.sweep) cell.sweep.push_back({grid[g], t->eval.accuracy});
            if (!best || t->eval.accuracy >= best->eval.accuracy) best = t;
        }
        cell.keep = best->keep_hidden;
        cell.eval = best->eval;
    }
    return run;
}

ProbeRun probe_model(const CharLm<float>& m, const CorpusSplit& split, const ProbeConfig& cfg) {
    validate_probe_config(cfg);
    StateTrace train_trace =
        extract_state_trace(m, split, "train", cfg.choice, cfg.max_positions);
    StateTrace eval_trace = extract_state_trace(m, split, "eval", cfg.choice, cfg.max_positions);
    std::vector<std::size_t> floors(std::size_t(m.layer_count()));
    for (int l = 0; l < m.layer_count(); ++l)
        floors[std::size_t(l)] = layer_probe_floor(m, l);
    return probe_traces(train_trace, eval_trace, floors, cfg);
}

} // namespace memsig
