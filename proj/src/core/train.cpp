#include "core/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>

namespace memsig {

void validate_train_config(const TrainConfig& cfg) {
    if (!(cfg.adam.lr > 0.0)) throw UsageError("learning rate must be positive");
    if (cfg.adam.beta1 < 0.0 || cfg.adam.beta1 >= 1.0 || cfg.adam.beta2 < 0.0 ||
        cfg.adam.beta2 >= 1.0)
        throw UsageError("Adam betas must lie in [0, 1)");
    if (!(cfg.adam.eps > 0.0)) throw UsageError("Adam epsilon must be positive");
    if (cfg.batch < 1) throw UsageError("batch size must be >= 1");
    if (cfg.window < 2) throw UsageError("window must be >= 2");
    if (cfg.max_epochs < 0) throw UsageError("max epochs must be >= 0");
    if (cfg.patience < 1) throw UsageError("patience must be >= 1");
    if (!(cfg.keep_state > 0.0) || cfg.keep_state > 1.0 || !(cfg.keep_hidden > 0.0) ||
        cfg.keep_hidden > 1.0)
        throw UsageError("dropout keep probabilities must lie in (0, 1]");
    if (!(cfg.clip_norm > 0.0)) throw UsageError("clip norm must be positive");
}

Checkpoint train_lm(const CharLm<float>& model, const CorpusSplit& split, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (!(model.symbols == split.symbols()))
        throw IncompatibleCheckpoint("corpus symbol set does not match the model");

    CharLm<float> work = model;
    CharLm<float> grads = clone_zeroed(work);
    AdamState opt = adam_init(work);

    Rng root(cfg.seed);
    const std::uint64_t batcher_seed = root.next_u64();
    Rng drop_rng = root.fork(0x64726f70); // dropout stream
    WindowBatcher batcher(split, "train", cfg.window, cfg.batch, batcher_seed);

    TrainHistory history;
    double best_dev = std::numeric_limits<double>::infinity();
    CharLm<float> best_model = work;
    AdamState best_opt = opt;
    int since_best = 0;

    // Divergences surface mid-epoch; hand back the last state that evaluated
    // cleanly rather than the poisoned weights.
    auto last_good = [&]() {
        auto ckpt = std::make_shared<Checkpoint>();
        ckpt->model = history.best_epoch >= 0 ? best_model : model;
        ckpt->optimizer = AdamSnapshot{cfg.adam, history.best_epoch >= 0 ? best_opt : adam_init(model)};
        ckpt->history = history;
        return ckpt;
    };

    LmCache<float> cache;
    IdBatch batch;
    Mat<float> dlogits;
    const DropoutMode mode = cfg.keep_state < 1.0 ? DropoutMode::train : DropoutMode::off;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (epoch > 0) batcher.reset(root.next_u64());
        double loss_sum = 0.0;
        std::uint64_t live_sum = 0;
        double dev = 0.0;
        try {
            while (batcher.next(batch)) {
                visit_params(grads, [](const std::string&, std::span<float> p) {
                    std::fill(p.begin(), p.end(), 0.0f);
                });
                lm_forward(work, batch, mode, cfg.keep_state, &drop_rng, cache);
                double loss = cross_entropy(cache.logits, std::span<const std::int32_t>(batch.targets),
                                            std::span<const std::uint8_t>(batch.mask), &dlogits);
                if (!std::isfinite(loss)) throw NumericalError("training loss is not finite");
                lm_backward(work, cache, dlogits, grads);
                adam_step(work, grads, opt, cfg.adam, cfg.clip_norm);
                std::uint64_t live = 0;
                for (std::uint8_t m : batch.mask) live += m != 0;
                loss_sum += loss * double(live);
                live_sum += live;
            }
            dev = perplexity(work, split, "dev");
        } catch (const NumericalError& e) {
            throw TrainingDiverged(std::string("training diverged: ") + e.what(), last_good());
        }
        history.epochs.push_back({live_sum ? loss_sum / double(live_sum) : 0.0, dev});
        if (dev < best_dev) {
            best_dev = dev;
            history.best_epoch = epoch;
            best_model = work;
            best_opt = opt;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    Checkpoint out;
    out.model = history.best_epoch >= 0 ? std::move(best_model) : std::move(work);
    out.optimizer = AdamSnapshot{cfg.adam, history.best_epoch >= 0 ? std::move(best_opt) : std::move(opt)};
    out.history = std::move(history);
    return out;
}

Checkpoint retrain_lm(const Checkpoint& ckpt, const CorpusSplit& split, const TrainConfig& cfg) {
    if (!(ckpt.model.symbols == split.symbols()))
        throw IncompatibleCheckpoint("checkpoint symbol set does not match the new corpus");
    return train_lm(ckpt.model, split, cfg);
}

} // namespace memsig
