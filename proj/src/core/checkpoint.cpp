#include "core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "core/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as raw little-endian floats");

namespace memsig {

namespace {

using nlohmann::json;

// Tensor dims in visit_tensors order; the flat walk only exposes lengths.
template <typename F>
void visit_shapes(const CharLm<float>& m, F&& f) {
    const int n = m.state;
    f("embedding", std::vector<int>{m.vocab(), m.embed});
    for (int l = 0; l < m.layer_count(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        switch (m.kind) {
            case CellKind::lstm:
                f(p + "w", std::vector<int>{4 * n, 2 * n});
                f(p + "b", std::vector<int>{4 * n});
                break;
            case CellKind::gru:
                f(p + "wz", std::vector<int>{n, 2 * n});
                f(p + "wr", std::vector<int>{n, 2 * n});
                f(p + "wh", std::vector<int>{n, 2 * n});
                f(p + "bz", std::vector<int>{n});
                f(p + "br", std::vector<int>{n});
                f(p + "bh", std::vector<int>{n});
                break;
            case CellKind::lstm_factorized: {
                const int basis = m.basis_count();
                f(p + "w", std::vector<int>{4 * n, 2 * n});
                f(p + "b", std::vector<int>{4 * n});
                f(p + "u", std::vector<int>{4 * n, basis});
                f(p + "v", std::vector<int>{basis, 2 * n});
                f(p + "lambda", std::vector<int>{basis});
                break;
            }
        }
    }
    f("proj.w", std::vector<int>{n, m.vocab()});
    f("proj.b", std::vector<int>{m.vocab()});
}

struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    std::span<const float> data;
};

std::vector<TensorEntry> manifest_of(const Checkpoint& ckpt) {
    std::vector<TensorEntry> entries;
    visit_tensors(ckpt.model, [&](const std::string& name, std::span<const float> t) {
        entries.push_back({name, {}, t});
    });
    std::size_t i = 0;
    visit_shapes(ckpt.model, [&](const std::string& name, std::vector<int> shape) {
        if (i >= entries.size() || entries[i].name != name)
            throw ShapeError("tensor walk disagrees with shape walk at " + name);
        std::size_t prod = 1;
        for (int d : shape) prod *= std::size_t(d);
        if (prod != entries[i].data.size())
            throw ShapeError("tensor size disagrees with its shape at " + name);
        entries[i].shape = std::move(shape);
        ++i;
    });
    if (ckpt.optimizer) {
        std::vector<std::string> param_names;
        visit_params(ckpt.model, [&](const std::string& name, std::span<const float>) {
            param_names.push_back(name);
        });
        const auto& st = ckpt.optimizer->state;
        if (st.m.size() != param_names.size() || st.v.size() != param_names.size())
            throw ShapeError("optimizer state does not match the model's parameter tensors");
        for (std::size_t k = 0; k < param_names.size(); ++k)
            entries.push_back({"adam.m." + param_names[k],
                               {int(st.m[k].size())},
                               std::span<const float>(st.m[k])});
        for (std::size_t k = 0; k < param_names.size(); ++k)
            entries.push_back({"adam.v." + param_names[k],
                               {int(st.v[k].size())},
                               std::span<const float>(st.v[k])});
    }
    return entries;
}

json header_of(const Checkpoint& ckpt, const std::vector<TensorEntry>& entries) {
    json h;
    h["arch"] = {{"kind", cell_kind_name(ckpt.model.kind)},
                 {"layers", ckpt.model.layer_count()},
                 {"state", ckpt.model.state},
                 {"embed", ckpt.model.embed}};
    h["symbols"] = {{"chars", ckpt.model.symbols.chars()},
                    {"digit_fold", ckpt.model.symbols.digit_fold()}};
    json epochs = json::array();
    for (const auto& e : ckpt.history.epochs)
        epochs.push_back({{"train_loss", e.train_loss}, {"dev_ppx", e.dev_ppx}});
    h["history"] = {{"best_epoch", ckpt.history.best_epoch}, {"epochs", std::move(epochs)}};
    if (ckpt.optimizer) {
        const auto& c = ckpt.optimizer->config;
        h["optimizer"] = {{"lr", c.lr},
                          {"beta1", c.beta1},
                          {"beta2", c.beta2},
                          {"eps", c.eps},
                          {"step", ckpt.optimizer->state.step}};
    }
    json tensors = json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
        offset += std::uint64_t(e.data.size()) * sizeof(float);
    }
    h["tensors"] = std::move(tensors);
    return h;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void read_exact(std::istream& in, void* dst, std::size_t len, const char* what) {
    in.read(reinterpret_cast<char*>(dst), std::streamsize(len));
    if (std::size_t(in.gcount()) != len)
        throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    auto entries = manifest_of(ckpt);
    std::string header = header_of(ckpt, entries).dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
    out.write("MSIG", 4);
    write_u32(out, kCheckpointVersion);
    write_u64(out, header.size());
    out.write(header.data(), std::streamsize(header.size()));
    for (const auto& e : entries)
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  std::streamsize(e.data.size() * sizeof(float)));
    out.flush();
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint file: " + path);

    char magic[4];
    read_exact(in, magic, 4, "magic bytes");
    if (std::memcmp(magic, "MSIG", 4) != 0)
        throw CheckpointError("not a checkpoint file (bad magic): " + path);
    std::uint32_t version = 0;
    read_exact(in, &version, sizeof version, "version");
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) +
                              "; this build reads version " + std::to_string(kCheckpointVersion));
    std::uint64_t header_len = 0;
    read_exact(in, &header_len, sizeof header_len, "header length");
    if (header_len == 0 || header_len > (std::uint64_t(1) << 30))
        throw CheckpointError("checkpoint header length is implausible");
    std::string header(header_len, '\0');
    read_exact(in, header.data(), header_len, "header");

    json h;
    try {
        h = json::parse(header);
    } catch (const json::exception&) {
        throw CheckpointError("checkpoint header is not valid JSON");
    }

    Checkpoint ckpt;
    try {
        const auto& sym = h.at("symbols");
        SymbolSet symbols;
        try {
            symbols = SymbolSet::from_chars(sym.at("chars").get<std::string>(),
                                            sym.at("digit_fold").get<bool>());
        } catch (const Error& e) {
            throw CheckpointError(std::string("checkpoint symbol set is invalid: ") + e.what());
        }
        const auto& arch = h.at("arch");
        CellKind kind;
        try {
            kind = cell_kind_from_name(arch.at("kind").get<std::string>());
        } catch (const Error& e) {
            throw CheckpointError(std::string("checkpoint architecture is invalid: ") + e.what());
        }
        const int layers = arch.at("layers").get<int>();
        const int state = arch.at("state").get<int>();
        const int embed = arch.at("embed").get<int>();
        if (layers < 1 || state < 1 || embed != state)
            throw CheckpointError("checkpoint architecture is invalid");
        ckpt.model = make_char_lm<float>(symbols, kind, layers, state, /*seed=*/0);

        const auto& hist = h.at("history");
        ckpt.history.best_epoch = hist.at("best_epoch").get<int>();
        for (const auto& e : hist.at("epochs")) {
            ckpt.history.epochs.push_back(
                {e.at("train_loss").get<double>(), e.at("dev_ppx").get<double>()});
        }
        if (ckpt.history.best_epoch < -1 ||
            ckpt.history.best_epoch >= int(ckpt.history.epochs.size()))
            throw CheckpointError("checkpoint history best_epoch is out of range");

        std::vector<TensorEntry> expected;
        visit_tensors(ckpt.model, [&](const std::string& name, std::span<const float> t) {
            expected.push_back({name, {}, t});
        });
        if (h.contains("optimizer")) {
            AdamSnapshot snap;
            const auto& opt = h.at("optimizer");
            snap.config.lr = opt.at("lr").get<double>();
            snap.config.beta1 = opt.at("beta1").get<double>();
            snap.config.beta2 = opt.at("beta2").get<double>();
            snap.config.eps = opt.at("eps").get<double>();
            snap.state.step = opt.at("step").get<std::int64_t>();
            snap.state.m.clear();
            snap.state.v.clear();
            ckpt.optimizer = std::move(snap);
        }

        const auto& tensors = h.at("tensors");
        std::vector<std::string> param_names;
        visit_params(ckpt.model, [&](const std::string& name, std::span<const float>) {
            param_names.push_back(name);
        });
        std::size_t expected_count =
            expected.size() + (ckpt.optimizer ? 2 * param_names.size() : 0);
        if (tensors.size() != expected_count)
            throw CheckpointError("checkpoint tensor manifest does not match the architecture");

        // Model tensors first, then adam.m.*, then adam.v.*, offsets packed.
        std::uint64_t offset = 0;
        auto check_entry = [&](const json& entry, const std::string& want_name,
                               std::size_t want_size) {
            if (entry.at("name").get<std::string>() != want_name)
                throw CheckpointError("checkpoint tensor manifest does not match the architecture");
            std::size_t prod = 1;
            for (const auto& d : entry.at("shape")) {
                int di = d.get<int>();
                if (di < 0) throw CheckpointError("checkpoint tensor shape is invalid");
                prod *= std::size_t(di);
            }
            if (prod != want_size)
                throw CheckpointError("checkpoint tensor shape does not match the architecture");
            if (entry.at("offset").get<std::uint64_t>() != offset)
                throw CheckpointError("checkpoint tensor offsets are not packed");
            offset += want_size * sizeof(float);
        };

        std::size_t idx = 0;
        for (const auto& e : expected) check_entry(tensors.at(idx++), e.name, e.data.size());
        if (ckpt.optimizer) {
            visit_params(ckpt.model, [&](const std::string&, std::span<const float> p) {
                ckpt.optimizer->state.m.emplace_back(p.size(), 0.0f);
                ckpt.optimizer->state.v.emplace_back(p.size(), 0.0f);
            });
            for (std::size_t k = 0; k < param_names.size(); ++k)
                check_entry(tensors.at(idx++), "adam.m." + param_names[k],
                            ckpt.optimizer->state.m[k].size());
            for (std::size_t k = 0; k < param_names.size(); ++k)
                check_entry(tensors.at(idx++), "adam.v." + param_names[k],
                            ckpt.optimizer->state.v[k].size());
        }
    } catch (const json::exception&) {
        throw CheckpointError("checkpoint header is missing required fields");
    }

    visit_tensors(ckpt.model, [&](const std::string& name, std::span<float> t) {
        read_exact(in, t.data(), t.size() * sizeof(float), name.c_str());
    });
    if (ckpt.optimizer) {
        for (auto& m : ckpt.optimizer->state.m)
            read_exact(in, m.data(), m.size() * sizeof(float), "optimizer state");
        for (auto& v : ckpt.optimizer->state.v)
            read_exact(in, v.data(), v.size() * sizeof(float), "optimizer state");
    }
    char extra;
    in.read(&extra, 1);
    if (in.gcount() != 0) throw CheckpointError("checkpoint has trailing data");
    return ckpt;
}

} // namespace memsig
