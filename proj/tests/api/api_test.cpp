// Exercises the shared-library surface through the public C header only;
// core internals stay out of scope here.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "memsig/memsig.h"

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("memsig_api_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

#define API_OK(call) REQUIRE_MESSAGE((call) == MEMSIG_OK, std::string(memsig_last_error()))

// Varied lowercase text, long enough lines for multi-delta probes.
std::string sample_text() {
    const char* stems[] = {"the sparrow carried a seed over the old stone wall",
                           "a kettle hummed while rain traced the window glass",
                           "every lantern along the pier flickered twice at dusk",
                           "the cartographer folded her map beside the river bend"};
    std::string text;
    for (int i = 0; i < 40; ++i) {
        text += stems[i % 4];
        text += " line ";
        text += char('a' + i % 26);
        text += '\n';
    }
    return text;
}

memsig_corpus* make_corpus(const TempDir& dir, uint64_t seed = 11) {
    write_file(dir.file("text.txt"), sample_text());
    memsig_corpus* c = nullptr;
    API_OK(memsig_corpus_prepare(dir.file("text.txt").c_str(), nullptr, 0, 0.8, 0.1, 0.1, seed,
                                 &c));
    return c;
}

memsig_train_config quick_train(uint64_t seed) {
    memsig_train_config cfg;
    memsig_train_config_init(&cfg);
    cfg.batch = 8;
    cfg.window = 16;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.seed = seed;
    return cfg;
}

memsig_probe_config quick_probe(uint64_t seed) {
    memsig_probe_config cfg;
    memsig_probe_config_init(&cfg);
    cfg.max_delta = 2;
    cfg.sweep = 0;
    cfg.train = quick_train(seed);
    cfg.train.max_epochs = 2;
    cfg.train.patience = 2;
    return cfg;
}

} // namespace

TEST_CASE("library basics") {
    CHECK(std::string(memsig_version()) == "0.1.0");
    CHECK(MEMSIG_OK == 0);

    // Errors carry messages; the next success clears them.
    CHECK(memsig_corpus_prepare(nullptr, nullptr, 0, 0.8, 0.1, 0.1, 1, nullptr) ==
          MEMSIG_ERR_USAGE);
    CHECK(std::string(memsig_last_error()).find("text_path") != std::string::npos);

    TempDir dir;
    write_file(dir.file("x"), "abc");
    uint64_t h1 = 0, h2 = 0;
    API_OK(memsig_hash_file(dir.file("x").c_str(), &h1));
    CHECK(std::string(memsig_last_error()).empty());
    API_OK(memsig_hash_file(dir.file("x").c_str(), &h2));
    CHECK(h1 == h2);
    CHECK(h1 != 0);
    CHECK(memsig_hash_file(dir.file("missing").c_str(), &h1) == MEMSIG_ERR_IO);
}

TEST_CASE("corpus lifecycle") {
    TempDir dir;
    memsig_corpus* c = make_corpus(dir);

    SUBCASE("stats and content id") {
        char* stats = nullptr;
        API_OK(memsig_corpus_stats_json(c, &stats));
        const std::string s(stats);
        memsig_string_free(stats);
        CHECK(s.find("\"vocab\":31") != std::string::npos);
        CHECK(s.find("\"train\":32") != std::string::npos);
        CHECK(s.find("\"seed\":11") != std::string::npos);

        uint64_t id1 = 0;
        API_OK(memsig_corpus_content_id(c, &id1));

        // The content id tracks the text, not the split.
        memsig_corpus* other = nullptr;
        write_file(dir.file("text.txt"), sample_text());
        API_OK(memsig_corpus_prepare(dir.file("text.txt").c_str(), nullptr, 0, 0.8, 0.1, 0.1, 99,
                                     &other));
        uint64_t id2 = 0;
        API_OK(memsig_corpus_content_id(other, &id2));
        CHECK(id1 == id2);
        memsig_corpus_free(other);
    }

    SUBCASE("save and load round trip") {
        API_OK(memsig_corpus_save(c, dir.file("c.json").c_str()));
        memsig_corpus* back = nullptr;
        API_OK(memsig_corpus_load(dir.file("c.json").c_str(), &back));
        char *a = nullptr, *b = nullptr;
        API_OK(memsig_corpus_stats_json(c, &a));
        API_OK(memsig_corpus_stats_json(back, &b));
        CHECK(std::string(a) == std::string(b));
        memsig_string_free(a);
        memsig_string_free(b);
        memsig_corpus_free(back);

        CHECK(memsig_corpus_load(dir.file("absent.json").c_str(), &back) == MEMSIG_ERR_IO);
        write_file(dir.file("bad.json"), "{\"format\":\"nope\"}");
        CHECK(memsig_corpus_load(dir.file("bad.json").c_str(), &back) == MEMSIG_ERR_FORMAT);
    }

    SUBCASE("train subsampling") {
        memsig_corpus* half = nullptr;
        API_OK(memsig_corpus_sample_train(c, 0.5, 3, &half));
        char* stats = nullptr;
        API_OK(memsig_corpus_stats_json(half, &stats));
        const std::string s(stats);
        memsig_string_free(stats);
        CHECK(s.find("\"train\":16") != std::string::npos);
        memsig_corpus_free(half);
        CHECK(memsig_corpus_sample_train(c, 1.5, 3, &half) == MEMSIG_ERR_USAGE);
    }

    SUBCASE("custom alphabets") {
        memsig_corpus* custom = nullptr;
        write_file(dir.file("plain.txt"), "abba bab\nbab abba\nabab\nbbaa\n");
        API_OK(memsig_corpus_prepare(dir.file("plain.txt").c_str(), "ab ", 0, 0.5, 0.25, 0.25, 1,
                                     &custom));
        char* stats = nullptr;
        API_OK(memsig_corpus_stats_json(custom, &stats));
        CHECK(std::string(stats).find("\"vocab\":3") != std::string::npos);
        memsig_string_free(stats);
        memsig_corpus_free(custom);

        // The space symbol is mandatory.
        CHECK(memsig_corpus_prepare(dir.file("plain.txt").c_str(), "ab", 0, 0.5, 0.25, 0.25, 1,
                                    &custom) == MEMSIG_ERR_USAGE);
    }

    memsig_corpus_free(c);
    memsig_corpus_free(nullptr); // no-op
}

TEST_CASE("lm training, eval, and checkpoints") {
    TempDir dir;
    memsig_corpus* c = make_corpus(dir);
    const memsig_train_config cfg = quick_train(5);

    memsig_checkpoint* ckpt = nullptr;
    API_OK(memsig_lm_train(c, "lstm", 1, 8, &cfg, &ckpt));

    SUBCASE("eval and description") {
        double ppx = 0.0;
        API_OK(memsig_lm_eval(ckpt, c, "eval", &ppx));
        CHECK(ppx > 1.0);
        CHECK(ppx < 31.0); // three epochs already beat the uniform bound

        char* desc = nullptr;
        API_OK(memsig_checkpoint_describe_json(ckpt, &desc));
        const std::string d(desc);
        memsig_string_free(desc);
        CHECK(d.find("\"arch\":\"lstm\"") != std::string::npos);
        CHECK(d.find("\"layers\":1") != std::string::npos);
        CHECK(d.find("\"state\":8") != std::string::npos);
        CHECK(d.find("\"epochs\":3") != std::string::npos);

        CHECK(memsig_lm_eval(ckpt, c, "test", &ppx) == MEMSIG_ERR_USAGE);
    }

    SUBCASE("checkpoint round trip preserves the parameter hash") {
        uint64_t before = 0;
        API_OK(memsig_checkpoint_param_hash(ckpt, &before));
        API_OK(memsig_checkpoint_save(ckpt, dir.file("m.ckpt").c_str()));
        memsig_checkpoint* back = nullptr;
        API_OK(memsig_checkpoint_load(dir.file("m.ckpt").c_str(), &back));
        uint64_t after = 0;
        API_OK(memsig_checkpoint_param_hash(back, &after));
        CHECK(before == after);
        memsig_checkpoint_free(back);

        write_file(dir.file("junk.ckpt"), "MSIGjunkjunkjunk");
        CHECK(memsig_checkpoint_load(dir.file("junk.ckpt").c_str(), &back) == MEMSIG_ERR_FORMAT);
    }

    SUBCASE("training is seed deterministic") {
        memsig_checkpoint* again = nullptr;
        API_OK(memsig_lm_train(c, "lstm", 1, 8, &cfg, &again));
        uint64_t h1 = 0, h2 = 0;
        API_OK(memsig_checkpoint_param_hash(ckpt, &h1));
        API_OK(memsig_checkpoint_param_hash(again, &h2));
        CHECK(h1 == h2);
        memsig_checkpoint_free(again);
    }

    SUBCASE("retraining moves the weights") {
        memsig_checkpoint* adapted = nullptr;
        API_OK(memsig_lm_retrain(ckpt, c, &cfg, &adapted));
        uint64_t h1 = 0, h2 = 0;
        API_OK(memsig_checkpoint_param_hash(ckpt, &h1));
        API_OK(memsig_checkpoint_param_hash(adapted, &h2));
        CHECK(h1 != h2);
        memsig_checkpoint_free(adapted);
    }

    SUBCASE("factorized and gru variants train") {
        for (const char* arch : {"gru", "lstm-factorized"}) {
            memsig_checkpoint* m = nullptr;
            memsig_train_config one = cfg;
            one.max_epochs = 1;
            API_OK(memsig_lm_train(c, arch, 1, 6, &one, &m));
            char* desc = nullptr;
            API_OK(memsig_checkpoint_describe_json(m, &desc));
            CHECK(std::string(desc).find(arch) != std::string::npos);
            memsig_string_free(desc);
            memsig_checkpoint_free(m);
        }
        memsig_checkpoint* m = nullptr;
        CHECK(memsig_lm_train(c, "transformer", 1, 6, &cfg, &m) == MEMSIG_ERR_USAGE);
    }

    memsig_checkpoint_free(ckpt);
    memsig_corpus_free(c);
}

TEST_CASE("ngram lifecycle") {
    TempDir dir;
    memsig_corpus* c = make_corpus(dir);

    memsig_ngram* m = nullptr;
    API_OK(memsig_ngram_train(c, 3, 0.01, &m));

    double ppx = 0.0;
    API_OK(memsig_ngram_eval(m, c, "eval", &ppx));
    CHECK(ppx > 1.0);
    CHECK(ppx < 31.0);

    char* desc = nullptr;
    API_OK(memsig_ngram_describe_json(m, &desc));
    CHECK(std::string(desc).find("\"order\":3") != std::string::npos);
    memsig_string_free(desc);

    API_OK(memsig_ngram_save(m, dir.file("m.ng").c_str()));
    memsig_ngram* back = nullptr;
    API_OK(memsig_ngram_load(dir.file("m.ng").c_str(), &back));
    double ppx2 = 0.0;
    API_OK(memsig_ngram_eval(back, c, "eval", &ppx2));
    CHECK(ppx2 == ppx);
    memsig_ngram_free(back);

    write_file(dir.file("bad.ng"), "{}");
    CHECK(memsig_ngram_load(dir.file("bad.ng").c_str(), &back) == MEMSIG_ERR_FORMAT);
    CHECK(memsig_ngram_train(c, 0, 0.01, &back) == MEMSIG_ERR_USAGE);

    memsig_ngram_free(m);
    memsig_corpus_free(c);
}

TEST_CASE("probe to signature pipeline") {
    TempDir dir;
    memsig_corpus* c = make_corpus(dir);
    const memsig_train_config tcfg = quick_train(5);
    memsig_checkpoint* ckpt = nullptr;
    API_OK(memsig_lm_train(c, "lstm", 1, 8, &tcfg, &ckpt));

    const memsig_probe_config pcfg = quick_probe(7);
    memsig_probe_run* run = nullptr;
    API_OK(memsig_probe_checkpoint(ckpt, c, &pcfg, &run));

    int32_t cells = 0;
    API_OK(memsig_probe_cell_count(run, &cells));
    REQUIRE(cells == 2); // max_delta 2, one layer

    std::vector<std::string> paths;
    for (int32_t i = 0; i < cells; ++i) {
        int32_t delta = 0, layer = 0;
        API_OK(memsig_probe_cell_coords(run, i, &delta, &layer));
        CHECK(layer == 0);
        char* cell = nullptr;
        API_OK(memsig_probe_cell_json(run, i, &cell));
        const std::string path =
            dir.file("eval_d" + std::to_string(delta) + "_l" + std::to_string(layer) + ".json");
        write_file(path, cell);
        memsig_string_free(cell);
        paths.push_back(path);
    }
    int32_t delta = 0, layer = 0;
    CHECK(memsig_probe_cell_coords(run, cells, &delta, &layer) == MEMSIG_ERR_USAGE);

    SUBCASE("probe runs are deterministic") {
        memsig_probe_run* again = nullptr;
        API_OK(memsig_probe_checkpoint(ckpt, c, &pcfg, &again));
        char *x = nullptr, *y = nullptr;
        API_OK(memsig_probe_cell_json(run, 0, &x));
        API_OK(memsig_probe_cell_json(again, 0, &y));
        CHECK(std::string(x) == std::string(y));
        memsig_string_free(x);
        memsig_string_free(y);
        memsig_probe_run_free(again);
    }

    SUBCASE("signatures compile from evaluation files") {
        std::vector<const char*> argv;
        for (const auto& p : paths) argv.push_back(p.c_str());

        memsig_signature* sig = nullptr;
        API_OK(memsig_signature_compile(argv.data(), int32_t(argv.size()), -1, &sig));
        int32_t max_delta = 0, vocab = 0;
        API_OK(memsig_signature_shape(sig, &max_delta, &vocab));
        CHECK(max_delta == 2);
        CHECK(vocab == 31);

        int32_t len = 0;
        API_OK(memsig_signature_marginals(sig, 0, nullptr, 0, &len));
        REQUIRE(len == 2);
        double weighted[2], unweighted[2];
        API_OK(memsig_signature_marginals(sig, 0, weighted, 2, &len));
        API_OK(memsig_signature_marginals(sig, 1, unweighted, 2, &len));
        for (double m : weighted) {
            CHECK(m >= 0.0);
            CHECK(m <= 1.0);
        }
        CHECK(weighted[0] != unweighted[0]);
        double tiny[1];
        CHECK(memsig_signature_marginals(sig, 0, tiny, 1, &len) == MEMSIG_ERR_USAGE);

        // CSV round trip through files.
        API_OK(memsig_signature_save_csv(sig, dir.file("sig.csv").c_str()));
        memsig_signature* back = nullptr;
        API_OK(memsig_signature_load_csv(dir.file("sig.csv").c_str(), &back));
        API_OK(memsig_signature_save_csv(back, dir.file("sig2.csv").c_str()));
        CHECK(read_file(dir.file("sig.csv")) == read_file(dir.file("sig2.csv")));

        // Rendering, directly and via header sniffing.
        API_OK(memsig_signature_render(sig, "green", dir.file("sig.svg").c_str()));
        CHECK(read_file(dir.file("sig.svg")).find("<svg") != std::string::npos);
        CHECK(memsig_signature_render(sig, "diverging", dir.file("x.svg").c_str()) ==
              MEMSIG_ERR_USAGE);
        CHECK(memsig_signature_render(sig, "mauve", dir.file("x.svg").c_str()) ==
              MEMSIG_ERR_USAGE);
        API_OK(memsig_render_csv(dir.file("sig.csv").c_str(), nullptr,
                                 dir.file("sniff.svg").c_str()));
        CHECK(read_file(dir.file("sniff.svg")).find("#54278f") != std::string::npos);

        // The CSV drops symbols absent at every delta (the sample text never
        // covers the full alphabet), so the round trip narrows the axis and
        // diffing against the original is an axis mismatch.
        int32_t back_delta = 0, back_vocab = 0;
        API_OK(memsig_signature_shape(back, &back_delta, &back_vocab));
        CHECK(back_vocab < vocab);
        memsig_diff* d = nullptr;
        CHECK(memsig_signature_diff(sig, back, &d) == MEMSIG_ERR_DATA);

        // Self-diff: all-zero, renders diverging, survives its own CSV.
        API_OK(memsig_signature_diff(sig, sig, &d));
        double l1 = -1.0;
        API_OK(memsig_diff_l1(d, &l1));
        CHECK(l1 == 0.0);
        API_OK(memsig_diff_save_csv(d, dir.file("d.csv").c_str()));
        memsig_diff* dback = nullptr;
        API_OK(memsig_diff_load_csv(dir.file("d.csv").c_str(), &dback));
        double l1back = -1.0;
        API_OK(memsig_diff_l1(dback, &l1back));
        CHECK(l1back == 0.0);
        API_OK(memsig_diff_render(d, dir.file("d.svg").c_str()));
        CHECK(read_file(dir.file("d.svg")).find("#f7f7f7") != std::string::npos);
        API_OK(memsig_render_csv(dir.file("d.csv").c_str(), nullptr,
                                 dir.file("dsniff.svg").c_str()));
        CHECK(memsig_render_csv(dir.file("d.csv").c_str(), "purple",
                                dir.file("x.svg").c_str()) == MEMSIG_ERR_USAGE);
        write_file(dir.file("junk.csv"), "alpha,beta\n1,2\n");
        CHECK(memsig_render_csv(dir.file("junk.csv").c_str(), nullptr,
                                dir.file("x.svg").c_str()) == MEMSIG_ERR_FORMAT);

        memsig_diff_free(dback);
        memsig_diff_free(d);
        memsig_signature_free(back);
        memsig_signature_free(sig);
    }

    SUBCASE("compile rejects bad file sets") {
        memsig_signature* sig = nullptr;
        const char* one[] = {paths[1].c_str()}; // delta 2 only
        CHECK(memsig_signature_compile(one, 1, -1, &sig) == MEMSIG_ERR_DATA);
        const char* dup[] = {paths[0].c_str(), paths[0].c_str()};
        CHECK(memsig_signature_compile(dup, 2, -1, &sig) == MEMSIG_ERR_USAGE);
        const char* all[] = {paths[0].c_str(), paths[1].c_str()};
        CHECK(memsig_signature_compile(all, 2, 4, &sig) == MEMSIG_ERR_USAGE);
        const std::string junk_path = dir.file("junk.json");
        write_file(junk_path, "{}");
        const char* junk[] = {junk_path.c_str()};
        CHECK(memsig_signature_compile(junk, 1, -1, &sig) == MEMSIG_ERR_FORMAT);
    }

    SUBCASE("ngram probes flow through the same pipeline") {
        memsig_ngram* ng = nullptr;
        API_OK(memsig_ngram_train(c, 3, 0.01, &ng));
        memsig_probe_run* ngrun = nullptr;
        API_OK(memsig_probe_ngram(ng, c, &pcfg, &ngrun));
        int32_t n = 0;
        API_OK(memsig_probe_cell_count(ngrun, &n));
        CHECK(n == 2);
        char* cell = nullptr;
        API_OK(memsig_probe_cell_json(ngrun, 0, &cell));
        const std::string body(cell);
        memsig_string_free(cell);
        CHECK(body.find("3-gram") != std::string::npos);
        const std::string ng_path = dir.file("ng_d.json");
        write_file(ng_path, body);

        // Cells from different runs do not mix.
        memsig_signature* sig = nullptr;
        const char* mixed[] = {paths[0].c_str(), ng_path.c_str()};
        CHECK(memsig_signature_compile(mixed, 2, -1, &sig) == MEMSIG_ERR_USAGE);

        memsig_probe_config cellcfg = pcfg;
        cellcfg.use_cell_state = 1;
        memsig_probe_run* bad = nullptr;
        CHECK(memsig_probe_ngram(ng, c, &cellcfg, &bad) == MEMSIG_ERR_USAGE);

        memsig_probe_run_free(ngrun);
        memsig_ngram_free(ng);
    }

    memsig_probe_run_free(run);
    memsig_checkpoint_free(ckpt);
    memsig_corpus_free(c);
}
