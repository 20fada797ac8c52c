#include <doctest.h>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "core/decoder.hpp"
#include "core/grad_check.hpp"
#include "core/mat.hpp"
#include "core/rng.hpp"

using namespace memsig;

namespace {

double decoder_loss(Decoder<double>& d, const MatD& x, std::span<const std::int32_t> targets,
                    double keep, std::uint64_t drop_seed) {
    DecoderCache<double> cache;
    if (keep < 1.0) {
        Rng rng(drop_seed);
        decoder_forward(d, x, DropoutMode::train, keep, &rng, cache);
    } else {
        decoder_forward(d, x, DropoutMode::off, 1.0, nullptr, cache);
    }
    return cross_entropy(cache.logits, targets, {}, static_cast<MatD*>(nullptr));
}

void check_decoder_gradients(Decoder<double>& d, const MatD& x,
                             std::span<const std::int32_t> targets, double keep,
                             std::uint64_t drop_seed) {
    DecoderCache<double> cache;
    if (keep < 1.0) {
        Rng rng(drop_seed);
        decoder_forward(d, x, DropoutMode::train, keep, &rng, cache);
    } else {
        decoder_forward(d, x, DropoutMode::off, 1.0, nullptr, cache);
    }
    MatD dlogits;
    cross_entropy(cache.logits, targets, {}, &dlogits);
    Decoder<double> grads = clone_zeroed(d);
    decoder_backward(d, x, cache, dlogits, grads);

    std::vector<std::pair<std::string, std::span<double>>> params, analytic;
    visit_params(d, [&](const std::string& n, std::span<double> p) { params.emplace_back(n, p); });
    visit_params(grads,
                 [&](const std::string& n, std::span<double> p) { analytic.emplace_back(n, p); });
    REQUIRE(params.size() == analytic.size());
    Rng pick(808);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto loss = [&]() { return decoder_loss(d, x, targets, keep, drop_seed); };
        const auto report = grad_check(loss, params[i].second,
                                       std::span<const double>(analytic[i].second), 1e-5,
                                       std::min<std::size_t>(params[i].second.size(), 24), pick);
        INFO("tensor ", params[i].first, " worst coord ", report.worst_coord, " analytic ",
             report.worst_analytic, " numeric ", report.worst_numeric);
        CHECK(report.max_rel_error < 1e-4);
    }
}

} // namespace

TEST_CASE("decoder parameter count matches a direct tally") {
    const std::vector<int> hidden{752, 752};
    // 320*752+752 (first) + 752*752+752 (second) + 752*30+30 (output)
    CHECK(decoder_param_count(320, hidden, 30) == 830238);

    auto dec = make_decoder<float>(320, hidden, 30, 7);
    std::size_t tallied = 0;
    visit_params(dec, [&](const std::string&, std::span<const float> p) { tallied += p.size(); });
    CHECK(tallied == decoder_param_count(dec));
    CHECK(decoder_param_count(dec) == 830238);
}

TEST_CASE("uniform-width sizing returns the smallest width reaching the floor") {
    const std::size_t floor = 830080; // kernel + embedding of a [1,320] model over 30 symbols
    const auto widths = size_decoder(320, floor, 30, 2);
    REQUIRE(widths == std::vector<int>{752, 752});
    CHECK(decoder_param_count(320, widths, 30) >= floor);
    CHECK(decoder_param_count(320, std::vector<int>{751, 751}, 30) < floor);

    SUBCASE("zero floor collapses to the minimum width") {
        CHECK(size_decoder(320, 0, 30, 2) == std::vector<int>{1, 1});
        CHECK(size_decoder(8, 0, 5, 3) == std::vector<int>{1, 1, 1});
    }
    SUBCASE("added depth never shrinks capacity at fixed width") {
        for (int w : {1, 16, 300})
            CHECK(decoder_param_count(64, std::vector<int>(4, w), 30) >=
                  decoder_param_count(64, std::vector<int>(2, w), 30));
    }
    SUBCASE("one past the result is also above the floor") {
        CHECK(decoder_param_count(320, std::vector<int>{753, 753}, 30) >= floor);
    }
    SUBCASE("bad shapes are rejected") {
        CHECK_THROWS_AS(size_decoder(0, 10, 5, 2), UsageError);
        CHECK_THROWS_AS(size_decoder(8, 10, 0, 2), UsageError);
        CHECK_THROWS_AS(size_decoder(8, 10, 5, 0), UsageError);
    }
}

TEST_CASE("decoder construction is seed-deterministic and validated") {
    auto a = make_decoder<float>(12, {9, 9}, 4, 42);
    auto b = make_decoder<float>(12, {9, 9}, 4, 42);
    auto c = make_decoder<float>(12, {9, 9}, 4, 43);
    CHECK(a.w[0].data == b.w[0].data);
    CHECK(a.w[2].data == b.w[2].data);
    CHECK(a.w[0].data != c.w[0].data);
    CHECK(a.layer_count() == 3);

    CHECK_THROWS_AS(make_decoder<float>(0, {4}, 4, 1), UsageError);
    CHECK_THROWS_AS(make_decoder<float>(4, {0}, 4, 1), UsageError);
    CHECK_THROWS_AS(make_decoder<float>(4, {4}, 0, 1), UsageError);
}

TEST_CASE("decoder gradients match central differences") {
    Rng rng(31);
    auto d = make_decoder<double>(9, {7, 6}, 4, 99);
    MatD x = MatD::uniform(5, 9, -1.0, 1.0, rng);
    std::vector<std::int32_t> targets{0, 3, 1, 2, 3};
    check_decoder_gradients(d, x, targets, 1.0, 0);

    SUBCASE("with a fixed dropout mask") {
        check_decoder_gradients(d, x, targets, 0.7, 17);
    }
    SUBCASE("with no hidden layers") {
        auto lin = make_decoder<double>(9, {}, 4, 5);
        check_decoder_gradients(lin, x, targets, 1.0, 0);
    }
}

TEST_CASE("dropout scales survivors and zeroes the rest") {
    Rng rng(7);
    auto d = make_decoder<float>(6, {64}, 3, 11);
    MatF x = MatF::uniform(40, 6, -1.0f, 1.0f, rng);

    DecoderCache<float> off_cache;
    decoder_forward(d, x, DropoutMode::off, 1.0, nullptr, off_cache);

    SUBCASE("keep = 1 in train mode is bit-exact with off mode") {
        Rng drop(3);
        DecoderCache<float> on_cache;
        decoder_forward(d, x, DropoutMode::train, 1.0, &drop, on_cache);
        CHECK(on_cache.logits.data == off_cache.logits.data);
    }
    SUBCASE("keep = 0.6 zeroes about 40% and rescales the rest") {
        Rng drop(3);
        DecoderCache<float> on_cache;
        decoder_forward(d, x, DropoutMode::train, 0.6, &drop, on_cache);
        std::size_t zeros = 0, live = 0;
        for (int i = 0; i < on_cache.a[0].rows; ++i) {
            for (int j = 0; j < on_cache.a[0].cols; ++j) {
                const float base = off_cache.a[0].at(i, j);
                const float dropped = on_cache.a[0].at(i, j);
                if (on_cache.drop[0].at(i, j) == 0.0f) {
                    CHECK(dropped == 0.0f);
                    ++zeros;
                } else {
                    CHECK(dropped == doctest::Approx(base / 0.6f).epsilon(1e-5));
                    ++live;
                }
            }
        }
        const double frac = double(zeros) / double(zeros + live);
        CHECK(frac == doctest::Approx(0.4).epsilon(0.15));
    }
    SUBCASE("train mode rejects a missing rng and a bad keep") {
        Rng drop(3);
        DecoderCache<float> cache;
        CHECK_THROWS_AS(decoder_forward(d, x, DropoutMode::train, 0.5, nullptr, cache), UsageError);
        CHECK_THROWS_AS(decoder_forward(d, x, DropoutMode::train, 0.0, &drop, cache), UsageError);
        CHECK_THROWS_AS(decoder_forward(d, x, DropoutMode::train, 1.5, &drop, cache), UsageError);
    }
    SUBCASE("input width mismatches are shape errors") {
        MatF bad(4, 5);
        DecoderCache<float> cache;
        CHECK_THROWS_AS(decoder_forward(d, bad, DropoutMode::off, 1.0, nullptr, cache), ShapeError);
    }
}
