#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "core/rng.hpp"

using namespace memsig;

TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.uniform() == b.uniform());
    Rng c(43);
    bool any_diff = false;
    Rng a2(42);
    for (int i = 0; i < 100; ++i) any_diff |= a2.uniform() != c.uniform();
    CHECK(any_diff);
}

TEST_CASE("uniform stays in range") {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform(-2.5, 7.5);
        CHECK(u >= -2.5);
        CHECK(u < 7.5);
    }
    for (int i = 0; i < 1000; ++i) CHECK(rng.below(17) < 17);
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng rng(5);
    const int n = 20000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes without loss") {
    Rng rng(9);
    std::vector<int> v(100);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    rng.shuffle(w);
    CHECK(w != v); // astronomically unlikely to be identity
    std::sort(w.begin(), w.end());
    CHECK(w == v);
}

TEST_CASE("forked streams diverge from the parent") {
    Rng a(7);
    Rng child = a.fork(1);
    Rng a2(7);
    bool differs = false;
    for (int i = 0; i < 50; ++i) differs |= child.uniform() != a2.uniform();
    CHECK(differs);
    // fork is a pure function of (state, salt)
    Rng b(7);
    Rng c1 = b.fork(3);
    Rng b2(7);
    Rng c2 = b2.fork(3);
    for (int i = 0; i < 50; ++i) CHECK(c1.uniform() == c2.uniform());
}

TEST_CASE("fnv1a matches the reference vectors") {
    CHECK(fnv1a(nullptr, 0) == 0xcbf29ce484222325ull);
    const char* s = "abc";
    CHECK(fnv1a(s, 3) == 0xe71fa2190541574bull);
    // chaining equals one pass
    const std::uint64_t h1 = fnv1a(s, 1);
    CHECK(fnv1a(s + 1, 2, h1) == fnv1a(s, 3));
}
