#include "test_util.hpp"

#include "rclarc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace rclarc;

TEST_CASE("SplitMix64 reference stream for seed 0") {
    SplitMix64 rng(0);
    CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);
    CHECK(rng.next_u64() == 0x6E789E6AA1B965F4ULL);
    CHECK(rng.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("uniform uses the top 53 bits") {
    SplitMix64 a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        const double u = a.uniform();
        CHECK(u == static_cast<double>(b.next_u64() >> 11) * 0x1.0p-53);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("normal consumes two words, cosine branch") {
    SplitMix64 a(7), b(7);
    for (int i = 0; i < 50; ++i) {
        const double u1 = 1.0 - b.uniform();
        const double u2 = b.uniform();
        const double want = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        CHECK(a.normal() == want);
    }
}

TEST_CASE("normal moments") {
    SplitMix64 rng(9);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::fabs(s / n) < 0.01);
    CHECK(std::fabs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("below stays in range and covers it") {
    SplitMix64 rng(11);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = rng.below(7);
        REQUIRE(v < 7);
        ++counts[v];
    }
    for (int c : counts) CHECK(c > 800);
    CHECK(rng.below(1) == 0);
}

TEST_CASE("shuffle is a seeded permutation") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto a = v, b = v;
    SplitMix64 r1(3), r2(3);
    r1.shuffle(a);
    r2.shuffle(b);
    CHECK(a == b);
    CHECK(a != v);
    std::sort(a.begin(), a.end());
    CHECK(a == v);
}

TEST_CASE("derived seeds differ per stream and are stable") {
    CHECK(derive_seed(1, 1) != derive_seed(1, 2));
    CHECK(derive_seed(1, 1) != derive_seed(2, 1));
    CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}
