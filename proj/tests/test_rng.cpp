#include <catch2/catch_amalgamated.hpp>

#include "nndp/numeric.hpp"
#include "nndp/rng.hpp"

using namespace nndp;

TEST_CASE("identical seed streams reproduce identical sequences", "[rng]") {
    SeedStream a(42, 7), b(42, 7);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct streams under one seed differ", "[rng]") {
    SeedStream a(42, 0), b(42, 1);
    int equal = 0;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() == b.next_u64()) ++equal;
    REQUIRE(equal == 0);
}

TEST_CASE("substream derivation is deterministic and independent of parent use", "[rng]") {
    SeedStream parent(9, 3);
    SeedStream child1 = parent.substream(5);
    parent.next_u64();
    parent.next_u64();
    SeedStream child2 = parent.substream(5);
    for (int i = 0; i < 16; ++i) REQUIRE(child1.next_u64() == child2.next_u64());
}

TEST_CASE("uniform draws live in [0,1) and normals have sane moments", "[rng]") {
    SeedStream s(123);
    RunningStats uniform_stats, normal_stats;
    for (int i = 0; i < 20000; ++i) {
        double u = s.next_uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        uniform_stats.add(u);
        normal_stats.add(s.next_normal());
    }
    REQUIRE(std::abs(uniform_stats.mean() - 0.5) < 0.01);
    REQUIRE(std::abs(normal_stats.mean()) < 0.03);
    REQUIRE(std::abs(normal_stats.variance() - 1.0) < 0.05);
}

TEST_CASE("tree sum matches plain sum and is order-stable", "[rng]") {
    std::vector<double> values;
    SeedStream s(5);
    double plain = 0.0;
    for (int i = 0; i < 1000; ++i) {
        values.push_back(s.next_uniform(-1.0, 1.0));
        plain += values.back();
    }
    REQUIRE(tree_sum(values) == Catch::Approx(plain).margin(1e-12));
    REQUIRE(tree_sum(values) == tree_sum(values));
}

TEST_CASE("welford statistics on constant input give exactly zero spread", "[rng]") {
    RunningStats stats;
    for (int i = 0; i < 7; ++i) stats.add(3.14159);
    REQUIRE(stats.mean() == 3.14159);
    REQUIRE(stats.variance() == 0.0);
    REQUIRE(stats.standard_error() == 0.0);
}
