#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "psiflow/errors.hpp"
#include "psiflow/harness/stats.hpp"
#include "psiflow/partitions.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

using namespace psiflow;

namespace {

Partition P(std::size_t n, std::vector<std::vector<std::size_t>> blocks) { return Partition::from_blocks(n, blocks); }

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng)
{
    std::vector<std::size_t> tau(n);
    std::iota(tau.begin(), tau.end(), 0);
    for (std::size_t i = n; i > 1; --i)
        std::swap(tau[i - 1], tau[rng() % i]);
    return tau;
}

} // namespace

TEST_CASE("constructors are canonical")
{
    auto a = P(4, {{4, 2}, {1, 3}});
    CHECK(a.to_string() == "{1,3}{2,4}");
    CHECK(a.is_canonical());
    CHECK(Partition::from_labels(a.labels()) == a);
    CHECK(Partition::trivial(5).is_trivial());
    CHECK(Partition::singletons(5).is_singletons());
    CHECK(Partition::single_block(5, {4, 2}).to_string() == "{1}{2,4}{3}{5}");
    auto b = Partition::from_labels({7, 3, 7, 9});
    CHECK(b.to_string() == "{1,3}{2}{4}");
    CHECK(Partition::from_labels(b.labels()) == b);
    Rng rng(3);
    for (int k = 0; k < 200; ++k)
    {
        auto r = random_partition(12, 5, rng);
        CHECK(r.is_canonical());
        CHECK(Partition::from_labels(r.labels()) == r);
        auto pb = paintbox_mass(MassPartition({0.5, 0.2}), 12, rng);
        CHECK(pb.is_canonical());
        CHECK(Partition::from_labels(pb.labels()) == pb);
    }
    CHECK_THROWS_AS(P(3, {{1, 2}}), DomainError);
    CHECK_THROWS_AS(P(3, {{1, 2}, {2, 3}}), DomainError);
}

TEST_CASE("coag examples")
{
    auto pi = P(4, {{1, 3}, {2}, {4}});
    auto pi_prime = P(3, {{1, 2}, {3}});
    CHECK(coag(pi, pi_prime) == P(4, {{1, 2, 3}, {4}}));
    CHECK(coag(pi, Partition::singletons(3)) == pi);
    CHECK(coag(pi, Partition::singletons(7)) == pi);
    auto other = P(6, {{1, 5}, {2, 3, 6}, {4}});
    CHECK(coag(Partition::singletons(4), other) == other.restrict(4));
    CHECK_THROWS_AS(coag(pi, Partition::singletons(2)), DomainError);
}

TEST_CASE("coag associativity on random triples")
{
    Rng rng(2024);
    for (int k = 0; k < 10000; ++k)
    {
        std::size_t n = 1 + rng() % 30;
        auto a = random_partition(n, 1 + rng() % n, rng);
        auto b = random_partition(a.block_count() + rng() % 3, 1 + rng() % (a.block_count() + 2), rng);
        auto c = random_partition(b.block_count() + rng() % 3, 1 + rng() % (b.block_count() + 2), rng);
        REQUIRE(coag(a, coag(b, c)) == coag(coag(a, b), c));
    }
}

TEST_CASE("distance")
{
    auto a = P(3, {{1, 2}, {3}});
    CHECK(distance(a, a) == 0.0);
    CHECK(distance(a, Partition::trivial(3)) == 0.25);
    CHECK(distance(Partition::singletons(2), Partition::trivial(2)) == 0.5);
    CHECK(distance(Partition::trivial(3), Partition::trivial(5)) == 0.0);
}

TEST_CASE("coag is non-expansive in its second argument")
{
    Rng rng(77);
    for (int k = 0; k < 5000; ++k)
    {
        std::size_t n = 2 + rng() % 20;
        auto pi = random_partition(n, 1 + rng() % n, rng);
        std::size_t m = pi.block_count() + rng() % 3;
        auto b = random_partition(m, 1 + rng() % m, rng);
        auto c = random_partition(m, 1 + rng() % m, rng);
        CHECK(distance(coag(pi, b), coag(pi, c)) <= distance(b, c));
    }
}

TEST_CASE("paint-box on mass partitions")
{
    Rng rng(9);
    CHECK(paintbox_mass(MassPartition({1.0}), 10, rng).is_trivial());
    CHECK(paintbox_mass(MassPartition(std::vector<double>{}), 10, rng).is_singletons());
    CHECK(paintbox_mass(MassPartition({0.0, 0.0}), 10, rng).is_singletons());
    CHECK_THROWS_AS(MassPartition({0.2, 0.5}), DomainError);
    CHECK_THROWS_AS(MassPartition({0.7, 0.5}), DomainError);

    harness::RunningMoments together;
    for (int k = 0; k < 100000; ++k)
        together.add(paintbox_mass(MassPartition({0.5}), 2, rng).same_block(0, 1) ? 1.0 : 0.0);
    CHECK(harness::z_gate("pair", together, 0.25).passed());
}

TEST_CASE("paint-box of a subordinator")
{
    Rng rng(10);
    CHECK(paintbox_subordinator({2.5}, 2.5, 0.0, 8, rng).is_trivial());
    CHECK(paintbox_subordinator({}, 0.0, 0.0, 8, rng).is_trivial());
    CHECK_THROWS_AS(paintbox_subordinator({1.0}, 3.0, 0.0, 4, rng), ConsistencyError);
    harness::RunningMoments together;
    for (int k = 0; k < 100000; ++k)
        together.add(paintbox_subordinator({1.0, 1.0}, 2.0, 0.0, 2, rng).same_block(0, 1) ? 1.0 : 0.0);
    CHECK(harness::z_gate("pair", together, 0.5).passed());
    // drift mass becomes dust
    auto dusty = paintbox_subordinator({1.0}, 4.0, 3.0, 20000, rng);
    double dust = static_cast<double>(dusty.singleton_count()) / 20000.0;
    CHECK(std::abs(dust - 0.75) <= 4.0 * std::sqrt(0.75 * 0.25 / 20000.0));
}

TEST_CASE("block frequencies")
{
    CHECK(block_frequencies(Partition::trivial(4)) == std::vector<double>{1.0});
    CHECK(block_frequencies(P(4, {{1, 3}, {2}, {4}})) == std::vector<double>{0.5, 0.25, 0.25});
    Rng rng(12);
    const std::size_t n = 100000;
    auto pi = paintbox_mass(MassPartition({0.3}), n, rng);
    double dust = static_cast<double>(pi.singleton_count()) / n;
    CHECK(std::abs(dust - 0.7) <= 4.0 * std::sqrt(0.7 * 0.3 / n));
}

TEST_CASE("paint-box exchangeability")
{
    Rng rng(31337);
    MassPartition s({0.4, 0.25, 0.1});
    for (std::size_t n : {3u, 4u, 5u})
    {
        std::map<std::string, double> plain, permuted;
        for (int k = 0; k < 100000; ++k)
        {
            plain[paintbox_mass(s, n, rng).to_string()] += 1.0;
            auto tau = random_permutation(n, rng);
            permuted[permute(paintbox_mass(s, n, rng), tau).to_string()] += 1.0;
        }
        auto gate = harness::chi_square_homogeneity("exchangeability", plain, permuted);
        INFO("n=" << n << " p=" << gate.p_value);
        CHECK(gate.passed());
    }
}

TEST_CASE("json encoding")
{
    auto pi = P(5, {{1, 4}, {2, 3}, {5}});
    auto j = partition_to_json(pi);
    CHECK(j.dump() == R"({"blocks":[[1,4],[2,3],[5]],"n":5})");
    CHECK(partition_from_json(j) == pi);
    CHECK_THROWS_AS(partition_from_json(nlohmann::json::parse(R"({"n":3,"blocks":[[2,3],[1]]})")), ConfigError);
    CHECK_THROWS_AS(partition_from_json(nlohmann::json::parse(R"({"n":3,"blocks":[[1,2]]})")), ConfigError);
}
