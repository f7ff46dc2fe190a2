#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "psiflow/errors.hpp"
#include "psiflow/levy_csbp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

using namespace psiflow;

namespace {

struct Moments
{
    double sum = 0.0, sum2 = 0.0;
    int count = 0;
    void add(double x)
    {
        sum += x;
        sum2 += x * x;
        ++count;
    }
    double mean() const { return sum / count; }
    double se() const
    {
        double m = mean();
        return std::sqrt(std::max(0.0, sum2 / count - m * m) / (count - 1));
    }
};

BranchingMechanism quadratic() { return BranchingMechanism::feller(std::sqrt(2.0)); }

} // namespace

TEST_CASE("pure drift levy path")
{
    auto y = simulate_levy(BranchingMechanism(-1.0, 0.0), 1.0, 1e-3, 1e-4, 1);
    REQUIRE(y.times.size() > 900);
    for (std::size_t i = 0; i < y.times.size(); ++i)
        CHECK(y.values[i] == doctest::Approx(1.0 + y.times[i]).epsilon(1e-12));
    CHECK(y.times.back() == doctest::Approx(1.0));
    CHECK(y.jumps.empty());
    CHECK_FALSE(y.gaussian_correction_used);
}

TEST_CASE("brownian increment variance")
{
    LevyOptions o;
    o.horizon = 0.5;
    o.step = 1e-2;
    o.stop_at_zero = false;
    Moments m;
    for (int r = 0; r < 10000; ++r)
    {
        Rng rng(1000 + r);
        auto y = simulate_levy(quadratic(), o, rng);
        double d = y.values.back() - y.values.front();
        m.add(d * d);
    }
    CHECK(std::abs(m.mean() - 1.0) <= 4.0 * m.se());
}

TEST_CASE("poisson jump count")
{
    // alpha = -1 cancels the compensation of the unit atom
    BranchingMechanism mech(-1.0, 0.0, LevyMeasure(FiniteAtoms{{{1.0, 1.0}}}));
    Moments m;
    for (int r = 0; r < 10000; ++r)
    {
        auto y = simulate_levy(mech, 1.0, 1e-2, 1e-4, 5000 + r);
        m.add(static_cast<double>(y.jumps.size()));
        for (std::size_t i = 1; i < y.times.size(); ++i)
            REQUIRE(y.values[i] >= y.values[i - 1]);
    }
    CHECK(std::abs(m.mean() - 1.0) <= 4.0 * m.se());
}

TEST_CASE("jumps respect the truncation threshold")
{
    BranchingMechanism mech(0.0, 0.0, LevyMeasure(StableDensity{1.2, 1.0}));
    auto y = simulate_levy(mech, 1.0, 1e-3, 1e-3, 3);
    REQUIRE(!y.jumps.empty());
    for (std::size_t k = 0; k < y.jumps.size(); ++k)
    {
        CHECK(y.jumps[k].size >= 1e-3);
        if (k > 0)
            CHECK(y.jumps[k].time >= y.jumps[k - 1].time);
    }
    CHECK(y.gaussian_correction_used);
}

TEST_CASE("invalid options")
{
    CHECK_THROWS_AS(simulate_levy(quadratic(), 1.0, 0.0, 1e-4, 1), ConfigError);
    CHECK_THROWS_AS(simulate_levy(quadratic(), 1.0, 1e-3, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(simulate_csbp(quadratic(), -1.0, 1e-3, 1e-4, 1), ConfigError);
}

TEST_CASE("lamperti of a constant path")
{
    LevyPath g;
    for (int i = 0; i <= 10; ++i)
    {
        g.times.push_back(0.1 * i);
        g.values.push_back(2.5);
    }
    auto z = lamperti_inverse(g);
    for (std::size_t i = 0; i < z.times.size(); ++i)
    {
        CHECK(z.values[i] == 2.5);
        CHECK(z.times[i] == doctest::Approx(g.times[i] / 2.5));
    }
    CHECK(z.marker.kind == Lifetime::Alive);
}

TEST_CASE("lamperti round trip")
{
    BranchingMechanism mech(0.2, 0.7, LevyMeasure(ExponentialDensity{2.0, 1.5}));
    for (int r = 0; r < 20; ++r)
    {
        auto y = simulate_levy(mech, 2.0, 1e-3, 1e-4, 77 + r);
        auto back = lamperti_forward(lamperti_inverse(y));
        REQUIRE(back.times.size() == y.times.size());
        double max_y = 0.0;
        for (double v : y.values)
            max_y = std::max(max_y, std::abs(v));
        double worst = 0.0;
        for (std::size_t i = 0; i < y.times.size(); ++i)
        {
            worst = std::max(worst, std::abs(back.values[i] - y.values[i]));
            worst = std::max(worst, std::abs(back.times[i] - y.times[i]));
        }
        CHECK(worst <= 2.0 * 1e-3 * max_y);
        CHECK(back.jumps.size() == y.jumps.size());
    }
}

TEST_CASE("lamperti of a linear path is exponential growth")
{
    auto y = simulate_levy(BranchingMechanism(-1.0, 0.0), 3.0, 1e-4, 1e-4, 1);
    auto z = lamperti_inverse(y);
    // Y = 1 + s gives dZ = Z dt
    for (std::size_t i = 0; i < z.times.size(); i += 100)
        CHECK(std::abs(z.values[i] - std::exp(z.times[i])) <= 5e-4 * z.values[i]);
}

TEST_CASE("linear mechanism decays deterministically")
{
    auto z = simulate_csbp(BranchingMechanism(1.0, 0.0), 2.0, 1e-3, 1e-4, 9);
    CHECK(z.marker.kind == Lifetime::Alive);
    for (double t : {0.5, 1.0, 2.0})
        CHECK(std::abs(z.value(t) - std::exp(-t)) <= 2e-3 * std::exp(-t));
}

TEST_CASE("feller diffusion extinction and laplace transform")
{
    Moments extinct, laplace;
    for (int r = 0; r < 10000; ++r)
    {
        auto z = simulate_csbp(quadratic(), 1.0, 1e-3, 1e-4, 424242 + 31 * r);
        extinct.add(z.value(1.0) == 0.0 ? 1.0 : 0.0);
        laplace.add(std::exp(-z.value(1.0)));
    }
    CHECK(std::abs(extinct.mean() - std::exp(-1.0)) <= 4.0 * extinct.se());
    CHECK(std::abs(laplace.mean() - std::exp(-0.5)) <= 4.0 * laplace.se() + 3e-3);
}

TEST_CASE("absorption and jump bookkeeping")
{
    BranchingMechanism mech(0.0, 1.0, LevyMeasure(ExponentialDensity{1.0, 2.0}));
    int extinct = 0;
    for (int r = 0; r < 200; ++r)
    {
        auto z = simulate_csbp(mech, 5.0, 1e-3, 1e-4, 900 + r);
        REQUIRE(z.source);
        // Lamperti changes time, not jump sizes
        std::vector<double> a, b;
        for (const auto& j : z.source->jumps)
            a.push_back(j.size);
        for (const auto& j : z.jumps)
        {
            b.push_back(j.delta);
            CHECK(j.delta > 0.0);
            CHECK(j.fraction() > 0.0);
            CHECK(j.fraction() < 1.0);
            CHECK(j.z - j.z_minus == doctest::Approx(j.delta));
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
        for (double v : z.values)
            CHECK(v >= 0.0);
        if (z.marker.kind == Lifetime::Extinct)
        {
            ++extinct;
            CHECK(z.values.back() == 0.0);
            CHECK(z.value(z.marker.time) == 0.0);
            CHECK(z.value(z.marker.time + 1.0) == 0.0);
        }
    }
    CHECK(extinct > 0);
}

TEST_CASE("explosion marker for a non-conservative mechanism")
{
    const double sp = std::sqrt(std::numbers::pi);
    BranchingMechanism mech(-1.0 / sp, 0.0, LevyMeasure(StableDensity{0.5, 0.5 / sp}));
    auto z = simulate_csbp(mech, 50.0, 1e-3, 1e-4, 17);
    CHECK(z.marker.kind == Lifetime::Exploded);
    CHECK(std::isinf(z.value(z.marker.time + 1.0)));
}

TEST_CASE("T(eps)")
{
    CsbpPath flat;
    flat.times = {0.0, 0.5, 1.0};
    flat.values = {1.0, 1.0, 1.0};
    flat.horizon = 1.0;
    flat.marker = {Lifetime::Alive, 1.0};
    CHECK(stopping_time_T_eps(flat, 0.5) == 1.0);

    CsbpPath jump = flat;
    jump.times = {0.0, 0.4, 1.0};
    jump.values = {1.0, 3.0, 3.0};
    jump.jumps = {{0.4, 2.0, 1.0, 3.0}};
    CHECK(stopping_time_T_eps(jump, 0.5) == 0.4);
    CHECK_THROWS_AS(stopping_time_T_eps(flat, 1.5), DomainError);

    for (int r = 0; r < 200; ++r)
    {
        auto z = simulate_csbp(quadratic(), 20.0, 1e-3, 1e-4, 3000 + r);
        double t = stopping_time_T_eps(z, 0.9);
        CHECK(t > 0.0);
        CHECK(t < z.horizon);
    }
}

TEST_CASE("jump fraction sum is stable under halving the truncation")
{
    // critical stable(1.5): alpha = scale / (index - 1) makes Psi'(0+) = 0
    BranchingMechanism mech(2.0, 0.0, LevyMeasure(StableDensity{1.5, 1.0}));
    auto mean_sum = [&](double delta) {
        Moments m;
        for (int r = 0; r < 500; ++r)
        {
            CsbpOptions o;
            o.horizon = 1.0;
            o.step = 1e-3;
            o.jump_truncation = delta;
            Rng rng(60000 + r);
            auto z = simulate_csbp(mech, o, rng);
            m.add(squared_jump_fraction_sum(z, stopping_time_T_eps(z, 0.2)));
        }
        return m.mean();
    };
    double coarse = mean_sum(1e-3);
    double fine = mean_sum(5e-4);
    CHECK(std::isfinite(coarse));
    INFO("coarse " << coarse << " fine " << fine);
    CHECK(std::abs(fine - coarse) <= 0.1 * coarse);
}

TEST_CASE("csv export")
{
    auto z = simulate_csbp(BranchingMechanism(0.0, 0.0, LevyMeasure(FiniteAtoms{{{1.0, 1.0}}})), 1.0, 1e-2, 1e-4, 4);
    std::ostringstream traj, jumps;
    write_trajectory_csv(z, traj);
    write_jumps_csv(z, jumps);
    CHECK(traj.str().rfind("time,Z\n", 0) == 0);
    CHECK(jumps.str().rfind("s,delta,Z_minus,Z\n", 0) == 0);
    const std::string text = jumps.str();
    auto lines = std::count(text.begin(), text.end(), '\n');
    CHECK(lines == static_cast<long>(z.jumps.size()) + 1);
}
