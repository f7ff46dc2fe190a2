#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "psiflow/errors.hpp"
#include "psiflow/harness/stats.hpp"
#include "psiflow/lookdown_eve.hpp"

#include <cmath>

using namespace psiflow;

namespace {

std::shared_ptr<const CsbpPath> extinct_feller_path(const BranchingMechanism& m, Rng& rng)
{
    CsbpOptions o;
    o.horizon = 200.0;
    o.step = 1e-3;
    for (;;)
    {
        auto p = std::make_shared<const CsbpPath>(simulate_csbp(m, o, rng));
        if (p->marker.kind == Lifetime::Extinct)
            return p;
    }
}

Partition P(std::size_t n, std::vector<std::vector<std::size_t>> blocks) { return Partition::from_blocks(n, blocks); }

} // namespace

TEST_CASE("lookdown type map")
{
    auto f = make_flow(4, 1.0, {{0.5, {1, 2}}});
    std::vector<double> types = {0.1, 0.2, 0.3, 0.4};
    auto same = run_lookdown(f, 0.3, types, 0.3);
    CHECK(same.type_of_level == types);
    auto st = run_lookdown(f, 0.0, types, 1.0);
    CHECK(st.type_of_level == std::vector<double>{0.1, 0.1, 0.2, 0.3});
    CHECK_THROWS_AS(run_lookdown(f, 0.0, {0.1, 0.1, 0.3, 0.4}, 1.0), DomainError);
    CHECK_THROWS_AS(run_lookdown(f, 0.0, {0.1, 0.2}, 1.0), DomainError);

    // types present are always a subset of the initial ones
    for (double x : st.type_of_level)
        CHECK(std::find(types.begin(), types.end(), x) != types.end());
    // frequency of the first type is the first block frequency
    double count = 0.0;
    for (double x : st.type_of_level)
        count += x == types[0];
    CHECK(count / 4.0 == block_frequencies(st.partition)[0]);
}

TEST_CASE("empirical measures")
{
    LookdownState st;
    st.n = 5;
    st.initial_types = {0.5, 0.1, 0.9, 0.3, 0.7};
    st.partition = Partition::singletons(5);
    auto m = empirical_measure(st);
    CHECK(m.atoms.empty());
    CHECK(m.dust == 1.0);

    st.partition = Partition::trivial(5);
    m = empirical_measure(st);
    REQUIRE(m.atoms.size() == 1);
    CHECK(m.atoms[0] == std::pair<double, double>{0.5, 1.0});
    CHECK(m.dust == 0.0);

    st.partition = P(5, {{1, 4}, {2}, {3, 5}});
    m = empirical_measure(st);
    double total = m.dust;
    for (const auto& a : m.atoms)
        total += a.second;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(3);
    harness::RunningMoments top;
    const std::size_t n = 10000;
    st.n = n;
    st.initial_types = uniform_types(n, rng);
    for (int k = 0; k < 200; ++k)
    {
        st.partition = paintbox_mass(MassPartition({0.3}), n, rng);
        top.add(empirical_measure(st).max_weight());
    }
    CHECK(harness::z_gate("top atom", top, 0.3).passed());
}

TEST_CASE("eve criterion on bounded paths")
{
    Rng rng(4);
    CsbpOptions o;
    o.horizon = 1.0;
    auto drift = BranchingMechanism(1.0, 0.0);
    for (int k = 0; k < 20; ++k)
    {
        auto r = check_eve_criterion(simulate_csbp(drift, o, rng), drift);
        CHECK(r.statistic == 0.0);
        CHECK(r.verdict == EveVerdict::Bounded);
    }
    // finitely many jumps, none in the last decade of a surviving path
    auto atoms = BranchingMechanism(0.0, 0.0, LevyMeasure(FiniteAtoms{{{1.0, 1.0}}}));
    int bounded = 0, survived = 0;
    for (int k = 0; k < 200; ++k)
    {
        auto p = simulate_csbp(atoms, o, rng);
        if (p.marker.kind != Lifetime::Alive)
            continue;
        ++survived;
        auto r = check_eve_criterion(p, atoms);
        bounded += r.verdict == EveVerdict::Bounded;
        CHECK(r.statistic <= static_cast<double>(p.jumps.size()));
    }
    CHECK(survived > 150);
    CHECK(bounded >= 0.95 * survived);
}

TEST_CASE("eve criterion on extinct Feller paths")
{
    auto m = BranchingMechanism::feller(std::sqrt(2.0));
    Rng rng(5);
    int plateau = 0, below_default = 0, diverging_low = 0;
    EveCriterionOptions low;
    low.threshold = 1.0;
    for (int k = 0; k < 200; ++k)
    {
        auto p = extinct_feller_path(m, rng);
        auto r = check_eve_criterion(*p, m);
        plateau += r.verdict == EveVerdict::Bounded;
        // the sum diverges like log(1/resolution): far below the default threshold at step 1e-3
        below_default += r.statistic < 1e3;
        diverging_low += check_eve_criterion(*p, m, low).verdict == EveVerdict::Diverging;
        for (std::size_t i = 1; i < r.trajectory.size(); ++i)
            REQUIRE(r.trajectory[i].second >= r.trajectory[i - 1].second);
    }
    CHECK(plateau == 0);
    CHECK(below_default == 200);
    CHECK(diverging_low >= 190);
}

TEST_CASE("eve estimate")
{
    EmpiricalMeasure single;
    single.atoms = {{0.25, 1.0}};
    single.dust = 0.0;
    auto e = eve_estimate({single});
    CHECK(e.has_eve);
    CHECK(e.location == 0.25);
    CHECK(e.max_weight_trajectory == std::vector<double>{1.0});
    CHECK_FALSE(eve_estimate({EmpiricalMeasure{}}).has_eve);
    CHECK_FALSE(eve_estimate({}).has_eve);
}

TEST_CASE("Feller genealogy concentrates on one Eve with a uniform location")
{
    auto m = BranchingMechanism::feller(std::sqrt(2.0));
    Rng rng(6);
    harness::RunningMoments final_weight;
    std::vector<double> locations;
    const std::size_t n = 100;
    for (int k = 0; k < 500; ++k)
    {
        auto p = extinct_feller_path(m, rng);
        const double T = p->marker.time;
        auto f = build_flow(p, m, n, rng, 0.95 * T);
        auto types = uniform_types(n, rng);
        std::vector<EmpiricalMeasure> measures;
        std::size_t blocks = n;
        for (double frac : {0.25, 0.5, 0.75, 0.95})
        {
            auto st = run_lookdown(f, 0.0, types, frac * T);
            REQUIRE(st.partition.block_count() <= blocks);
            blocks = st.partition.block_count();
            measures.push_back(empirical_measure(st));
        }
        auto e = eve_estimate(measures);
        REQUIRE(e.has_eve);
        if (k < 200)
            final_weight.add(e.max_weight_trajectory.back());
        locations.push_back(e.location);
    }
    INFO("mean final max weight " << final_weight.mean());
    CHECK(final_weight.mean() >= 0.9);
    CHECK(harness::ks_uniform("eve location", locations).passed());
}

TEST_CASE("dust frequency")
{
    auto atoms = BranchingMechanism(0.0, 0.0, LevyMeasure(FiniteAtoms{{{1.0, 1.0}}}));
    auto flat = std::make_shared<CsbpPath>();
    flat->times = {0.0, 1.0};
    flat->values = {1.0, 1.0};
    flat->marker = {Lifetime::Alive, 1.0};
    flat->horizon = 1.0;
    Rng rng(7);
    auto d0 = dust_frequency_check(build_flow(flat, atoms, 50, rng), 1.0);
    CHECK(d0.empirical == 1.0);
    CHECK(d0.predicted == 1.0);

    auto jump = std::make_shared<CsbpPath>(*flat);
    jump->times = {0.0, 0.5, 1.0};
    jump->values = {1.0, 2.0, 2.0};
    jump->jumps = {CsbpJump{0.5, 1.0, 1.0, 2.0}};
    harness::RunningMoments dust;
    for (int k = 0; k < 200; ++k)
    {
        auto d = dust_frequency_check(build_flow(jump, atoms, 1000, rng), 1.0);
        CHECK(d.predicted == 0.5);
        dust.add(d.empirical);
    }
    CHECK(harness::z_gate("dust", dust, 0.5).passed());

    auto feller = BranchingMechanism::feller(std::sqrt(2.0));
    CHECK(dust_frequency_check(build_flow(flat, feller, 50, rng), 1.0).predicted == 0.0);
}

TEST_CASE("behaviour classification")
{
    Rng rng(8);
    CsbpOptions o;
    auto feller = BranchingMechanism::feller(std::sqrt(2.0));
    auto p = extinct_feller_path(feller, rng);
    auto f = build_flow(p, feller, 10, rng, 0.95 * p->marker.time);
    auto r = classify_behaviour(*p, feller, &f);
    CHECK(r.behaviour == Behaviour::Extinction);
    CHECK_FALSE(r.undecided);
    for (std::size_t i = 1; i < r.exits.size(); ++i)
    {
        CHECK(r.exits[i].time >= r.exits[i - 1].time);
        CHECK(r.exits[i].ancestor < r.exits[i - 1].ancestor);
    }
    CHECK(r.exits.size() + r.survivors_by_weight.size() == 10);

    auto explosive = BranchingMechanism::minus_sqrt();
    o.horizon = 10.0;
    o.step = 1e-2;
    for (int k = 0; k < 5; ++k)
        CHECK(classify_behaviour(simulate_csbp(explosive, o, rng), explosive).behaviour == Behaviour::Explosion);

    auto neveu = BranchingMechanism::neveu();
    o.horizon = 1.0;
    o.jump_truncation = 1e-3;
    for (int k = 0; k < 5; ++k)
    {
        auto q = simulate_csbp(neveu, o, rng);
        auto b = classify_behaviour(q, neveu);
        CHECK(b.behaviour == Behaviour::InfLifeNoExtinct);
        CHECK_FALSE(b.undecided);
    }

    // alive at the horizon with extinction still ahead
    CsbpOptions short_run;
    short_run.horizon = 0.01;
    auto undecided = classify_behaviour(simulate_csbp(feller, short_run, rng), feller);
    CHECK(undecided.undecided);
}

TEST_CASE("decomposition check")
{
    auto feller = BranchingMechanism::feller(std::sqrt(2.0));
    Rng rng(9);
    CsbpOptions o;
    o.horizon = 0.5;
    auto p = std::make_shared<const CsbpPath>(simulate_csbp(feller, o, rng));
    auto f = build_flow(p, feller, 400, rng);
    auto eves = uniform_types(400, rng);
    CHECK(decomposition_check(f, 0.2, 0.2, 200, eves).tv == 0.0);

    auto all = make_flow(6, 1.0, {{0.5, {1, 2, 3, 4, 5, 6}}});
    auto whole = decomposition_check(all, 0.0, 1.0, 3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    CHECK(whole.tv == 0.0);
    CHECK(whole.atoms.size() == 1);

    harness::RunningMoments tv;
    for (int k = 0; k < 20; ++k)
    {
        auto q = std::make_shared<const CsbpPath>(simulate_csbp(feller, o, rng));
        if (q->marker.kind != Lifetime::Alive)
            continue;
        FlowOptions window;
        window.from = 0.25;
        auto g = build_flow(q, feller, 400, rng, window);
        tv.add(decomposition_check(g, 0.25, 0.5, 200, uniform_types(400, rng)).tv);
    }
    CHECK(tv.mean() <= 5.0 / std::sqrt(200.0));
}
