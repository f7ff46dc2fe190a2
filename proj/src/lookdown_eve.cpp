#include "psiflow/lookdown_eve.hpp"

#include "psiflow/errors.hpp"

#include <algorithm>
#include <cmath>

namespace psiflow {

double EmpiricalMeasure::max_weight() const
{
    double w = 0.0;
    for (const auto& a : atoms)
        w = std::max(w, a.second);
    return w;
}

LookdownState run_lookdown(const PartitionFlow& f, double s, std::vector<double> initial_types, double t)
{
    if (initial_types.size() != f.n())
        throw DomainError("need exactly n initial types");
    auto sorted = initial_types;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw DomainError("initial types must be distinct");
    if (t < s)
        throw DomainError("run_lookdown needs s <= t");
    LookdownState st;
    st.n = f.n();
    st.start = s;
    st.time = t;
    st.partition = partition_between(f, s, t);
    st.type_of_level.resize(st.n);
    for (std::size_t j = 0; j < st.n; ++j)
        st.type_of_level[j] = initial_types[st.partition.label(j)];
    st.initial_types = std::move(initial_types);
    return st;
}

EmpiricalMeasure empirical_measure(const LookdownState& st)
{
    EmpiricalMeasure m;
    m.time = st.time;
    if (st.n == 0)
        return m;
    const double n = static_cast<double>(st.n);
    std::size_t singles = 0;
    auto sizes = st.partition.block_sizes();
    for (std::size_t b = 0; b < sizes.size(); ++b)
    {
        if (sizes[b] == 1)
            ++singles;
        else
            m.atoms.emplace_back(st.initial_types[b], static_cast<double>(sizes[b]) / n);
    }
    m.dust = static_cast<double>(singles) / n;
    return m;
}

std::vector<double> uniform_types(std::size_t n, Rng& rng)
{
    for (;;)
    {
        std::vector<double> types(n);
        for (auto& x : types)
            x = uniform01(rng);
        auto sorted = types;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end())
            return types;
    }
}

const char* to_string(EveVerdict v)
{
    switch (v)
    {
    case EveVerdict::Diverging:
        return "Diverging";
    case EveVerdict::Bounded:
        return "Bounded";
    case EveVerdict::Inconclusive:
        return "Inconclusive";
    }
    return "?";
}

nlohmann::json EveCriterionResult::to_json() const
{
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& [tau, s] : trajectory)
        traj.push_back({tau, s});
    return {{"statistic", statistic},
            {"last_decade_growth", last_decade_growth},
            {"verdict", to_string(verdict)},
            {"trajectory", traj}};
}

namespace {

double criterion_sum(const CsbpPath& p, double s2, double tau)
{
    double sum = 0.0;
    for (const auto& j : p.jumps)
    {
        if (j.time > tau)
            break;
        if (j.z > 0.0 && std::isfinite(j.z))
            sum += j.fraction() * j.fraction();
    }
    if (s2 > 0.0)
        sum += s2 * integrate_path(p, tau, [](double z) { return z > 0.0 && std::isfinite(z) ? 1.0 / z : 0.0; });
    return sum;
}

} // namespace

EveCriterionResult check_eve_criterion(const CsbpPath& p, const BranchingMechanism& m, const EveCriterionOptions& options)
{
    EveCriterionResult r;
    const double end = std::min(p.end_time(), p.horizon);
    const double s2 = m.sigma() * m.sigma();
    double resolution = options.resolution;
    if (!(resolution > 0.0))
    {
        resolution = p.times.size() >= 2 ? p.times.back() - p.times[p.times.size() - 2] : end;
        for (std::size_t i = p.times.size(); i-- > 1 && !(resolution > 0.0);)
            resolution = p.times[i] - p.times[i - 1];
    }
    if (!(end > 0.0))
    {
        r.verdict = EveVerdict::Bounded;
        return r;
    }
    resolution = std::clamp(resolution, end * 1e-12, end);
    for (int k = 0;; ++k)
    {
        double gap = end * std::pow(10.0, -0.5 * k);
        if (gap < resolution)
            break;
        double tau = end - gap;
        r.trajectory.emplace_back(tau, criterion_sum(p, s2, tau));
    }
    r.statistic = criterion_sum(p, s2, end);
    r.trajectory.emplace_back(end, r.statistic);
    double before = criterion_sum(p, s2, std::max(0.0, end - 10.0 * resolution));
    r.last_decade_growth = r.statistic > 0.0 ? (r.statistic - before) / r.statistic : 0.0;
    if (r.last_decade_growth < options.plateau)
        r.verdict = EveVerdict::Bounded;
    else if (r.statistic >= options.threshold)
        r.verdict = EveVerdict::Diverging;
    else
        r.verdict = EveVerdict::Inconclusive;
    return r;
}

EveEstimate eve_estimate(const std::vector<EmpiricalMeasure>& measures)
{
    EveEstimate e;
    for (const auto& m : measures)
        e.max_weight_trajectory.push_back(m.max_weight());
    if (measures.empty() || measures.back().atoms.empty())
        return e;
    const auto& atoms = measures.back().atoms;
    auto best = std::max_element(atoms.begin(), atoms.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    e.has_eve = true;
    e.location = best->first;
    return e;
}

DustCheck dust_frequency_check(const PartitionFlow& f, double t)
{
    DustCheck d;
    auto pi = partition_between(f, 0.0, t);
    d.empirical = f.n() ? static_cast<double>(pi.singleton_count()) / static_cast<double>(f.n()) : 1.0;
    if (f.mechanism().sigma() > 0.0)
    {
        d.predicted = 0.0;
        return d;
    }
    double prod = 1.0;
    for (const auto& j : f.path().jumps)
    {
        if (j.time > t)
            break;
        if (j.z > 0.0 && std::isfinite(j.z))
            prod *= 1.0 - j.fraction();
    }
    d.predicted = prod;
    return d;
}

const char* to_string(Behaviour b)
{
    switch (b)
    {
    case Behaviour::Extinction:
        return "Extinction";
    case Behaviour::Explosion:
        return "Explosion";
    case Behaviour::InfLifeNoExtinct:
        return "InfLifeNoExtinct";
    case Behaviour::InfLifePossibleExtinct:
        return "InfLifePossibleExtinct";
    }
    return "?";
}

nlohmann::json BehaviourReport::to_json() const
{
    nlohmann::json exits_json = nlohmann::json::array();
    for (const auto& e : exits)
        exits_json.push_back({{"ancestor", e.ancestor}, {"time", e.time}});
    nlohmann::json survivors = nlohmann::json::array();
    for (const auto& [a, w] : survivors_by_weight)
        survivors.push_back({{"ancestor", a}, {"weight", w}});
    return {{"behaviour", to_string(behaviour)}, {"undecided", undecided},     {"reason", reason},
            {"exits", exits_json},               {"survivors", survivors},     {"ordering_is_proxy", ordering_is_proxy}};
}

BehaviourReport classify_behaviour(const CsbpPath& p, const BranchingMechanism& m, const PartitionFlow* f)
{
    BehaviourReport r;
    switch (p.marker.kind)
    {
    case Lifetime::Extinct:
        r.behaviour = Behaviour::Extinction;
        r.reason = "path absorbed at 0";
        break;
    case Lifetime::Exploded:
        r.behaviour = Behaviour::Explosion;
        r.reason = "path reached the explosion ceiling";
        break;
    case Lifetime::Alive: {
        const double z = p.values.empty() ? 0.0 : p.values.back();
        if (!m.is_conservative())
        {
            r.behaviour = Behaviour::Explosion;
            r.undecided = true;
            r.reason = "non-conservative mechanism, path still finite at the horizon";
        }
        else if (!m.extinction_possible_in_finite_time())
        {
            r.behaviour = Behaviour::InfLifeNoExtinct;
            r.reason = "conservative and int^inf du/Psi = inf: infinite lifetime";
        }
        else if (m.gamma() > 0.0 && std::exp(-m.gamma() * z) < 0.01)
        {
            r.behaviour = Behaviour::InfLifePossibleExtinct;
            r.reason = "gamma > 0 and the path is unlikely to return to 0";
        }
        else
        {
            r.behaviour = Behaviour::Extinction;
            r.undecided = true;
            r.reason = "extinction in finite time possible but not reached by the horizon";
        }
        break;
    }
    }
    if (f == nullptr || r.behaviour == Behaviour::Explosion || f->n() > 4096)
        return r;

    // ancestors are the levels 1..k of the time-0 population still present in [n];
    // when the block count drops the highest ones have left
    FlowComposer acc(f->n());
    std::size_t blocks = f->n();
    for (const auto& e : f->events())
    {
        acc.apply(f->block(e));
        std::size_t now = acc.partition().block_count();
        for (std::size_t a = blocks; a > now; --a)
            r.exits.push_back({a, e.time});
        blocks = now;
    }
    auto sizes = acc.partition().block_sizes();
    for (std::size_t b = 0; b < sizes.size(); ++b)
        r.survivors_by_weight.emplace_back(b + 1, static_cast<double>(sizes[b]) / static_cast<double>(f->n()));
    std::stable_sort(r.survivors_by_weight.begin(), r.survivors_by_weight.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return r;
}

nlohmann::json DecompositionReport::to_json() const
{
    nlohmann::json list = nlohmann::json::array();
    for (const auto& a : atoms)
        list.push_back({{"eve", a.eve}, {"lookdown", a.lookdown}, {"reference", a.reference}});
    return {{"n", n},
            {"fine_n", fine_n},
            {"tv", tv},
            {"atoms_lookdown", atoms_lookdown},
            {"atoms_reference", atoms_reference},
            {"atoms", list}};
}

DecompositionReport decomposition_check(const PartitionFlow& f, double s, double t, std::size_t n,
                                        const std::vector<double>& eves)
{
    if (n < 1 || n > f.n())
        throw DomainError("decomposition_check needs 1 <= n <= flow resolution");
    if (eves.size() < f.n())
        throw DomainError("one Eve per level of the flow is needed");
    DecompositionReport r;
    r.n = n;
    r.fine_n = f.n();
    auto fine = partition_between(f, s, t);
    auto coarse = fine.restrict(n); // the level-n flow is the restriction of the fine one
    auto fine_sizes = fine.block_sizes();
    auto coarse_sizes = coarse.block_sizes();
    const double nf = static_cast<double>(f.n()), nc = static_cast<double>(n);
    double diff = 0.0;
    std::size_t singles_fine = 0, singles_coarse = 0;
    // blocks are indexed by ancestor level, so index b carries Eve b in both measures
    for (std::size_t b = 0; b < fine_sizes.size(); ++b)
    {
        double w_fine = fine_sizes[b] > 1 ? static_cast<double>(fine_sizes[b]) / nf : 0.0;
        if (fine_sizes[b] == 1)
            ++singles_fine;
        double w_coarse = 0.0;
        if (b < coarse_sizes.size())
        {
            if (coarse_sizes[b] > 1)
                w_coarse = static_cast<double>(coarse_sizes[b]) / nc;
            else
                ++singles_coarse;
        }
        r.atoms_reference += w_fine > 0.0;
        r.atoms_lookdown += w_coarse > 0.0;
        diff += std::abs(w_fine - w_coarse);
        if (w_fine > 0.0 || w_coarse > 0.0)
            r.atoms.push_back({eves[b], w_coarse, w_fine});
    }
    r.tv = 0.5 * (diff + std::abs(static_cast<double>(singles_fine) / nf - static_cast<double>(singles_coarse) / nc));
    return r;
}

} // namespace psiflow
