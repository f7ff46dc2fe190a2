#pragma once

#include "json.hpp"
#include "psiflow/genealogy_flow.hpp"

#include <optional>
#include <vector>

namespace psiflow {

/// Lookdown particle system at level n started at time s: level j carries the type of
/// its ancestor level at s.
struct LookdownState
{
    std::size_t n = 0;
    double start = 0.0;
    double time = 0.0;
    std::vector<double> initial_types;
    Partition partition;
    std::vector<double> type_of_level;
};

/// Atoms are the non-singleton blocks (location = ancestor type, weight = frequency at
/// level n); singletons make up the dust.
struct EmpiricalMeasure
{
    std::vector<std::pair<double, double>> atoms;
    double dust = 1.0;
    double time = 0.0;
    double max_weight() const;
};

LookdownState run_lookdown(const PartitionFlow& f, double s, std::vector<double> initial_types, double t);
EmpiricalMeasure empirical_measure(const LookdownState& st);

/// n i.i.d. uniform types; distinct with probability one, redrawn otherwise.
std::vector<double> uniform_types(std::size_t n, Rng& rng);

enum class EveVerdict
{
    Diverging,
    Bounded,
    Inconclusive
};
const char* to_string(EveVerdict v);

struct EveCriterionOptions
{
    /// S must exceed this for Diverging. The sum diverges only logarithmically near
    /// extinction, so at a grid resolution r it reaches O(sigma^2 log(1/r)).
    double threshold = 1e3;
    /// Bounded when the last decade adds less than this fraction.
    double plateau = 0.01;
    /// Smallest distance to the end time that the grid resolves; 0 = the path's last interval.
    double resolution = 0.0;
};

struct EveCriterionResult
{
    double statistic = 0.0; // S at the end of the path
    double last_decade_growth = 0.0;
    std::vector<std::pair<double, double>> trajectory; // (tau, S(tau))
    EveVerdict verdict = EveVerdict::Inconclusive;
    nlohmann::json to_json() const;
};

/// S(tau) = sum_{s <= tau} (dZ_s/Z_s)^2 + int_0^tau sigma^2/Z_s ds along tau = E - E 10^{-k/2},
/// E = min(T, horizon).
EveCriterionResult check_eve_criterion(const CsbpPath& p, const BranchingMechanism& m,
                                       const EveCriterionOptions& options = {});

struct EveEstimate
{
    bool has_eve = false;
    double location = 0.0;
    std::vector<double> max_weight_trajectory;
};

/// Location of the heaviest atom at the last time, and the max weight over time.
EveEstimate eve_estimate(const std::vector<EmpiricalMeasure>& measures);

struct DustCheck
{
    double empirical = 1.0;
    double predicted = 1.0;
};

/// Singleton fraction of Pi_{0,t} at level n against prod_{s<=t} (1 - dZ_s/Z_s) (0 when sigma > 0).
DustCheck dust_frequency_check(const PartitionFlow& f, double t);

enum class Behaviour
{
    Extinction,
    Explosion,
    InfLifeNoExtinct,
    InfLifePossibleExtinct
};
const char* to_string(Behaviour b);

struct AncestorExit
{
    std::size_t ancestor = 0; // 1-based initial level
    double time = 0.0;
};

struct BehaviourReport
{
    Behaviour behaviour = Behaviour::Extinction;
    bool undecided = false;
    std::string reason;
    /// Times at which ancestors leave [n], in order. Ordering the survivors by final weight
    /// stands in for the asymptotic predominance order.
    std::vector<AncestorExit> exits;
    std::vector<std::pair<std::size_t, double>> survivors_by_weight;
    bool ordering_is_proxy = true;
    nlohmann::json to_json() const;
};

BehaviourReport classify_behaviour(const CsbpPath& p, const BranchingMechanism& m,
                                   const PartitionFlow* f = nullptr);

struct DecompositionReport
{
    std::size_t n = 0;      // lookdown resolution
    std::size_t fine_n = 0; // reference resolution
    double tv = 0.0;
    std::size_t atoms_lookdown = 0;
    std::size_t atoms_reference = 0;
    struct Atom
    {
        double eve = 0.0;
        double lookdown = 0.0;
        double reference = 0.0;
    };
    std::vector<Atom> atoms;
    nlohmann::json to_json() const;
};

/// The lookdown from s at level n with Eve-ordered types (level i carries the i-th Eve)
/// against r_{s,t}, whose atom weights are the block frequencies of the same flow at its
/// full resolution. The level-n flow is the restriction of f. Total-variation distance of
/// the two measures, atoms matched by Eve.
DecompositionReport decomposition_check(const PartitionFlow& f, double s, double t, std::size_t n,
                                        const std::vector<double>& eves);

} // namespace psiflow
