#pragma once

#include "psiflow/random.hpp"

#include <cstdint>
#include <vector>

namespace psiflow::harness {

/// S_{0,t}(a) for Psi(u) = u^2, where u_t(lambda) = lambda/(1 + lambda t): a compound
/// Poisson subordinator with Poisson(a/t) jumps of exponential size (mean t), no drift,
/// no killing.
struct FellerSubordinatorOracle
{
    double t = 1.0;
    double a = 1.0;
};

struct SubordinatorSample
{
    std::vector<double> jumps; // in the order of their positions in [0, a]
    double total = 0.0;
    double drift_mass = 0.0;
};

SubordinatorSample sample_feller_subordinator(const FellerSubordinatorOracle& o, Rng& rng);
SubordinatorSample sample_feller_subordinator(const FellerSubordinatorOracle& o, std::uint64_t seed);

/// E exp(-lambda S_{0,t}(a)) = exp(-a lambda/(1 + lambda t)).
double feller_oracle_laplace(const FellerSubordinatorOracle& o, double lambda);

} // namespace psiflow::harness
