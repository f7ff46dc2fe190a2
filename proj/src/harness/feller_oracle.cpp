#include "psiflow/harness/feller_oracle.hpp"

#include "psiflow/errors.hpp"

#include <cmath>

namespace psiflow::harness {

SubordinatorSample sample_feller_subordinator(const FellerSubordinatorOracle& o, Rng& rng)
{
    if (!(o.t > 0.0) || !(o.a > 0.0) || !std::isfinite(o.t) || !std::isfinite(o.a))
        throw DomainError("the Feller oracle needs t > 0 and a > 0");
    SubordinatorSample s;
    std::poisson_distribution<std::size_t> count(o.a / o.t);
    std::size_t k = count(rng);
    s.jumps.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
    {
        double h = -o.t * std::log(uniform_open0(rng));
        s.jumps.push_back(h);
        s.total += h;
    }
    return s;
}

SubordinatorSample sample_feller_subordinator(const FellerSubordinatorOracle& o, std::uint64_t seed)
{
    Rng rng(seed);
    return sample_feller_subordinator(o, rng);
}

double feller_oracle_laplace(const FellerSubordinatorOracle& o, double lambda)
{
    return std::exp(-o.a * lambda / (1.0 + lambda * o.t));
}

} // namespace psiflow::harness
