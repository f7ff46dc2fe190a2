#pragma once

#include "psiflow/mechanism.hpp"
#include "psiflow/random.hpp"

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

namespace psiflow {

struct LevyJump
{
    double time = 0.0;
    double size = 0.0;
    std::size_t node = 0; // index of the node holding the post-jump value
};

/// Skeleton of a spectrally positive Levy path. Node i carries the value on
/// [times[i], times[i+1]); a jump lands exactly on a node.
struct LevyPath
{
    std::vector<double> times;
    std::vector<double> values;
    std::vector<LevyJump> jumps;
    double truncation_threshold = 1e-4;
    bool gaussian_correction_used = false;
    bool stopped_at_zero = false;
    bool hit_ceiling = false;
};

enum class StepPolicy
{
    Fixed,      // Levy time step = step
    StateScaled // Levy time step = step * Y, i.e. a uniform step on the Lamperti clock
};

struct LevyOptions
{
    double horizon = 1.0; // Levy time horizon (Fixed policy)
    double step = 1e-3;
    double jump_truncation = 1e-4;
    bool gaussian_correction = true;
    StepPolicy policy = StepPolicy::Fixed;
    double clock_horizon = 1.0; // Lamperti clock horizon (StateScaled policy)
    double initial = 1.0;
    bool stop_at_zero = true;
    double floor = 0.0;            // treat Y <= floor as 0
    double ceiling = kInfinity;    // stop once Y >= ceiling
    bool relative_truncation = true; // stable family only: threshold scales with max(1, Y)
    std::size_t max_nodes = 50'000'000;
};

LevyPath simulate_levy(const BranchingMechanism& m, const LevyOptions& options, Rng& rng);
LevyPath simulate_levy(const BranchingMechanism& m, double horizon, double step, double jump_truncation,
                       std::uint64_t seed);

struct CsbpJump
{
    double time = 0.0;
    double delta = 0.0;
    double z_minus = 0.0;
    double z = 0.0;
    double fraction() const { return delta / z; }
};

enum class Lifetime
{
    Alive,
    Extinct,
    Exploded
};

struct LifetimeMarker
{
    Lifetime kind = Lifetime::Alive;
    double time = 0.0; // horizon, T_0 or the T_inf estimate
};

const char* to_string(Lifetime kind);

/// Piecewise-constant cadlag skeleton of Z: node i holds on [times[i], times[i+1]).
struct CsbpPath
{
    std::vector<double> times;
    std::vector<double> values;
    std::vector<CsbpJump> jumps;
    LifetimeMarker marker;
    double horizon = 0.0;
    std::shared_ptr<const LevyPath> source;

    /// Z_t (cadlag). 0 after extinction, +inf after explosion.
    double value(double t) const;
    /// Index of the node whose interval contains t.
    std::size_t node_at(double t) const;
    /// End of the last simulated interval: horizon, T_0 or T_inf.
    double end_time() const { return marker.time; }
};

/// Z = Y o J(Y): clock c_{i+1} = c_i + (t_{i+1} - t_i)/Y_i, values and jump sizes unchanged.
CsbpPath lamperti_inverse(const LevyPath& y, double horizon = kInfinity);
CsbpPath lamperti_inverse(std::shared_ptr<const LevyPath> y, double horizon = kInfinity);

/// Y = Z o I(Z): Levy time tau_{i+1} = tau_i + (c_{i+1} - c_i) Z_i.
LevyPath lamperti_forward(const CsbpPath& z);

struct CsbpOptions
{
    double horizon = 1.0;
    double step = 1e-3;
    double jump_truncation = 1e-4;
    bool gaussian_correction = true;
    double extinction_floor = 1e-12;
    double explosion_ceiling = 1e12;
    bool relative_truncation = true;
    double initial = 1.0;
};

CsbpPath simulate_csbp(const BranchingMechanism& m, const CsbpOptions& options, Rng& rng);
CsbpPath simulate_csbp(const BranchingMechanism& m, double horizon, double step, double jump_truncation,
                       std::uint64_t seed);

/// First node time with Z outside (eps, 1/eps); p.horizon if never.
double stopping_time_T_eps(const CsbpPath& p, double eps);

/// Sum over recorded jumps with time <= t of (dZ/Z)^2.
double squared_jump_fraction_sum(const CsbpPath& p, double t);

/// Exact integral of f(Z_s) over [0, t] for the piecewise-constant skeleton.
template <class F>
double integrate_path(const CsbpPath& p, double t, F&& f)
{
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < p.times.size(); ++i)
    {
        double a = p.times[i];
        if (a >= t)
            break;
        double b = std::min(p.times[i + 1], t);
        if (b > a)
            sum += f(p.values[i]) * (b - a);
    }
    return sum;
}

/// Uniform resampling of a cadlag skeleton at `resolution` on [0, end].
std::vector<std::pair<double, double>> resample(const std::vector<double>& times, const std::vector<double>& values,
                                                double end, double resolution);

void write_trajectory_csv(const CsbpPath& p, std::ostream& out);
void write_jumps_csv(const CsbpPath& p, std::ostream& out);

} // namespace psiflow
