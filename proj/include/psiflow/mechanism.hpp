#pragma once

#include "json.hpp"
#include "psiflow/random.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace psiflow {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Levy measures
// ---------------------------------------------------------------------------

struct NoJumps
{
};

/// nu(dh) = mass * rate * exp(-rate h) dh, total mass `mass`.
struct ExponentialDensity
{
    double rate = 1.0;
    double mass = 1.0;
};

/// nu(dh) = scale * h^{-1-index} dh with index in (0,2).
struct StableDensity
{
    double index = 1.0;
    double scale = 1.0;
};

struct Atom
{
    double size = 1.0;
    double mass = 1.0;
};

/// nu = sum_i mass_i * delta_{size_i}
struct FiniteAtoms
{
    std::vector<Atom> atoms;
};

/// Piecewise-linear density through (h_i, density_i), zero outside [h_0, h_last].
struct TabulatedDensity
{
    std::vector<double> h;
    std::vector<double> density;
};

/// The jump measure of a branching mechanism. Closed forms are used for the
/// parametric families; tabulated densities go through Gauss-Kronrod quadrature
/// on each linear piece.
class LevyMeasure
{
public:
    using Family = std::variant<NoJumps, ExponentialDensity, StableDensity, FiniteAtoms, TabulatedDensity>;

    LevyMeasure() = default;
    explicit LevyMeasure(Family family);

    const Family& family() const noexcept { return family_; }
    bool empty() const noexcept { return std::holds_alternative<NoJumps>(family_); }
    std::string family_name() const;

    /// int (exp(-hu) - 1 + hu 1{h<=1}) nu(dh)
    double laplace_part(double u) const;

    /// Same integral by generic quadrature, independent of the closed forms.
    double laplace_part_quadrature(double u) const;

    /// int f(h) nu(dh) by quadrature (sum for atoms). f must be integrable against nu.
    double integrate(const std::function<double(double)>& f) const;

    /// nu([delta, inf))
    double tail_mass(double delta) const;

    /// Draw from nu restricted to [delta, inf) and normalised.
    double sample_tail(double delta, Rng& rng) const;

    /// int_{[lo,hi]} h nu(dh) (open at hi = inf); signed, negative when lo > hi. May be +inf.
    double first_moment(double lo, double hi) const;

    /// int_{(0,delta)} h^2 nu(dh)
    double second_moment_below(double delta) const;

    double total_mass() const;

    /// int_{(1,inf)} h nu(dh), possibly +inf. An atom at h = 1 is a small jump.
    double large_jump_mean() const;

    /// int_{(0,1]} h nu(dh), possibly +inf.
    double small_jump_mean() const { return first_moment(0.0, 1.0); }

    /// int (h/(h+z))^k (z/(h+z))^{n-k} nu(dh)
    double pushforward_moment(int n, int k, double z) const;

    bool infinite_activity() const;

private:
    Family family_{NoJumps{}};
};

// ---------------------------------------------------------------------------
// Branching mechanism
// ---------------------------------------------------------------------------

/// Psi(u) = alpha u + sigma^2/2 u^2 + int (exp(-hu) - 1 + hu 1{h<=1}) nu(dh).
/// Classification flags are computed once at construction; the object is
/// immutable afterwards.
class BranchingMechanism
{
public:
    BranchingMechanism(double alpha, double sigma, LevyMeasure nu = {});

    /// Psi(u) = (sigma^2/2) u^2
    static BranchingMechanism feller(double sigma = std::sqrt(2.0));
    /// Psi(u) = u ln u
    static BranchingMechanism neveu();
    /// Psi(u) = -sqrt(u): stable(1/2) jumps with a negative drift cancelling the linear part
    static BranchingMechanism minus_sqrt();

    double alpha() const noexcept { return alpha_; }
    double sigma() const noexcept { return sigma_; }
    const LevyMeasure& nu() const noexcept { return nu_; }

    double psi(double u) const;

    /// Psi'(0+) = alpha - int_{h>1} h nu(dh); -inf when the large jumps have infinite mean.
    double psi_derivative_at_zero() const;

    /// Drift of the finite-variation Levy process, alpha + int_0^1 h nu(dh)
    /// (Y_t = -drift t + jumps). +inf for infinite variation.
    double bounded_variation_drift() const;

    bool is_conservative() const noexcept { return conservative_; }
    bool extinction_possible_in_finite_time() const noexcept { return extinction_finite_; }
    bool is_finite_variation() const noexcept { return finite_variation_; }
    bool is_compound_poisson() const noexcept { return compound_poisson_; }
    bool is_supercritical() const { return psi_derivative_at_zero() < 0.0; }

    /// gamma = sup{u >= 0 : Psi(u) <= 0}, +inf allowed.
    double gamma() const noexcept { return gamma_; }

private:
    double alpha_;
    double sigma_;
    LevyMeasure nu_;
    bool conservative_ = true;
    bool extinction_finite_ = false;
    bool finite_variation_ = false;
    bool compound_poisson_ = false;
    double gamma_ = 0.0;
};

/// u_t(lambda) solver for du/dt = -Psi(u), u_0 = lambda. Dormand-Prince 5(4).
class LaplaceFlow
{
public:
    explicit LaplaceFlow(BranchingMechanism mechanism, double tolerance = 1e-9, double max_step = 0.1);

    const BranchingMechanism& mechanism() const noexcept { return mechanism_; }
    double tolerance() const noexcept { return tolerance_; }

    /// u_t(lambda). Throws BlowUpError if u escapes to +inf before t.
    double solve(double t, double lambda) const;

    /// u_t(+inf), so that P(T_0 <= t) = exp(-u_t(inf)). +inf when the process
    /// cannot reach 0 in finite time.
    double solve_at_infinity(double t) const;

private:
    BranchingMechanism mechanism_;
    double tolerance_;
    double max_step_;
};

inline double solve_ut(const LaplaceFlow& flow, double t, double lambda) { return flow.solve(t, lambda); }

inline double eval_psi(const BranchingMechanism& m, double u) { return m.psi(u); }

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

struct Classification
{
    bool conservative = true;
    bool extinction_in_finite_time = false;
    double gamma = 0.0;
    double prob_extinct = 1.0;
};

Classification classify(const BranchingMechanism& m);

enum class DustRegime
{
    SingletonsAlways,
    NoSingletons
};

DustRegime classify_dust(const BranchingMechanism& m);

/// Outcome of a numeric Grey-integral test.
enum class IntegralBehaviour
{
    Converges,
    Diverges,
    Undetermined
};

/// Numeric test of int_{0+} du/|Psi(u)| on a geometric grid below u0.
IntegralBehaviour grey_integral_near_zero(const BranchingMechanism& m, double u0);

/// Numeric test of int^{inf} du/Psi(u) on a geometric grid above v0 (Psi > 0 there).
IntegralBehaviour grey_integral_at_infinity(const BranchingMechanism& m, double v0);

// ---------------------------------------------------------------------------
// JSON: {"alpha": x, "sigma": x, "nu": {"family": ..., ...}}
// ---------------------------------------------------------------------------

BranchingMechanism mechanism_from_json(const nlohmann::json& j);
nlohmann::json mechanism_to_json(const BranchingMechanism& m);
nlohmann::json classification_to_json(const Classification& c);

std::string to_string(DustRegime regime);

} // namespace psiflow
