#include "psiflow/mechanism.hpp"

#include "psiflow/errors.hpp"

#include <algorithm>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

namespace psiflow {

namespace {

constexpr double kQuadTol = 1e-10;

template <class... Ts>
struct overloaded : Ts...
{
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// exp(-x) - 1 + x, accurate for small x
double exp_remainder(double x)
{
    if (std::abs(x) < 1e-3)
        return x * x * (0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0);
    return std::expm1(-x) + x;
}

// (exp(-x) - 1 + x) / x^2
double exp_remainder_ratio(double x)
{
    if (std::abs(x) < 1e-3)
        return 0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0;
    return exp_remainder(x) / (x * x);
}

double gauss_kronrod(const std::function<double(double)>& f, double a, double b)
{
    if (!(b > a))
        return 0.0;
    double err = 0.0;
    double l1 = 0.0;
    double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, kQuadTol, &err, &l1);
    if (!std::isfinite(value) || err > 1e-8 * std::max(1.0, l1))
        throw NumericalError("Gauss-Kronrod quadrature did not converge on [" + std::to_string(a) + ", " +
                             std::to_string(b) + "]");
    return value;
}

// smooth integrand on one geometric cell of a Grey test
double cell_integral(const std::function<double(double)>& f, double a, double b)
{
    double err = 0.0;
    double l1 = 0.0;
    double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 5, 1e-9, &err, &l1);
    if (!std::isfinite(value) || err > 1e-6 * std::max(1.0, l1))
        throw NumericalError("Grey test cell integral did not converge");
    return value;
}

// integral over (0, 1] with a possible integrable singularity at 0
double tanh_sinh_unit(const std::function<double(double)>& f)
{
    boost::math::quadrature::tanh_sinh<double> integrator;
    double err = 0.0;
    double l1 = 0.0;
    double value = integrator.integrate(f, 0.0, 1.0, kQuadTol, &err, &l1);
    if (!std::isfinite(value) || err > 1e-8 * std::max(1.0, l1))
        throw NumericalError("tanh-sinh quadrature did not converge");
    return value;
}

double exp_sinh_tail(const std::function<double(double)>& f, double a)
{
    boost::math::quadrature::exp_sinh<double> integrator;
    double err = 0.0;
    double l1 = 0.0;
    double value = integrator.integrate([&](double x) { return f(x); }, a, kInfinity, kQuadTol, &err, &l1);
    if (!std::isfinite(value) || err > 1e-8 * std::max(1.0, l1))
        throw NumericalError("exp-sinh quadrature did not converge");
    return value;
}

// density of a linear piece: A + B h on [a, b]
struct LinearPiece
{
    double a, b, A, B;
    double density(double h) const { return A + B * h; }
    // int_{lo}^{hi} h^p (A + B h) dh clipped to the piece
    double moment(int p, double lo, double hi) const
    {
        lo = std::max(lo, a);
        hi = std::min(hi, b);
        if (!(hi > lo))
            return 0.0;
        auto pw = [](double x, int q) { return std::pow(x, q); };
        return A * (pw(hi, p + 1) - pw(lo, p + 1)) / (p + 1) + B * (pw(hi, p + 2) - pw(lo, p + 2)) / (p + 2);
    }
};

std::vector<LinearPiece> pieces(const TabulatedDensity& t)
{
    std::vector<LinearPiece> out;
    for (std::size_t i = 0; i + 1 < t.h.size(); ++i)
    {
        double a = t.h[i], b = t.h[i + 1];
        double B = (t.density[i + 1] - t.density[i]) / (b - a);
        double A = t.density[i] - B * a;
        out.push_back({a, b, A, B});
    }
    return out;
}

double stable_psi_part(const StableDensity& s, double u)
{
    const double b = s.index;
    const double c = s.scale;
    if (u == 0.0)
        return 0.0;
    if (b == 1.0)
        return c * (u * std::log(u) + (std::numbers::egamma - 1.0) * u);
    double power = c * std::tgamma(-b) * std::pow(u, b);
    if (b < 1.0)
        return power + c * u / (1.0 - b);
    return power - c * u / (b - 1.0);
}

void validate(const LevyMeasure::Family& family)
{
    std::visit(overloaded{
                   [](const NoJumps&) {},
                   [](const ExponentialDensity& e) {
                       if (!(e.rate > 0.0) || !(e.mass > 0.0) || !std::isfinite(e.rate) || !std::isfinite(e.mass))
                           throw ConfigError("exponential Levy density needs positive finite rate and mass");
                   },
                   [](const StableDensity& s) {
                       if (!(s.index > 0.0 && s.index < 2.0))
                           throw ConfigError("stable index must lie strictly inside (0,2)");
                       if (!(s.scale > 0.0) || !std::isfinite(s.scale))
                           throw ConfigError("stable scale must be positive");
                   },
                   [](const FiniteAtoms& f) {
                       if (f.atoms.empty())
                           throw ConfigError("atoms family needs at least one atom");
                       for (const auto& a : f.atoms)
                           if (!(a.size > 0.0) || !(a.mass > 0.0) || !std::isfinite(a.size) || !std::isfinite(a.mass))
                               throw ConfigError("atom sizes and masses must be positive and finite");
                   },
                   [](const TabulatedDensity& t) {
                       if (t.h.size() < 2 || t.h.size() != t.density.size())
                           throw ConfigError("tabulated density needs at least two (h, density) pairs");
                       for (std::size_t i = 0; i < t.h.size(); ++i)
                       {
                           if (!(t.h[i] > 0.0) || !(t.density[i] >= 0.0) || !std::isfinite(t.h[i]) ||
                               !std::isfinite(t.density[i]))
                               throw ConfigError("tabulated sizes must be positive and densities nonnegative");
                           if (i > 0 && !(t.h[i] > t.h[i - 1]))
                               throw ConfigError("tabulated sizes must be strictly increasing");
                       }
                       // int (1 ^ h^2) nu(dh)
                       double total = 0.0;
                       for (const auto& p : pieces(t))
                           total += p.moment(2, 0.0, 1.0) + p.moment(0, 1.0, kInfinity);
                       if (!std::isfinite(total) || total <= 0.0)
                           throw ConfigError("tabulated density violates int (1 ^ h^2) nu(dh) < inf or is zero");
                   },
               },
               family);
}

} // namespace

// ---------------------------------------------------------------------------
// LevyMeasure
// ---------------------------------------------------------------------------

LevyMeasure::LevyMeasure(Family family) : family_(std::move(family))
{
    validate(family_);
    if (auto* atoms = std::get_if<FiniteAtoms>(&family_))
        std::sort(atoms->atoms.begin(), atoms->atoms.end(),
                  [](const Atom& x, const Atom& y) { return x.size < y.size; });
}

std::string LevyMeasure::family_name() const
{
    return std::visit(overloaded{
                          [](const NoJumps&) { return std::string("none"); },
                          [](const ExponentialDensity&) { return std::string("exponential"); },
                          [](const StableDensity&) { return std::string("stable"); },
                          [](const FiniteAtoms&) { return std::string("atoms"); },
                          [](const TabulatedDensity&) { return std::string("tabulated"); },
                      },
                      family_);
}

double LevyMeasure::laplace_part(double u) const
{
    return std::visit(overloaded{
                          [](const NoJumps&) { return 0.0; },
                          [u](const ExponentialDensity& e) {
                              const double r = e.rate;
                              const double small = (1.0 - std::exp(-r) * (1.0 + r)) / r;
                              return e.mass * (r / (r + u) - 1.0) + e.mass * u * small;
                          },
                          [u](const StableDensity& s) { return stable_psi_part(s, u); },
                          [u](const FiniteAtoms& f) {
                              double sum = 0.0;
                              for (const auto& a : f.atoms)
                              {
                                  double hu = a.size * u;
                                  sum += a.mass * (a.size <= 1.0 ? exp_remainder(hu) : std::expm1(-hu));
                              }
                              return sum;
                          },
                          [this, u](const TabulatedDensity&) { return laplace_part_quadrature(u); },
                      },
                      family_);
}

double LevyMeasure::laplace_part_quadrature(double u) const
{
    // the indicator makes the integrand discontinuous at h = 1, so split there
    auto below = [u](double h) { return exp_remainder(h * u); };
    auto above = [u](double h) { return std::expm1(-h * u); };
    return std::visit(overloaded{
                          [](const NoJumps&) { return 0.0; },
                          [&](const ExponentialDensity& e) {
                              auto dens = [&](double h) { return e.mass * e.rate * std::exp(-e.rate * h); };
                              return gauss_kronrod([&](double h) { return below(h) * dens(h); }, 0.0, 1.0) +
                                     exp_sinh_tail([&](double h) { return above(h) * dens(h); }, 1.0);
                          },
                          [&](const StableDensity& s) {
                              const double b = s.index;
                              const double c = s.scale;
                              // exp(-hu)-1+hu ~ (hu)^2/2 near 0, folded into h^{1-b}
                              double lo = tanh_sinh_unit([&](double h) {
                                  return h > 0.0 ? exp_remainder_ratio(h * u) * u * u * c * std::pow(h, 1.0 - b) : 0.0;
                              });
                              // h = 1/v on [1, inf): dh = dv / v^2
                              double hi = tanh_sinh_unit([&](double v) {
                                  if (!(v > 0.0))
                                      return 0.0;
                                  double value = above(1.0 / v) * c * std::pow(v, b - 1.0);
                                  return std::isfinite(value) ? value : 0.0;
                              });
                              return lo + hi;
                          },
                          [&](const FiniteAtoms& f) {
                              double sum = 0.0;
                              for (const auto& a : f.atoms)
                                  sum += a.mass * (a.size <= 1.0 ? below(a.size) : above(a.size));
                              return sum;
                          },
                          [&](const TabulatedDensity& t) {
                              double sum = 0.0;
                              for (const auto& p : pieces(t))
                              {
                                  if (p.a < 1.0)
                                      sum += gauss_kronrod([&](double h) { return below(h) * p.density(h); }, p.a,
                                                           std::min(p.b, 1.0));
                                  if (p.b > 1.0)
                                      sum += gauss_kronrod([&](double h) { return above(h) * p.density(h); },
                                                           std::max(p.a, 1.0), p.b);
                              }
                              return sum;
                          },
                      },
                      family_);
}

double LevyMeasure::integrate(const std::function<double(double)>& f) const
{
    return std::visit(overloaded{
                          [](const NoJumps&) { return 0.0; },
                          [&](const ExponentialDensity& e) {
                              auto g = [&](double h) { return f(h) * e.mass * e.rate * std::exp(-e.rate * h); };
                              return gauss_kronrod(g, 0.0, 1.0) + exp_sinh_tail(g, 1.0);
                          },
                          [&](const StableDensity& s) {
                              const double b = s.index;
                              const double c = s.scale;
                              auto finite = [](double value) { return std::isfinite(value) ? value : 0.0; };
                              double lo = tanh_sinh_unit(
                                  [&](double h) { return h > 0.0 ? finite(f(h) * c * std::pow(h, -1.0 - b)) : 0.0; });
                              double hi = tanh_sinh_unit([&](double v) {
                                  return v > 0.0 ? finite(f(1.0 / v) * c * std::pow(v, b - 1.0)) : 0.0;
                              });
                              return lo + hi;
                          },
                          [&](const FiniteAtoms& fa) {
                              double sum = 0.0;
                              for (const auto& a : fa.atoms)
                                  sum += a.mass * f(a.size);
                              return sum;
                          },
                          [&](const TabulatedDensity& t) {
                              double sum = 0.0;
                              for (const auto& p : pieces(t))
                                  sum += gauss_kronrod([&](double h) { return f(h) * p.density(h); }, p.a, p.b);
                              return sum;
                          },
                      },
                      family_);
}

double LevyMeasure::tail_mass(double delta) const
{
    return std::visit(overloaded{
                          [](const NoJumps&) { return 0.0; },
                          [delta](const ExponentialDensity& e) { return e.mass * std::exp(-e.rate * std::max(delta, 0.0)); },
                          [delta](const StableDensity& s) {
                              if (delta <= 0.0)
                                  return kInfinity;
                              return s.scale * std::pow(delta, -s.index) / s.index;
                          },
                          [delta](const FiniteAtoms& f) {
                              double sum = 0.0;
                              for (const auto& a : f.atoms)
                                  if (a.size >= delta)
                                      sum += a.mass;
                              return sum;
                          },
                          [delta](const TabulatedDensity& t) {
                              double sum = 0.0;
                              for (const auto& p : pieces(t))
                                  sum += p.moment(0, delta, kInfinity);
                              return sum;
                          },
                      },
                      family_);
}

double LevyMeasure::sample_tail(double delta, Rng& rng) const
{
    return std::visit(overloaded{
                          [](const NoJumps&) -> double { throw ConfigError("cannot sample jumps of an empty measure"); },
                          [&](const ExponentialDensity& e) {
                              return std::max(delta, 0.0) - std::log(uniform_open0(rng)) / e.rate;
                          },
                          [&](const StableDensity& s) {
                              if (!(delta > 0.0))
                                  throw ConfigError("stable jumps need a positive truncation threshold");
                              return delta * std::pow(uniform_open0(rng), -1.0 / s.index);
                          },
                          [&](const FiniteAtoms& f) {
                              double total = 0.0;
                              for (const auto& a : f.atoms)
                                  if (a.size >= delta)
                                      total += a.mass;
                              if (total <= 0.0)
                                  throw ConfigError("no atom above the truncation threshold");
                              double target = uniform01(rng) * total;
                              double acc = 0.0;
                              const Atom* last = nullptr;
                              for (const auto& a : f.atoms)
                              {
                                  if (a.size < delta)
                                      continue;
                                  last = &a;
                                  acc += a.mass;
                                  if (target < acc)
                                      return a.size;
                              }
                              return last->size;
                          },
                          [&](const TabulatedDensity& t) {
                              auto ps = pieces(t);
                              std::vector<double> mass;
                              double total = 0.0;
                              for (const auto& p : ps)
                              {
                                  total += p.moment(0, delta, kInfinity);
                                  mass.push_back(total);
                              }
                              if (total <= 0.0)
                                  throw ConfigError("tabulated density has no mass above the truncation threshold");
                              double target = uniform01(rng) * total;
                              std::size_t i = std::upper_bound(mass.begin(), mass.end(), target) - mass.begin();
                              i = std::min(i, ps.size() - 1);
                              const auto& p = ps[i];
                              double a = std::max(p.a, delta);
                              double top = std::max(p.density(a), p.density(p.b));
                              // rejection against the larger endpoint of the linear piece
                              for (;;)
                              {
                                  double h = a + (p.b - a) * uniform01(rng);
                                  if (uniform01(rng) * top <= p.density(h))
                                      return h;
                              }
                          },
                      },
                      family_);
}

double LevyMeasure::first_moment(double lo, double hi) const
{
    if (lo > hi)
        return -first_moment(hi, lo);
    lo = std::max(lo, 0.0);
    return std::visit(overloaded{
                          [](const NoJumps&) { return 0.0; },
                          [&](const ExponentialDensity& e) {
                              const double r = e.rate;
                              double upper = std::isinf(hi) ? 0.0 : (hi + 1.0 / r) * std::exp(-r * hi);
                              return e.mass * ((lo + 1.0 / r) * std::exp(-r * lo) - upper);
                          },
                          [&](const StableDensity& s) {
                              const double b = s.index;
                              const double c = s.scale;
                              if (lo == hi)
                                  return 0.0;
                              if (b == 1.0)
                                  return (lo == 0.0 || std::isinf(hi)) ? kInfinity : c * std::log(hi / lo);
                              if (b < 1.0 && std::isinf(hi))
                                  return kInfinity;
                              if (b > 1.0 && lo == 0.0)
                                  return kInfinity;
                              double top = std::isinf(hi) ? 0.0 : std::pow(hi, 1.0 - b);
                              double bottom = lo == 0.0 ? 0.0 : std::pow(lo, 1.0 - b);
                              return c * (top - bottom) / (1.0 - b);
                          },
                          [&](const FiniteAtoms& f) {
                              double sum = 0.0;
                              for (const auto& a : f.atoms)
                                  if (a.size >= lo && a.size <= hi)
                                      sum += a.mass * a.size;
                              return sum;
                          },
                          [&](const TabulatedDensity& t) {
                              double sum = 0.0;
                              for (const auto& p : pieces(t))
                                  sum += p.moment(1, lo, hi);
                              return sum;
                          },
                      },
                      family_);
}

double LevyMeasure::large_jump_mean() const
{
    if (const auto* f = std::get_if<FiniteAtoms>(&family_))
    {
        double sum = 0.0;
        for (const auto& a : f->atoms)
            if (a.size > 1.0)
                sum += a.mass * a.size;
        return sum;
    }
    return first_moment(1.0, kInfinity);
}

double LevyMeasure::second_moment_below(double delta) const
{
    if (delta <= 0.0)
        return 0.0;
    return std::visit(overloaded{
                          [](const NoJumps&) { return 0.0; },
                          [delta](const ExponentialDensity& e) {
                              const double r = e.rate;
                              return e.mass * (2.0 / (r * r) -
                                               std::exp(-r * delta) * (delta * delta + 2.0 * delta / r + 2.0 / (r * r)));
                          },
                          [delta](const StableDensity& s) {
                              return s.scale * std::pow(delta, 2.0 - s.index) / (2.0 - s.index);
                          },
                          [delta](const FiniteAtoms& f) {
                              double sum = 0.0;
                              for (const auto& a : f.atoms)
                                  if (a.size < delta)
                                      sum += a.mass * a.size * a.size;
                              return sum;
                          },
                          [delta](const TabulatedDensity& t) {
                              double sum = 0.0;
                              for (const auto& p : pieces(t))
                                  sum += p.moment(2, 0.0, delta);
                              return sum;
                          },
                      },
                      family_);
}

double LevyMeasure::total_mass() const
{
    return std::visit(overloaded{
                          [](const NoJumps&) { return 0.0; },
                          [](const ExponentialDensity& e) { return e.mass; },
                          [](const StableDensity&) { return kInfinity; },
                          [](const FiniteAtoms& f) {
                              double sum = 0.0;
                              for (const auto& a : f.atoms)
                                  sum += a.mass;
                              return sum;
                          },
                          [](const TabulatedDensity& t) {
                              double sum = 0.0;
                              for (const auto& p : pieces(t))
                                  sum += p.moment(0, 0.0, kInfinity);
                              return sum;
                          },
                      },
                      family_);
}

double LevyMeasure::pushforward_moment(int n, int k, double z) const
{
    if (k < 0 || k > n)
        throw DomainError("pushforward moment needs 0 <= k <= n");
    if (!(z > 0.0))
        throw DomainError("pushforward moment needs z > 0");
    auto weight = [n, k, z](double h) {
        double x = h / (h + z);
        return std::pow(x, k) * std::pow(1.0 - x, n - k);
    };
    if (const auto* s = std::get_if<StableDensity>(&family_))
    {
        // substitution x = h/(h+z) turns the integral into a Beta function
        if (k <= s->index)
            return kInfinity;
        return s->scale * std::pow(z, -s->index) * std::beta(k - s->index, n - k + s->index);
    }
    if (const auto* e = std::get_if<ExponentialDensity>(&family_))
    {
        // integrate on x in [0,1]; h = z x/(1-x), dh = z/(1-x)^2 dx
        return gauss_kronrod(
            [&](double x) {
                if (x >= 1.0)
                    return 0.0;
                double h = z * x / (1.0 - x);
                return std::pow(x, k) * std::pow(1.0 - x, n - k - 2) * z * e->mass * e->rate * std::exp(-e->rate * h);
            },
            0.0, 1.0);
    }
    return integrate(weight);
}

bool LevyMeasure::infinite_activity() const { return std::isinf(total_mass()); }

// ---------------------------------------------------------------------------
// BranchingMechanism
// ---------------------------------------------------------------------------

BranchingMechanism::BranchingMechanism(double alpha, double sigma, LevyMeasure nu)
    : alpha_(alpha), sigma_(sigma), nu_(std::move(nu))
{
    if (!std::isfinite(alpha_))
        throw ConfigError("alpha must be finite");
    if (!(sigma_ >= 0.0) || !std::isfinite(sigma_))
        throw ConfigError("sigma must be a finite nonnegative number");

    const double small = nu_.small_jump_mean();
    finite_variation_ = sigma_ == 0.0 && std::isfinite(small);
    compound_poisson_ = finite_variation_ && std::isfinite(nu_.total_mass()) &&
                        std::abs(alpha_ + small) <= 1e-12 * std::max(1.0, std::abs(alpha_));

    // gamma: bracket by doubling, then bisect
    const double slope = psi_derivative_at_zero();
    if (slope >= 0.0 && !(sigma_ == 0.0 && nu_.empty() && alpha_ == 0.0))
    {
        gamma_ = 0.0;
    }
    else
    {
        double hi = 1.0;
        while (psi(hi) <= 0.0 && hi < 1e12)
            hi *= 2.0;
        if (psi(hi) <= 0.0)
        {
            gamma_ = kInfinity;
        }
        else
        {
            double lo = hi > 1.0 ? hi / 2.0 : 0.0;
            for (int it = 0; it < 400 && hi - lo > 1e-10 * hi; ++it)
            {
                double mid = 0.5 * (lo + hi);
                if (psi(mid) <= 0.0)
                    lo = mid;
                else
                    hi = mid;
            }
            if (hi - lo > 1e-10 * hi)
                throw ClassificationError("bisection for gamma did not converge");
            gamma_ = lo;
        }
    }

    // conservativity: analytic whenever Psi'(0+) is finite, closed form for stable tails
    if (std::isfinite(slope))
    {
        conservative_ = true;
    }
    else if (const auto* s = std::get_if<StableDensity>(&nu_.family()))
    {
        conservative_ = s->index >= 1.0;
    }
    else
    {
        double u0 = 0.5 * std::min(std::isfinite(gamma_) ? gamma_ : 1.0, 1.0);
        auto behaviour = grey_integral_near_zero(*this, u0);
        if (behaviour == IntegralBehaviour::Undetermined)
            throw ClassificationError("Grey test near 0 is inconclusive");
        conservative_ = behaviour == IntegralBehaviour::Diverges;
    }

    // finite-time extinction needs Psi eventually positive and int^inf du/Psi < inf
    if (!std::isfinite(gamma_))
        extinction_finite_ = false;
    else if (sigma_ > 0.0)
        extinction_finite_ = true;
    else if (finite_variation_)
        extinction_finite_ = false;
    else if (const auto* s = std::get_if<StableDensity>(&nu_.family()))
        extinction_finite_ = s->index > 1.0;
    else
    {
        auto behaviour = grey_integral_at_infinity(*this, 2.0 * std::max(gamma_, 1.0));
        if (behaviour == IntegralBehaviour::Undetermined)
            throw ClassificationError("Grey test at infinity is inconclusive");
        extinction_finite_ = behaviour == IntegralBehaviour::Converges;
    }
}

BranchingMechanism BranchingMechanism::feller(double sigma) { return BranchingMechanism(0.0, sigma); }

BranchingMechanism BranchingMechanism::neveu()
{
    return BranchingMechanism(1.0 - std::numbers::egamma, 0.0, LevyMeasure(StableDensity{1.0, 1.0}));
}

BranchingMechanism BranchingMechanism::minus_sqrt()
{
    const double sp = std::sqrt(std::numbers::pi);
    return BranchingMechanism(-1.0 / sp, 0.0, LevyMeasure(StableDensity{0.5, 0.5 / sp}));
}

double BranchingMechanism::psi(double u) const
{
    if (u < 0.0)
        throw DomainError("Psi is only defined on [0, inf)");
    return alpha_ * u + 0.5 * sigma_ * sigma_ * u * u + nu_.laplace_part(u);
}

double BranchingMechanism::psi_derivative_at_zero() const { return alpha_ - nu_.large_jump_mean(); }

double BranchingMechanism::bounded_variation_drift() const
{
    if (sigma_ > 0.0)
        return kInfinity;
    return alpha_ + nu_.small_jump_mean();
}

// ---------------------------------------------------------------------------
// Grey tests
// ---------------------------------------------------------------------------

namespace {

// Sum increments over a geometric grid. Geometric decay of the increments means
// convergence, non-decaying increments (or a huge partial sum) mean divergence.
IntegralBehaviour geometric_grid_test(const std::function<double(double, double)>& increment, double start,
                                      double factor, double limit)
{
    constexpr double kDivergenceSum = 1e6;
    constexpr int kRun = 30;
    double sum = 0.0;
    double previous = -1.0;
    int decaying = 0;
    int flat = 0;
    double x = start;
    for (int k = 0; k < 4000; ++k)
    {
        double next = x * factor;
        if ((factor < 1.0 && next < limit) || (factor > 1.0 && next > limit))
            break;
        double inc = increment(std::min(x, next), std::max(x, next));
        if (!std::isfinite(inc))
            return IntegralBehaviour::Diverges;
        sum += inc;
        if (sum > kDivergenceSum)
            return IntegralBehaviour::Diverges;
        if (previous > 0.0)
        {
            double ratio = inc / previous;
            if (ratio < 0.9)
            {
                ++decaying;
                flat = 0;
            }
            else if (ratio >= 0.99)
            {
                ++flat;
                decaying = 0;
            }
            else
            {
                decaying = 0;
                flat = 0;
            }
            if (decaying >= kRun)
                return IntegralBehaviour::Converges;
            if (flat >= kRun)
                return IntegralBehaviour::Diverges;
        }
        previous = inc;
        x = next;
    }
    return IntegralBehaviour::Undetermined;
}

} // namespace

IntegralBehaviour grey_integral_near_zero(const BranchingMechanism& m, double u0)
{
    if (!(u0 > 0.0))
        throw DomainError("grey_integral_near_zero needs u0 > 0");
    auto inc = [&m](double lo, double hi) {
        return cell_integral([&m](double u) { return 1.0 / std::abs(m.psi(u)); }, lo, hi);
    };
    return geometric_grid_test(inc, u0, 0.5, 1e-300);
}

IntegralBehaviour grey_integral_at_infinity(const BranchingMechanism& m, double v0)
{
    if (!(v0 > 0.0))
        throw DomainError("grey_integral_at_infinity needs v0 > 0");
    if (!(m.psi(v0) > 0.0))
        return IntegralBehaviour::Diverges;
    auto inc = [&m](double lo, double hi) {
        return cell_integral([&m](double u) { return 1.0 / m.psi(u); }, lo, hi);
    };
    return geometric_grid_test(inc, v0, 2.0, 1e300);
}

Classification classify(const BranchingMechanism& m)
{
    Classification c;
    c.conservative = m.is_conservative();
    c.extinction_in_finite_time = m.extinction_possible_in_finite_time();
    c.gamma = m.gamma();
    c.prob_extinct = std::isinf(c.gamma) ? 0.0 : std::exp(-c.gamma);
    return c;
}

DustRegime classify_dust(const BranchingMechanism& m)
{
    return m.is_finite_variation() ? DustRegime::SingletonsAlways : DustRegime::NoSingletons;
}

std::string to_string(DustRegime regime)
{
    return regime == DustRegime::SingletonsAlways ? "SingletonsAlways" : "NoSingletons";
}

// ---------------------------------------------------------------------------
// LaplaceFlow
// ---------------------------------------------------------------------------

LaplaceFlow::LaplaceFlow(BranchingMechanism mechanism, double tolerance, double max_step)
    : mechanism_(std::move(mechanism)), tolerance_(tolerance), max_step_(max_step)
{
    if (!(tolerance_ > 0.0) || !(max_step_ > 0.0))
        throw ConfigError("solver tolerance and max step must be positive");
}

double LaplaceFlow::solve(double t, double lambda) const
{
    if (!(t >= 0.0))
        throw DomainError("u_t(lambda) needs t >= 0");
    if (!(lambda > 0.0))
        throw DomainError("u_t(lambda) needs lambda > 0");
    if (t == 0.0)
        return lambda;

    // Dormand-Prince 5(4) tableau
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                     a65 = -5103.0 / 18656;
    constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                     e6 = 22.0 / 525, e7 = -1.0 / 40;
    (void)c2;
    (void)c3;
    (void)c4;
    (void)c5;

    bool negative_stage = false;
    auto f = [&](double u) {
        if (u < 0.0)
        {
            negative_stage = true;
            return 0.0;
        }
        return -mechanism_.psi(u);
    };

    double u = lambda;
    double time = 0.0;
    double h = std::min({max_step_, t, 1e-3 * std::max(1.0, t)});
    double k1 = f(u);
    int steps = 0;
    while (time < t)
    {
        if (++steps > 10'000'000)
            throw NumericalError("u_t solver exceeded the step budget");
        h = std::min(h, t - time);
        negative_stage = false;
        double k2 = f(u + h * a21 * k1);
        double k3 = f(u + h * (a31 * k1 + a32 * k2));
        double k4 = f(u + h * (a41 * k1 + a42 * k2 + a43 * k3));
        double k5 = f(u + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        double k6 = f(u + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        double next = u + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        double k7 = f(std::max(next, 0.0));
        double err = std::abs(h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7));
        double scale = tolerance_ * (1.0 + std::max(std::abs(u), std::abs(next)));

        if (negative_stage && next > 0.0)
            err = std::max(err, 2.0 * scale);
        if (err <= scale || h < 1e-14 * std::max(1.0, t))
        {
            time += h;
            if (next <= 0.0)
                return 0.0;
            if (!std::isfinite(next) || next > 1e300)
                throw BlowUpError("u_t(lambda) escaped to infinity", time);
            u = next;
            k1 = k7;
        }
        double factor = err > 0.0 ? 0.9 * std::pow(scale / err, 0.2) : 5.0;
        h = std::min(max_step_, h * std::clamp(factor, 0.2, 5.0));
    }
    return u;
}

double LaplaceFlow::solve_at_infinity(double t) const
{
    if (!(t > 0.0))
        throw DomainError("u_t(inf) needs t > 0");
    const auto& m = mechanism_;
    if (!m.extinction_possible_in_finite_time())
        return kInfinity;
    const double gamma = m.gamma();

    // G(u) = int_u^inf dv/Psi(v), written on w in (0,1] with v = u/w
    auto G = [&m](double u) {
        return tanh_sinh_unit([&](double w) {
            if (w <= 0.0)
                return 0.0;
            double v = u / w;
            if (!std::isfinite(v))
                return 0.0;
            double p = m.psi(v);
            double value = (v / p) / w;
            return std::isfinite(value) ? value : 0.0;
        });
    };
    double hi = 2.0 * std::max(gamma, 1.0);
    while (G(hi) > t)
    {
        hi *= 2.0;
        if (hi > 1e300)
            throw NumericalError("u_t(inf) bracket exceeded range");
    }
    double lo = gamma + 0.5 * (hi - gamma);
    while (G(lo) < t)
    {
        lo = gamma + 0.5 * (lo - gamma);
        if (lo - gamma < 1e-300)
            throw NumericalError("u_t(inf) bracket collapsed onto gamma");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it)
    {
        double mid = 0.5 * (lo + hi);
        if (G(mid) > t)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key()))
            throw ConfigError("unknown field '" + it.key() + "' in " + where);
}

double number(const nlohmann::json& j, const char* key, const std::string& where)
{
    if (!j.contains(key))
        throw ConfigError("missing field '" + std::string(key) + "' in " + where);
    if (!j.at(key).is_number())
        throw ConfigError("field '" + std::string(key) + "' in " + where + " must be a number");
    return j.at(key).get<double>();
}

std::pair<double, double> pair_of(const nlohmann::json& entry, const char* first, const char* second,
                                  const std::string& where)
{
    if (entry.is_array() && entry.size() == 2 && entry[0].is_number() && entry[1].is_number())
        return {entry[0].get<double>(), entry[1].get<double>()};
    if (entry.is_object())
    {
        reject_unknown(entry, {first, second}, where);
        return {number(entry, first, where), number(entry, second, where)};
    }
    throw ConfigError(where + " entries must be [" + first + ", " + second + "] pairs");
}

} // namespace

BranchingMechanism mechanism_from_json(const nlohmann::json& j)
{
    reject_unknown(j, {"alpha", "sigma", "nu"}, "mechanism");
    double alpha = number(j, "alpha", "mechanism");
    double sigma = number(j, "sigma", "mechanism");
    LevyMeasure nu;
    if (j.contains("nu"))
    {
        const auto& n = j.at("nu");
        if (!n.is_object() || !n.contains("family") || !n.at("family").is_string())
            throw ConfigError("nu must be an object with a string 'family'");
        std::string family = n.at("family").get<std::string>();
        if (family == "none")
        {
            reject_unknown(n, {"family"}, "nu");
        }
        else if (family == "exponential")
        {
            reject_unknown(n, {"family", "rate", "mass"}, "nu");
            ExponentialDensity e;
            e.rate = number(n, "rate", "nu");
            if (n.contains("mass"))
                e.mass = number(n, "mass", "nu");
            nu = LevyMeasure(e);
        }
        else if (family == "stable")
        {
            reject_unknown(n, {"family", "index", "scale"}, "nu");
            nu = LevyMeasure(StableDensity{number(n, "index", "nu"), number(n, "scale", "nu")});
        }
        else if (family == "atoms")
        {
            reject_unknown(n, {"family", "atoms"}, "nu");
            if (!n.contains("atoms") || !n.at("atoms").is_array())
                throw ConfigError("atoms family needs an 'atoms' array");
            FiniteAtoms f;
            for (const auto& entry : n.at("atoms"))
            {
                auto [size, mass] = pair_of(entry, "size", "mass", "atoms");
                f.atoms.push_back({size, mass});
            }
            nu = LevyMeasure(f);
        }
        else if (family == "tabulated")
        {
            reject_unknown(n, {"family", "grid"}, "nu");
            if (!n.contains("grid") || !n.at("grid").is_array())
                throw ConfigError("tabulated family needs a 'grid' array");
            TabulatedDensity t;
            for (const auto& entry : n.at("grid"))
            {
                auto [h, d] = pair_of(entry, "h", "density", "grid");
                t.h.push_back(h);
                t.density.push_back(d);
            }
            nu = LevyMeasure(t);
        }
        else
        {
            throw ConfigError("unknown Levy family '" + family + "'");
        }
    }
    return BranchingMechanism(alpha, sigma, std::move(nu));
}

nlohmann::json mechanism_to_json(const BranchingMechanism& m)
{
    nlohmann::json nu = std::visit(
        overloaded{
            [](const NoJumps&) { return nlohmann::json{{"family", "none"}}; },
            [](const ExponentialDensity& e) {
                return nlohmann::json{{"family", "exponential"}, {"rate", e.rate}, {"mass", e.mass}};
            },
            [](const StableDensity& s) {
                return nlohmann::json{{"family", "stable"}, {"index", s.index}, {"scale", s.scale}};
            },
            [](const FiniteAtoms& f) {
                nlohmann::json atoms = nlohmann::json::array();
                for (const auto& a : f.atoms)
                    atoms.push_back({{"size", a.size}, {"mass", a.mass}});
                return nlohmann::json{{"family", "atoms"}, {"atoms", atoms}};
            },
            [](const TabulatedDensity& t) {
                nlohmann::json grid = nlohmann::json::array();
                for (std::size_t i = 0; i < t.h.size(); ++i)
                    grid.push_back({t.h[i], t.density[i]});
                return nlohmann::json{{"family", "tabulated"}, {"grid", grid}};
            },
        },
        m.nu().family());
    return {{"alpha", m.alpha()}, {"sigma", m.sigma()}, {"nu", nu}};
}

nlohmann::json classification_to_json(const Classification& c)
{
    nlohmann::json j;
    j["conservative"] = c.conservative;
    j["extinction_in_finite_time"] = c.extinction_in_finite_time;
    if (std::isinf(c.gamma))
        j["gamma"] = "inf";
    else
        j["gamma"] = c.gamma;
    j["prob_extinct"] = c.prob_extinct;
    return j;
}

} // namespace psiflow
