#include "psiflow/levy_csbp.hpp"

#include "psiflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

namespace psiflow {

namespace {

// Drift from the jumps that are not simulated explicitly, given that jumps >= delta are.
// Jumps in (0,1] are compensated in Psi, larger ones are not.
double unsimulated_drift(const LevyMeasure& nu, double delta)
{
    if (nu.empty())
        return 0.0;
    if (delta <= 1.0)
        return -nu.first_moment(delta, 1.0);
    if (const auto* f = std::get_if<FiniteAtoms>(&nu.family()))
    {
        double sum = 0.0;
        for (const auto& a : f->atoms)
            if (a.size > 1.0 && a.size < delta)
                sum += a.mass * a.size;
        return sum;
    }
    return nu.first_moment(1.0, delta);
}

struct JumpRegime
{
    double delta = 0.0;
    double rate = 0.0;
    double drift = 0.0;
    double variance = 0.0;
    bool gaussian = false;
};

JumpRegime regime_for(const BranchingMechanism& m, double delta, bool gaussian_correction)
{
    JumpRegime r;
    r.delta = delta;
    r.rate = m.nu().empty() ? 0.0 : m.nu().tail_mass(delta);
    r.drift = -m.alpha() + unsimulated_drift(m.nu(), delta);
    double small = gaussian_correction ? m.nu().second_moment_below(delta) : 0.0;
    r.gaussian = small > 1e-12;
    r.variance = m.sigma() * m.sigma() + (r.gaussian ? small : 0.0);
    if (!std::isfinite(r.rate) || !std::isfinite(r.drift) || !std::isfinite(r.variance))
        throw ConfigError("jump truncation " + std::to_string(delta) + " is not supported by the " +
                          m.nu().family_name() + " family");
    return r;
}

} // namespace

const char* to_string(Lifetime kind)
{
    switch (kind)
    {
    case Lifetime::Alive:
        return "Alive";
    case Lifetime::Extinct:
        return "Extinct";
    case Lifetime::Exploded:
        return "Exploded";
    }
    return "?";
}

LevyPath simulate_levy(const BranchingMechanism& m, const LevyOptions& o, Rng& rng)
{
    if (!(o.step > 0.0) || !(o.jump_truncation > 0.0))
        throw ConfigError("step and jump truncation must be positive");
    if (o.policy == StepPolicy::Fixed && !(o.horizon > 0.0))
        throw ConfigError("horizon must be positive");
    if (o.policy == StepPolicy::StateScaled && !(o.clock_horizon > 0.0))
        throw ConfigError("clock horizon must be positive");
    if (!(o.initial > 0.0))
        throw ConfigError("initial value must be positive");

    const bool relative = o.relative_truncation && std::holds_alternative<StableDensity>(m.nu().family());
    JumpRegime regime = regime_for(m, o.jump_truncation, o.gaussian_correction);

    LevyPath path;
    path.truncation_threshold = o.jump_truncation;
    path.gaussian_correction_used = regime.gaussian;

    std::normal_distribution<double> normal;
    double y = o.initial;
    double time = 0.0;
    double clock = 0.0;
    path.times.push_back(0.0);
    path.values.push_back(y);

    auto push = [&](double value) {
        path.times.push_back(time);
        path.values.push_back(value);
        if (path.times.size() > o.max_nodes)
            throw NumericalError("Levy path exceeded the node budget");
    };

    for (;;)
    {
        double h = 0.0;
        if (o.policy == StepPolicy::Fixed)
        {
            double remaining = o.horizon - time;
            if (remaining <= 1e-12 * o.horizon)
                break;
            h = std::min(o.step, remaining);
        }
        else
        {
            double remaining = o.clock_horizon - clock;
            if (remaining <= 1e-12 * o.clock_horizon)
                break;
            h = std::min(o.step, remaining) * y;
        }
        if (relative)
        {
            double delta = o.jump_truncation * std::max(1.0, y);
            if (delta != regime.delta)
                regime = regime_for(m, delta, o.gaussian_correction);
            path.gaussian_correction_used = path.gaussian_correction_used || regime.gaussian;
        }

        // a finite-variation drift must not carry Y across 0 within one step
        if (o.policy == StepPolicy::StateScaled && regime.drift < 0.0)
            h = std::min(h, 0.5 * y / -regime.drift);

        double s = 0.0;
        bool finished = false;
        for (;;)
        {
            double next = regime.rate > 0.0 ? s - std::log(uniform_open0(rng)) / regime.rate : kInfinity;
            double end = std::min(next, h);
            double dt = end - s;
            if (dt > 0.0)
            {
                double ya = y;
                if (regime.variance > 0.0)
                {
                    double sd = std::sqrt(regime.variance * dt);
                    y = ya + regime.drift * dt + sd * normal(rng);
                    // Brownian bridge: the path may touch 0 between two positive endpoints
                    bool crossed = o.stop_at_zero &&
                                   (y <= 0.0 || uniform01(rng) < std::exp(-2.0 * ya * y / (regime.variance * dt)));
                    time += dt;
                    clock += dt / ya;
                    if (crossed)
                        y = 0.0;
                }
                else
                {
                    y = ya + regime.drift * dt;
                    if (y <= 0.0 && o.stop_at_zero)
                    {
                        // linear descent reaches 0 inside the interval
                        time += ya / -regime.drift;
                        clock += dt / ya;
                        y = 0.0;
                    }
                    else
                    {
                        time += dt;
                        clock += dt / ya;
                    }
                }
                if (o.stop_at_zero && y <= o.floor)
                {
                    push(0.0);
                    path.stopped_at_zero = true;
                    finished = true;
                    break;
                }
            }
            if (next >= h)
            {
                push(y);
                break;
            }
            double size = m.nu().sample_tail(regime.delta, rng);
            y += size;
            push(y);
            path.jumps.push_back({time, size, path.times.size() - 1});
            s = next;
            if (y >= o.ceiling)
            {
                path.hit_ceiling = true;
                finished = true;
                break;
            }
        }
        if (finished)
            break;
        if (y >= o.ceiling)
        {
            path.hit_ceiling = true;
            break;
        }
    }
    return path;
}

LevyPath simulate_levy(const BranchingMechanism& m, double horizon, double step, double jump_truncation,
                       std::uint64_t seed)
{
    LevyOptions o;
    o.horizon = horizon;
    o.step = step;
    o.jump_truncation = jump_truncation;
    Rng rng(seed);
    return simulate_levy(m, o, rng);
}

// ---------------------------------------------------------------------------
// Lamperti
// ---------------------------------------------------------------------------

CsbpPath lamperti_inverse(std::shared_ptr<const LevyPath> source, double horizon)
{
    const LevyPath& y = *source;
    if (y.times.empty() || y.times.size() != y.values.size())
        throw DomainError("Levy skeleton is empty or malformed");
    if (!(y.values.front() > 0.0))
        throw DomainError("Lamperti inverse needs g(0) > 0");

    CsbpPath z;
    z.source = std::move(source);
    z.horizon = horizon;
    z.times.reserve(y.times.size());
    z.values.reserve(y.values.size());

    std::size_t next_jump = 0;
    double clock = 0.0;
    z.times.push_back(0.0);
    z.values.push_back(y.values[0]);
    bool truncated = false;
    for (std::size_t i = 1; i < y.times.size(); ++i)
    {
        double previous = y.values[i - 1];
        if (previous < 0.0)
            throw DomainError("Lamperti inverse needs a nonnegative path");
        double dt = y.times[i] - y.times[i - 1];
        if (dt < 0.0)
            throw InternalError("Levy skeleton times are not increasing");
        double next_clock = previous > 0.0 ? clock + dt / previous : kInfinity;
        if (next_clock < clock)
            throw InternalError("Lamperti clock is not monotone");
        if (next_clock > horizon + 1e-9 * horizon)
        {
            // stop on the horizon; the value holds until then
            if (!(horizon - clock <= 1e-9 * horizon))
            {
                z.times.push_back(horizon);
                z.values.push_back(previous);
            }
            truncated = true;
            break;
        }
        clock = next_clock;
        z.times.push_back(clock);
        z.values.push_back(y.values[i]);
        while (next_jump < y.jumps.size() && y.jumps[next_jump].node < i)
            ++next_jump;
        while (next_jump < y.jumps.size() && y.jumps[next_jump].node == i)
        {
            const auto& j = y.jumps[next_jump];
            z.jumps.push_back({clock, j.size, y.values[i] - j.size, y.values[i]});
            ++next_jump;
        }
        if (y.values[i] <= 0.0)
            break;
    }

    const double last = z.values.back();
    if (!truncated && last <= 0.0 && std::isfinite(z.times.back()))
    {
        z.marker = {Lifetime::Extinct, z.times.back()};
    }
    else if (!truncated && y.hit_ceiling)
    {
        z.marker = {Lifetime::Exploded, z.times.back()};
    }
    else
    {
        if (std::isfinite(horizon) && std::abs(z.times.back() - horizon) <= 1e-9 * horizon)
            z.times.back() = horizon;
        z.marker = {Lifetime::Alive, std::isfinite(horizon) ? horizon : z.times.back()};
        if (!std::isfinite(horizon))
            z.horizon = z.times.back();
    }
    return z;
}

CsbpPath lamperti_inverse(const LevyPath& y, double horizon)
{
    return lamperti_inverse(std::make_shared<const LevyPath>(y), horizon);
}

LevyPath lamperti_forward(const CsbpPath& z)
{
    if (z.times.empty() || z.times.size() != z.values.size())
        throw DomainError("CSBP skeleton is empty or malformed");
    LevyPath y;
    if (z.source)
    {
        y.truncation_threshold = z.source->truncation_threshold;
        y.gaussian_correction_used = z.source->gaussian_correction_used;
    }
    double tau = 0.0;
    y.times.push_back(0.0);
    y.values.push_back(z.values[0]);
    std::size_t next_jump = 0;
    for (std::size_t i = 1; i < z.times.size(); ++i)
    {
        double dc = z.times[i] - z.times[i - 1];
        if (dc < 0.0)
            throw InternalError("CSBP skeleton times are not increasing");
        tau += dc * z.values[i - 1];
        y.times.push_back(tau);
        y.values.push_back(z.values[i]);
        while (next_jump < z.jumps.size() && z.jumps[next_jump].time <= z.times[i])
        {
            if (z.jumps[next_jump].time == z.times[i] && z.jumps[next_jump].z == z.values[i])
                y.jumps.push_back({tau, z.jumps[next_jump].delta, i});
            ++next_jump;
        }
    }
    y.stopped_at_zero = z.marker.kind == Lifetime::Extinct;
    y.hit_ceiling = z.marker.kind == Lifetime::Exploded;
    return y;
}

// ---------------------------------------------------------------------------
// CSBP
// ---------------------------------------------------------------------------

CsbpPath simulate_csbp(const BranchingMechanism& m, const CsbpOptions& c, Rng& rng)
{
    if (!(c.horizon > 0.0))
        throw ConfigError("horizon must be positive");
    LevyOptions o;
    o.policy = StepPolicy::StateScaled;
    o.clock_horizon = c.horizon;
    o.step = c.step;
    o.jump_truncation = c.jump_truncation;
    o.gaussian_correction = c.gaussian_correction;
    o.initial = c.initial;
    o.floor = c.extinction_floor;
    o.relative_truncation = c.relative_truncation;
    if (!m.is_conservative() || m.is_supercritical())
        o.ceiling = c.explosion_ceiling;
    auto levy = std::make_shared<const LevyPath>(simulate_levy(m, o, rng));
    return lamperti_inverse(levy, c.horizon);
}

CsbpPath simulate_csbp(const BranchingMechanism& m, double horizon, double step, double jump_truncation,
                       std::uint64_t seed)
{
    CsbpOptions c;
    c.horizon = horizon;
    c.step = step;
    c.jump_truncation = jump_truncation;
    Rng rng(seed);
    return simulate_csbp(m, c, rng);
}

std::size_t CsbpPath::node_at(double t) const
{
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin())
        return 0;
    return static_cast<std::size_t>(it - times.begin()) - 1;
}

double CsbpPath::value(double t) const
{
    if (t >= marker.time)
    {
        if (marker.kind == Lifetime::Extinct)
            return 0.0;
        if (marker.kind == Lifetime::Exploded)
            return kInfinity;
    }
    return values[node_at(t)];
}

double stopping_time_T_eps(const CsbpPath& p, double eps)
{
    if (!(eps > 0.0 && eps < 1.0))
        throw DomainError("T(eps) needs 0 < eps < 1");
    const double hi = 1.0 / eps;
    for (std::size_t i = 0; i < p.times.size(); ++i)
        if (!(p.values[i] > eps && p.values[i] < hi))
            return p.times[i];
    if (p.marker.kind == Lifetime::Exploded)
        return p.marker.time;
    return p.horizon;
}

double squared_jump_fraction_sum(const CsbpPath& p, double t)
{
    double sum = 0.0;
    for (const auto& j : p.jumps)
    {
        if (j.time > t)
            break;
        double x = j.fraction();
        sum += x * x;
    }
    return sum;
}

std::vector<std::pair<double, double>> resample(const std::vector<double>& times, const std::vector<double>& values,
                                                double end, double resolution)
{
    if (!(resolution > 0.0))
        throw DomainError("resampling resolution must be positive");
    std::vector<std::pair<double, double>> out;
    const auto count = static_cast<std::size_t>(std::floor(end / resolution + 1e-9));
    out.reserve(count + 1);
    for (std::size_t k = 0; k <= count; ++k)
    {
        double t = static_cast<double>(k) * resolution;
        auto it = std::upper_bound(times.begin(), times.end(), t);
        std::size_t i = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
        out.emplace_back(t, values[i]);
    }
    return out;
}

void write_trajectory_csv(const CsbpPath& p, std::ostream& out)
{
    auto precision = out.precision(17);
    out << "time,Z\n";
    for (std::size_t i = 0; i < p.times.size(); ++i)
        out << p.times[i] << ',' << p.values[i] << '\n';
    out.precision(precision);
}

void write_jumps_csv(const CsbpPath& p, std::ostream& out)
{
    auto precision = out.precision(17);
    out << "s,delta,Z_minus,Z\n";
    for (const auto& j : p.jumps)
        out << j.time << ',' << j.delta << ',' << j.z_minus << ',' << j.z << '\n';
    out.precision(precision);
}

} // namespace psiflow
