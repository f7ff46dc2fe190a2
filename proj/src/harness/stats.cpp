#include "psiflow/harness/stats.hpp"

#include "psiflow/errors.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <set>

namespace psiflow::harness {

const char* to_string(Verdict v)
{
    switch (v)
    {
    case Verdict::Pass:
        return "Pass";
    case Verdict::Fail:
        return "Fail";
    case Verdict::Inconclusive:
        return "Inconclusive";
    }
    return "?";
}

namespace {

nlohmann::json number_or_string(double x)
{
    if (std::isfinite(x))
        return x;
    if (std::isnan(x))
        return "nan";
    return x > 0 ? "inf" : "-inf";
}

} // namespace

nlohmann::json GateResult::to_json() const
{
    nlohmann::json j;
    j["name"] = name;
    j["kind"] = kind;
    j["verdict"] = harness::to_string(verdict);
    j["samples"] = samples;
    j["threshold"] = threshold;
    if (kind == "z")
    {
        j["mean"] = number_or_string(mean);
        j["expected"] = number_or_string(expected);
        j["se"] = number_or_string(se);
        j["z"] = number_or_string(statistic);
        j["allowance"] = allowance;
    }
    else if (kind == "upper_bound" || kind == "lower_bound")
    {
        j["value"] = number_or_string(statistic);
    }
    else
    {
        j["statistic"] = number_or_string(statistic);
        j["p_value"] = number_or_string(p_value);
    }
    return j;
}

void RunningMoments::add(double x)
{
    ++n_;
    double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
}

void RunningMoments::merge(const RunningMoments& other)
{
    if (other.n_ == 0)
        return;
    if (n_ == 0)
    {
        *this = other;
        return;
    }
    double total = static_cast<double>(n_ + other.n_);
    double d = other.mean_ - mean_;
    mean_ += d * static_cast<double>(other.n_) / total;
    m2_ += other.m2_ + d * d * static_cast<double>(n_) * static_cast<double>(other.n_) / total;
    n_ += other.n_;
}

double RunningMoments::variance() const
{
    if (n_ < 2)
        return std::numeric_limits<double>::quiet_NaN();
    return m2_ / static_cast<double>(n_ - 1);
}

double RunningMoments::standard_error() const
{
    if (n_ < 2)
        return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(variance() / static_cast<double>(n_));
}

namespace {

GateResult finish_z(GateResult g)
{
    g.kind = "z";
    g.threshold = kZThreshold;
    if (g.samples < 2)
    {
        g.verdict = Verdict::Inconclusive;
        g.statistic = std::numeric_limits<double>::quiet_NaN();
        return g;
    }
    double diff = g.mean - g.expected;
    if (g.se > 0.0)
        g.statistic = diff / g.se;
    else
        g.statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    g.verdict = std::abs(diff) <= kZThreshold * g.se + g.allowance ? Verdict::Pass : Verdict::Fail;
    return g;
}

RunningMoments moments_of(const std::vector<double>& xs)
{
    RunningMoments m;
    for (double x : xs)
        m.add(x);
    return m;
}

} // namespace

GateResult z_gate(const std::string& name, const RunningMoments& m, double expected, double allowance)
{
    GateResult g;
    g.name = name;
    g.samples = m.count();
    g.mean = m.mean();
    g.expected = expected;
    g.se = m.standard_error();
    g.allowance = allowance;
    return finish_z(g);
}

GateResult z_gate(const std::string& name, const std::vector<double>& samples, double expected, double allowance)
{
    return z_gate(name, moments_of(samples), expected, allowance);
}

GateResult paired_gate(const std::string& name, const std::vector<double>& a, const std::vector<double>& b,
                       double allowance)
{
    if (a.size() != b.size())
        throw DomainError("paired gate needs samples of equal size");
    RunningMoments d;
    for (std::size_t i = 0; i < a.size(); ++i)
        d.add(a[i] - b[i]);
    return z_gate(name, d, 0.0, allowance);
}

GateResult two_sample_gate(const std::string& name, const std::vector<double>& a, const std::vector<double>& b,
                           double allowance)
{
    auto ma = moments_of(a);
    auto mb = moments_of(b);
    GateResult g;
    g.name = name;
    g.samples = std::min(ma.count(), mb.count());
    g.mean = ma.mean();
    g.expected = mb.mean();
    g.se = std::hypot(ma.standard_error(), mb.standard_error());
    g.allowance = allowance;
    return finish_z(g);
}

double chi_square_survival(double statistic, double dof)
{
    if (!(dof > 0.0))
        return 1.0;
    if (!(statistic > 0.0))
        return 1.0;
    return boost::math::gamma_q(dof / 2.0, statistic / 2.0);
}

GateResult chi_square_gof(const std::string& name, const std::vector<double>& observed,
                          const std::vector<double>& probabilities)
{
    if (observed.size() != probabilities.size())
        throw DomainError("observed counts and probabilities differ in length");
    GateResult g;
    g.name = name;
    g.kind = "chi2";
    g.threshold = kPThreshold;
    double total = 0.0;
    for (double o : observed)
        total += o;
    g.samples = static_cast<std::size_t>(total);
    if (total < 2.0)
    {
        g.verdict = Verdict::Inconclusive;
        return g;
    }
    double stat = 0.0;
    int cells = 0;
    double pooled_o = 0.0, pooled_e = 0.0;
    for (std::size_t k = 0; k < observed.size(); ++k)
    {
        double e = probabilities[k] * total;
        if (e < 5.0)
        {
            pooled_o += observed[k];
            pooled_e += e;
            continue;
        }
        stat += (observed[k] - e) * (observed[k] - e) / e;
        ++cells;
    }
    if (pooled_e > 0.0)
    {
        stat += (pooled_o - pooled_e) * (pooled_o - pooled_e) / pooled_e;
        ++cells;
    }
    else if (pooled_o > 0.0)
    {
        // observations in a cell of probability zero
        g.statistic = std::numeric_limits<double>::infinity();
        g.p_value = 0.0;
        g.verdict = Verdict::Fail;
        return g;
    }
    g.statistic = stat;
    g.p_value = chi_square_survival(stat, cells - 1);
    g.verdict = cells < 2 ? Verdict::Inconclusive : (g.p_value >= kPThreshold ? Verdict::Pass : Verdict::Fail);
    return g;
}

GateResult chi_square_homogeneity(const std::string& name, const std::map<std::string, double>& a,
                                  const std::map<std::string, double>& b)
{
    GateResult g;
    g.name = name;
    g.kind = "chi2";
    g.threshold = kPThreshold;
    double na = 0.0, nb = 0.0;
    std::set<std::string> keys;
    for (const auto& [k, v] : a)
    {
        na += v;
        keys.insert(k);
    }
    for (const auto& [k, v] : b)
    {
        nb += v;
        keys.insert(k);
    }
    g.samples = static_cast<std::size_t>(std::min(na, nb));
    if (na < 2.0 || nb < 2.0)
    {
        g.verdict = Verdict::Inconclusive;
        return g;
    }
    // pool sparse categories so every expected count stays >= 5
    double stat = 0.0;
    int cells = 0;
    double pa = 0.0, pb = 0.0;
    const double n = na + nb;
    auto add_cell = [&](double oa, double ob) {
        double row = oa + ob;
        double ea = row * na / n, eb = row * nb / n;
        stat += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
        ++cells;
    };
    for (const auto& k : keys)
    {
        double oa = a.count(k) ? a.at(k) : 0.0;
        double ob = b.count(k) ? b.at(k) : 0.0;
        double row = oa + ob;
        if (row * std::min(na, nb) / n < 5.0)
        {
            pa += oa;
            pb += ob;
            continue;
        }
        add_cell(oa, ob);
    }
    if (pa + pb > 0.0)
        add_cell(pa, pb);
    g.statistic = stat;
    g.p_value = chi_square_survival(stat, cells - 1);
    g.verdict = cells < 2 ? Verdict::Inconclusive : (g.p_value >= kPThreshold ? Verdict::Pass : Verdict::Fail);
    return g;
}

double kolmogorov_survival(double x)
{
    if (x <= 0.0)
        return 1.0;
    if (x < 0.2)
        return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k)
    {
        double term = std::exp(-2.0 * k * k * x * x);
        sum += (k % 2 ? 1.0 : -1.0) * term;
        if (term < 1e-18)
            break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

GateResult ks_uniform(const std::string& name, std::vector<double> samples)
{
    GateResult g;
    g.name = name;
    g.kind = "ks";
    g.threshold = kPThreshold;
    g.samples = samples.size();
    if (samples.size() < 2)
    {
        g.verdict = Verdict::Inconclusive;
        return g;
    }
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i)
    {
        double x = std::clamp(samples[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - x, x - static_cast<double>(i) / n});
    }
    const double root = std::sqrt(n);
    g.statistic = d;
    g.p_value = kolmogorov_survival((root + 0.12 + 0.11 / root) * d);
    g.verdict = g.p_value >= kPThreshold ? Verdict::Pass : Verdict::Fail;
    return g;
}

GateResult bound_gate(const std::string& name, double value, double bound, std::size_t samples, bool upper)
{
    GateResult g;
    g.name = name;
    g.kind = upper ? "upper_bound" : "lower_bound";
    g.statistic = value;
    g.threshold = bound;
    g.samples = samples;
    if (samples < 2 || std::isnan(value))
        g.verdict = Verdict::Inconclusive;
    else
        g.verdict = (upper ? value <= bound : value >= bound) ? Verdict::Pass : Verdict::Fail;
    return g;
}

Verdict combine(const std::vector<GateResult>& gates)
{
    bool inconclusive = false;
    for (const auto& g : gates)
    {
        if (g.verdict == Verdict::Fail)
            return Verdict::Fail;
        inconclusive |= g.verdict == Verdict::Inconclusive;
    }
    return inconclusive ? Verdict::Inconclusive : Verdict::Pass;
}

} // namespace psiflow::harness
