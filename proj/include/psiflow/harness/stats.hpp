#pragma once

#include "json.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace psiflow::harness {

enum class Verdict
{
    Pass,
    Fail,
    Inconclusive
};

const char* to_string(Verdict v);

/// Outcome of one statistical gate. For z gates `statistic` is z; for chi-square
/// and KS gates it is the test statistic and `p_value` is filled in.
struct GateResult
{
    std::string name;
    std::string kind; // "z", "chi2", "ks"
    double mean = 0.0;
    double expected = 0.0;
    double se = 0.0;
    double statistic = 0.0;
    double p_value = 1.0;
    double allowance = 0.0;
    double threshold = 0.0; // 4 for z gates, 0.001 for p-value gates
    std::size_t samples = 0;
    Verdict verdict = Verdict::Inconclusive;

    bool passed() const { return verdict == Verdict::Pass; }
    nlohmann::json to_json() const;
};

constexpr double kZThreshold = 4.0;
constexpr double kPThreshold = 0.001;

/// Welford accumulator.
class RunningMoments
{
public:
    void add(double x);
    void merge(const RunningMoments& other);
    std::size_t count() const noexcept { return n_; }
    double mean() const noexcept { return mean_; }
    double variance() const;
    double standard_error() const;

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

/// |mean - expected| <= 4 s.e. + allowance. Inconclusive with fewer than 2 samples.
GateResult z_gate(const std::string& name, const std::vector<double>& samples, double expected,
                  double allowance = 0.0);
GateResult z_gate(const std::string& name, const RunningMoments& moments, double expected, double allowance = 0.0);

/// Paired samples: gate on the mean of a_i - b_i against 0.
GateResult paired_gate(const std::string& name, const std::vector<double>& a, const std::vector<double>& b,
                       double allowance = 0.0);

/// Independent samples: se = sqrt(se_a^2 + se_b^2).
GateResult two_sample_gate(const std::string& name, const std::vector<double>& a, const std::vector<double>& b,
                           double allowance = 0.0);

/// Upper tail of the chi-square distribution.
double chi_square_survival(double statistic, double dof);

/// Goodness of fit of observed counts against probabilities. Cells with expected
/// count below 5 are pooled into one.
GateResult chi_square_gof(const std::string& name, const std::vector<double>& observed,
                          const std::vector<double>& probabilities);

/// Two-sample homogeneity test on category counts (keys may differ between samples).
GateResult chi_square_homogeneity(const std::string& name, const std::map<std::string, double>& a,
                                  const std::map<std::string, double>& b);

/// Kolmogorov distribution tail Q_KS(x) = 2 sum (-1)^{k-1} exp(-2 k^2 x^2).
double kolmogorov_survival(double x);

/// One-sample KS test against uniform[0,1], with the Stephens small-sample correction.
GateResult ks_uniform(const std::string& name, std::vector<double> samples);

/// Deterministic or fraction-type criterion: value <= bound (upper) or >= bound.
/// Inconclusive with fewer than 2 samples.
GateResult bound_gate(const std::string& name, double value, double bound, std::size_t samples, bool upper = true);

/// Fail if any gate fails, else Inconclusive if any is, else Pass.
Verdict combine(const std::vector<GateResult>& gates);

} // namespace psiflow::harness
