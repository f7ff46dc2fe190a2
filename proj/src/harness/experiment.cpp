#include "psiflow/harness/experiment.hpp"

#include "psiflow/errors.hpp"
#include "psiflow/genealogy_flow.hpp"
#include "psiflow/harness/feller_oracle.hpp"
#include "psiflow/harness/parallel.hpp"
#include "psiflow/harness/seed.hpp"
#include "psiflow/lookdown_eve.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace psiflow::harness {

std::string csv_number(double x)
{
    if (std::isnan(x))
        return "nan";
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

namespace {

// two-sided normal tail at 4 s.e.
constexpr double kZLevel = 6.334e-5;

CsbpOptions path_options(const ExperimentConfig& c, double horizon)
{
    CsbpOptions o;
    o.horizon = horizon;
    o.step = c.step;
    o.jump_truncation = c.jump_truncation;
    return o;
}

struct Streams
{
    Rng path, flow, types, oracle;
    explicit Streams(std::uint64_t master, std::size_t i)
        : path(substream(seed_stream(master, i), Stream::Path)),
          flow(substream(seed_stream(master, i), Stream::Flow)),
          types(substream(seed_stream(master, i), Stream::Types)),
          oracle(substream(seed_stream(master, i), Stream::Oracle))
    {
    }
};

nlohmann::json finite_or_string(double x)
{
    if (std::isfinite(x))
        return x;
    return csv_number(x);
}

// ---------------------------------------------------------------------------

void laplace(const ExperimentConfig& c, ExperimentReport& r)
{
    auto times = c.times.empty() ? std::vector<double>{c.horizon} : c.times;
    auto lambdas = c.lambdas.empty() ? std::vector<double>{0.5, 1.0, 2.0} : c.lambdas;
    const double end = *std::max_element(times.begin(), times.end());
    const auto& m = c.mechanism;

    auto values = parallel_map(c.replicates, c.threads, [&](std::size_t i) {
        Streams s(c.master_seed, i);
        auto p = simulate_csbp(m, path_options(c, end), s.path);
        std::vector<double> z;
        for (double t : times)
            z.push_back(p.value(t));
        return z;
    });

    LaplaceFlow flow(m);
    std::ostringstream table, samples;
    table << "t,lambda,mc,se,theory,z,verdict\n";
    for (std::size_t a = 0; a < times.size(); ++a)
    {
        for (double lambda : lambdas)
        {
            std::vector<double> e;
            for (const auto& z : values)
                e.push_back(std::isinf(z[a]) ? 0.0 : std::exp(-lambda * z[a]));
            double theory = std::numeric_limits<double>::quiet_NaN();
            try
            {
                theory = std::exp(-flow.solve(times[a], lambda));
            }
            catch (const BlowUpError&)
            {
                theory = 0.0;
            }
            std::ostringstream name;
            name << "laplace t=" << times[a] << " lambda=" << lambda;
            auto g = z_gate(name.str(), e, theory, 3.0 * c.step);
            table << csv_number(times[a]) << ',' << csv_number(lambda) << ',' << csv_number(g.mean) << ','
                  << csv_number(g.se) << ',' << csv_number(theory) << ',' << csv_number(g.statistic) << ','
                  << to_string(g.verdict) << '\n';
            r.gates.push_back(std::move(g));
        }
        std::vector<double> dead;
        for (const auto& z : values)
            dead.push_back(z[a] == 0.0 ? 1.0 : 0.0);
        double u = flow.solve_at_infinity(times[a]);
        std::ostringstream name;
        name << "extinction t=" << times[a];
        r.gates.push_back(z_gate(name.str(), dead, std::isinf(u) ? 0.0 : std::exp(-u)));
    }
    samples << "replicate";
    for (double t : times)
        samples << ",Z_" << csv_number(t);
    samples << '\n';
    for (std::size_t i = 0; i < values.size(); ++i)
    {
        samples << i;
        for (double z : values[i])
            samples << ',' << csv_number(z);
        samples << '\n';
    }
    r.tables.push_back({"laplace.csv", table.str()});
    r.tables.push_back({"laplace_samples.csv", samples.str()});
    r.summary["times"] = times;
    r.summary["lambdas"] = lambdas;
    r.summary["allowance"] = 3.0 * c.step;
}

// ---------------------------------------------------------------------------

void compensator(const ExperimentConfig& c, ExperimentReport& r)
{
    const auto& m = c.mechanism;
    const std::size_t n = c.n;
    std::vector<std::vector<std::uint32_t>> subsets;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask)
    {
        if (std::popcount(mask) < 2)
            continue;
        std::vector<std::uint32_t> K;
        for (std::uint32_t b = 0; b < n; ++b)
            if (mask & (1u << b))
                K.push_back(b + 1);
        subsets.push_back(K);
    }
    std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
        return a.size() != b.size() ? a.size() < b.size() : a < b;
    });

    struct Row
    {
        double stop = 0.0;
        std::vector<double> counts;
        std::vector<double> compensators; // by k
    };
    auto rows = parallel_map(c.replicates, c.threads, [&](std::size_t i) {
        Streams s(c.master_seed, i);
        auto p = std::make_shared<const CsbpPath>(simulate_csbp(m, path_options(c, c.horizon), s.path));
        Row row;
        row.stop = std::min(c.horizon, stopping_time_T_eps(*p, c.epsilon));
        auto f = build_flow(p, m, n, s.flow, row.stop);
        auto counts = counting_processes(f, row.stop);
        for (const auto& K : subsets)
            row.counts.push_back(static_cast<double>(count_at(counts, K, row.stop)));
        for (std::size_t k = 2; k <= n; ++k)
            row.compensators.push_back(integrated_rate(*p, n, k, row.stop, m));
        return row;
    });

    std::ostringstream table;
    table << "subset,k,mean_count,mean_compensator,se,z,gated\n";
    // per subset (reported) and per size k averaged over the subsets of that size (gated)
    for (std::size_t k = 2; k <= n; ++k)
    {
        std::vector<double> pooled(rows.size(), 0.0), comp(rows.size(), 0.0);
        std::size_t members = 0;
        for (std::size_t s = 0; s < subsets.size(); ++s)
        {
            if (subsets[s].size() != k)
                continue;
            ++members;
            std::vector<double> a, b;
            for (std::size_t i = 0; i < rows.size(); ++i)
            {
                a.push_back(rows[i].counts[s]);
                b.push_back(rows[i].compensators[k - 2]);
                pooled[i] += rows[i].counts[s];
            }
            auto g = paired_gate("subset", a, b);
            std::string label;
            for (auto e : subsets[s])
                label += (label.empty() ? "" : " ") + std::to_string(e);
            const double reps = static_cast<double>(rows.size());
            table << label << ',' << k << ',' << csv_number(std::accumulate(a.begin(), a.end(), 0.0) / reps) << ','
                  << csv_number(std::accumulate(b.begin(), b.end(), 0.0) / reps) << ','
                  << csv_number(g.se) << ',' << csv_number(g.statistic) << ",no\n";
        }
        for (std::size_t i = 0; i < rows.size(); ++i)
        {
            pooled[i] /= static_cast<double>(members);
            comp[i] = rows[i].compensators[k - 2];
        }
        r.gates.push_back(paired_gate("compensator k=" + std::to_string(k), pooled, comp));
    }
    std::ostringstream per_rep;
    per_rep << "replicate,stop";
    for (const auto& K : subsets)
    {
        per_rep << ",L_";
        for (std::size_t e = 0; e < K.size(); ++e)
            per_rep << (e ? "_" : "") << K[e];
    }
    for (std::size_t k = 2; k <= n; ++k)
        per_rep << ",A_" << k;
    per_rep << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        per_rep << i << ',' << csv_number(rows[i].stop);
        for (double x : rows[i].counts)
            per_rep << ',' << csv_number(x);
        for (double x : rows[i].compensators)
            per_rep << ',' << csv_number(x);
        per_rep << '\n';
    }
    r.tables.push_back({"compensator.csv", table.str()});
    r.tables.push_back({"compensator_samples.csv", per_rep.str()});
    r.summary["epsilon"] = c.epsilon;
    r.summary["subsets"] = subsets.size();
}

// ---------------------------------------------------------------------------

void paintbox_marginal(const ExperimentConfig& c, ExperimentReport& r)
{
    const auto& m = c.mechanism;
    const double t = c.horizon;
    // Psi(u) = sigma^2 u^2 / 2 is u^2 run at speed sigma^2/2
    FellerSubordinatorOracle oracle{0.5 * m.sigma() * m.sigma() * t, 1.0};
    constexpr int kAttempts = 10000;

    struct Draw
    {
        std::string simulated, reference;
        int discarded = 0;
    };
    auto draws = parallel_map(c.replicates, c.threads, [&](std::size_t i) {
        Streams s(c.master_seed, i);
        Draw d;
        for (int a = 0; a < kAttempts && d.simulated.empty(); ++a)
        {
            auto p = std::make_shared<const CsbpPath>(simulate_csbp(m, path_options(c, t), s.path));
            if (p->marker.kind != Lifetime::Alive || !(p->value(t) > 0.0))
            {
                ++d.discarded;
                continue;
            }
            auto f = build_flow(p, m, c.n, s.flow, t);
            d.simulated = partition_between(f, 0.0, t).to_string();
        }
        for (int a = 0; a < kAttempts && d.reference.empty(); ++a)
        {
            auto sample = sample_feller_subordinator(oracle, s.oracle);
            if (sample.total > 0.0)
                d.reference = paintbox_subordinator(sample.jumps, sample.total, 0.0, c.n, s.oracle).to_string();
        }
        if (d.simulated.empty() || d.reference.empty())
            throw NumericalError("no surviving path in " + std::to_string(kAttempts) + " attempts");
        return d;
    });

    std::map<std::string, double> sim, ref;
    std::size_t discarded = 0;
    for (const auto& d : draws)
    {
        sim[d.simulated] += 1.0;
        ref[d.reference] += 1.0;
        discarded += static_cast<std::size_t>(d.discarded);
    }
    auto g = chi_square_homogeneity("paintbox marginal n=" + std::to_string(c.n), sim, ref);
    if (draws.size() < 2)
        g.verdict = Verdict::Inconclusive;
    r.gates.push_back(g);

    std::map<std::string, std::pair<double, double>> cells;
    for (const auto& [k, v] : sim)
        cells[k].first = v;
    for (const auto& [k, v] : ref)
        cells[k].second = v;
    std::ostringstream table;
    table << "partition,simulated,oracle\n";
    for (const auto& [k, v] : cells)
        table << '"' << k << "\"," << csv_number(v.first) << ',' << csv_number(v.second) << '\n';
    r.tables.push_back({"paintbox.csv", table.str()});
    r.summary["oracle_t"] = oracle.t;
    r.summary["discarded_extinct_paths"] = discarded;
    r.summary["survival_rate"] = static_cast<double>(draws.size()) / static_cast<double>(draws.size() + discarded);
}

// ---------------------------------------------------------------------------

void eve(const ExperimentConfig& c, ExperimentReport& r)
{
    const auto& m = c.mechanism;
    EveCriterionOptions options;
    options.threshold = c.eve_threshold;
    options.plateau = c.eve_plateau;
    static constexpr double kFractions[] = {0.25, 0.5, 0.75, 0.95};

    struct Row
    {
        Lifetime lifetime = Lifetime::Alive;
        double end = 0.0;
        EveCriterionResult criterion;
        EveEstimate estimate;
    };
    auto rows = parallel_map(c.replicates, c.threads, [&](std::size_t i) {
        Streams s(c.master_seed, i);
        Row row;
        auto p = std::make_shared<const CsbpPath>(simulate_csbp(m, path_options(c, c.horizon), s.path));
        row.lifetime = p->marker.kind;
        row.end = std::min(p->end_time(), c.horizon);
        row.criterion = check_eve_criterion(*p, m, options);
        auto f = build_flow(p, m, c.n, s.flow, 0.95 * row.end);
        auto types = uniform_types(c.n, s.types);
        std::vector<EmpiricalMeasure> measures;
        for (double frac : kFractions)
            measures.push_back(empirical_measure(run_lookdown(f, 0.0, types, frac * row.end)));
        row.estimate = eve_estimate(measures);
        return row;
    });

    std::size_t diverging_heavy = 0, bounded = 0, agree = 0;
    std::vector<double> locations;
    std::ostringstream table;
    table << "replicate,lifetime,end,statistic,last_decade_growth,verdict,final_max_weight,eve_location\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        const auto& row = rows[i];
        const double w = row.estimate.max_weight_trajectory.empty() ? 0.0 : row.estimate.max_weight_trajectory.back();
        const bool heavy = w >= c.eve_weight;
        const auto v = row.criterion.verdict;
        diverging_heavy += v == EveVerdict::Diverging && heavy;
        bounded += v == EveVerdict::Bounded;
        agree += (v == EveVerdict::Diverging && heavy) || (v == EveVerdict::Bounded && !heavy);
        if (row.estimate.has_eve)
            locations.push_back(row.estimate.location);
        table << i << ',' << to_string(row.lifetime) << ',' << csv_number(row.end) << ','
              << csv_number(row.criterion.statistic) << ',' << csv_number(row.criterion.last_decade_growth) << ','
              << to_string(v) << ',' << csv_number(w) << ','
              << (row.estimate.has_eve ? csv_number(row.estimate.location) : "") << '\n';
        r.records.push_back({{"replicate", i},
                             {"lifetime", to_string(row.lifetime)},
                             {"criterion", row.criterion.to_json()},
                             {"has_eve", row.estimate.has_eve},
                             {"eve_location", row.estimate.location},
                             {"max_weight_trajectory", row.estimate.max_weight_trajectory}});
    }
    const double total = static_cast<double>(rows.size());
    r.gates.push_back(bound_gate("verdict agrees with the max-weight trend", static_cast<double>(agree) / total,
                                 c.eve_fraction, rows.size(), false));
    if (locations.size() >= 2)
        r.gates.push_back(ks_uniform("eve location uniform", locations));
    r.summary["fraction_diverging_and_heavy"] = static_cast<double>(diverging_heavy) / total;
    r.summary["fraction_bounded"] = static_cast<double>(bounded) / total;
    r.summary["fraction_agreeing"] = static_cast<double>(agree) / total;
    r.summary["paths_with_eve"] = locations.size();
    r.summary["observation_fractions"] = std::vector<double>(std::begin(kFractions), std::end(kFractions));
    r.tables.push_back({"eve.csv", table.str()});
}

// ---------------------------------------------------------------------------

void dust(const ExperimentConfig& c, ExperimentReport& r)
{
    const auto& m = c.mechanism;
    const double t = c.horizon;
    auto rows = parallel_map(c.replicates, c.threads, [&](std::size_t i) {
        Streams s(c.master_seed, i);
        auto p = std::make_shared<const CsbpPath>(simulate_csbp(m, path_options(c, t), s.path));
        return dust_frequency_check(build_flow(p, m, c.n, s.flow, t), t);
    });
    const double slack = 2.0 / std::sqrt(static_cast<double>(c.n));
    std::vector<double> empirical, gap;
    std::ostringstream table;
    table << "replicate,empirical,predicted\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        empirical.push_back(rows[i].empirical);
        gap.push_back(std::abs(rows[i].empirical - rows[i].predicted));
        table << i << ',' << csv_number(rows[i].empirical) << ',' << csv_number(rows[i].predicted) << '\n';
    }
    if (m.sigma() > 0.0)
        r.gates.push_back(z_gate("dust vanishes", empirical, 0.0, slack));
    else
        r.gates.push_back(z_gate("|empirical - predicted| dust", gap, 0.0, slack));
    r.summary["allowance"] = slack;
    r.tables.push_back({"dust.csv", table.str()});
}

// ---------------------------------------------------------------------------

void rate_continuity(const ExperimentConfig& c, ExperimentReport& r)
{
    const auto& m = c.mechanism;
    const double s2 = m.sigma() * m.sigma();
    auto member = [&](std::size_t i) {
        double k = static_cast<double>(i + 1);
        return std::make_pair(1.0 + 1.0 / k, BranchingMechanism(m.alpha(), std::sqrt(s2 + 1.0 / k), m.nu()));
    };
    auto probe = rate_continuity_probe(c.n, 2, c.sequence_length, member, 1.0, m);
    const std::size_t rows = probe.rows.size();
    double closed_form_error = 0.0;
    if (m.nu().empty())
    {
        for (const auto& row : probe.rows)
        {
            double k = static_cast<double>(row.index + 1);
            closed_form_error = std::max(closed_form_error, std::abs(row.value - (s2 + 1.0 / k) / (1.0 + 1.0 / k)));
        }
        r.gates.push_back(bound_gate("closed form", closed_form_error, 1e-9, rows));
    }
    r.gates.push_back(bound_gate("deviation at the last member", probe.rows.back().deviation, 1e-2, rows));
    std::ostringstream table;
    table << "m,z,lambda,deviation\n";
    for (const auto& row : probe.rows)
        table << row.index + 1 << ',' << csv_number(row.z) << ',' << csv_number(row.value) << ','
              << csv_number(row.deviation) << '\n';
    r.tables.push_back({"rates.csv", table.str()});
    r.summary = probe.to_json();
    r.summary["n"] = c.n;
    r.summary["k"] = 2;
    r.summary["max_closed_form_error"] = closed_form_error;
}

// ---------------------------------------------------------------------------

void decomposition(const ExperimentConfig& c, ExperimentReport& r)
{
    const auto& m = c.mechanism;
    const double t = c.horizon;
    const double s = c.start >= 0.0 ? c.start : 0.5 * t;
    const std::size_t fine = c.fine_n ? c.fine_n : 2 * c.n;
    struct Row
    {
        bool alive = false;
        std::size_t discarded = 0;
        DecompositionReport report;
    };
    // r_{s,t} needs t < T: extinct paths are redrawn
    constexpr std::size_t kAttempts = 1000;
    auto rows = parallel_map(c.replicates, c.threads, [&](std::size_t i) {
        Streams st(c.master_seed, i);
        Row row;
        std::shared_ptr<const CsbpPath> p;
        for (; row.discarded < kAttempts; ++row.discarded)
        {
            p = std::make_shared<const CsbpPath>(simulate_csbp(m, path_options(c, t), st.path));
            if (p->marker.kind == Lifetime::Alive)
                break;
        }
        row.alive = p->marker.kind == Lifetime::Alive;
        if (!row.alive)
            return row;
        FlowOptions window;
        window.from = s;
        window.until = t;
        auto f = build_flow(p, m, fine, st.flow, window);
        row.report = decomposition_check(f, s, t, c.n, uniform_types(fine, st.types));
        return row;
    });
    RunningMoments tv;
    std::size_t discarded = 0;
    std::ostringstream table;
    table << "replicate,alive,tv,atoms_lookdown,atoms_reference\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        const auto& row = rows[i];
        discarded += row.discarded;
        table << i << ',' << (row.alive ? 1 : 0) << ',';
        if (row.alive)
        {
            tv.add(row.report.tv);
            table << csv_number(row.report.tv) << ',' << row.report.atoms_lookdown << ','
                  << row.report.atoms_reference;
            auto rec = row.report.to_json();
            rec.erase("atoms");
            rec["replicate"] = i;
            r.records.push_back(rec);
        }
        else
        {
            table << ",,";
        }
        table << '\n';
    }
    const double gate = 5.0 / std::sqrt(static_cast<double>(c.n));
    r.gates.push_back(bound_gate("mean total variation", tv.mean(), gate, tv.count()));
    r.summary["start"] = s;
    r.summary["fine_n"] = fine;
    r.summary["mean_tv"] = tv.mean();
    r.summary["se_tv"] = finite_or_string(tv.standard_error());
    r.summary["surviving_paths"] = tv.count();
    r.summary["discarded_extinct_paths"] = discarded;
    r.tables.push_back({"decomposition.csv", table.str()});
}

// ---------------------------------------------------------------------------

void classify_paths(const ExperimentConfig& c, ExperimentReport& r)
{
    const auto& m = c.mechanism;
    auto rows = parallel_map(c.replicates, c.threads, [&](std::size_t i) {
        Streams s(c.master_seed, i);
        auto p = std::make_shared<const CsbpPath>(simulate_csbp(m, path_options(c, c.horizon), s.path));
        if (p->marker.kind == Lifetime::Exploded || c.n > 4096)
            return classify_behaviour(*p, m);
        auto f = build_flow(p, m, c.n, s.flow);
        return classify_behaviour(*p, m, &f);
    });
    std::map<std::string, std::size_t> counts;
    std::size_t undecided = 0, matching = 0;
    std::ostringstream table;
    table << "replicate,behaviour,undecided,exits\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        const auto& b = rows[i];
        ++counts[to_string(b.behaviour)];
        undecided += b.undecided;
        if (c.expected_behaviour)
            matching += *c.expected_behaviour == to_string(b.behaviour);
        table << i << ',' << to_string(b.behaviour) << ',' << (b.undecided ? 1 : 0) << ',' << b.exits.size() << '\n';
        auto rec = b.to_json();
        rec["replicate"] = i;
        r.records.push_back(rec);
    }
    if (c.expected_behaviour)
        r.gates.push_back(bound_gate("label " + *c.expected_behaviour,
                                     static_cast<double>(matching) / static_cast<double>(rows.size()), 0.95,
                                     rows.size(), false));
    r.summary["counts"] = counts;
    r.summary["undecided"] = undecided;
    r.summary["mechanism"] = classification_to_json(classify(m));
    r.tables.push_back({"classify.csv", table.str()});
}

} // namespace

nlohmann::json ExperimentReport::to_json() const
{
    nlohmann::json j;
    j["experiment"] = to_string(config.experiment);
    j["config"] = config.to_json();
    j["verdict"] = to_string(verdict);
    nlohmann::json g = nlohmann::json::array();
    double family = 0.0;
    for (const auto& gate : gates)
    {
        g.push_back(gate.to_json());
        if (gate.kind == "z")
            family += kZLevel;
        else if (gate.kind == "chi2" || gate.kind == "ks")
            family += kPThreshold;
    }
    j["gates"] = g;
    j["gate_budget"] = {{"gates", gates.size()},
                        {"z_gate_false_failure", kZLevel},
                        {"p_gate_false_failure", kPThreshold},
                        {"bonferroni_family_bound", family}};
    j["summary"] = summary;
    j["records"] = records;
    std::vector<std::string> files;
    for (const auto& t : tables)
        files.push_back(t.file);
    j["tables"] = files;
    return j;
}

ExperimentReport run_experiment(const ExperimentConfig& config)
{
    ExperimentReport r;
    r.config = config;
    switch (config.experiment)
    {
    case Experiment::Laplace:
        laplace(config, r);
        break;
    case Experiment::Compensator:
        compensator(config, r);
        break;
    case Experiment::PaintboxMarginal:
        paintbox_marginal(config, r);
        break;
    case Experiment::Eve:
        eve(config, r);
        break;
    case Experiment::Dust:
        dust(config, r);
        break;
    case Experiment::RateContinuity:
        rate_continuity(config, r);
        break;
    case Experiment::Decomposition:
        decomposition(config, r);
        break;
    case Experiment::Classify:
        classify_paths(config, r);
        break;
    }
    r.verdict = combine(r.gates);
    return r;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json", std::ios::binary);
        out << report.to_json().dump(2) << '\n';
        if (!out)
            throw Error("cannot write " + (dir / "report.json").string());
    }
    for (const auto& t : report.tables)
    {
        std::ofstream out(dir / t.file, std::ios::binary);
        out << t.contents;
        if (!out)
            throw Error("cannot write " + (dir / t.file).string());
    }
}

int exit_code(const ExperimentReport& report)
{
    return report.verdict == Verdict::Fail ? kExitGateFailure : kExitPass;
}

} // namespace psiflow::harness
