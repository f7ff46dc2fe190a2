#include "CLI11.hpp"
#include "psiflow/errors.hpp"
#include "psiflow/genealogy_flow.hpp"
#include "psiflow/harness/config.hpp"
#include "psiflow/harness/experiment.hpp"
#include "psiflow/harness/seed.hpp"
#include "psiflow/lookdown_eve.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

using namespace psiflow;
namespace fs = std::filesystem;

namespace {

struct Common
{
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> replicates;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* app, Common& c, bool experiment_flags)
{
    app->add_option("--config", c.config, "experiment config (JSON)")->required();
    app->add_option("--out", c.out, "output directory");
    app->add_option("--seed", c.seed, "master seed, overrides the config");
    if (experiment_flags)
    {
        app->add_option("--replicates", c.replicates, "replicate count, overrides the config")
            ->check(CLI::PositiveNumber);
        app->add_option("--threads", c.threads, "worker threads (0 = all cores)");
    }
}

harness::ExperimentConfig load(const Common& c, bool require_experiment)
{
    auto cfg = harness::load_config(c.config, require_experiment);
    if (c.seed)
        cfg.master_seed = *c.seed;
    if (c.replicates)
        cfg.replicates = *c.replicates;
    if (c.threads)
        cfg.threads = *c.threads;
    return cfg;
}

std::ofstream open_out(const fs::path& dir, const std::string& name)
{
    fs::create_directories(dir);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out)
        throw Error("cannot write " + (dir / name).string());
    return out;
}

CsbpOptions path_options(const harness::ExperimentConfig& cfg)
{
    CsbpOptions o;
    o.horizon = cfg.horizon;
    o.step = cfg.step;
    o.jump_truncation = cfg.jump_truncation;
    return o;
}

Rng path_rng(const harness::ExperimentConfig& cfg)
{
    return Rng(harness::substream(harness::seed_stream(cfg.master_seed, 0), harness::Stream::Path));
}

int simulate(const Common& c)
{
    auto cfg = load(c, false);
    auto rng = path_rng(cfg);
    auto p = simulate_csbp(cfg.mechanism, path_options(cfg), rng);
    auto traj = open_out(c.out, "trajectory.csv");
    write_trajectory_csv(p, traj);
    auto jumps = open_out(c.out, "jumps.csv");
    write_jumps_csv(p, jumps);
    nlohmann::json summary = {{"lifetime", to_string(p.marker.kind)},
                              {"end_time", p.marker.time},
                              {"nodes", p.times.size()},
                              {"jumps", p.jumps.size()},
                              {"final_value", harness::csv_number(p.values.empty() ? 0.0 : p.values.back())}};
    open_out(c.out, "path.json") << summary.dump(2) << '\n';
    std::cout << summary.dump() << '\n';
    return 0;
}

int flow(const Common& c)
{
    auto cfg = load(c, false);
    auto rng = path_rng(cfg);
    auto p = std::make_shared<const CsbpPath>(simulate_csbp(cfg.mechanism, path_options(cfg), rng));
    Rng flow_rng(harness::substream(harness::seed_stream(cfg.master_seed, 0), harness::Stream::Flow));
    auto f = build_flow(p, cfg.mechanism, cfg.n, flow_rng);
    auto traj = open_out(c.out, "trajectory.csv");
    write_trajectory_csv(*p, traj);
    auto events = open_out(c.out, "events.jsonl");
    write_event_log(f, events);
    if (cfg.n <= 16)
    {
        auto counting = open_out(c.out, "counting.csv");
        write_counting_csv(counting_processes(f, f.horizon()), counting);
    }
    auto pi = partition_between(f, 0.0, f.horizon());
    nlohmann::json summary = {{"n", f.n()},
                              {"horizon", f.horizon()},
                              {"lifetime", to_string(p->marker.kind)},
                              {"events", f.events().size()},
                              {"coincident_times", f.coincident_times()},
                              {"blocks_at_horizon", pi.block_count()}};
    if (cfg.n <= 64)
        summary["partition_at_horizon"] = pi.to_string();
    open_out(c.out, "flow.json") << summary.dump(2) << '\n';
    std::cout << summary.dump() << '\n';
    return 0;
}

int experiment(const Common& c)
{
    auto cfg = load(c, true);
    auto report = harness::run_experiment(cfg);
    harness::write_report(report, c.out);
    for (const auto& g : report.gates)
        std::cout << harness::to_string(g.verdict) << "  " << g.name << '\n';
    std::cout << to_string(cfg.experiment) << ": " << harness::to_string(report.verdict) << " ("
              << (fs::path(c.out) / "report.json").string() << ")\n";
    return harness::exit_code(report);
}

const char* to_string(IntegralBehaviour b)
{
    switch (b)
    {
    case IntegralBehaviour::Converges:
        return "converges";
    case IntegralBehaviour::Diverges:
        return "diverges";
    case IntegralBehaviour::Undetermined:
        return "undetermined";
    }
    return "?";
}

int classify_cmd(const Common& c)
{
    auto cfg = load(c, false);
    const auto& m = cfg.mechanism;
    nlohmann::json j;
    j["mechanism"] = mechanism_to_json(m);
    j["classification"] = classification_to_json(classify(m));
    j["dust"] = to_string(classify_dust(m));
    j["grey_near_zero"] = to_string(grey_integral_near_zero(m, 1e-2));
    if (m.gamma() < kInfinity)
        j["grey_at_infinity"] = to_string(grey_integral_at_infinity(m, std::max(1.0, 2.0 * m.gamma())));
    auto rng = path_rng(cfg);
    auto p = std::make_shared<const CsbpPath>(simulate_csbp(m, path_options(cfg), rng));
    if (p->marker.kind == Lifetime::Exploded || cfg.n > 4096)
    {
        j["path"] = classify_behaviour(*p, m).to_json();
    }
    else
    {
        Rng flow_rng(harness::substream(harness::seed_stream(cfg.master_seed, 0), harness::Stream::Flow));
        auto f = build_flow(p, m, cfg.n, flow_rng);
        j["path"] = classify_behaviour(*p, m, &f).to_json();
    }
    open_out(c.out, "classification.json") << j.dump(2) << '\n';
    std::cout << j.dump(2) << '\n';
    return 0;
}

int rates(const Common& c, const std::vector<double>& zs)
{
    auto cfg = load(c, false);
    auto out = open_out(c.out, "rates.csv");
    out << "z,k,lambda\n";
    std::cout << "z,k,lambda\n";
    for (double z : zs)
    {
        if (!(z > 0.0))
            throw ConfigError("--z values must be positive");
        for (std::size_t k = 2; k <= cfg.n; ++k)
        {
            std::string line = harness::csv_number(z) + "," + std::to_string(k) + "," +
                               harness::csv_number(rate_lambda(cfg.n, k, z, cfg.mechanism));
            out << line << '\n';
            std::cout << line << '\n';
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Flows of partitions driven by a CSBP: simulation and statistical checks"};
    app.require_subcommand(1);

    Common sim_opts, flow_opts, exp_opts, cls_opts, rate_opts;
    std::vector<double> zs = {1.0};
    auto* sim = app.add_subcommand("simulate-csbp", "simulate one CSBP path, write trajectory.csv and jumps.csv");
    add_common(sim, sim_opts, false);
    auto* fl = app.add_subcommand("build-flow", "simulate a path and its flow of partitions at level n");
    add_common(fl, flow_opts, false);
    auto* ex = app.add_subcommand("run-experiment", "run the configured experiment, write report.json and CSVs");
    add_common(ex, exp_opts, true);
    auto* cl = app.add_subcommand("classify", "classify the mechanism and one simulated path");
    add_common(cl, cls_opts, false);
    auto* ra = app.add_subcommand("rates", "lambda_{n,k}(z) for k = 2..n");
    add_common(ra, rate_opts, false);
    ra->add_option("--z", zs, "population sizes");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        int code = app.exit(e);
        return code == 0 ? 0 : harness::kExitConfigError;
    }

    try
    {
        if (*sim)
            return simulate(sim_opts);
        if (*fl)
            return flow(flow_opts);
        if (*ex)
            return experiment(exp_opts);
        if (*cl)
            return classify_cmd(cls_opts);
        if (*ra)
            return rates(rate_opts, zs);
    }
    catch (const ConfigError& e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return harness::kExitConfigError;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
