#include "psiflow/harness/config.hpp"

#include "psiflow/errors.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace psiflow::harness {

namespace {

constexpr std::array<std::pair<Experiment, const char*>, 8> kNames = {{
    {Experiment::Laplace, "laplace"},
    {Experiment::Compensator, "compensator"},
    {Experiment::PaintboxMarginal, "paintbox_marginal"},
    {Experiment::Eve, "eve"},
    {Experiment::Dust, "dust"},
    {Experiment::RateContinuity, "rate_continuity"},
    {Experiment::Decomposition, "decomposition"},
    {Experiment::Classify, "classify"},
}};

const std::set<std::string> kBehaviours = {"Extinction", "Explosion", "InfLifeNoExtinct", "InfLifePossibleExtinct"};

double positive(const nlohmann::json& j, const char* key)
{
    const auto& v = j.at(key);
    if (!v.is_number())
        throw ConfigError(std::string(key) + " must be a number");
    double x = v.get<double>();
    if (!(x > 0.0) || !std::isfinite(x))
        throw ConfigError(std::string(key) + " must be positive and finite");
    return x;
}

std::size_t count(const nlohmann::json& j, const char* key, std::size_t min)
{
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min))
        throw ConfigError(std::string(key) + " must be an integer >= " + std::to_string(min));
    return v.get<std::size_t>();
}

std::vector<double> positive_list(const nlohmann::json& j, const char* key)
{
    const auto& v = j.at(key);
    if (!v.is_array() || v.empty())
        throw ConfigError(std::string(key) + " must be a non-empty array");
    std::vector<double> out;
    for (const auto& x : v)
    {
        if (!x.is_number() || !(x.get<double>() > 0.0) || !std::isfinite(x.get<double>()))
            throw ConfigError(std::string(key) + " entries must be positive numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

double unit_interval(const nlohmann::json& j, const char* key)
{
    const auto& v = j.at(key);
    if (!v.is_number() || !(v.get<double>() > 0.0) || !(v.get<double>() < 1.0))
        throw ConfigError(std::string(key) + " must lie in (0, 1)");
    return v.get<double>();
}

} // namespace

const char* to_string(Experiment e)
{
    for (const auto& [k, name] : kNames)
        if (k == e)
            return name;
    return "?";
}

Experiment experiment_from_string(const std::string& s)
{
    for (const auto& [k, name] : kNames)
        if (s == name)
            return k;
    throw ConfigError("unknown experiment '" + s + "'");
}

ExperimentConfig config_from_json(const nlohmann::json& j, bool require_experiment)
{
    static const std::set<std::string> allowed = {
        "experiment", "mechanism",  "horizon",      "step",         "jump_truncation", "n",
        "replicates", "master_seed", "epsilon",     "times",        "lambdas",         "eve_threshold",
        "eve_plateau", "eve_weight", "eve_fraction", "start",       "fine_n",          "sequence_length",
        "expected_behaviour", "threads"};
    if (!j.is_object())
        throw ConfigError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown field '" + it.key() + "' in config");
    if (!j.contains("mechanism"))
        throw ConfigError("missing field 'mechanism' in config");
    if (require_experiment && !j.contains("experiment"))
        throw ConfigError("missing field 'experiment' in config");

    ExperimentConfig c;
    if (j.contains("experiment"))
    {
        if (!j.at("experiment").is_string())
            throw ConfigError("experiment must be a string");
        c.experiment = experiment_from_string(j.at("experiment").get<std::string>());
    }
    c.mechanism = mechanism_from_json(j.at("mechanism"));
    if (j.contains("horizon"))
        c.horizon = positive(j, "horizon");
    if (j.contains("step"))
        c.step = positive(j, "step");
    if (j.contains("jump_truncation"))
        c.jump_truncation = positive(j, "jump_truncation");
    if (j.contains("n"))
        c.n = count(j, "n", 2);
    if (j.contains("replicates"))
        c.replicates = count(j, "replicates", 1);
    if (j.contains("master_seed"))
    {
        const auto& v = j.at("master_seed");
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            throw ConfigError("master_seed must be a nonnegative 64-bit integer");
        c.master_seed = v.get<std::uint64_t>();
    }
    if (j.contains("epsilon"))
        c.epsilon = unit_interval(j, "epsilon");
    if (j.contains("times"))
        c.times = positive_list(j, "times");
    if (j.contains("lambdas"))
        c.lambdas = positive_list(j, "lambdas");
    if (j.contains("eve_threshold"))
        c.eve_threshold = positive(j, "eve_threshold");
    if (j.contains("eve_plateau"))
        c.eve_plateau = unit_interval(j, "eve_plateau");
    if (j.contains("eve_weight"))
        c.eve_weight = unit_interval(j, "eve_weight");
    if (j.contains("eve_fraction"))
        c.eve_fraction = unit_interval(j, "eve_fraction");
    if (j.contains("start"))
    {
        const auto& v = j.at("start");
        if (!v.is_number() || v.get<double>() < 0.0)
            throw ConfigError("start must be a nonnegative number");
        c.start = v.get<double>();
    }
    if (j.contains("fine_n"))
        c.fine_n = count(j, "fine_n", 2);
    if (j.contains("sequence_length"))
        c.sequence_length = count(j, "sequence_length", 2);
    if (j.contains("expected_behaviour"))
    {
        const auto& v = j.at("expected_behaviour");
        if (!v.is_string() || !kBehaviours.count(v.get<std::string>()))
            throw ConfigError("expected_behaviour must be one of Extinction, Explosion, InfLifeNoExtinct, "
                              "InfLifePossibleExtinct");
        c.expected_behaviour = v.get<std::string>();
    }
    if (j.contains("threads"))
        c.threads = count(j, "threads", 0);

    if (c.step >= c.horizon)
        throw ConfigError("step must be smaller than horizon");
    for (double t : c.times)
        if (t > c.horizon)
            throw ConfigError("laplace times must not exceed horizon");
    if (c.start >= 0.0 && c.start > c.horizon)
        throw ConfigError("start must not exceed horizon");
    if (c.fine_n != 0 && c.fine_n < c.n)
        throw ConfigError("fine_n must be at least n");
    if (c.experiment == Experiment::Compensator && c.n > 16)
        throw ConfigError("compensator needs n <= 16");
    if (c.experiment == Experiment::PaintboxMarginal)
    {
        const auto& m = c.mechanism;
        if (m.alpha() != 0.0 || !(m.sigma() > 0.0) || !std::holds_alternative<NoJumps>(m.nu().family()))
            throw ConfigError("paintbox_marginal uses the Feller oracle and needs alpha = 0, sigma > 0, no jumps");
        if (c.n > 8)
            throw ConfigError("paintbox_marginal compares laws on partitions of [n], n <= 8");
    }
    return c;
}

ExperimentConfig load_config(const std::string& path, bool require_experiment)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file '" + path + "'");
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(in);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j, require_experiment);
}

nlohmann::json ExperimentConfig::to_json() const
{
    nlohmann::json j = {{"experiment", to_string(experiment)},
                        {"mechanism", mechanism_to_json(mechanism)},
                        {"horizon", horizon},
                        {"step", step},
                        {"jump_truncation", jump_truncation},
                        {"n", n},
                        {"replicates", replicates},
                        {"master_seed", master_seed},
                        {"epsilon", epsilon},
                        {"eve_threshold", eve_threshold},
                        {"eve_plateau", eve_plateau},
                        {"eve_weight", eve_weight},
                        {"eve_fraction", eve_fraction},
                        {"sequence_length", sequence_length}};
    if (!times.empty())
        j["times"] = times;
    if (!lambdas.empty())
        j["lambdas"] = lambdas;
    if (fine_n)
        j["fine_n"] = fine_n;
    if (start >= 0.0)
        j["start"] = start;
    if (expected_behaviour)
        j["expected_behaviour"] = *expected_behaviour;
    // threads does not change results and is left out so reports stay identical
    return j;
}

} // namespace psiflow::harness
