#include "psiflow/genealogy_flow.hpp"

#include "psiflow/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <ostream>

namespace psiflow {

Partition PartitionFlow::partition(const ReproductionEvent& e) const
{
    auto b = block(e);
    return Partition::single_block(n_, std::vector<std::size_t>(b.begin(), b.end()));
}

std::size_t PartitionFlow::first_after(double t) const
{
    auto it = std::upper_bound(events_.begin(), events_.end(), t,
                               [](double v, const ReproductionEvent& e) { return v < e.time; });
    return static_cast<std::size_t>(it - events_.begin());
}

namespace {

// Levels joining a jump of relative size x: independent Bernoulli(x) per level,
// drawn by geometric gaps so small x costs O(x n) rather than O(n).
void bernoulli_levels(std::size_t n, double x, Rng& rng, std::vector<std::uint32_t>& out)
{
    out.clear();
    if (x <= 0.0)
        return;
    if (x >= 1.0)
    {
        for (std::size_t e = 1; e <= n; ++e)
            out.push_back(static_cast<std::uint32_t>(e));
        return;
    }
    if (x > 0.25)
    {
        for (std::size_t e = 1; e <= n; ++e)
            if (uniform01(rng) < x)
                out.push_back(static_cast<std::uint32_t>(e));
        return;
    }
    const double log_miss = std::log1p(-x);
    double pos = 0.0;
    for (;;)
    {
        double gap = std::floor(std::log(uniform_open0(rng)) / log_miss);
        pos += gap + 1.0;
        if (pos > static_cast<double>(n))
            return;
        out.push_back(static_cast<std::uint32_t>(pos));
    }
}

struct Draft
{
    ReproductionEvent event;
    std::uint32_t a = 0, b = 0; // Kingman pair, kept inline until the pool is built
};

} // namespace

PartitionFlow build_flow(std::shared_ptr<const CsbpPath> path, const BranchingMechanism& m, std::size_t n, Rng& rng,
                         double until)
{
    FlowOptions o;
    o.until = until;
    return build_flow(std::move(path), m, n, rng, o);
}

PartitionFlow build_flow(std::shared_ptr<const CsbpPath> path, const BranchingMechanism& m, std::size_t n, Rng& rng,
                         const FlowOptions& options)
{
    const double from = options.from;
    const std::size_t max_events = options.max_events;
    if (!path)
        throw DomainError("build_flow needs a path");
    if (n < 2 || n > std::numeric_limits<std::uint32_t>::max() / 2)
        throw DomainError("build_flow needs n >= 2");
    PartitionFlow f;
    f.n_ = n;
    f.path_ = path;
    f.mechanism_ = m;
    const CsbpPath& p = *path;
    const double end = std::min({p.horizon, p.end_time(), options.until});
    f.horizon_ = end;

    std::vector<ReproductionEvent> jump_events;
    std::vector<std::uint32_t> levels;
    for (std::size_t j = 0; j < p.jumps.size(); ++j)
    {
        const auto& jump = p.jumps[j];
        if (jump.time > end)
            break;
        if (jump.time < from)
            continue;
        if (!(jump.z > 0.0) || !std::isfinite(jump.z))
            continue;
        bernoulli_levels(n, jump.fraction(), rng, levels);
        if (levels.size() < 2)
            continue;
        ReproductionEvent e;
        e.time = jump.time;
        e.kind = EventKind::Jump;
        e.x = jump.fraction();
        e.offset = static_cast<std::uint32_t>(f.pool_.size());
        e.size = static_cast<std::uint32_t>(levels.size());
        e.source = static_cast<std::uint32_t>(j);
        f.pool_.insert(f.pool_.end(), levels.begin(), levels.end());
        jump_events.push_back(e);
        if (f.pool_.size() > std::numeric_limits<std::uint32_t>::max() / 2)
            throw NumericalError("flow block storage exhausted");
    }

    // Kingman pairs: intensity binom(n,2) sigma^2 / Z_i is constant on each node interval,
    // so event times come from inverting the piecewise-linear cumulative intensity.
    std::vector<Draft> kingman;
    const double s2 = m.sigma() * m.sigma();
    if (s2 > 0.0 && n >= 2)
    {
        const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
        double budget = -std::log(uniform_open0(rng));
        for (std::size_t i = 0; i + 1 < p.times.size(); ++i)
        {
            double a = std::max(p.times[i], from);
            if (a >= end)
                break;
            double b = std::min(p.times[i + 1], end);
            double z = p.values[i];
            if (!(b > a) || !(z > 0.0) || !std::isfinite(z))
                continue;
            double rate = pairs * s2 / z;
            double t = a;
            for (;;)
            {
                double room = rate * (b - t);
                if (budget > room)
                {
                    budget -= room;
                    break;
                }
                t += budget / rate;
                budget = -std::log(uniform_open0(rng));
                if (t >= b)
                    break;
                Draft d;
                d.event.time = t;
                d.event.kind = EventKind::Kingman;
                d.event.size = 2;
                d.event.source = static_cast<std::uint32_t>(kingman.size());
                auto u = static_cast<std::uint32_t>(rng() % n);
                auto v = static_cast<std::uint32_t>(rng() % (n - 1));
                if (v >= u)
                    ++v;
                d.a = std::min(u, v) + 1;
                d.b = std::max(u, v) + 1;
                kingman.push_back(d);
                if (kingman.size() + jump_events.size() > max_events)
                    throw NumericalError("flow exceeds " + std::to_string(max_events) +
                                         " events; truncate it with 'until'");
            }
        }
    }

    f.events_.reserve(jump_events.size() + kingman.size());
    for (auto& d : kingman)
    {
        d.event.offset = static_cast<std::uint32_t>(f.pool_.size());
        f.pool_.push_back(d.a);
        f.pool_.push_back(d.b);
    }
    std::size_t ji = 0, ki = 0;
    while (ji < jump_events.size() || ki < kingman.size())
    {
        bool take_jump = ki == kingman.size() ||
                         (ji < jump_events.size() && jump_events[ji].time <= kingman[ki].event.time);
        const auto& e = take_jump ? jump_events[ji++] : kingman[ki++].event;
        if (!f.events_.empty() && f.events_.back().time == e.time)
            ++f.coincident_;
        f.events_.push_back(e);
    }
    return f;
}

PartitionFlow build_flow(const CsbpPath& path, const BranchingMechanism& m, std::size_t n, std::uint64_t seed,
                         double until)
{
    Rng rng(seed);
    return build_flow(std::make_shared<const CsbpPath>(path), m, n, rng, until);
}

PartitionFlow make_flow(std::size_t n, double horizon, std::vector<std::pair<double, std::vector<std::uint32_t>>> events)
{
    PartitionFlow f;
    f.n_ = n;
    f.horizon_ = horizon;
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t k = 0; k < events.size(); ++k)
    {
        auto block = events[k].second;
        std::sort(block.begin(), block.end());
        if (block.size() < 2 || std::adjacent_find(block.begin(), block.end()) != block.end() || block.front() < 1 ||
            block.back() > n)
            throw DomainError("event blocks need at least two distinct levels in [n]");
        ReproductionEvent e;
        e.time = events[k].first;
        e.kind = EventKind::Jump;
        e.offset = static_cast<std::uint32_t>(f.pool_.size());
        e.size = static_cast<std::uint32_t>(block.size());
        e.source = static_cast<std::uint32_t>(k);
        f.pool_.insert(f.pool_.end(), block.begin(), block.end());
        if (!f.events_.empty() && f.events_.back().time == e.time)
            ++f.coincident_;
        f.events_.push_back(e);
    }
    f.path_ = std::make_shared<const CsbpPath>();
    return f;
}

FlowComposer::FlowComposer(std::size_t n) : labels_(n)
{
    for (std::size_t e = 0; e < n; ++e)
        labels_[e] = static_cast<Partition::Label>(e);
}

void FlowComposer::apply(std::span<const std::uint32_t> block)
{
    // acc_new[e] = acc[rho(e)] with rho(e) <= e, so a right-to-left sweep works in place
    const std::size_t n = labels_.size();
    if (block.size() == 2)
    {
        std::size_t i = block[0] - 1, j = block[1] - 1;
        if (j + 1 < n)
            std::memmove(&labels_[j + 1], &labels_[j], (n - j - 1) * sizeof(Partition::Label));
        labels_[j] = labels_[i];
        return;
    }
    const std::size_t first = block[0] - 1;
    // rho(e) = e - #{members other than `first` below e} outside the block
    std::size_t idx = block.size() - 1;
    for (std::size_t e = n; e-- > first + 1;)
    {
        while (idx > 0 && block[idx] - 1 > e)
            --idx;
        if (idx > 0 && block[idx] - 1 == e)
            labels_[e] = labels_[first];
        else
            labels_[e] = labels_[e - idx];
    }
}

bool FlowComposer::trivial() const
{
    for (auto l : labels_)
        if (l != 0)
            return false;
    return true;
}

Partition FlowComposer::partition() const
{
    Partition::Label top = 0;
    for (auto l : labels_)
        top = std::max(top, l);
    return Partition::from_canonical(labels_, labels_.empty() ? 0 : static_cast<std::size_t>(top) + 1);
}

Partition partition_between_forward(const PartitionFlow& f, double s, double t)
{
    if (t < s)
        throw DomainError("partition_between needs s <= t");
    FlowComposer acc(f.n());
    const auto& ev = f.events();
    std::size_t applied = 0;
    for (std::size_t k = f.first_after(s); k < ev.size() && ev[k].time <= t; ++k)
    {
        acc.apply(f.block(ev[k]));
        // once everything has merged nothing can change
        if ((++applied & 63) == 0 && acc.trivial())
            break;
    }
    return acc.partition();
}

namespace {

std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t x)
{
    while (parent[x] != x)
    {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

} // namespace

Partition partition_between(const PartitionFlow& f, double s, double t)
{
    if (t < s)
        throw DomainError("partition_between needs s <= t");
    const std::size_t n = f.n();
    const auto& ev = f.events();
    const std::size_t lo = f.first_after(s);
    const std::size_t hi = f.first_after(t);
    if (lo >= hi)
        return Partition::singletons(n);

    // Active lineages sorted by their current level (0-based); owner = union-find root of
    // the levels at time t that descend from it.
    struct Lineage
    {
        std::uint32_t level;
        std::uint32_t owner;
    };
    std::vector<Lineage> active(n);
    std::vector<std::uint32_t> parent(n);
    for (std::uint32_t e = 0; e < n; ++e)
    {
        active[e] = {e, e};
        parent[e] = e;
    }
    auto merge_sorted = [&]() {
        std::size_t out = 0;
        for (std::size_t k = 0; k < active.size(); ++k)
        {
            if (out > 0 && active[out - 1].level == active[k].level)
            {
                parent[active[k].owner] = active[out - 1].owner;
                continue;
            }
            active[out++] = active[k];
        }
        active.resize(out);
    };

    for (std::size_t k = hi; k-- > lo && active.size() > 1;)
    {
        auto block = f.block(ev[k]);
        const std::uint32_t first = block[0] - 1;
        if (block.size() == 2)
        {
            // level j at the event came from level i; levels above j came from one lower
            const std::uint32_t j = block[1] - 1;
            auto it = std::lower_bound(active.begin(), active.end(), j,
                                       [](const Lineage& l, std::uint32_t v) { return l.level < v; });
            if (it == active.end())
                continue;
            bool hit = it->level == j;
            for (auto jt = hit ? it + 1 : it; jt != active.end(); ++jt)
                --jt->level;
            if (hit)
            {
                Lineage moved{first, it->owner};
                auto at = std::lower_bound(active.begin(), it, first,
                                           [](const Lineage& l, std::uint32_t v) { return l.level < v; });
                if (at != it && at->level == first)
                {
                    parent[moved.owner] = at->owner;
                    active.erase(it);
                }
                else
                {
                    std::rotate(at, it, it + 1);
                    *at = moved;
                }
            }
            continue;
        }
        for (auto& l : active)
        {
            if (l.level < first)
                continue;
            auto below = std::lower_bound(block.begin() + 1, block.end(), l.level + 1);
            if (below != block.end() && *below == l.level + 1)
                l.level = first;
            else
                l.level -= static_cast<std::uint32_t>(below - (block.begin() + 1));
        }
        std::stable_sort(active.begin(), active.end(), [](const Lineage& a, const Lineage& b) { return a.level < b.level; });
        merge_sorted();
    }

    std::vector<std::uint32_t> ancestor(n);
    for (const auto& l : active)
        ancestor[l.owner] = l.level;
    std::vector<Partition::Label> labels(n);
    for (std::uint32_t e = 0; e < n; ++e)
        labels[e] = ancestor[find_root(parent, e)];
    return Partition::from_labels(labels);
}

CountingProcesses counting_processes(const PartitionFlow& f, double horizon)
{
    if (f.n() > 16)
        throw DomainError("counting processes are enumerated only for n <= 16");
    CountingProcesses out;
    const std::size_t n = f.n();
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask)
    {
        if (std::popcount(mask) < 2)
            continue;
        std::vector<std::uint32_t> subset;
        for (std::size_t e = 0; e < n; ++e)
            if (mask & (1u << e))
                subset.push_back(static_cast<std::uint32_t>(e + 1));
        out.emplace(std::move(subset), std::vector<double>{});
    }
    for (const auto& e : f.events())
    {
        if (e.time > horizon)
            break;
        auto b = f.block(e);
        out[std::vector<std::uint32_t>(b.begin(), b.end())].push_back(e.time);
    }
    return out;
}

std::size_t count_at(const CountingProcesses& c, const std::vector<std::uint32_t>& subset, double t)
{
    auto it = c.find(subset);
    if (it == c.end())
        throw DomainError("unknown subset");
    return static_cast<std::size_t>(std::upper_bound(it->second.begin(), it->second.end(), t) - it->second.begin());
}

double rate_lambda(std::size_t n, std::size_t k, double z, const BranchingMechanism& m)
{
    if (k < 2 || k > n)
        throw DomainError("rate_lambda needs 2 <= k <= n");
    if (!(z > 0.0))
        throw DomainError("rate_lambda needs z > 0");
    double rate = k == 2 ? m.sigma() * m.sigma() / z : 0.0;
    if (!m.nu().empty())
        rate += z * m.nu().pushforward_moment(static_cast<int>(n), static_cast<int>(k), z);
    return rate;
}

double integrated_rate(const CsbpPath& p, std::size_t n, std::size_t k, double t, const BranchingMechanism& m)
{
    return integrate_path(p, t, [&](double z) { return z > 0.0 && std::isfinite(z) ? rate_lambda(n, k, z, m) : 0.0; });
}

nlohmann::json RateContinuityReport::to_json() const
{
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows)
        rows_json.push_back({{"index", r.index}, {"z", r.z}, {"value", r.value}, {"deviation", r.deviation}});
    return {{"rows", rows_json},
            {"limit", limit},
            {"max_tail_deviation", max_tail_deviation},
            {"non_monotone", non_monotone}};
}

RateContinuityReport rate_continuity_probe(std::size_t n, std::size_t k, std::size_t length,
                                           const std::function<std::pair<double, BranchingMechanism>(std::size_t)>& seq,
                                           double z_limit, const BranchingMechanism& limit)
{
    RateContinuityReport r;
    r.limit = rate_lambda(n, k, z_limit, limit);
    for (std::size_t i = 0; i < length; ++i)
    {
        auto [z, m] = seq(i);
        RateProbeRow row;
        row.index = i;
        row.z = z;
        row.value = rate_lambda(n, k, z, m);
        row.deviation = std::abs(row.value - r.limit);
        r.rows.push_back(row);
    }
    for (std::size_t i = length / 2; i < length; ++i)
    {
        r.max_tail_deviation = std::max(r.max_tail_deviation, r.rows[i].deviation);
        if (i > length / 2 && r.rows[i].deviation > r.rows[i - 1].deviation * (1.0 + 1e-9) + 1e-15)
            r.non_monotone = true;
    }
    return r;
}

void write_event_log(const PartitionFlow& f, std::ostream& out)
{
    for (const auto& e : f.events())
    {
        auto b = f.block(e);
        nlohmann::json j;
        j["t"] = e.time;
        j["kind"] = e.kind == EventKind::Kingman ? "kingman" : "jump";
        j["block"] = std::vector<std::uint32_t>(b.begin(), b.end());
        if (e.kind == EventKind::Jump)
            j["x"] = e.x;
        else
            j["x"] = nullptr;
        out << j.dump() << '\n';
    }
}

void write_counting_csv(const CountingProcesses& c, std::ostream& out)
{
    out << "t,subset,count\n" << std::setprecision(17);
    for (const auto& [subset, times] : c)
    {
        std::string name;
        for (std::size_t i = 0; i < subset.size(); ++i)
            name += (i ? " " : "") + std::to_string(subset[i]);
        for (std::size_t i = 0; i < times.size(); ++i)
            out << times[i] << ',' << name << ',' << i + 1 << '\n';
    }
}

} // namespace psiflow
