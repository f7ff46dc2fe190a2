#include "psiflow/partitions.hpp"

#include "psiflow/errors.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

namespace psiflow {

Partition::Partition(std::size_t n) : labels_(n), blocks_(n)
{
    std::iota(labels_.begin(), labels_.end(), Label{0});
}

Partition Partition::trivial(std::size_t n)
{
    Partition p;
    p.labels_.assign(n, 0);
    p.blocks_ = n == 0 ? 0 : 1;
    return p;
}

Partition Partition::from_labels(const std::vector<Label>& labels)
{
    constexpr Label unset = std::numeric_limits<Label>::max();
    Partition p;
    p.labels_.resize(labels.size());
    std::vector<Label> remap;
    for (std::size_t e = 0; e < labels.size(); ++e)
    {
        Label raw = labels[e];
        if (raw == unset)
            throw DomainError("label value reserved");
        if (raw >= remap.size())
            remap.resize(static_cast<std::size_t>(raw) + 1, unset);
        if (remap[raw] == unset)
            remap[raw] = static_cast<Label>(p.blocks_++);
        p.labels_[e] = remap[raw];
    }
    return p;
}

Partition Partition::from_blocks(std::size_t n, const std::vector<std::vector<std::size_t>>& blocks)
{
    constexpr Label unset = std::numeric_limits<Label>::max();
    std::vector<Label> labels(n, unset);
    for (std::size_t b = 0; b < blocks.size(); ++b)
    {
        if (blocks[b].empty())
            throw DomainError("empty block");
        for (std::size_t element : blocks[b])
        {
            if (element < 1 || element > n)
                throw DomainError("block element outside [n]");
            if (labels[element - 1] != unset)
                throw DomainError("element listed twice");
            labels[element - 1] = static_cast<Label>(b);
        }
    }
    for (Label l : labels)
        if (l == unset)
            throw DomainError("blocks do not cover [n]");
    return from_labels(labels);
}

Partition Partition::from_canonical(std::vector<Label> labels, std::size_t block_count)
{
    Partition p;
    p.labels_ = std::move(labels);
    p.blocks_ = block_count;
    assert(p.is_canonical());
    return p;
}

Partition Partition::single_block(std::size_t n, const std::vector<std::size_t>& block)
{
    if (block.size() < 2)
        throw DomainError("a merger block needs at least two elements");
    std::vector<Label> labels(n);
    std::iota(labels.begin(), labels.end(), Label{0});
    std::size_t first = *std::min_element(block.begin(), block.end());
    for (std::size_t e : block)
    {
        if (e < 1 || e > n)
            throw DomainError("block element outside [n]");
        labels[e - 1] = static_cast<Label>(first - 1);
    }
    return from_labels(labels);
}

std::vector<std::vector<std::size_t>> Partition::blocks() const
{
    std::vector<std::vector<std::size_t>> out(blocks_);
    for (std::size_t e = 0; e < labels_.size(); ++e)
        out[labels_[e]].push_back(e + 1);
    return out;
}

std::vector<std::size_t> Partition::block_sizes() const
{
    std::vector<std::size_t> sizes(blocks_, 0);
    for (Label l : labels_)
        ++sizes[l];
    return sizes;
}

Partition Partition::restrict(std::size_t m) const
{
    if (m > labels_.size())
        throw DomainError("cannot restrict to a larger set");
    Partition p;
    p.labels_.assign(labels_.begin(), labels_.begin() + static_cast<std::ptrdiff_t>(m));
    // a prefix of canonical labels is canonical; the block count is one past the max
    Label top = 0;
    for (Label l : p.labels_)
        top = std::max(top, l);
    p.blocks_ = m == 0 ? 0 : static_cast<std::size_t>(top) + 1;
    return p;
}

std::size_t Partition::singleton_count() const
{
    std::size_t count = 0;
    for (std::size_t s : block_sizes())
        count += s == 1;
    return count;
}

bool Partition::is_canonical() const
{
    Label next = 0;
    for (Label l : labels_)
    {
        if (l > next)
            return false;
        if (l == next)
            ++next;
    }
    return next == blocks_;
}

std::string Partition::to_string() const
{
    std::string out;
    for (const auto& block : blocks())
    {
        out += '{';
        for (std::size_t k = 0; k < block.size(); ++k)
        {
            if (k)
                out += ',';
            out += std::to_string(block[k]);
        }
        out += '}';
    }
    return out;
}

Partition coag(const Partition& pi, const Partition& pi_prime)
{
    if (pi_prime.n() < pi.block_count())
        throw DomainError("coag: second partition has " + std::to_string(pi_prime.n()) + " elements but the first has " +
                          std::to_string(pi.block_count()) + " blocks");
    std::vector<Partition::Label> labels(pi.n());
    Partition::Label top = 0;
    const auto& inner = pi.labels();
    const auto& outer = pi_prime.labels();
    for (std::size_t e = 0; e < labels.size(); ++e)
    {
        labels[e] = outer[inner[e]];
        top = std::max(top, labels[e]);
    }
    // least elements of the merged blocks keep their order, so this is canonical already
    return Partition::from_canonical(std::move(labels), pi.n() == 0 ? 0 : static_cast<std::size_t>(top) + 1);
}

double distance(const Partition& a, const Partition& b)
{
    const std::size_t m = std::min(a.n(), b.n());
    for (std::size_t e = 0; e < m; ++e)
        if (a.label(e) != b.label(e))
            return std::ldexp(1.0, -static_cast<int>(e));
    return 0.0;
}

Partition permute(const Partition& pi, const std::vector<std::size_t>& tau)
{
    if (tau.size() != pi.n())
        throw DomainError("permutation size mismatch");
    std::vector<Partition::Label> labels(pi.n());
    std::vector<bool> seen(pi.n(), false);
    for (std::size_t e = 0; e < pi.n(); ++e)
    {
        if (tau[e] >= pi.n() || seen[tau[e]])
            throw DomainError("not a permutation");
        seen[tau[e]] = true;
        labels[tau[e]] = pi.label(e);
    }
    return Partition::from_labels(labels);
}

MassPartition::MassPartition(std::vector<double> s) : s_(std::move(s))
{
    double sum = 0.0;
    for (std::size_t i = 0; i < s_.size(); ++i)
    {
        if (!(s_[i] >= 0.0) || !std::isfinite(s_[i]))
            throw DomainError("mass-partition entries must be nonnegative");
        if (i > 0 && s_[i] > s_[i - 1])
            throw DomainError("mass-partition must be nonincreasing");
        sum += s_[i];
    }
    if (sum > 1.0 + 1e-12)
        throw DomainError("mass-partition sums to more than 1");
    dust_ = std::max(0.0, 1.0 - sum);
}

Partition paintbox_intervals(const std::vector<double>& lengths, std::size_t n, Rng& rng)
{
    constexpr Partition::Label unset = std::numeric_limits<Partition::Label>::max();
    std::vector<double> cumulative(lengths.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < lengths.size(); ++k)
    {
        acc += lengths[k];
        cumulative[k] = acc;
    }
    std::vector<Partition::Label> interval_block(lengths.size(), unset);
    std::vector<Partition::Label> labels(n);
    Partition::Label blocks = 0;
    for (std::size_t e = 0; e < n; ++e)
    {
        double u = uniform01(rng);
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end())
        {
            labels[e] = blocks++;
            continue;
        }
        auto k = static_cast<std::size_t>(it - cumulative.begin());
        if (interval_block[k] == unset)
            interval_block[k] = blocks++;
        labels[e] = interval_block[k];
    }
    return Partition::from_canonical(std::move(labels), blocks);
}

Partition paintbox_mass(const MassPartition& s, std::size_t n, Rng& rng)
{
    return paintbox_intervals(s.masses(), n, rng);
}

Partition paintbox_subordinator(const std::vector<double>& jumps, double total, double drift_mass, std::size_t n,
                                Rng& rng)
{
    if (!(total >= 0.0) || !(drift_mass >= 0.0))
        throw ConsistencyError("subordinator total and drift mass must be nonnegative");
    double sum = drift_mass;
    for (double j : jumps)
    {
        if (!(j > 0.0))
            throw ConsistencyError("subordinator jumps must be positive");
        sum += j;
    }
    if (total == 0.0)
    {
        if (sum != 0.0)
            throw ConsistencyError("jumps present although the total is 0");
        return Partition::trivial(n);
    }
    if (std::abs(sum - total) > 1e-9 * total)
        throw ConsistencyError("jumps plus drift mass do not add up to the total");
    std::vector<double> lengths(jumps.size());
    for (std::size_t k = 0; k < jumps.size(); ++k)
        lengths[k] = jumps[k] / total;
    return paintbox_intervals(lengths, n, rng);
}

std::vector<double> block_frequencies(const Partition& pi)
{
    std::vector<double> out;
    out.reserve(pi.block_count());
    for (std::size_t s : pi.block_sizes())
        out.push_back(static_cast<double>(s) / static_cast<double>(pi.n()));
    return out;
}

Partition random_partition(std::size_t n, std::size_t max_blocks, Rng& rng)
{
    if (max_blocks == 0)
        throw DomainError("max_blocks must be positive");
    std::vector<Partition::Label> labels(n);
    for (auto& l : labels)
        l = static_cast<Partition::Label>(rng() % max_blocks);
    return Partition::from_labels(labels);
}

nlohmann::json partition_to_json(const Partition& pi)
{
    return {{"n", pi.n()}, {"blocks", pi.blocks()}};
}

Partition partition_from_json(const nlohmann::json& j)
{
    if (!j.is_object() || !j.contains("n") || !j.contains("blocks") || j.size() != 2)
        throw ConfigError("partition JSON needs exactly the fields 'n' and 'blocks'");
    try
    {
        auto n = j.at("n").get<std::size_t>();
        auto blocks = j.at("blocks").get<std::vector<std::vector<std::size_t>>>();
        auto pi = Partition::from_blocks(n, blocks);
        if (pi.blocks() != blocks)
            throw ConfigError("partition blocks must be listed in least-element order, elements ascending");
        return pi;
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ConfigError(std::string("malformed partition JSON: ") + e.what());
    }
    catch (const DomainError& e)
    {
        throw ConfigError(std::string("invalid partition: ") + e.what());
    }
}

} // namespace psiflow
