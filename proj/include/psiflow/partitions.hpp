#pragma once

#include "json.hpp"
#include "psiflow/random.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace psiflow {

/// Partition of [n]. labels()[e] is the 0-based block index of element e+1, blocks
/// numbered by increasing least element. Always canonical.
class Partition
{
public:
    using Label = std::uint32_t;

    Partition() = default;
    /// 0_[n]: all singletons.
    explicit Partition(std::size_t n);

    static Partition singletons(std::size_t n) { return Partition(n); }
    /// 1_[n]: one block.
    static Partition trivial(std::size_t n);
    /// Any labelling; blocks are renumbered by least element.
    static Partition from_labels(const std::vector<Label>& labels);
    /// Blocks as lists of 1-based elements covering [n] exactly once.
    static Partition from_blocks(std::size_t n, const std::vector<std::vector<std::size_t>>& blocks);
    /// Trusts that `labels` is already canonical (checked in debug builds only).
    static Partition from_canonical(std::vector<Label> labels, std::size_t block_count);
    /// pi_K: K (1-based, at least two elements) is the only non-singleton block.
    static Partition single_block(std::size_t n, const std::vector<std::size_t>& block);

    std::size_t n() const noexcept { return labels_.size(); }
    std::size_t block_count() const noexcept { return blocks_; }
    const std::vector<Label>& labels() const noexcept { return labels_; }
    Label label(std::size_t element) const { return labels_[element]; }

    /// 1-based elements, blocks in least-element order.
    std::vector<std::vector<std::size_t>> blocks() const;
    std::vector<std::size_t> block_sizes() const;
    Partition restrict(std::size_t m) const;

    bool same_block(std::size_t i, std::size_t j) const { return labels_[i] == labels_[j]; }
    std::size_t singleton_count() const;
    bool is_trivial() const noexcept { return blocks_ == 1; }
    bool is_singletons() const noexcept { return blocks_ == labels_.size(); }
    bool is_canonical() const;

    /// Compact text form, e.g. "{1,3}{2}{4}".
    std::string to_string() const;

    bool operator==(const Partition& other) const { return labels_ == other.labels_; }
    bool operator!=(const Partition& other) const { return !(*this == other); }

private:
    std::vector<Label> labels_;
    std::size_t blocks_ = 0;
};

/// Coag(pi, pi')(i) = union over j in pi'(i) of pi(j).
Partition coag(const Partition& pi, const Partition& pi_prime);

/// d(pi, pi') = 2^{-i}, i the largest j with equal restrictions to [j]; 0 if equal on the common prefix.
double distance(const Partition& a, const Partition& b);

/// tau acts on elements: i ~ j in the result iff tau^{-1}(i) ~ tau^{-1}(j). tau is 0-based.
Partition permute(const Partition& pi, const std::vector<std::size_t>& tau);

/// Nonincreasing, nonnegative, sum <= 1. The tail beyond the stored prefix is zero.
class MassPartition
{
public:
    MassPartition() = default;
    explicit MassPartition(std::vector<double> s);
    const std::vector<double>& masses() const noexcept { return s_; }
    double dust() const noexcept { return dust_; }

private:
    std::vector<double> s_;
    double dust_ = 1.0;
};

Partition paintbox_mass(const MassPartition& s, std::size_t n, Rng& rng);

/// Paint-box on consecutive intervals of the given (unsorted) lengths inside [0,1);
/// the uncovered remainder is dust.
Partition paintbox_intervals(const std::vector<double>& lengths, std::size_t n, Rng& rng);

/// Paint-box of a subordinator: intervals jumps/total, drift_mass/total of dust.
/// total = 0 returns 1_[n].
Partition paintbox_subordinator(const std::vector<double>& jumps, double total, double drift_mass, std::size_t n,
                                Rng& rng);

/// Block sizes divided by n, least-element order.
std::vector<double> block_frequencies(const Partition& pi);

/// Uniform random labels in [0, max_blocks), canonicalised.
Partition random_partition(std::size_t n, std::size_t max_blocks, Rng& rng);

nlohmann::json partition_to_json(const Partition& pi);
Partition partition_from_json(const nlohmann::json& j);

} // namespace psiflow
