#pragma once

#include "json.hpp"
#include "psiflow/levy_csbp.hpp"
#include "psiflow/mechanism.hpp"
#include "psiflow/partitions.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <vector>

namespace psiflow {

enum class EventKind : std::uint8_t
{
    Kingman,
    Jump
};

/// One point of the reproduction point process at level n. The merging block K is
/// stored in the owning flow's pool; its partition is pi_K.
struct ReproductionEvent
{
    double time = 0.0;
    double x = 0.0; // dZ/Z for jump events, 0 for Kingman events
    std::uint32_t offset = 0;
    std::uint32_t size = 0;
    std::uint32_t source = 0; // path jump index or Kingman draw index
    EventKind kind = EventKind::Kingman;
};

class PartitionFlow
{
public:
    std::size_t n() const noexcept { return n_; }
    double horizon() const noexcept { return horizon_; }
    const std::vector<ReproductionEvent>& events() const noexcept { return events_; }
    const CsbpPath& path() const { return *path_; }
    std::shared_ptr<const CsbpPath> path_ptr() const { return path_; }
    const BranchingMechanism& mechanism() const noexcept { return mechanism_; }
    std::size_t coincident_times() const noexcept { return coincident_; }

    /// Levels (1-based, ascending) merged by an event.
    std::span<const std::uint32_t> block(const ReproductionEvent& e) const
    {
        return {pool_.data() + e.offset, e.size};
    }
    Partition partition(const ReproductionEvent& e) const;

    /// Index of the first event with time > t.
    std::size_t first_after(double t) const;

private:
    friend PartitionFlow build_flow(std::shared_ptr<const CsbpPath>, const BranchingMechanism&, std::size_t, Rng&,
                                    const struct FlowOptions&);
    friend PartitionFlow make_flow(std::size_t, double, std::vector<std::pair<double, std::vector<std::uint32_t>>>);

    std::size_t n_ = 0;
    double horizon_ = 0.0;
    std::vector<ReproductionEvent> events_;
    std::vector<std::uint32_t> pool_;
    std::shared_ptr<const CsbpPath> path_;
    BranchingMechanism mechanism_{0.0, 0.0};
    std::size_t coincident_ = 0;
};

struct FlowOptions
{
    double from = 0.0; // events before this are not generated
    double until = kInfinity;
    std::size_t max_events = 50'000'000;
};

/// Events from the path's jumps (each level joins with probability dZ/Z, kept if at
/// least two join) and Kingman pairs at rate binom(n,2) sigma^2/Z on [from, min(horizon, T, until)).
PartitionFlow build_flow(std::shared_ptr<const CsbpPath> path, const BranchingMechanism& m, std::size_t n, Rng& rng,
                         const FlowOptions& options);
PartitionFlow build_flow(std::shared_ptr<const CsbpPath> path, const BranchingMechanism& m, std::size_t n, Rng& rng,
                         double until = kInfinity);
PartitionFlow build_flow(const CsbpPath& path, const BranchingMechanism& m, std::size_t n, std::uint64_t seed,
                         double until = kInfinity);

/// Hand-made flow: (time, block) pairs, blocks 1-based with at least two levels. Jump kind, x = 0.
PartitionFlow make_flow(std::size_t n, double horizon, std::vector<std::pair<double, std::vector<std::uint32_t>>> events);

/// Running composition acc <- Coag(rho, acc), starting from 0_[n].
class FlowComposer
{
public:
    explicit FlowComposer(std::size_t n);
    void apply(std::span<const std::uint32_t> block);
    bool trivial() const;
    Partition partition() const;
    const std::vector<Partition::Label>& labels() const noexcept { return labels_; }

private:
    std::vector<Partition::Label> labels_;
};

/// Pi_{s,t}: composition of the events with time in (s, t]. Lineages of the n levels at t
/// are traced back through the events, so the cost per event is the number of distinct
/// ancestors still being followed.
Partition partition_between(const PartitionFlow& f, double s, double t);

/// Same partition by forward composition; O(n) per event.
Partition partition_between_forward(const PartitionFlow& f, double s, double t);

/// L_t(n, K) for every K with #K >= 2, as sorted event times. Requires n <= 16.
using CountingProcesses = std::map<std::vector<std::uint32_t>, std::vector<double>>;
CountingProcesses counting_processes(const PartitionFlow& f, double horizon);
std::size_t count_at(const CountingProcesses& c, const std::vector<std::uint32_t>& subset, double t);

/// lambda_{n,k}(z) = (sigma^2/z) 1{k=2} + z int (h/(h+z))^k (z/(h+z))^{n-k} nu(dh)
double rate_lambda(std::size_t n, std::size_t k, double z, const BranchingMechanism& m);

/// Exact integral of lambda_{n,k}(Z_s) over [0, t] along the piecewise-constant path.
double integrated_rate(const CsbpPath& p, std::size_t n, std::size_t k, double t, const BranchingMechanism& m);

struct RateProbeRow
{
    std::size_t index = 0;
    double z = 0.0;
    double value = 0.0;
    double deviation = 0.0;
};

struct RateContinuityReport
{
    std::vector<RateProbeRow> rows;
    double limit = 0.0;
    double max_tail_deviation = 0.0; // over the second half of the sequence
    bool non_monotone = false;       // |deviation| increased somewhere along the tail
    nlohmann::json to_json() const;
};

RateContinuityReport rate_continuity_probe(std::size_t n, std::size_t k, std::size_t length,
                                           const std::function<std::pair<double, BranchingMechanism>(std::size_t)>& seq,
                                           double z_limit, const BranchingMechanism& limit);

void write_event_log(const PartitionFlow& f, std::ostream& out);
void write_counting_csv(const CountingProcesses& c, std::ostream& out);

} // namespace psiflow
