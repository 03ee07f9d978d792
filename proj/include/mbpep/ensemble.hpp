#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mbpep/data.hpp"
#include "mbpep/interval.hpp"
#include "mbpep/nnet.hpp"
#include "mbpep/piloss.hpp"

namespace mbpep::ensemble {

// s_t = 1 keeps learner t.
using Mask = std::vector<std::uint8_t>;

std::size_t mask_size(const Mask& mask);
std::string mask_string(const Mask& mask);

struct TrainConfig {
    std::vector<int> hidden = {100};
    // Unset means: Sigmoid below two hidden layers, Relu from two on.
    std::optional<nnet::Activation> activation;
    nnet::BoundMode bounds = nnet::BoundMode::Softplus;
    double dropout_retention = 0.8;
    int epochs = 300;
    int batch_size = 32;
    nnet::OptimizerConfig optimizer;
    piloss::LossConfig loss;
    int pool_size = 5;

    // Every problem found, empty when valid.
    std::vector<std::string> errors() const;
    void validate() const;
    nnet::Activation resolved_activation() const;
    std::vector<int> layer_dims(int input_dim) const;
};

struct TrainFailure {
    std::size_t learner_index = 0; // position in the requested seed list
    int epoch = 0;
    std::string message;
};

struct EnsemblePool {
    std::vector<nnet::BaseLearner> learners;
    std::vector<std::uint64_t> bootstrap_seeds;
    Mask selection_mask;
    TrainConfig config;
    std::vector<TrainFailure> failures;

    std::size_t size() const { return learners.size(); }
    std::size_t selected_count() const { return mask_size(selection_mask); }
    std::vector<std::size_t> selected_indices() const;
};

// Counter-derived per-learner seeds; seed i does not depend on the count.
std::vector<std::uint64_t> derive_learner_seeds(std::uint64_t base_seed, std::size_t count);

// N draws with replacement from the N rows of `ds`.
data::Dataset bootstrap_resample(const data::Dataset& ds, std::uint64_t seed);

// Trains one learner on a bootstrap resample of `ds` by minibatch descent on
// loss_mbpep. Throws NonFiniteError (with the epoch in the message) if the
// loss or a gradient goes non-finite.
nnet::BaseLearner train_learner(const data::Dataset& ds, const TrainConfig& cfg, std::uint64_t seed,
                                int* failed_epoch = nullptr);

// Learners train independently, possibly on `threads` workers; results do not
// depend on the thread count. Failed learners are dropped and listed in
// `failures`; throws RuntimeFailure if none survive.
EnsemblePool train_pool(const data::Dataset& ds, const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                        unsigned threads = 1);

// Infer-mode bounds of every learner (selected or not) on a dataset.
struct MemberOutputs {
    std::vector<Bounds> members;
    Eigen::VectorXd targets;

    std::size_t pool_size() const { return members.size(); }
};

MemberOutputs member_outputs(const EnsemblePool& pool, const data::Dataset& ds);

// Mean |upper - lower| at x across the selected learners.
double margin(const EnsemblePool& pool, const Eigen::VectorXd& x);

// Mean over samples of ln(max(margin, 1e-12)).
double margin_score(const EnsemblePool& pool, const data::Dataset& ds);
double margin_score(const MemberOutputs& outputs, const Mask& mask);

// Per-sample median of the masked members' lower and upper bounds; an even
// count averages the two central values.
Bounds median_vote(const MemberOutputs& outputs, const Mask& mask);
Bounds median_vote(const EnsemblePool& pool, const Eigen::MatrixXd& inputs);

// Loss term of the subset objective.
//   Fused:         loss_mbpep of the median-voted interval
//   MeanOfMembers: mean of each selected learner's own loss_mbpep
enum class LossTerm { Fused, MeanOfMembers };

std::string to_string(LossTerm t);
LossTerm parse_loss_term(const std::string& s);

inline constexpr double kEmptyObjective = std::numeric_limits<double>::infinity();

// margin_score + loss on the masked subset; +inf for the empty mask.
double subset_objective(const MemberOutputs& outputs, const Mask& mask, const piloss::LossConfig& loss,
                        LossTerm term = LossTerm::Fused);
double subset_objective(const EnsemblePool& pool, const Mask& mask, const data::Dataset& ds,
                        const piloss::LossConfig& loss, LossTerm term = LossTerm::Fused);

enum class SelectionRule { MinObjective, Knee };

std::string to_string(SelectionRule r);
SelectionRule parse_selection_rule(const std::string& s);

struct PruneConfig {
    int max_iterations = 0;         // 0: ceil(2 e T^2)
    double flip_probability = 0.0;  // 0: 1/T
    std::uint64_t rng_seed = 0;
    SelectionRule selection_rule = SelectionRule::MinObjective;
    LossTerm loss_term = LossTerm::Fused;

    void validate() const;
    int resolved_iterations(std::size_t pool_size) const;
    double resolved_flip_probability(std::size_t pool_size) const;
};

struct ArchiveEntry {
    Mask mask;
    double f = 0.0;
    std::size_t size = 0;
};

// a dominates b: no worse on both (f, size) and strictly better on one.
bool dominates(const ArchiveEntry& a, const ArchiveEntry& b);

class ParetoArchive {
public:
    // Adds the entry unless it is empty, already present, or dominated; evicts
    // everything it dominates. Returns whether it was added.
    bool insert(ArchiveEntry entry);

    const std::vector<ArchiveEntry>& entries() const { return entries_; }
    bool mutually_non_dominated() const;

    int iterations_run = 0;

private:
    std::vector<ArchiveEntry> entries_;
};

// Pick from a front per the rule. MinObjective: min f, then min size, then
// lexicographically smallest mask.
const ArchiveEntry& choose(const ParetoArchive& archive, SelectionRule rule);

struct PruneResult {
    ParetoArchive archive;
    Mask chosen;
    double chosen_f = 0.0;
    double full_f = 0.0;
    std::size_t evaluations = 0; // distinct masks evaluated
};

using Objective = std::function<double(const Mask&)>;

// Bi-objective subset search over {0,1}^T minimizing (f, |s|), seeded with the full mask.
PruneResult pareto_search(std::size_t pool_size, const Objective& objective, const PruneConfig& cfg);

// Runs the search with subset_objective on `ds` and stores the chosen mask in the pool.
PruneResult pareto_prune(EnsemblePool& pool, const data::Dataset& ds, const PruneConfig& cfg,
                         const piloss::LossConfig& loss);

struct EvalReport {
    piloss::LossReport metrics;
    std::size_t ensemble_size = 0;
    std::vector<std::size_t> selected;
    double predict_seconds = 0.0; // fastest of the timed prediction passes
    Bounds bounds;
};

// Median-voted prediction on `ds` plus every interval metric. The prediction
// pass is timed `timing_repeats` times.
EvalReport evaluate(const EnsemblePool& pool, const data::Dataset& ds, const piloss::LossConfig& loss,
                    int timing_repeats = 1);

} // namespace mbpep::ensemble
