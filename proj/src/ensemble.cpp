#include "mbpep/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <thread>

#include "mbpep/error.hpp"
#include "mbpep/random.hpp"

namespace mbpep::ensemble {

namespace {

constexpr double kMarginFloor = 1e-12;

double median_of(std::vector<double>& values)
{
    const std::size_t n = values.size();
    const std::size_t mid = n / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

void check_mask(const Mask& mask, std::size_t pool_size)
{
    if (mask.size() != pool_size)
        throw DataError("mask has " + std::to_string(mask.size()) + " entries, pool has " + std::to_string(pool_size));
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows, std::size_t begin,
                            std::size_t end)
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), m.cols());
    for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

} // namespace

std::size_t mask_size(const Mask& mask)
{
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; }));
}

std::string mask_string(const Mask& mask)
{
    std::string s;
    s.reserve(mask.size());
    for (auto b : mask) s.push_back(b ? '1' : '0');
    return s;
}

std::vector<std::string> TrainConfig::errors() const
{
    std::vector<std::string> out;
    for (int h : hidden)
        if (h <= 0) {
            out.emplace_back("model.hidden sizes must be positive");
            break;
        }
    if (!(dropout_retention > 0.0 && dropout_retention <= 1.0))
        out.emplace_back("model.dropout_retention must lie in (0,1]");
    if (epochs < 0) out.emplace_back("train.epochs must be non-negative");
    if (batch_size <= 0) out.emplace_back("train.batch_size must be positive");
    if (pool_size <= 0) out.emplace_back("train.pool_size must be positive");
    try {
        optimizer.validate();
    } catch (const ConfigError& e) {
        out.emplace_back(e.what());
    }
    try {
        loss.validate();
    } catch (const ConfigError& e) {
        out.emplace_back(e.what());
    }
    return out;
}

void TrainConfig::validate() const
{
    const auto problems = errors();
    if (problems.empty()) return;
    std::string msg = problems.front();
    for (std::size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
    throw ConfigError(msg);
}

nnet::Activation TrainConfig::resolved_activation() const
{
    return activation.value_or(nnet::default_activation(hidden.size()));
}

std::vector<int> TrainConfig::layer_dims(int input_dim) const
{
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(2);
    return dims;
}

std::vector<std::size_t> EnsemblePool::selected_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < selection_mask.size(); ++i)
        if (selection_mask[i]) out.push_back(i);
    return out;
}

std::vector<std::uint64_t> derive_learner_seeds(std::uint64_t base_seed, std::size_t count)
{
    std::vector<std::uint64_t> seeds(count);
    for (std::size_t i = 0; i < count; ++i) seeds[i] = derive_seed(base_seed, 0x1000 + i);
    return seeds;
}

data::Dataset bootstrap_resample(const data::Dataset& ds, std::uint64_t seed)
{
    if (ds.size() < 1) throw DataError("cannot bootstrap an empty dataset");
    const auto n = static_cast<std::size_t>(ds.size());
    Rng rng(seed);
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
    return data::select_rows(ds, rows);
}

nnet::BaseLearner train_learner(const data::Dataset& ds, const TrainConfig& cfg, std::uint64_t seed,
                                int* failed_epoch)
{
    cfg.validate();
    data::validate(ds);
    const data::Dataset sample = bootstrap_resample(ds, derive_seed(seed, 0));
    nnet::BaseLearner learner = nnet::init_learner(cfg.layer_dims(static_cast<int>(ds.dim())),
                                                   cfg.resolved_activation(), cfg.dropout_retention,
                                                   derive_seed(seed, 1), cfg.bounds);
    Rng rng(derive_seed(seed, 2));
    nnet::OptimizerState opt(cfg.optimizer);

    const auto n = static_cast<std::size_t>(sample.size());
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
        for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t end = std::min(n, begin + batch);
            const Eigen::MatrixXd x = gather_rows(sample.features, order, begin, end);
            Eigen::VectorXd y(static_cast<Eigen::Index>(end - begin));
            for (std::size_t i = begin; i < end; ++i) y[static_cast<Eigen::Index>(i - begin)] = sample.targets[static_cast<Eigen::Index>(order[i])];

            const auto fwd = nnet::forward(learner, x, nnet::Mode::Train, &rng);
            if (!fwd.bounds.lower.allFinite() || !fwd.bounds.upper.allFinite()) {
                if (failed_epoch) *failed_epoch = epoch;
                throw NonFiniteError("non-finite bounds in epoch " + std::to_string(epoch));
            }
            const IntervalBatch b = make_batch(fwd.bounds, y);
            const double loss = piloss::loss_mbpep(b, cfg.loss);
            if (!std::isfinite(loss)) {
                if (failed_epoch) *failed_epoch = epoch;
                throw NonFiniteError("non-finite loss in epoch " + std::to_string(epoch));
            }
            const auto g = piloss::loss_mbpep_grad(b, cfg.loss);
            const auto grads = nnet::backward(learner, fwd.trace, g.lower, g.upper);
            if (!nnet::apply_update(learner, grads, opt)) {
                if (failed_epoch) *failed_epoch = epoch;
                throw NonFiniteError("non-finite gradient in epoch " + std::to_string(epoch));
            }
        }
    }
    return learner;
}

EnsemblePool train_pool(const data::Dataset& ds, const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                        unsigned threads)
{
    cfg.validate();
    data::validate(ds);
    if (seeds.size() != static_cast<std::size_t>(cfg.pool_size))
        throw ConfigError("expected " + std::to_string(cfg.pool_size) + " learner seeds, got " +
                          std::to_string(seeds.size()));

    const std::size_t count = seeds.size();
    std::vector<std::optional<nnet::BaseLearner>> trained(count);
    std::vector<std::optional<TrainFailure>> failed(count);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            int epoch = -1;
            try {
                trained[i] = train_learner(ds, cfg, seeds[i], &epoch);
            } catch (const NonFiniteError& e) {
                failed[i] = TrainFailure{i, epoch, e.what()};
            }
        }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    EnsemblePool pool;
    pool.config = cfg;
    for (std::size_t i = 0; i < count; ++i) {
        if (trained[i]) {
            pool.learners.push_back(std::move(*trained[i]));
            pool.bootstrap_seeds.push_back(seeds[i]);
        } else {
            pool.failures.push_back(*failed[i]);
        }
    }
    if (pool.learners.empty()) {
        std::string msg = "every learner failed to train";
        for (const auto& f : pool.failures)
            msg += "; learner " + std::to_string(f.learner_index) + ": " + f.message;
        throw RuntimeFailure(msg);
    }
    pool.selection_mask.assign(pool.learners.size(), 1);
    return pool;
}

MemberOutputs member_outputs(const EnsemblePool& pool, const data::Dataset& ds)
{
    data::validate(ds);
    MemberOutputs out;
    out.targets = ds.targets;
    out.members.reserve(pool.size());
    for (const auto& learner : pool.learners) out.members.push_back(nnet::predict(learner, ds.features));
    return out;
}

double margin(const EnsemblePool& pool, const Eigen::VectorXd& x)
{
    check_mask(pool.selection_mask, pool.size());
    const auto selected = pool.selected_indices();
    if (selected.empty()) throw RuntimeFailure("margin: no selected learners");
    const Eigen::MatrixXd row = x.transpose();
    double sum = 0.0;
    for (auto t : selected) {
        const Bounds b = nnet::predict(pool.learners[t], row);
        sum += std::abs(b.upper[0] - b.lower[0]);
    }
    return sum / static_cast<double>(selected.size());
}

double margin_score(const MemberOutputs& outputs, const Mask& mask)
{
    check_mask(mask, outputs.pool_size());
    const std::size_t selected = mask_size(mask);
    if (selected == 0) throw RuntimeFailure("margin score: no selected learners");
    const Eigen::Index n = outputs.targets.size();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double width_sum = 0.0;
        for (std::size_t t = 0; t < mask.size(); ++t)
            if (mask[t]) width_sum += std::abs(outputs.members[t].upper[i] - outputs.members[t].lower[i]);
        total += std::log(std::max(width_sum / static_cast<double>(selected), kMarginFloor));
    }
    return total / static_cast<double>(n);
}

double margin_score(const EnsemblePool& pool, const data::Dataset& ds)
{
    check_mask(pool.selection_mask, pool.size());
    if (pool.selected_count() == 0) throw RuntimeFailure("margin score: no selected learners");
    // Only selected learners need a forward pass.
    MemberOutputs outputs;
    outputs.targets = ds.targets;
    outputs.members.resize(pool.size());
    for (auto t : pool.selected_indices()) outputs.members[t] = nnet::predict(pool.learners[t], ds.features);
    return margin_score(outputs, pool.selection_mask);
}

Bounds median_vote(const MemberOutputs& outputs, const Mask& mask)
{
    check_mask(mask, outputs.pool_size());
    std::vector<std::size_t> selected;
    for (std::size_t t = 0; t < mask.size(); ++t)
        if (mask[t]) selected.push_back(t);
    if (selected.empty()) throw RuntimeFailure("median vote: no selected learners");

    const Eigen::Index n = outputs.members[selected.front()].size();
    Bounds voted{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    std::vector<double> buf(selected.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < selected.size(); ++k) buf[k] = outputs.members[selected[k]].lower[i];
        voted.lower[i] = median_of(buf);
        for (std::size_t k = 0; k < selected.size(); ++k) buf[k] = outputs.members[selected[k]].upper[i];
        voted.upper[i] = median_of(buf);
    }
    return voted;
}

Bounds median_vote(const EnsemblePool& pool, const Eigen::MatrixXd& inputs)
{
    check_mask(pool.selection_mask, pool.size());
    if (pool.selected_count() == 0) throw RuntimeFailure("median vote: no selected learners");
    MemberOutputs outputs;
    outputs.members.resize(pool.size());
    for (auto t : pool.selected_indices()) outputs.members[t] = nnet::predict(pool.learners[t], inputs);
    return median_vote(outputs, pool.selection_mask);
}

std::string to_string(LossTerm t) { return t == LossTerm::MeanOfMembers ? "mean" : "fused"; }

LossTerm parse_loss_term(const std::string& s)
{
    if (s == "fused") return LossTerm::Fused;
    if (s == "mean") return LossTerm::MeanOfMembers;
    throw ConfigError("unknown loss term '" + s + "' (expected fused or mean)");
}

double subset_objective(const MemberOutputs& outputs, const Mask& mask, const piloss::LossConfig& loss, LossTerm term)
{
    check_mask(mask, outputs.pool_size());
    if (mask_size(mask) == 0) return kEmptyObjective;
    const double score = margin_score(outputs, mask);
    double loss_value = 0.0;
    if (term == LossTerm::Fused) {
        loss_value = piloss::loss_mbpep(make_batch(median_vote(outputs, mask), outputs.targets), loss);
    } else {
        for (std::size_t t = 0; t < mask.size(); ++t)
            if (mask[t]) loss_value += piloss::loss_mbpep(make_batch(outputs.members[t], outputs.targets), loss);
        loss_value /= static_cast<double>(mask_size(mask));
    }
    return score + loss_value;
}

double subset_objective(const EnsemblePool& pool, const Mask& mask, const data::Dataset& ds,
                        const piloss::LossConfig& loss, LossTerm term)
{
    return subset_objective(member_outputs(pool, ds), mask, loss, term);
}

std::string to_string(SelectionRule r) { return r == SelectionRule::Knee ? "knee" : "min"; }

SelectionRule parse_selection_rule(const std::string& s)
{
    if (s == "min") return SelectionRule::MinObjective;
    if (s == "knee") return SelectionRule::Knee;
    throw ConfigError("unknown selection rule '" + s + "' (expected min or knee)");
}

void PruneConfig::validate() const
{
    if (max_iterations < 0) throw ConfigError("prune.max_iterations must be non-negative (0 = automatic)");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
        throw ConfigError("prune.flip_probability must lie in (0,1] (0 = automatic)");
}

int PruneConfig::resolved_iterations(std::size_t pool_size) const
{
    if (max_iterations > 0) return max_iterations;
    const double t = static_cast<double>(pool_size);
    return static_cast<int>(std::ceil(2.0 * std::numbers::e * t * t));
}

double PruneConfig::resolved_flip_probability(std::size_t pool_size) const
{
    if (flip_probability > 0.0) return flip_probability;
    return 1.0 / static_cast<double>(pool_size);
}

bool dominates(const ArchiveEntry& a, const ArchiveEntry& b)
{
    return a.f <= b.f && a.size <= b.size && (a.f < b.f || a.size < b.size);
}

bool ParetoArchive::insert(ArchiveEntry entry)
{
    if (entry.size == 0 || !std::isfinite(entry.f)) return false;
    for (const auto& e : entries_)
        if (e.mask == entry.mask || dominates(e, entry)) return false;
    std::erase_if(entries_, [&](const ArchiveEntry& e) { return dominates(entry, e); });
    entries_.push_back(std::move(entry));
    return true;
}

bool ParetoArchive::mutually_non_dominated() const
{
    for (std::size_t i = 0; i < entries_.size(); ++i)
        for (std::size_t j = 0; j < entries_.size(); ++j)
            if (i != j && dominates(entries_[i], entries_[j])) return false;
    return true;
}

namespace {

bool min_objective_less(const ArchiveEntry& a, const ArchiveEntry& b)
{
    if (a.f != b.f) return a.f < b.f;
    if (a.size != b.size) return a.size < b.size;
    return a.mask < b.mask;
}

} // namespace

const ArchiveEntry& choose(const ParetoArchive& archive, SelectionRule rule)
{
    const auto& entries = archive.entries();
    if (entries.empty()) throw RuntimeFailure("cannot choose from an empty archive");
    const auto best = std::min_element(entries.begin(), entries.end(), min_objective_less);
    if (rule == SelectionRule::MinObjective || entries.size() <= 2) return *best;

    // Knee: the entry farthest below the chord joining the smallest-size and
    // lowest-f ends of the front, after scaling both objectives to [0,1].
    const auto smallest = std::min_element(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return a.size != b.size ? a.size < b.size : min_objective_less(a, b);
    });
    const double f_lo = best->f, f_hi = smallest->f;
    const double s_lo = static_cast<double>(smallest->size), s_hi = static_cast<double>(best->size);
    if (f_hi == f_lo || s_hi == s_lo) return *best;
    auto scaled = [&](const ArchiveEntry& e) {
        return std::pair{(static_cast<double>(e.size) - s_lo) / (s_hi - s_lo), (e.f - f_lo) / (f_hi - f_lo)};
    };
    // Chord runs from (0,1) to (1,0); distance below it is proportional to 1 - x - y.
    const ArchiveEntry* knee = &*best;
    double knee_gap = -std::numeric_limits<double>::infinity();
    for (const auto& e : entries) {
        const auto [x, y] = scaled(e);
        const double gap = 1.0 - x - y;
        if (gap > knee_gap || (gap == knee_gap && min_objective_less(e, *knee))) {
            knee_gap = gap;
            knee = &e;
        }
    }
    return *knee;
}

PruneResult pareto_search(std::size_t pool_size, const Objective& objective, const PruneConfig& cfg)
{
    cfg.validate();
    if (pool_size == 0) throw RuntimeFailure("cannot prune an empty pool");

    std::map<Mask, double> cache;
    auto evaluate = [&](const Mask& m) {
        if (auto it = cache.find(m); it != cache.end()) return it->second;
        const double f = mask_size(m) == 0 ? kEmptyObjective : objective(m);
        cache.emplace(m, f);
        return f;
    };

    PruneResult result;
    Mask full(pool_size, 1);
    result.full_f = evaluate(full);
    result.archive.insert({full, result.full_f, pool_size});

    const int iterations = cfg.resolved_iterations(pool_size);
    const double flip = cfg.resolved_flip_probability(pool_size);
    Rng rng(cfg.rng_seed);
    for (int it = 0; it < iterations; ++it) {
        const auto& entries = result.archive.entries();
        Mask candidate = entries[rng.below(entries.size())].mask;
        for (auto& bit : candidate)
            if (rng.bernoulli(flip)) bit = bit ? 0 : 1;
        const std::size_t size = mask_size(candidate);
        if (size > 0) result.archive.insert({candidate, evaluate(candidate), size});
        ++result.archive.iterations_run;
    }

    const ArchiveEntry& chosen = choose(result.archive, cfg.selection_rule);
    result.chosen = chosen.mask;
    result.chosen_f = chosen.f;
    result.evaluations = cache.size();
    return result;
}

PruneResult pareto_prune(EnsemblePool& pool, const data::Dataset& ds, const PruneConfig& cfg,
                         const piloss::LossConfig& loss)
{
    const MemberOutputs outputs = member_outputs(pool, ds);
    PruneResult result = pareto_search(
        pool.size(), [&](const Mask& m) { return subset_objective(outputs, m, loss, cfg.loss_term); }, cfg);
    pool.selection_mask = result.chosen;
    return result;
}

EvalReport evaluate(const EnsemblePool& pool, const data::Dataset& ds, const piloss::LossConfig& loss,
                    int timing_repeats)
{
    data::validate(ds);
    EvalReport report;
    report.predict_seconds = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, timing_repeats); ++r) {
        const auto start = std::chrono::steady_clock::now();
        report.bounds = median_vote(pool, ds.features);
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        report.predict_seconds = std::min(report.predict_seconds, elapsed.count());
    }
    report.metrics = piloss::report(make_batch(report.bounds, ds.targets), loss);
    report.selected = pool.selected_indices();
    report.ensemble_size = report.selected.size();
    return report;
}

} // namespace mbpep::ensemble
