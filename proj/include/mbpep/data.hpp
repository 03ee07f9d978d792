#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mbpep/interval.hpp"

namespace mbpep::data {

struct MinMax {
    double min = 0.0;
    double max = 1.0;

    bool operator==(const MinMax&) const = default;
};

struct Normalization {
    std::vector<MinMax> features;
    MinMax target;

    bool operator==(const Normalization&) const = default;
};

struct Dataset {
    Eigen::MatrixXd features; // N x d
    Eigen::VectorXd targets;  // N
    std::vector<std::string> feature_names;
    std::string target_name = "y";
    // Only meaningful when `normalized` is set.
    Normalization norm;
    bool normalized = false;

    Eigen::Index size() const { return targets.size(); }
    Eigen::Index dim() const { return features.cols(); }
};

// Throws DataError if N < 1, d < 1, shapes disagree or anything is non-finite.
void validate(const Dataset& ds);

// y = x^3 + N(0, noise_std^2), x ~ U(x_range).
Dataset gen_cubic(std::size_t n, double noise_std = 3.0, std::pair<double, double> x_range = {-4.0, 4.0},
                  std::uint64_t seed = 0);

// y = exp(x) + Exp(rate), x ~ U(x_range).
Dataset gen_exp(std::size_t n, double rate = 1.0, std::pair<double, double> x_range = {0.0, 3.0},
                std::uint64_t seed = 0);

// Which column of a CSV holds the target. Empty name selects the last column.
struct TargetColumn {
    std::optional<std::string> name;

    static TargetColumn last() { return {}; }
    static TargetColumn named(std::string n) { return {std::move(n)}; }
};

// Comma separated, mandatory header, '.' decimals, no quoting. Blank lines are skipped.
Dataset load_csv(const std::string& path, const TargetColumn& target = TargetColumn::last());

// Writes features then target, at full round-trip precision.
void write_csv(const Dataset& ds, const std::string& path);

// Per-column min/max of features and target.
Normalization fit_normalization(const Dataset& ds);

// Min-max scales with the given parameters; constant columns map to 0.5.
Dataset apply_normalization(const Dataset& ds, const Normalization& norm);

// Scales `ds` using statistics fitted on `fit_on`.
Dataset normalize(const Dataset& ds, const Dataset& fit_on);

// Inverse of apply_normalization. Constant columns come back as their stored value.
Dataset denormalize(const Dataset& ds);

// Maps bounds and targets from [0,1] back to original target units.
// Throws DataError when min == max.
IntervalBatch denormalize_bounds(const IntervalBatch& batch, const MinMax& target_norm);

struct SplitSpec {
    double train_fraction = 0.5;
    double valid_fraction = 0.2;
    double test_fraction = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Splits {
    Dataset train;
    Dataset valid;
    Dataset test;
    // Original row index of each member, in split order.
    std::vector<std::size_t> train_rows, valid_rows, test_rows;
};

// Shuffled partition. valid and test get floor(N * fraction) rows, train the rest.
Splits split(const Dataset& ds, const SplitSpec& spec);

Dataset select_rows(const Dataset& ds, const std::vector<std::size_t>& rows);

} // namespace mbpep::data
