#pragma once

#include <optional>

#include <Eigen/Dense>

#include "mbpep/interval.hpp"

namespace mbpep::piloss {

struct LossConfig {
    double confidence = 0.95; // required coverage, 1 - phi
    double penalty_c = 15.0;  // hinge weight
    double softness = 30.0;   // steepness inside the soft indicator's sigmoids

    // Throws ConfigError on out-of-range fields.
    void validate() const;
};

struct LossReport {
    double picp_hard = 0.0;
    double picp_soft = 0.0;
    double mpiw_all = 0.0;
    double mpiw_captured = 0.0;
    double mpiw_mbpep_soft = 0.0;
    double loss_mbpep = 0.0;
    // Absent when the batch's mean width is zero.
    std::optional<double> loss_lube;
};

struct BoundGradient {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

// Throws DataError unless all three vectors are non-empty, equally sized and finite.
void validate_batch(const IntervalBatch& batch);

double sigmoid(double x) noexcept;

// k_i = 1 iff lower_i <= target_i <= upper_i.
Eigen::VectorXd hard_indicator(const IntervalBatch& batch);
double picp_hard(const IntervalBatch& batch);

// Mean width over every sample.
double mpiw_all(const IntervalBatch& batch);

// Width summed over captured samples only, still divided by the full sample count.
double mpiw_captured(const IntervalBatch& batch);

// Differentiable coverage: sigmoid(s*(upper - y)) * sigmoid(s*(y - lower)).
Eigen::VectorXd soft_indicator(const IntervalBatch& batch, double softness);
double picp_soft(const IntervalBatch& batch, double softness);

// (1/N) sum width_i * k_i for an arbitrary per-sample indicator.
double mpiw_weighted(const IntervalBatch& batch, const Eigen::VectorXd& indicator);
double mpiw_mbpep(const IntervalBatch& batch, double softness);

// mpiw_mbpep + c * max(0, confidence - picp_soft).
double loss_mbpep(const IntervalBatch& batch, const LossConfig& cfg);

// Exact partials of loss_mbpep with respect to every bound. The hinge
// contributes nothing when coverage sits exactly on the confidence level.
BoundGradient loss_mbpep_grad(const IntervalBatch& batch, const LossConfig& cfg);

// Exponential-penalty baseline. Uses hard coverage, captured-only width, and
// the batch mean width as normaliser. Throws DataError on zero mean width.
double loss_lube(const IntervalBatch& batch, const LossConfig& cfg);

LossReport report(const IntervalBatch& batch, const LossConfig& cfg);

} // namespace mbpep::piloss
