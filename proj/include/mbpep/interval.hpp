#pragma once

#include <Eigen/Dense>

namespace mbpep {

// Per-sample lower and upper bounds for a batch of inputs.
struct Bounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    Eigen::Index size() const { return lower.size(); }
};

// Bounds paired with the targets they are meant to cover.
struct IntervalBatch {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    Eigen::VectorXd target;

    Eigen::Index size() const { return target.size(); }
};

inline IntervalBatch make_batch(const Bounds& bounds, const Eigen::VectorXd& targets)
{
    return IntervalBatch{bounds.lower, bounds.upper, targets};
}

} // namespace mbpep
