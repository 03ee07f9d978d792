#include "mbpep/piloss.hpp"

#include <cmath>
#include <string>

#include "mbpep/error.hpp"

namespace mbpep::piloss {

void LossConfig::validate() const
{
    if (!(confidence > 0.0 && confidence < 1.0))
        throw ConfigError("loss.confidence must lie in (0,1), got " + std::to_string(confidence));
    if (!(penalty_c >= 0.0) || !std::isfinite(penalty_c))
        throw ConfigError("loss.penalty_c must be a non-negative finite number");
    if (!(softness > 0.0) || !std::isfinite(softness))
        throw ConfigError("loss.softness must be positive and finite");
}

void validate_batch(const IntervalBatch& batch)
{
    const auto n = batch.target.size();
    if (n < 1) throw DataError("interval batch is empty");
    if (batch.lower.size() != n || batch.upper.size() != n)
        throw DataError("interval batch vectors differ in length");
    if (!batch.lower.allFinite() || !batch.upper.allFinite() || !batch.target.allFinite())
        throw DataError("interval batch contains non-finite values");
}

double sigmoid(double x) noexcept
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Eigen::VectorXd hard_indicator(const IntervalBatch& batch)
{
    validate_batch(batch);
    Eigen::VectorXd k(batch.size());
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const double y = batch.target[i];
        k[i] = (batch.lower[i] <= y && y <= batch.upper[i]) ? 1.0 : 0.0;
    }
    return k;
}

double picp_hard(const IntervalBatch& batch)
{
    return hard_indicator(batch).sum() / static_cast<double>(batch.size());
}

double mpiw_all(const IntervalBatch& batch)
{
    validate_batch(batch);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < batch.size(); ++i) sum += batch.upper[i] - batch.lower[i];
    return sum / static_cast<double>(batch.size());
}

double mpiw_captured(const IntervalBatch& batch)
{
    validate_batch(batch);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const double y = batch.target[i];
        if (batch.lower[i] <= y && y <= batch.upper[i]) sum += batch.upper[i] - batch.lower[i];
    }
    return sum / static_cast<double>(batch.size());
}

Eigen::VectorXd soft_indicator(const IntervalBatch& batch, double softness)
{
    validate_batch(batch);
    if (!(softness > 0.0)) throw ConfigError("softness must be positive");
    Eigen::VectorXd k(batch.size());
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const double y = batch.target[i];
        k[i] = sigmoid(softness * (batch.upper[i] - y)) * sigmoid(softness * (y - batch.lower[i]));
    }
    return k;
}

double picp_soft(const IntervalBatch& batch, double softness)
{
    return soft_indicator(batch, softness).sum() / static_cast<double>(batch.size());
}

double mpiw_weighted(const IntervalBatch& batch, const Eigen::VectorXd& indicator)
{
    validate_batch(batch);
    if (indicator.size() != batch.size()) throw DataError("indicator length differs from batch");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < batch.size(); ++i) sum += (batch.upper[i] - batch.lower[i]) * indicator[i];
    return sum / static_cast<double>(batch.size());
}

double mpiw_mbpep(const IntervalBatch& batch, double softness)
{
    return mpiw_weighted(batch, soft_indicator(batch, softness));
}

double loss_mbpep(const IntervalBatch& batch, const LossConfig& cfg)
{
    const Eigen::VectorXd k = soft_indicator(batch, cfg.softness);
    const double n = static_cast<double>(batch.size());
    const double coverage = k.sum() / n;
    return mpiw_weighted(batch, k) + cfg.penalty_c * std::max(0.0, cfg.confidence - coverage);
}

BoundGradient loss_mbpep_grad(const IntervalBatch& batch, const LossConfig& cfg)
{
    validate_batch(batch);
    const Eigen::Index n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double s = cfg.softness;

    Eigen::VectorXd a(n), b(n);
    double coverage = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        a[i] = sigmoid(s * (batch.upper[i] - batch.target[i]));
        b[i] = sigmoid(s * (batch.target[i] - batch.lower[i]));
        coverage += a[i] * b[i];
    }
    coverage *= inv_n;
    // Subgradient 0 at the kink.
    const double hinge_weight = (cfg.confidence - coverage > 0.0) ? cfg.penalty_c : 0.0;

    BoundGradient g{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const double k = a[i] * b[i];
        const double width = batch.upper[i] - batch.lower[i];
        const double dk_du = s * a[i] * (1.0 - a[i]) * b[i];
        const double dk_dl = -s * a[i] * b[i] * (1.0 - b[i]);
        g.upper[i] = inv_n * (k + width * dk_du - hinge_weight * dk_du);
        g.lower[i] = inv_n * (-k + width * dk_dl - hinge_weight * dk_dl);
    }
    return g;
}

double loss_lube(const IntervalBatch& batch, const LossConfig& cfg)
{
    const double normaliser = mpiw_all(batch);
    if (normaliser == 0.0) throw DataError("LUBE loss undefined: mean interval width is zero");
    const double coverage = picp_hard(batch);
    const double ratio = mpiw_captured(batch) / normaliser;
    return ratio * (1.0 + std::exp(cfg.penalty_c * std::max(0.0, cfg.confidence - coverage)));
}

LossReport report(const IntervalBatch& batch, const LossConfig& cfg)
{
    LossReport r;
    r.picp_hard = picp_hard(batch);
    r.picp_soft = picp_soft(batch, cfg.softness);
    r.mpiw_all = mpiw_all(batch);
    r.mpiw_captured = mpiw_captured(batch);
    r.mpiw_mbpep_soft = mpiw_mbpep(batch, cfg.softness);
    r.loss_mbpep = loss_mbpep(batch, cfg);
    if (r.mpiw_all != 0.0) r.loss_lube = loss_lube(batch, cfg);
    return r;
}

} // namespace mbpep::piloss
