#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "mbpep/interval.hpp"
#include "mbpep/nnet.hpp"
#include "mbpep/piloss.hpp"
#include "mbpep/random.hpp"

namespace testing {

// Scratch directory unique to this process, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
        : path_(std::filesystem::temp_directory_path() / ("mbpep_" + tag + "_" + std::to_string(::getpid())))
    {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text)
{
    std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Bounds in [-1, 1] with non-negative width, targets in [-1.5, 1.5].
inline mbpep::IntervalBatch random_batch(mbpep::Rng& rng, int n)
{
    mbpep::IntervalBatch b;
    b.lower.resize(n);
    b.upper.resize(n);
    b.target.resize(n);
    for (int i = 0; i < n; ++i) {
        const double a = rng.uniform(-1.0, 1.0), c = rng.uniform(-1.0, 1.0);
        b.lower[i] = std::min(a, c);
        b.upper[i] = std::max(a, c);
        b.target[i] = rng.uniform(-1.5, 1.5);
    }
    return b;
}

inline double rel_error(double analytic, double numeric, double floor = 1e-4)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// A one-layer learner whose bounds are the constants (lower, upper) for every input.
inline mbpep::nnet::BaseLearner constant_learner(double lower, double upper, int input_dim = 1)
{
    auto l = mbpep::nnet::init_learner({input_dim, 2}, mbpep::nnet::Activation::Sigmoid, 1.0, 0,
                                       mbpep::nnet::BoundMode::Raw);
    l.weights[0].setZero();
    l.biases[0] << lower, upper;
    return l;
}

// A one-layer raw learner: lower = wl*x + bl, upper = wu*x + bu on scalar input.
inline mbpep::nnet::BaseLearner linear_learner(double wl, double bl, double wu, double bu)
{
    auto l = constant_learner(bl, bu);
    l.weights[0] << wl, wu;
    return l;
}

using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Extended-precision reference pass with fixed dropout masks (empty: no dropout).
// Returns (lower, upper) per sample.
inline std::pair<LVec, LVec> reference_bounds(const mbpep::nnet::BaseLearner& l, const Eigen::MatrixXd& x,
                                              const std::vector<Eigen::MatrixXd>& masks)
{
    LMat a = x.cast<long double>();
    const std::size_t layers = l.weights.size();
    for (std::size_t k = 0; k < layers; ++k) {
        LMat z = a * l.weights[k].cast<long double>();
        for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i) += l.biases[k].cast<long double>().transpose();
        if (k + 1 == layers) {
            a = z;
            break;
        }
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            for (Eigen::Index j = 0; j < z.cols(); ++j) {
                long double v = z(i, j);
                v = l.activation == mbpep::nnet::Activation::Relu ? std::max(v, 0.0L) : 1.0L / (1.0L + std::exp(-v));
                if (!masks.empty()) v = v * masks[k](i, j) / l.dropout_retention;
                z(i, j) = v;
            }
        }
        a = z;
    }
    LVec lower = a.col(0), upper(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const long double o2 = a(i, 1);
        upper[i] = l.bounds == mbpep::nnet::BoundMode::Raw ? o2 : a(i, 0) + std::log1p(std::exp(o2));
    }
    return {lower, upper};
}

// Extended-precision loss_mbpep.
inline long double reference_loss(const LVec& lo, const LVec& up, const Eigen::VectorXd& y, double softness,
                                  double confidence, double penalty_c)
{
    long double width = 0.0L, cover = 0.0L;
    const long double n = static_cast<long double>(y.size());
    const long double s = softness;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const long double k = 1.0L / (1.0L + std::exp(-s * (up[i] - y[i]))) / (1.0L + std::exp(-s * (y[i] - lo[i])));
        width += (up[i] - lo[i]) * k;
        cover += k;
    }
    return width / n + static_cast<long double>(penalty_c) * std::max(0.0L, confidence - cover / n);
}

// Largest per-parameter relative error between backward() and central
// differences of the extended-precision loss, dropout masks held fixed.
inline double max_gradient_error(const mbpep::nnet::BaseLearner& learner, const Eigen::MatrixXd& x,
                                 const Eigen::VectorXd& y, const std::vector<Eigen::MatrixXd>& masks,
                                 double softness, double confidence, double penalty_c, double h = 1e-6)
{
    using namespace mbpep;
    const auto fwd = nnet::forward_with_masks(learner, x, masks);
    piloss::LossConfig cfg{confidence, penalty_c, softness};
    const auto gb = piloss::loss_mbpep_grad(make_batch(fwd.bounds, y), cfg);
    const auto grads = nnet::backward(learner, fwd.trace, gb.lower, gb.upper);

    auto probe = learner;
    auto loss_at = [&]() {
        const auto [lo, up] = reference_bounds(probe, x, masks);
        return reference_loss(lo, up, y, softness, confidence, penalty_c);
    };
    double worst = 0.0;
    auto check = [&](double& param, double analytic) {
        const double keep = param;
        const double plus = keep + h, minus = keep - h;
        param = plus;
        const long double fp = loss_at();
        param = minus;
        const long double fm = loss_at();
        param = keep;
        const double numeric = static_cast<double>((fp - fm) / (static_cast<long double>(plus) - minus));
        worst = std::max(worst, rel_error(analytic, numeric, 1e-6));
    };
    for (std::size_t l = 0; l < probe.weights.size(); ++l) {
        for (Eigen::Index i = 0; i < probe.weights[l].rows(); ++i)
            for (Eigen::Index j = 0; j < probe.weights[l].cols(); ++j) check(probe.weights[l](i, j), grads.weights[l](i, j));
        for (Eigen::Index j = 0; j < probe.biases[l].size(); ++j) check(probe.biases[l][j], grads.biases[l][j]);
    }
    return worst;
}

// Dropout masks drawn at the learner's retention rate.
inline std::vector<Eigen::MatrixXd> random_masks(const mbpep::nnet::BaseLearner& l, Eigen::Index n, mbpep::Rng& rng)
{
    std::vector<Eigen::MatrixXd> masks;
    for (std::size_t k = 0; k + 1 < l.weights.size(); ++k) {
        Eigen::MatrixXd m(n, l.weights[k].cols());
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(l.dropout_retention) ? 1.0 : 0.0;
        masks.push_back(std::move(m));
    }
    return masks;
}

} // namespace testing
