#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbpep/interval.hpp"
#include "mbpep/random.hpp"

namespace mbpep::nnet {

enum class Activation { Sigmoid, Relu };

// How the two linear output heads (o1, o2) become bounds.
//   Softplus: lower = o1, upper = o1 + softplus(o2)   (width never negative)
//   Raw:      lower = o1, upper = o2
enum class BoundMode { Softplus, Raw };

enum class Mode { Train, Infer };

std::string to_string(Activation a);
std::string to_string(BoundMode m);
Activation parse_activation(const std::string& s);
BoundMode parse_bound_mode(const std::string& s);

// Sigmoid for shallow nets, Relu once there are two or more hidden layers.
Activation default_activation(std::size_t hidden_layers);

// Feed-forward interval predictor. weights[l] is fan_in x fan_out, so a batch
// propagates as Z = A * W + 1 * b^T. Hidden layers use `activation` and
// inverted dropout; the output layer is linear with exactly two units.
struct BaseLearner {
    std::vector<int> layer_dims;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Activation activation = Activation::Sigmoid;
    BoundMode bounds = BoundMode::Softplus;
    double dropout_retention = 0.8;
    std::uint64_t seed = 0;

    int input_dim() const { return layer_dims.front(); }
    std::size_t layer_count() const { return weights.size(); }
    std::size_t parameter_count() const;
};

// Activations cached by forward() for backward(). post[l] is the (masked,
// rescaled) output of hidden layer l; masks is empty in Infer mode.
struct ForwardTrace {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> pre;
    std::vector<Eigen::MatrixXd> post;
    std::vector<Eigen::MatrixXd> masks;
    Eigen::MatrixXd raw_output;
};

struct ForwardResult {
    ForwardTrace trace;
    Bounds bounds;
};

// Same layout as the learner's parameters.
struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    bool all_finite() const;
};

BaseLearner init_learner(const std::vector<int>& layer_dims, Activation activation, double dropout_retention,
                         std::uint64_t seed, BoundMode bounds = BoundMode::Softplus);

// Throws DataError/ConfigError when shapes are inconsistent.
void check_learner(const BaseLearner& learner);

// Train mode draws a fresh dropout mask per hidden unit and sample from `rng`.
ForwardResult forward(const BaseLearner& learner, const Eigen::MatrixXd& inputs, Mode mode, Rng* rng = nullptr);

// Train-mode pass with caller-supplied dropout masks (one per hidden layer,
// each N x width with entries 0 or 1).
ForwardResult forward_with_masks(const BaseLearner& learner, const Eigen::MatrixXd& inputs,
                                 const std::vector<Eigen::MatrixXd>& masks);

// Inference-only bounds without keeping a trace.
Bounds predict(const BaseLearner& learner, const Eigen::MatrixXd& inputs);

// Back-propagates d loss / d (lower, upper) through the traced computation.
Gradients backward(const BaseLearner& learner, const ForwardTrace& trace, const Eigen::VectorXd& grad_lower,
                   const Eigen::VectorXd& grad_upper);

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

struct OptimizerState {
    OptimizerConfig config;
    std::vector<Eigen::MatrixXd> m_weights, v_weights;
    std::vector<Eigen::VectorXd> m_biases, v_biases;
    std::uint64_t step_count = 0;

    // Moments are shaped after the learner on first use.
    explicit OptimizerState(OptimizerConfig cfg = {}) : config(cfg) {}
};

// Applies one update in place. Returns false, leaving everything untouched,
// when the gradients contain NaN/Inf. Shape mismatches throw.
bool apply_update(BaseLearner& learner, const Gradients& grads, OptimizerState& state);

} // namespace mbpep::nnet
