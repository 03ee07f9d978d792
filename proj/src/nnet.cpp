#include "mbpep/nnet.hpp"

#include <cmath>

#include "mbpep/error.hpp"

namespace mbpep::nnet {

namespace {

double sigmoid(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a)
{
    if (a == Activation::Relu) return z.cwiseMax(0.0);
    return z.unaryExpr([](double v) { return sigmoid(v); });
}

Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& z, Activation a)
{
    if (a == Activation::Relu) return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    return z.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 - s);
    });
}

Bounds to_bounds(const Eigen::MatrixXd& raw, BoundMode mode)
{
    Bounds b;
    b.lower = raw.col(0);
    if (mode == BoundMode::Raw)
        b.upper = raw.col(1);
    else
        b.upper = raw.col(0) + raw.col(1).unaryExpr([](double v) { return softplus(v); });
    return b;
}

void check_inputs(const BaseLearner& learner, const Eigen::MatrixXd& inputs)
{
    if (inputs.cols() != learner.input_dim())
        throw DataError("input has " + std::to_string(inputs.cols()) + " columns, learner expects " +
                        std::to_string(learner.input_dim()));
}

ForwardResult run_forward(const BaseLearner& learner, const Eigen::MatrixXd& inputs, Mode mode, Rng* rng,
                          const std::vector<Eigen::MatrixXd>* fixed_masks)
{
    check_inputs(learner, inputs);
    const std::size_t layers = learner.layer_count();
    const Eigen::Index n = inputs.rows();
    const double r = learner.dropout_retention;

    ForwardResult out;
    ForwardTrace& t = out.trace;
    t.input = inputs;
    t.pre.reserve(layers);
    t.post.reserve(layers - 1);

    const Eigen::MatrixXd* a = &t.input;
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = (*a) * learner.weights[l];
        z.rowwise() += learner.biases[l].transpose();
        t.pre.push_back(std::move(z));
        if (l + 1 == layers) break;

        Eigen::MatrixXd h = activate(t.pre.back(), learner.activation);
        if (mode == Mode::Train) {
            Eigen::MatrixXd mask;
            if (fixed_masks != nullptr) {
                mask = (*fixed_masks)[l];
                if (mask.rows() != n || mask.cols() != h.cols()) throw DataError("dropout mask shape mismatch");
            } else {
                mask.resize(n, h.cols());
                for (Eigen::Index i = 0; i < n; ++i)
                    for (Eigen::Index j = 0; j < h.cols(); ++j) mask(i, j) = rng->bernoulli(r) ? 1.0 : 0.0;
            }
            h = h.cwiseProduct(mask) / r;
            t.masks.push_back(std::move(mask));
        }
        t.post.push_back(std::move(h));
        a = &t.post.back();
    }
    t.raw_output = t.pre.back();
    out.bounds = to_bounds(t.raw_output, learner.bounds);
    return out;
}

} // namespace

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "sigmoid"; }
std::string to_string(BoundMode m) { return m == BoundMode::Raw ? "raw" : "softplus"; }
std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

Activation parse_activation(const std::string& s)
{
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw ConfigError("unknown activation '" + s + "' (expected relu or sigmoid)");
}

BoundMode parse_bound_mode(const std::string& s)
{
    if (s == "softplus") return BoundMode::Softplus;
    if (s == "raw") return BoundMode::Raw;
    throw ConfigError("unknown bound mode '" + s + "' (expected softplus or raw)");
}

OptimizerKind parse_optimizer(const std::string& s)
{
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

Activation default_activation(std::size_t hidden_layers)
{
    return hidden_layers >= 2 ? Activation::Relu : Activation::Sigmoid;
}

std::size_t BaseLearner::parameter_count() const
{
    std::size_t count = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) count += weights[l].size() + biases[l].size();
    return count;
}

bool Gradients::all_finite() const
{
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

BaseLearner init_learner(const std::vector<int>& layer_dims, Activation activation, double dropout_retention,
                         std::uint64_t seed, BoundMode bounds)
{
    if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least an input and an output entry");
    for (int d : layer_dims)
        if (d <= 0) throw ConfigError("layer dimensions must be positive");
    if (layer_dims.back() != 2) throw ConfigError("the output layer must have exactly 2 units");
    if (!(dropout_retention > 0.0 && dropout_retention <= 1.0))
        throw ConfigError("dropout retention must lie in (0,1]");

    BaseLearner learner;
    learner.layer_dims = layer_dims;
    learner.activation = activation;
    learner.bounds = bounds;
    learner.dropout_retention = dropout_retention;
    learner.seed = seed;

    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const int fan_in = layer_dims[l];
        const int fan_out = layer_dims[l + 1];
        Eigen::MatrixXd w(fan_in, fan_out);
        if (activation == Activation::Relu) {
            const double scale = std::sqrt(2.0 / fan_in);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
        } else {
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
        }
        learner.weights.push_back(std::move(w));
        learner.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return learner;
}

void check_learner(const BaseLearner& learner)
{
    const auto& dims = learner.layer_dims;
    if (dims.size() < 2 || dims.back() != 2) throw DataError("learner output layer must have 2 units");
    if (learner.weights.size() != dims.size() - 1 || learner.biases.size() != dims.size() - 1)
        throw DataError("learner layer count does not match layer_dims");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        if (learner.weights[l].rows() != dims[l] || learner.weights[l].cols() != dims[l + 1] ||
            learner.biases[l].size() != dims[l + 1])
            throw DataError("learner layer " + std::to_string(l) + " has inconsistent shape");
    }
    if (!(learner.dropout_retention > 0.0 && learner.dropout_retention <= 1.0))
        throw DataError("learner dropout retention out of range");
}

ForwardResult forward(const BaseLearner& learner, const Eigen::MatrixXd& inputs, Mode mode, Rng* rng)
{
    if (mode == Mode::Train && rng == nullptr) throw RuntimeFailure("train-mode forward requires a random stream");
    return run_forward(learner, inputs, mode, rng, nullptr);
}

ForwardResult forward_with_masks(const BaseLearner& learner, const Eigen::MatrixXd& inputs,
                                 const std::vector<Eigen::MatrixXd>& masks)
{
    if (masks.size() + 1 != learner.layer_count()) throw DataError("one dropout mask per hidden layer required");
    return run_forward(learner, inputs, Mode::Train, nullptr, &masks);
}

Bounds predict(const BaseLearner& learner, const Eigen::MatrixXd& inputs)
{
    check_inputs(learner, inputs);
    Eigen::MatrixXd a = inputs;
    const std::size_t layers = learner.layer_count();
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = a * learner.weights[l];
        z.rowwise() += learner.biases[l].transpose();
        a = (l + 1 == layers) ? std::move(z) : activate(z, learner.activation);
    }
    return to_bounds(a, learner.bounds);
}

Gradients backward(const BaseLearner& learner, const ForwardTrace& trace, const Eigen::VectorXd& grad_lower,
                   const Eigen::VectorXd& grad_upper)
{
    const std::size_t layers = learner.layer_count();
    const Eigen::Index n = trace.input.rows();
    if (trace.pre.size() != layers || trace.post.size() + 1 != layers || trace.raw_output.cols() != 2 ||
        trace.raw_output.rows() != n)
        throw DataError("forward trace does not match learner");
    if (!trace.masks.empty() && trace.masks.size() != trace.post.size())
        throw DataError("forward trace has an incomplete set of dropout masks");
    if (grad_lower.size() != n || grad_upper.size() != n) throw DataError("upstream gradient length mismatch");
    for (std::size_t l = 0; l < layers; ++l)
        if (trace.pre[l].cols() != learner.weights[l].cols()) throw DataError("forward trace does not match learner");

    Eigen::MatrixXd dz(n, 2);
    if (learner.bounds == BoundMode::Raw) {
        dz.col(0) = grad_lower;
        dz.col(1) = grad_upper;
    } else {
        dz.col(0) = grad_lower + grad_upper;
        for (Eigen::Index i = 0; i < n; ++i) dz(i, 1) = grad_upper[i] * sigmoid(trace.raw_output(i, 1));
    }

    Gradients g;
    g.weights.resize(layers);
    g.biases.resize(layers);
    const double r = learner.dropout_retention;
    for (std::size_t l = layers; l-- > 0;) {
        const Eigen::MatrixXd& a_prev = (l == 0) ? trace.input : trace.post[l - 1];
        g.weights[l] = a_prev.transpose() * dz;
        g.biases[l] = dz.colwise().sum().transpose();
        if (l == 0) break;
        Eigen::MatrixXd da = dz * learner.weights[l].transpose();
        if (!trace.masks.empty()) da = da.cwiseProduct(trace.masks[l - 1]) / r;
        dz = da.cwiseProduct(activation_derivative(trace.pre[l - 1], learner.activation));
    }
    return g;
}

void OptimizerConfig::validate() const
{
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

bool apply_update(BaseLearner& learner, const Gradients& grads, OptimizerState& state)
{
    const std::size_t layers = learner.layer_count();
    if (grads.weights.size() != layers || grads.biases.size() != layers)
        throw DataError("gradient layer count does not match learner");
    for (std::size_t l = 0; l < layers; ++l) {
        if (grads.weights[l].rows() != learner.weights[l].rows() ||
            grads.weights[l].cols() != learner.weights[l].cols() || grads.biases[l].size() != learner.biases[l].size())
            throw DataError("gradient shape mismatch at layer " + std::to_string(l));
    }
    if (!grads.all_finite()) return false;

    const OptimizerConfig& cfg = state.config;
    if (cfg.kind == OptimizerKind::Sgd) {
        for (std::size_t l = 0; l < layers; ++l) {
            learner.weights[l] -= cfg.learning_rate * grads.weights[l];
            learner.biases[l] -= cfg.learning_rate * grads.biases[l];
        }
        ++state.step_count;
        return true;
    }

    if (state.m_weights.size() != layers) {
        state.m_weights.clear();
        state.v_weights.clear();
        state.m_biases.clear();
        state.v_biases.clear();
        for (std::size_t l = 0; l < layers; ++l) {
            state.m_weights.push_back(Eigen::MatrixXd::Zero(learner.weights[l].rows(), learner.weights[l].cols()));
            state.v_weights.push_back(Eigen::MatrixXd::Zero(learner.weights[l].rows(), learner.weights[l].cols()));
            state.m_biases.push_back(Eigen::VectorXd::Zero(learner.biases[l].size()));
            state.v_biases.push_back(Eigen::VectorXd::Zero(learner.biases[l].size()));
        }
    }

    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto step = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        param.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
    };
    for (std::size_t l = 0; l < layers; ++l) {
        step(learner.weights[l], state.m_weights[l], state.v_weights[l], grads.weights[l]);
        step(learner.biases[l], state.m_biases[l], state.v_biases[l], grads.biases[l]);
    }
    return true;
}

} // namespace mbpep::nnet
