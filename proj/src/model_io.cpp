#include "mbpep/model_io.hpp"

#include <fstream>
#include <sstream>

#include "mbpep/error.hpp"

namespace mbpep {

using nlohmann::json;

namespace {

json matrix_row_major(const Eigen::MatrixXd& m)
{
    json arr = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}

Eigen::MatrixXd matrix_from_row_major(const json& arr, int rows, int cols)
{
    if (!arr.is_array() || arr.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
        throw DataError("model weights have the wrong element count");
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = arr[k++].get<double>();
    return m;
}

json learner_to_json(const nnet::BaseLearner& l)
{
    json j;
    j["layer_dims"] = l.layer_dims;
    j["activation"] = nnet::to_string(l.activation);
    j["bounds"] = nnet::to_string(l.bounds);
    j["dropout_retention"] = l.dropout_retention;
    j["seed"] = l.seed;
    j["weights"] = json::array();
    j["biases"] = json::array();
    for (std::size_t k = 0; k < l.weights.size(); ++k) {
        j["weights"].push_back(matrix_row_major(l.weights[k]));
        j["biases"].push_back(std::vector<double>(l.biases[k].data(), l.biases[k].data() + l.biases[k].size()));
    }
    return j;
}

nnet::BaseLearner learner_from_json(const json& j)
{
    nnet::BaseLearner l;
    l.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    l.activation = nnet::parse_activation(j.at("activation").get<std::string>());
    l.bounds = nnet::parse_bound_mode(j.at("bounds").get<std::string>());
    l.dropout_retention = j.at("dropout_retention").get<double>();
    l.seed = j.at("seed").get<std::uint64_t>();
    const auto& w = j.at("weights");
    const auto& b = j.at("biases");
    if (l.layer_dims.size() < 2 || w.size() != l.layer_dims.size() - 1 || b.size() != w.size())
        throw DataError("model learner layer count is inconsistent");
    for (std::size_t k = 0; k < w.size(); ++k) {
        l.weights.push_back(matrix_from_row_major(w[k], l.layer_dims[k], l.layer_dims[k + 1]));
        const auto bias = b[k].get<std::vector<double>>();
        l.biases.push_back(Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size())));
    }
    nnet::check_learner(l);
    return l;
}

json minmax_to_json(const data::MinMax& mm) { return json::array({mm.min, mm.max}); }

data::MinMax minmax_from_json(const json& j)
{
    if (!j.is_array() || j.size() != 2) throw DataError("normalization entries must be [min, max] pairs");
    return {j[0].get<double>(), j[1].get<double>()};
}

} // namespace

json train_config_to_json(const ensemble::TrainConfig& cfg)
{
    json j;
    j["hidden"] = cfg.hidden;
    j["activation"] = nnet::to_string(cfg.resolved_activation());
    j["bounds"] = nnet::to_string(cfg.bounds);
    j["dropout_retention"] = cfg.dropout_retention;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["pool_size"] = cfg.pool_size;
    j["optimizer"] = {{"kind", nnet::to_string(cfg.optimizer.kind)},
                      {"learning_rate", cfg.optimizer.learning_rate},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"epsilon", cfg.optimizer.epsilon}};
    j["loss"] = {{"confidence", cfg.loss.confidence},
                 {"penalty_c", cfg.loss.penalty_c},
                 {"softness", cfg.loss.softness}};
    return j;
}

ensemble::TrainConfig train_config_from_json(const json& j)
{
    ensemble::TrainConfig cfg;
    cfg.hidden = j.at("hidden").get<std::vector<int>>();
    cfg.activation = nnet::parse_activation(j.at("activation").get<std::string>());
    cfg.bounds = nnet::parse_bound_mode(j.at("bounds").get<std::string>());
    cfg.dropout_retention = j.at("dropout_retention").get<double>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.pool_size = j.at("pool_size").get<int>();
    const auto& o = j.at("optimizer");
    cfg.optimizer.kind = nnet::parse_optimizer(o.at("kind").get<std::string>());
    cfg.optimizer.learning_rate = o.at("learning_rate").get<double>();
    cfg.optimizer.beta1 = o.at("beta1").get<double>();
    cfg.optimizer.beta2 = o.at("beta2").get<double>();
    cfg.optimizer.epsilon = o.at("epsilon").get<double>();
    const auto& l = j.at("loss");
    cfg.loss.confidence = l.at("confidence").get<double>();
    cfg.loss.penalty_c = l.at("penalty_c").get<double>();
    cfg.loss.softness = l.at("softness").get<double>();
    return cfg;
}

json model_to_json(const Model& model)
{
    const auto& pool = model.pool;
    json j;
    j["version"] = kModelVersion;
    j["train_config"] = train_config_to_json(pool.config);
    j["learners"] = json::array();
    for (const auto& l : pool.learners) j["learners"].push_back(learner_to_json(l));
    j["bootstrap_seeds"] = pool.bootstrap_seeds;
    j["selection_mask"] = pool.selection_mask;
    json norm;
    norm["features"] = json::array();
    for (const auto& mm : model.norm.features) norm["features"].push_back(minmax_to_json(mm));
    norm["target"] = minmax_to_json(model.norm.target);
    norm["normalize_targets"] = model.normalize_targets;
    j["normalization"] = norm;
    j["feature_names"] = model.feature_names;
    j["target_name"] = model.target_name;
    return j;
}

Model model_from_json(const json& j)
{
    if (!j.is_object() || !j.contains("version")) throw DataError("not an mbpep model document");
    const auto version = j.at("version").get<std::string>();
    if (version != kModelVersion)
        throw DataError("unsupported model version '" + version + "' (expected " + kModelVersion + ")");
    try {
        Model m;
        m.pool.config = train_config_from_json(j.at("train_config"));
        for (const auto& l : j.at("learners")) m.pool.learners.push_back(learner_from_json(l));
        m.pool.bootstrap_seeds = j.at("bootstrap_seeds").get<std::vector<std::uint64_t>>();
        m.pool.selection_mask = j.at("selection_mask").get<ensemble::Mask>();
        const auto& norm = j.at("normalization");
        for (const auto& f : norm.at("features")) m.norm.features.push_back(minmax_from_json(f));
        m.norm.target = minmax_from_json(norm.at("target"));
        m.normalize_targets = norm.at("normalize_targets").get<bool>();
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.target_name = j.at("target_name").get<std::string>();

        const auto& pool = m.pool;
        if (pool.learners.empty()) throw DataError("model has no learners");
        if (pool.bootstrap_seeds.size() != pool.size() || pool.selection_mask.size() != pool.size())
            throw DataError("model seed/mask lengths do not match the learner count");
        if (pool.selected_count() == 0) throw DataError("model selection mask is empty");
        for (const auto& l : pool.learners)
            if (l.input_dim() != m.input_dim()) throw DataError("learner input size differs from normalization");
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model document: ") + e.what());
    }
}

void save_model(const Model& model, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write model file '" + path + "'");
    out << model_to_json(model).dump(1) << '\n';
    if (!out) throw RuntimeFailure("write to '" + path + "' failed");
}

Model load_model(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("model file '" + path + "' is not valid JSON: " + e.what());
    }
    return model_from_json(j);
}

data::Dataset normalize_for_model(const Model& model, const data::Dataset& raw)
{
    if (raw.dim() != model.input_dim())
        throw DataError("dataset has " + std::to_string(raw.dim()) + " feature columns, model expects " +
                        std::to_string(model.input_dim()));
    data::Normalization norm = model.norm;
    if (!model.normalize_targets) norm.target = {0.0, 1.0};
    return data::apply_normalization(raw, norm);
}

} // namespace mbpep
