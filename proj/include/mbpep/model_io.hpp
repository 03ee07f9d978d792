#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "mbpep/data.hpp"
#include "mbpep/ensemble.hpp"

namespace mbpep {

inline constexpr const char* kModelVersion = "mbpep-model/1";

// Everything needed to reproduce predictions on raw-unit data.
struct Model {
    ensemble::EnsemblePool pool;
    data::Normalization norm;
    bool normalize_targets = true;
    std::vector<std::string> feature_names;
    std::string target_name = "y";

    int input_dim() const { return static_cast<int>(norm.features.size()); }
};

nlohmann::json train_config_to_json(const ensemble::TrainConfig& cfg);
ensemble::TrainConfig train_config_from_json(const nlohmann::json& j);

// Weights are stored as row-major (fan_in x fan_out) arrays of doubles.
// Doubles are printed in shortest round-trip form, so save/load is bit-exact.
nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

void save_model(const Model& model, const std::string& path);
// Throws DataError on unreadable files, malformed content or a version mismatch.
Model load_model(const std::string& path);

// Maps raw-unit data into the model's normalized space.
data::Dataset normalize_for_model(const Model& model, const data::Dataset& raw);

} // namespace mbpep
