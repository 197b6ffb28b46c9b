#include "sslab/serialize.hpp"

namespace sslab {

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
    return nlohmann::json{
        {"widths", spec.widths},
        {"leaky_slope", spec.leaky_slope},
        {"input_noise_sigma", spec.input_noise_sigma},
        {"dropout_rate", spec.dropout_rate},
        {"weight_mode", spec.variational() ? "variational" : "deterministic"},
    };
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.widths = j.at("widths").get<std::vector<std::size_t>>();
    spec.leaky_slope = j.value("leaky_slope", 0.1);
    spec.input_noise_sigma = j.value("input_noise_sigma", 0.0);
    spec.dropout_rate = j.value("dropout_rate", 0.0);
    std::string mode = j.value("weight_mode", "deterministic");
    if (mode == "variational")
        spec.weight_mode = WeightMode::Variational;
    else if (mode == "deterministic")
        spec.weight_mode = WeightMode::Deterministic;
    else
        throw UsageError("model: unknown weight_mode '" + mode + "'");
    spec.validate();
    return spec;
}

}  // namespace sslab
