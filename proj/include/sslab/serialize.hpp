#pragma once

#include <json.hpp>

#include "sslab/model.hpp"

namespace sslab {

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

}  // namespace sslab
