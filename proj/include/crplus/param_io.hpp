#pragma once

#include <filesystem>

#include <json.hpp>

#include "crplus/estimation.hpp"
#include "crplus/trends.hpp"

namespace crplus {

nlohmann::json to_json(const TrendParams& p);
TrendParams trend_params_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ParamVector& p);
ParamVector param_vector_from_json(const nlohmann::json& j);

void write_params(const std::filesystem::path& path, const ParamVector& p);
ParamVector read_params(const std::filesystem::path& path);

} // namespace crplus
