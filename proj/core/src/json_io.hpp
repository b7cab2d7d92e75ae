#pragma once

#include <json.hpp>

#include "dhp/sharegraph.hpp"
#include "dhp/tensor.hpp"

namespace dhp::json_io {

using nlohmann::json;

json to_json(const NetDescription& d);
NetDescription net_from_json(const json& j);

json to_json(const Tensor& t);
Tensor tensor_from_json(const json& j);

}  // namespace dhp::json_io
