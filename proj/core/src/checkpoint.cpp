#include "dhp/checkpoint.hpp"

#include <fstream>
#include <map>
#include <optional>

#include "json_io.hpp"

namespace dhp {

namespace json_io {

json to_json(const NetDescription& d) {
  return {{"family", to_string(d.family)},
          {"in_channels", d.in_channels},
          {"height", d.height},
          {"width", d.width},
          {"widths", d.widths},
          {"blocks", d.blocks},
          {"kernel", d.kernel},
          {"expansion", d.expansion},
          {"growth", d.growth},
          {"upscale", d.upscale},
          {"outputs", d.outputs},
          {"share_latents", d.share_latents}};
}

NetDescription net_from_json(const json& j) {
  NetDescription d;
  d.family = parse_family(j.at("family").get<std::string>());
  d.in_channels = j.at("in_channels").get<std::size_t>();
  d.height = j.at("height").get<std::size_t>();
  d.width = j.at("width").get<std::size_t>();
  d.widths = j.at("widths").get<std::vector<std::size_t>>();
  d.blocks = j.at("blocks").get<std::size_t>();
  d.kernel = j.at("kernel").get<std::size_t>();
  d.expansion = j.at("expansion").get<std::size_t>();
  d.growth = j.at("growth").get<std::size_t>();
  d.upscale = j.at("upscale").get<std::size_t>();
  d.outputs = j.at("outputs").get<std::size_t>();
  d.share_latents = j.at("share_latents").get<bool>();
  return d;
}

json to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace json_io

void save_checkpoint(const std::filesystem::path& path, const ExplicitNetwork& network,
                     std::span<const PruningMask> masks, const std::string& phase) {
  using json_io::json;
  const SharingGraph& graph = network.graph();
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["phase"] = phase;
  j["net"] = json_io::to_json(network.description());
  json mask_list = json::array();
  for (const auto& m : masks) {
    mask_list.push_back({{"latent", graph.latents().at(m.latent).name}, {"bits", m.bits}});
  }
  j["masks"] = mask_list;
  json layers = json::array();
  json tensors = json::array();
  for (std::size_t i = 0; i < network.layers().size(); ++i) {
    const auto& l = network.layers()[i];
    const std::string& id = graph.layers()[i].id;
    layers.push_back({{"id", id}, {"groups", l.groups}});
    auto put = [&](const std::string& name, const Tensor& t) {
      json e = json_io::to_json(t);
      e["name"] = id + "." + name;
      tensors.push_back(std::move(e));
    };
    put("weight", l.weight.value());
    if (l.extras.bias.defined()) put("bias", l.extras.bias.value());
    if (l.extras.gamma.defined()) put("gamma", l.extras.gamma.value());
    if (l.extras.beta.defined()) put("beta", l.extras.beta.value());
    if (!l.extras.buffers.mean.empty()) {
      put("running_mean", l.extras.buffers.mean);
      put("running_var", l.extras.buffers.var);
    }
  }
  j["layers"] = layers;
  j["tensors"] = tensors;
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out << j.dump(1) << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using json_io::json;
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw CheckpointError("'" + path.string() + "' is not a dhp checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const NetDescription desc = json_io::net_from_json(j.at("net"));
    const SharingGraph graph = build_sharing_graph(desc);

    std::map<std::string, Tensor> tensors;
    for (const auto& e : j.at("tensors")) {
      tensors.emplace(e.at("name").get<std::string>(), json_io::tensor_from_json(e));
    }
    auto take = [&](const std::string& name, bool required) -> std::optional<Tensor> {
      auto it = tensors.find(name);
      if (it == tensors.end()) {
        if (required) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        return std::nullopt;
      }
      return it->second;
    };

    const auto& layer_list = j.at("layers");
    if (layer_list.size() != graph.layers().size()) {
      throw CheckpointError("checkpoint layer count does not match its network description");
    }
    std::vector<ExplicitNetwork::Layer> layers;
    for (std::size_t i = 0; i < layer_list.size(); ++i) {
      const std::string id = layer_list[i].at("id").get<std::string>();
      if (id != graph.layers()[i].id) throw CheckpointError("unexpected layer '" + id + "'");
      ExplicitNetwork::Layer l;
      l.groups = layer_list[i].at("groups").get<std::size_t>();
      l.weight = Var(*take(id + ".weight", true), true);
      if (auto t = take(id + ".bias", false)) l.extras.bias = Var(*t, true);
      if (auto t = take(id + ".gamma", false)) l.extras.gamma = Var(*t, true);
      if (auto t = take(id + ".beta", false)) l.extras.beta = Var(*t, true);
      if (auto t = take(id + ".running_mean", false)) {
        l.extras.buffers.mean = *t;
        l.extras.buffers.var = *take(id + ".running_var", true);
      }
      layers.push_back(std::move(l));
    }

    Checkpoint cp{j.at("phase").get<std::string>(), ExplicitNetwork(desc, std::move(layers)), {},
                  {}};
    const auto& mask_list = j.at("masks");
    for (std::size_t i = 0; i < mask_list.size(); ++i) {
      const std::string name = mask_list[i].at("latent").get<std::string>();
      cp.masks.push_back({graph.latent_index(name),
                          mask_list[i].at("bits").get<std::vector<std::uint8_t>>()});
      cp.latent_names.push_back(name);
    }
    return cp;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint '" + path.string() + "': " + e.what());
  } catch (const std::out_of_range& e) {
    throw CheckpointError("malformed checkpoint '" + path.string() + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("malformed checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace dhp
