#include "dhp_tools/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace dhp::tools {

namespace {

void check_keys(const YAML::Node& node, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError("section '" + section + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
    }
  }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(std::string("invalid value for '") + key + "'");
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!root || root.IsNull()) throw ConfigError("config is empty");
  check_keys(root, "<root>", {"name", "seed", "output", "net", "task", "prune", "train"});

  RunConfig c;
  read(root, "name", c.name);
  read(root, "seed", c.seed);
  std::string output;
  read(root, "output", output);
  if (!output.empty()) c.out_dir = output;

  if (const auto net = root["net"]) {
    check_keys(net, "net",
               {"family", "in_channels", "height", "width", "widths", "blocks", "kernel",
                "expansion", "growth", "upscale", "outputs", "share_latents"});
    std::string family;
    read(net, "family", family);
    if (!family.empty()) {
      try {
        c.net.family = parse_family(family);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    if (c.net.family == Family::kUpsampler) {
      c.net.in_channels = 1;
      c.net.outputs = 1;
    }
    read(net, "in_channels", c.net.in_channels);
    read(net, "height", c.net.height);
    read(net, "width", c.net.width);
    read(net, "widths", c.net.widths);
    read(net, "blocks", c.net.blocks);
    read(net, "kernel", c.net.kernel);
    read(net, "expansion", c.net.expansion);
    read(net, "growth", c.net.growth);
    read(net, "upscale", c.net.upscale);
    read(net, "outputs", c.net.outputs);
    read(net, "share_latents", c.net.share_latents);
  }

  c.task.kind = c.net.is_regression() ? TaskKind::kBlur : TaskKind::kClusters;
  if (c.net.is_regression()) c.task.noise = 0.1;
  if (const auto task = root["task"]) {
    check_keys(task, "task", {"kind", "seed", "train", "val", "noise"});
    std::string kind;
    read(task, "kind", kind);
    if (!kind.empty()) {
      try {
        c.task.kind = parse_task_kind(kind);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    read(task, "seed", c.task.seed);
    read(task, "train", c.task.train);
    read(task, "val", c.task.val);
    read(task, "noise", c.task.noise);
  }
  c.task.channels = c.net.in_channels;
  c.task.height = c.net.height;
  c.task.width = c.net.width;
  c.task.classes = c.net.outputs;
  c.task.upscale = c.net.is_regression() ? c.net.upscale : 1;

  if (const auto prune = root["prune"]) {
    check_keys(prune, "prune",
               {"lambda", "tau", "target", "regularizer", "search_budget", "stop_check"});
    read(prune, "lambda", c.lambda);
    read(prune, "tau", c.tau);
    read(prune, "target", c.target);
    read(prune, "search_budget", c.search_budget);
    std::string reg, cadence;
    read(prune, "regularizer", reg);
    read(prune, "stop_check", cadence);
    try {
      if (!reg.empty()) c.regularizer = parse_regularizer(reg);
      if (!cadence.empty()) c.stop_check = parse_stop_cadence(cadence);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  if (const auto train = root["train"]) {
    check_keys(train, "train",
               {"epochs", "batch_size", "lr", "momentum", "weight_decay", "embedding",
                "baseline"});
    read(train, "epochs", c.epochs);
    read(train, "batch_size", c.batch_size);
    read(train, "lr", c.lr);
    read(train, "momentum", c.momentum);
    read(train, "weight_decay", c.weight_decay);
    read(train, "embedding", c.embedding);
    read(train, "baseline", c.baseline);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::filesystem::path default_out_root() {
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "dhp-out";
}

RunConfig finalize(RunConfig c, const Overrides& o) {
  if (o.target) c.target = *o.target;
  if (o.lambda) c.lambda = *o.lambda;
  if (o.tau) c.tau = *o.tau;
  if (o.seed) c.seed = *o.seed;
  if (o.baseline) c.baseline = true;
  if (o.out) {
    c.out_dir = *o.out;
  } else if (c.out_dir.empty()) {
    c.out_dir = default_out_root() / c.name;
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace dhp::tools
