#include "dhp/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dhp/checkpoint.hpp"
#include "json_io.hpp"

namespace dhp {

std::string to_string(StopCadence c) { return c == StopCadence::kIteration ? "iteration" : "epoch"; }

StopCadence parse_stop_cadence(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "iteration") return StopCadence::kIteration;
  if (t == "epoch") return StopCadence::kEpoch;
  throw std::invalid_argument("unknown stop cadence '" + text + "' (expected iteration or epoch)");
}

void RunConfig::validate() const {
  net.validate();
  task.validate();
  if (!(target > 0.0 && target < 1.0)) throw std::invalid_argument("target must be in (0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("lambda must be non-negative");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (embedding == 0) throw std::invalid_argument("embedding dimension must be positive");
  optim().validate();
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (!baseline && (search_budget == 0 || search_budget > epochs)) {
    throw std::invalid_argument("search budget must be in [1, epochs]");
  }
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (task.channels != net.in_channels || task.height != net.height ||
      task.width != net.width) {
    throw std::invalid_argument("task image shape does not match the network input");
  }
  if (net.is_regression()) {
    if (task.kind != TaskKind::kBlur) {
      throw std::invalid_argument("the upsampler family needs the blur task");
    }
    if (task.upscale != net.upscale || net.outputs != task.channels) {
      throw std::invalid_argument("blur task upscale/channels do not match the upsampler");
    }
  } else {
    if (task.kind != TaskKind::kClusters) {
      throw std::invalid_argument("classification families need the clusters task");
    }
    if (task.classes != net.outputs) {
      throw std::invalid_argument("class count does not match network outputs");
    }
  }
}

OptimConfig RunConfig::optim() const {
  OptimConfig o;
  o.lr = lr;
  o.momentum = momentum;
  o.weight_decay = weight_decay;
  o.sparsity = lambda;
  o.regularizer = regularizer;
  return o;
}

double record_error(const RunRecord& r, bool regression) {
  return regression ? -r.val_metric : 1.0 - r.val_metric;
}

namespace {

using Forward = std::function<Var(const Var&, bool)>;

struct Evaluation {
  double loss = 0.0;
  double metric = 0.0;
};

Var batch_loss(const Var& out, const Dataset& data, std::span<const std::size_t> idx,
               bool validation) {
  if (data.is_regression()) {
    const Tensor& y = validation ? data.val_y : data.train_y;
    return ops::mse(out, Var(gather_rows(y, idx)));
  }
  const auto& labels = validation ? data.val_labels : data.train_labels;
  std::vector<int> batch(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = labels[idx[i]];
  return ops::softmax_cross_entropy(out, batch);
}

Evaluation evaluate(const Forward& forward, const Dataset& data) {
  NoGradGuard guard;
  const std::size_t n = data.val_x.dim(0);
  constexpr std::size_t kChunk = 250;
  double loss = 0.0, hits = 0.0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Var out = forward(Var(gather_rows(data.val_x, idx)), false);
    loss += batch_loss(out, data, idx, true).value()[0] * static_cast<double>(idx.size());
    if (!data.is_regression()) {
      const Tensor& o = out.value();
      const std::size_t k = o.dim(1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
          if (o[i * k + j] > o[i * k + best]) best = j;
        }
        if (static_cast<int>(best) == data.val_labels[idx[i]]) hits += 1.0;
      }
    }
  }
  Evaluation e;
  e.loss = loss / static_cast<double>(n);
  // PSNR proxy with unit peak.
  e.metric = data.is_regression() ? -10.0 * std::log10(e.loss) : hits / static_cast<double>(n);
  return e;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

std::string join_channels(const std::vector<std::size_t>& c) {
  std::string out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(c[i]);
  }
  return out;
}

std::vector<std::size_t> masked_channels(const SharingGraph& graph,
                                         std::span<const PruningMask> masks) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    out.push_back(surviving_channels(graph, masks, i).size());
  }
  return out;
}

class Metrics {
 public:
  explicit Metrics(bool enabled) : enabled_(enabled) { csv_ << kMetricsHeader << '\n'; }

  void row(const std::string& phase, std::size_t epoch, std::size_t iterations, double lr,
           double train_loss, const Evaluation& e, const CompressionAccount& acc,
           const std::vector<std::size_t>& channels) {
    csv_ << phase << ',' << epoch << ',' << iterations << ',' << fmt(lr) << ',' << fmt(train_loss)
         << ',' << fmt(e.loss) << ',' << fmt(e.metric) << ',' << fmt(acc.flops_ratio()) << ','
         << fmt(acc.params_ratio()) << ',' << join_channels(channels) << '\n';
  }

  void flush(const std::filesystem::path& dir) const {
    if (!enabled_) return;
    std::ofstream out(dir / "metrics.csv", std::ios::binary);
    out << csv_.str();
    if (!out) throw std::runtime_error("cannot write metrics.csv in '" + dir.string() + "'");
  }

 private:
  bool enabled_;
  std::ostringstream csv_;
};

void update_latents(HyperModel& model, const OptimConfig& oc) {
  const SharingGraph& graph = model.graph();
  auto& latents = model.latents();
  const bool group_prox = !model.description().share_latents &&
                          oc.regularizer == Regularizer::kL2 && oc.sparsity > 0.0;
  for (const auto& group : graph.mask_groups()) {
    if (group_prox && graph.latents()[group.front()].sparsifiable) {
      std::vector<LatentVector*> members;
      for (LatentId id : group) members.push_back(&latents[id]);
      latent_group_step(members, oc);
      continue;
    }
    for (LatentId id : group) latent_step(latents[id], latents[id].values.grad(), oc);
  }
}

void check_loss(const Var& loss, const std::string& where) {
  if (!std::isfinite(loss.value()[0])) {
    throw NonFiniteError("non-finite loss during " + where +
                         "; try a smaller learning rate or lambda");
  }
}

struct Trainer {
  const RunConfig& config;
  const Dataset& data;
  Rng& order;
  std::ostream* log;

  std::size_t iters_per_epoch() const {
    return (data.train_x.dim(0) + config.batch_size - 1) / config.batch_size;
  }

  // One pass over shuffled training data; `after_step` returning true ends
  // the epoch early. Returns the mean batch loss.
  double epoch(const Forward& forward, const std::function<void(double)>& step,
               const std::function<bool()>& after_step, std::size_t& iterations) {
    const std::size_t n = data.train_x.dim(0);
    const auto perm = order.permutation(n);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      std::span<const std::size_t> idx(perm.data() + start,
                                       std::min(config.batch_size, n - start));
      const Var out = forward(Var(gather_rows(data.train_x, idx)), true);
      const Var loss = batch_loss(out, data, idx, false);
      check_loss(loss, "training");
      loss.backward();
      step(loss.value()[0]);
      total += loss.value()[0];
      ++batches;
      ++iterations;
      if (after_step && after_step()) break;
    }
    return total / static_cast<double>(batches);
  }

  void finetune(ExplicitNetwork& net, std::size_t epochs, const CompressionAccount& acc,
                Metrics& metrics, std::size_t first_epoch, RunRecord& record) {
    Sgd sgd(net.parameters());
    OptimConfig oc = config.optim();
    const Forward forward = [&](const Var& x, bool training) { return net.forward(x, training); };
    std::size_t iterations = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      oc.lr = config.lr;
      if (2 * e >= epochs) oc.lr *= 0.1;
      if (4 * e >= 3 * epochs) oc.lr *= 0.1;
      const double train_loss = epoch(
          forward,
          [&](double) {
            sgd.step(oc);
            sgd.zero_grad();
          },
          {}, iterations);
      const Evaluation ev = evaluate(forward, data);
      metrics.row("finetune", first_epoch + e + 1, iterations, oc.lr, train_loss, ev, acc,
                  net.channels());
      record.train_loss = train_loss;
      record.val_loss = ev.loss;
      record.val_metric = ev.metric;
      if (log) {
        *log << "[" << config.name << "] finetune epoch " << first_epoch + e + 1 << " loss "
             << fmt(train_loss) << " val " << fmt(ev.metric) << '\n';
      }
    }
    if (epochs == 0) {
      const Evaluation ev = evaluate(forward, data);
      record.val_loss = ev.loss;
      record.val_metric = ev.metric;
    }
  }
};

void fill_structure(RunRecord& r, const SharingGraph& graph, std::span<const PruningMask> masks,
                    const CompressionAccount& acc) {
  r.flops_ratio = acc.flops_ratio();
  r.params_ratio = acc.params_ratio();
  r.layer_ids.clear();
  r.surviving.clear();
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    r.layer_ids.push_back(graph.layers()[i].id);
    r.surviving.push_back(surviving_channels(graph, masks, i));
  }
  r.channels = masked_channels(graph, masks);
}

}  // namespace

RunRecord run(const RunConfig& config, const RunOptions& options) {
  config.validate();
  const bool files = options.write_files;
  if (files) {
    if (config.out_dir.empty()) throw std::invalid_argument("output directory is not set");
    std::filesystem::create_directories(config.out_dir);
  }
  const Dataset data = gen_task(config.task);
  Rng order(config.seed ^ 0xD1B54A32D192ED03ULL);
  HyperModel model(config.net, config.seed, config.embedding);
  const SharingGraph& graph = model.graph();
  Metrics metrics(files);
  Trainer trainer{config, data, order, options.log};

  RunRecord record;
  record.name = config.name;
  record.baseline = config.baseline;
  std::vector<PruningMask> masks = full_masks(graph);
  CompressionAccount acc = account(graph, masks);

  if (config.baseline) {
    ExplicitNetwork net = materialize(model, masks);
    record.finetune_epochs = config.epochs;
    trainer.finetune(net, config.epochs, acc, metrics, 0, record);
    fill_structure(record, graph, masks, acc);
    if (files) {
      metrics.flush(config.out_dir);
      save_checkpoint(config.out_dir / "checkpoint_final.json", net, masks, "final");
      std::ofstream(config.out_dir / "record.json") << record_json(record, config) << '\n';
    }
    return record;
  }

  Sgd sgd(model.parameters());
  const OptimConfig oc = config.optim();
  const Forward forward = [&](const Var& x, bool training) { return model.forward(x, training); };
  auto zero_all = [&] {
    sgd.zero_grad();
    for (auto& l : model.latents()) l.values.zero_grad();
  };
  auto refresh = [&] {
    masks = derive_masks(graph, model.latents(), config.tau);
    acc = account(graph, masks);
    return should_stop(acc, config.target);
  };

  bool reached = false;
  std::size_t iterations = 0;
  const std::size_t ipe = trainer.iters_per_epoch();
  for (std::size_t e = 0; e < config.search_budget && !reached; ++e) {
    const double train_loss = trainer.epoch(
        forward,
        [&](double) {
          sgd.step(oc);
          update_latents(model, oc);
          zero_all();
        },
        [&] { return config.stop_check == StopCadence::kIteration && (reached = refresh()); },
        iterations);
    if (config.stop_check == StopCadence::kEpoch) reached = refresh();
    const Evaluation ev = evaluate(forward, data);
    metrics.row("search", e + 1, iterations, oc.lr, train_loss, ev, acc,
                masked_channels(graph, masks));
    if (options.log) {
      *options.log << "[" << config.name << "] search epoch " << e + 1 << " loss "
                   << fmt(train_loss) << " val " << fmt(ev.metric) << " flops "
                   << fmt(acc.flops_ratio()) << '\n';
    }
  }
  record.search_iterations = iterations;
  record.search_epochs = static_cast<double>(iterations) / static_cast<double>(ipe);
  if (!reached) {
    if (files) metrics.flush(config.out_dir);
    throw BudgetExceededError("search did not reach FLOPs ratio " + fmt(config.target) +
                              " +/- " + fmt(kStopTolerance) + " within " +
                              std::to_string(config.search_budget) + " epochs (ratio " +
                              fmt(acc.flops_ratio()) + ")" +
                              (acc.flops_ratio() > config.target
                                   ? "; increase lambda or the budget"
                                   : "; overshot the window, decrease lambda or widen the net"));
  }
  record.reached_target = true;

  ExplicitNetwork net = materialize(model, masks);
  if (files) save_checkpoint(config.out_dir / "checkpoint_search.json", net, masks, "search");
  const auto used = static_cast<std::size_t>(std::ceil(record.search_epochs - 1e-12));
  record.finetune_epochs = config.epochs > used ? config.epochs - used : 0;
  trainer.finetune(net, record.finetune_epochs, acc, metrics, used, record);
  fill_structure(record, graph, masks, acc);
  if (files) {
    metrics.flush(config.out_dir);
    save_checkpoint(config.out_dir / "checkpoint_final.json", net, masks, "final");
    std::ofstream(config.out_dir / "record.json") << record_json(record, config) << '\n';
  }
  return record;
}

std::string record_json(const RunRecord& r, const RunConfig& c) {
  using json_io::json;
  json surviving = json::object();
  for (std::size_t i = 0; i < r.layer_ids.size(); ++i) surviving[r.layer_ids[i]] = r.surviving[i];
  json j = {
      {"name", r.name},
      {"baseline", r.baseline},
      {"reached_target", r.reached_target},
      {"search_iterations", r.search_iterations},
      {"search_epochs", r.search_epochs},
      {"finetune_epochs", r.finetune_epochs},
      {"flops_ratio", r.flops_ratio},
      {"params_ratio", r.params_ratio},
      {"train_loss", r.train_loss},
      {"val_loss", r.val_loss},
      {"val_metric", r.val_metric},
      {"metric", c.net.is_regression() ? "psnr" : "accuracy"},
      {"channels", r.channels},
      {"surviving_channels", surviving},
      {"config",
       {{"net", json_io::to_json(c.net)},
        {"task",
         {{"kind", to_string(c.task.kind)},
          {"seed", c.task.seed},
          {"train", c.task.train},
          {"val", c.task.val},
          {"noise", c.task.noise},
          {"classes", c.task.classes}}},
        {"lambda", c.lambda},
        {"tau", c.tau},
        {"embedding", c.embedding},
        {"lr", c.lr},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"regularizer", to_string(c.regularizer)},
        {"target", c.target},
        {"search_budget", c.search_budget},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"stop_check", to_string(c.stop_check)},
        {"seed", c.seed}}},
  };
  return j.dump(2);
}

std::vector<CompareRow> compare(const std::vector<RunConfig>& configs, const RunOptions& options) {
  if (configs.size() < 2) throw std::invalid_argument("compare needs at least two configs");
  for (const auto& c : configs) c.validate();
  std::vector<CompareRow> rows;
  for (const auto& c : configs) {
    CompareRow row{c.name, c.net.share_latents, c.regularizer, c.lambda, c.net.is_regression(),
                   "ok", {}};
    try {
      row.record = run(c, options);
    } catch (const BudgetExceededError& e) {
      row.status = "budget_exceeded";
      row.record.name = c.name;
      row.record.search_epochs = static_cast<double>(c.search_budget);
      const std::size_t ipe = (c.task.train + c.batch_size - 1) / c.batch_size;
      row.record.search_iterations = c.search_budget * ipe;
      if (options.log) *options.log << "[" << c.name << "] " << e.what() << '\n';
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << kCompareHeader << '\n';
  for (const auto& r : rows) {
    const bool ok = r.status == "ok";
    out << r.name << ',' << (r.share_latents ? "true" : "false") << ','
        << to_string(r.regularizer) << ',' << fmt(r.lambda) << ',' << r.status << ','
        << fmt(r.record.search_epochs) << ',' << r.record.search_iterations << ','
        << (ok ? fmt(r.record.val_metric) : "") << ','
        << (ok ? fmt(record_error(r.record, r.regression)) : "") << ','
        << (ok ? fmt(r.record.flops_ratio) : "") << ',' << (ok ? fmt(r.record.params_ratio) : "")
        << '\n';
  }
  return out.str();
}

std::string inspect(const RunConfig& config) {
  config.net.validate();
  const SharingGraph graph = build_sharing_graph(config.net);
  std::ostringstream out;
  auto binding = [&](const LatentBinding& b) {
    std::string s;
    for (std::size_t i = 0; i < b.segments.size(); ++i) {
      if (i) s += '+';
      s += graph.latents()[b.segments[i].latent].name;
      if (b.segments[i].repeat > 1) s += "x" + std::to_string(b.segments[i].repeat);
    }
    return s;
  };
  out << "network " << to_string(config.net.family)
      << " share_latents=" << (config.net.share_latents ? "true" : "false") << '\n';
  out << "layers " << graph.layers().size() << '\n';
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    const LayerSpec& l = graph.layers()[i];
    const LayerWiring& w = graph.wiring()[i];
    out << "  " << l.id << ' ' << to_string(l.kind) << ' ' << l.in_channels << "->"
        << l.out_channels << " k" << l.kernel_h << 'x' << l.kernel_w << " s" << l.stride
        << " g" << l.groups << " out " << l.out_h << 'x' << l.out_w << "  in[" << binding(w.input)
        << "] out[" << binding(w.output) << "] " << to_string(w.kind) << '\n';
  }
  out << "latents " << graph.latents().size() << '\n';
  for (std::size_t i = 0; i < graph.latents().size(); ++i) {
    const LatentInfo& l = graph.latents()[i];
    out << "  " << i << ' ' << l.name << " dim " << l.dim
        << (l.sparsifiable ? "" : " frozen") << " group " << graph.group_of(i) << '\n';
  }
  const auto masks = full_masks(graph);
  const CompressionAccount acc = account(graph, masks);
  out << "params " << acc.params_full << '\n' << "flops " << acc.flops_full << '\n';
  return out.str();
}

}  // namespace dhp
