#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhp/backbones.hpp"
#include "dhp/proxopt.hpp"
#include "dhp/pruner.hpp"

namespace dhp {

/// Search did not reach the target ratio within its epoch budget.
class BudgetExceededError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StopCadence { kIteration, kEpoch };

std::string to_string(StopCadence c);
StopCadence parse_stop_cadence(const std::string& text);

struct RunConfig {
  std::string name = "run";
  NetDescription net;
  SyntheticTask task;
  double lambda = 0.0;        // sparsity regularization factor
  double tau = 5e-3;          // mask threshold
  std::size_t embedding = 8;  // hypernetwork embedding dimension m
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  Regularizer regularizer = Regularizer::kL1;
  double target = 0.5;  // target FLOPs ratio
  std::size_t search_budget = 10;  // search epochs before giving up
  std::size_t epochs = 30;         // total budget: search + fine-tune
  std::size_t batch_size = 32;
  StopCadence stop_check = StopCadence::kIteration;
  bool baseline = false;  // train the unpruned network for the full budget
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;

  /// Throws std::invalid_argument on any inconsistent field.
  void validate() const;
  OptimConfig optim() const;
};

struct RunRecord {
  std::string name;
  bool baseline = false;
  bool reached_target = false;
  std::size_t search_iterations = 0;
  double search_epochs = 0.0;  // fractional: iterations / iterations per epoch
  std::size_t finetune_epochs = 0;
  double flops_ratio = 1.0;
  double params_ratio = 1.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // accuracy in [0,1], or PSNR in dB for regression
  std::vector<std::string> layer_ids;
  std::vector<std::vector<std::size_t>> surviving;  // kept output channels per layer
  std::vector<std::size_t> channels;
};

/// Optional sinks for a run. Nothing is written to disk if `write_files` is
/// false.
struct RunOptions {
  std::ostream* log = nullptr;
  bool write_files = true;
};

inline constexpr const char* kMetricsHeader =
    "phase,epoch,iterations,lr,train_loss,val_loss,val_metric,flops_ratio,params_ratio,channels";

/// Initialize, search with proximal latent updates, derive masks, materialize,
/// fine-tune. Writes metrics.csv, record.json, checkpoint_search.json and
/// checkpoint_final.json into config.out_dir.
/// Throws BudgetExceededError, NonFiniteError, std::invalid_argument.
RunRecord run(const RunConfig& config, const RunOptions& options = {});

/// Classification error (1 - accuracy) or negative PSNR; lower is better.
double record_error(const RunRecord& r, bool regression);

struct CompareRow {
  std::string name;
  bool share_latents = true;
  Regularizer regularizer = Regularizer::kL1;
  double lambda = 0.0;
  bool regression = false;
  std::string status;  // ok | budget_exceeded
  RunRecord record;
};

inline constexpr const char* kCompareHeader =
    "name,share_latents,regularizer,lambda,status,search_epochs,search_iterations,val_metric,"
    "error,flops_ratio,params_ratio";

/// Runs every config sequentially in the given order; a run that exhausts its
/// search budget becomes a row with status budget_exceeded.
std::vector<CompareRow> compare(const std::vector<RunConfig>& configs,
                                const RunOptions& options = {});
std::string compare_csv(const std::vector<CompareRow>& rows);

/// Human-readable graph, wiring, mask groups and unpruned account.
std::string inspect(const RunConfig& config);

std::string record_json(const RunRecord& record, const RunConfig& config);

}  // namespace dhp
