#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <fstream>
#include <iostream>

#include "dhp/checkpoint.hpp"
#include "dhp/pipeline.hpp"
#include "dhp_tools/config.hpp"
#include "dhp_tools/verify.hpp"

namespace {

enum Exit { kOk = 0, kInvalidConfig = 1, kFailure = 2, kBudget = 3 };

void add_overrides(CLI::App* cmd, dhp::tools::Overrides& o) {
  cmd->add_option("--target", o.target, "Target FLOPs ratio in (0,1)");
  cmd->add_option("--lambda", o.lambda, "Sparsity regularization factor");
  cmd->add_option("--tau", o.tau, "Mask threshold");
  cmd->add_option("--seed", o.seed, "Model and data-order seed");
  cmd->add_option("--out", o.out, "Output directory (default $DHP_OUT_DIR/<name>)");
  cmd->add_flag("--baseline", o.baseline, "Train the unpruned network for the full budget");
}

int print_suite(const dhp::tools::SuiteReport& r) {
  std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << " (" << r.checks << " checks, "
            << r.seconds << " s)\n";
  for (const auto& f : r.failures) std::cout << "  " << f << '\n';
  return r.passed() ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Large temporaries (im2col buffers) otherwise go through mmap/munmap on
  // every allocation.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Differentiable meta pruning via hypernetworks on desk-scale backbones"};
  app.require_subcommand(1);

  dhp::tools::Overrides run_overrides;
  std::string run_config;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Search, prune and fine-tune one configuration");
  run->add_option("config", run_config, "YAML config file")->required();
  run->add_flag("-q,--quiet", quiet, "No per-epoch progress on stderr");
  add_overrides(run, run_overrides);

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "Run an oracle suite");
  verify->add_option("suite", suite, "prox | gradcheck | equivalence | sharing | accounting | all");

  std::vector<std::string> compare_configs;
  dhp::tools::Overrides compare_overrides;
  auto* compare = app.add_subcommand("compare", "Run several configs and tabulate final metrics");
  compare->add_option("configs", compare_configs, "Two or more YAML config files")
      ->required()
      ->expected(2, -1);
  compare->add_option("--out", compare_overrides.out, "Output root for the compared runs");
  compare->add_option("--seed", compare_overrides.seed, "Seed applied to every config");
  compare->add_flag("-q,--quiet", quiet, "No per-epoch progress on stderr");

  std::string inspect_config;
  std::string checkpoint;
  auto* inspect = app.add_subcommand("inspect", "Print the sharing graph and FLOPs account");
  inspect->add_option("config", inspect_config, "YAML config file");
  inspect->add_option("--checkpoint", checkpoint, "Summarize a checkpoint instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalidConfig;
  }

  try {
    if (*run) {
      const auto config =
          dhp::tools::finalize(dhp::tools::load_config(run_config), run_overrides);
      dhp::RunOptions options;
      options.log = quiet ? nullptr : &std::cerr;
      const auto record = dhp::run(config, options);
      std::cout << dhp::record_json(record, config) << '\n';
      return kOk;
    }
    if (*verify) {
      int code = kOk;
      if (suite == "all") {
        for (const auto& name : dhp::tools::suite_names()) {
          code = std::max(code, print_suite(dhp::tools::run_suite(name)));
        }
        return code;
      }
      return print_suite(dhp::tools::run_suite(suite));
    }
    if (*compare) {
      const auto root = compare_overrides.out.value_or(dhp::tools::default_out_root() / "compare");
      std::vector<dhp::RunConfig> configs;
      for (const auto& path : compare_configs) {
        dhp::tools::Overrides o = compare_overrides;
        dhp::RunConfig raw = dhp::tools::load_config(path);
        o.out = root / raw.name;
        configs.push_back(dhp::tools::finalize(std::move(raw), o));
      }
      dhp::RunOptions options;
      options.log = quiet ? nullptr : &std::cerr;
      const auto rows = dhp::compare(configs, options);
      const std::string table = dhp::compare_csv(rows);
      std::filesystem::create_directories(root);
      std::ofstream(root / "compare.csv") << table;
      std::cout << table;
      return kOk;
    }
    if (*inspect) {
      if (!checkpoint.empty()) {
        const auto cp = dhp::load_checkpoint(checkpoint);
        std::cout << "checkpoint phase " << cp.phase << " version " << dhp::kCheckpointVersion
                  << '\n';
        const auto& g = cp.network.graph();
        for (std::size_t i = 0; i < g.layers().size(); ++i) {
          const auto& w = cp.network.layers()[i].weight;
          std::cout << "  " << g.layers()[i].id << ' ' << dhp::to_string(w.shape()) << " groups "
                    << cp.network.layers()[i].groups << '\n';
        }
        const auto acc = dhp::account(g, cp.masks);
        std::cout << "flops_ratio " << acc.flops_ratio() << "\nparams_ratio "
                  << acc.params_ratio() << '\n';
        return kOk;
      }
      if (inspect_config.empty()) {
        std::cerr << "inspect: give a config file or --checkpoint\n";
        return kInvalidConfig;
      }
      const auto config = dhp::tools::load_config(inspect_config);
      std::cout << dhp::inspect(config);
      return kOk;
    }
  } catch (const dhp::BudgetExceededError& e) {
    std::cerr << "budget exceeded: " << e.what() << '\n';
    return kBudget;
  } catch (const dhp::tools::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const dhp::CheckpointError& e) {
    std::cerr << "checkpoint: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const dhp::NonFiniteError& e) {
    std::cerr << "assertion failed: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
