// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dhp/pipeline.hpp"
#include "dhp_tools/config.hpp"
#include "dhp_tools/verify.hpp"

namespace {

namespace fs = std::filesystem;
using dhp::RunConfig;
using dhp::RunRecord;

const fs::path kOut = fs::current_path() / "acceptance_out";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

RunConfig config(const std::string& file, const std::string& subdir) {
  dhp::tools::Overrides o;
  o.out = kOut / subdir;
  return dhp::tools::finalize(dhp::tools::load_config(fs::path(DHP_CONFIG_DIR) / file), o);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome suite(dhp::tools::SuiteReport r, double limit) {
  Outcome o;
  o.pass = r.passed() && r.seconds < limit;
  o.detail = std::to_string(r.checks) + " checks in " + fmt("%.3f s (limit %.0f s)", r.seconds, limit);
  for (const auto& f : r.failures) o.detail += "; " + f;
  return o;
}

// Residual-style families: every layer writing into a stage's shared
// channels (stem, block outputs, shortcut) must keep the same index set.
Outcome stage_consistency(const RunConfig& c, const RunRecord& r) {
  const auto g = dhp::build_sharing_graph(c.net);
  std::map<int, std::vector<std::size_t>> stage_set;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < g.layers().size(); ++i) {
    const auto& l = g.layers()[i];
    const auto kind = g.wiring()[i].kind;
    const bool writes_stage = kind == dhp::WiringKind::kResidualShared ||
                              kind == dhp::WiringKind::kResidualShortcut || l.id == "stem";
    if (!writes_stage || l.tags.stage < 0) continue;
    if (r.layer_ids.at(i) != l.id) return {false, "record layer order differs from graph"};
    auto [it, fresh] = stage_set.emplace(l.tags.stage, r.surviving.at(i));
    if (!fresh && it->second != r.surviving.at(i)) {
      return {false, c.name + ": " + l.id + " disagrees with stage " +
                         std::to_string(l.tags.stage)};
    }
    ++compared;
  }
  return {compared > stage_set.size(),
          c.name + ": " + std::to_string(compared) + " layers over " +
              std::to_string(stage_set.size()) + " stages"};
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

}  // namespace

int main() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  fs::remove_all(kOut);
  fs::create_directories(kOut);
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& body) {
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": "
              << o.detail << std::endl;
  };

  report(1, "prox oracle", [] { return suite(dhp::tools::verify_prox(100), 5.0); });
  report(2, "gradient checks", [] { return suite(dhp::tools::verify_gradcheck(20), 60.0); });
  report(3, "pruning equivalence",
         [] { return suite(dhp::tools::verify_equivalence(20), 10.0); });

  const RunConfig resnet = config("resnet.yaml", "resnet50");
  RunRecord pruned;
  report(4, "stopping protocol", [&] {
    const double t0 = cpu_seconds();
    pruned = dhp::run(resnet);
    const double cpu = cpu_seconds() - t0;
    const double share = pruned.search_epochs / static_cast<double>(resnet.epochs);
    const double gap = std::abs(pruned.flops_ratio - resnet.target);
    Outcome o;
    o.pass = pruned.reached_target && gap < dhp::kStopTolerance && share <= 0.20 && cpu < 600;
    o.detail = fmt("flops ratio %.4f (|gap| %.4f), search %.3f epochs", pruned.flops_ratio, gap,
                   pruned.search_epochs) +
               fmt(" = %.1f%% of budget, %.0f s CPU", 100 * share, cpu);
    return o;
  });

  report(5, "compression sanity", [&] {
    RunConfig base = resnet;
    base.baseline = true;
    base.out_dir = kOut / "resnet50-baseline";
    const RunRecord b = dhp::run(base);
    const double gap = std::abs(b.val_metric - pruned.val_metric);
    return Outcome{pruned.reached_target && gap <= 0.03,
                   fmt("pruned %.4f vs baseline %.4f (gap %.2f pp)", pruned.val_metric,
                       b.val_metric, 100 * gap)};
  });

  report(6, "sharing consistency", [&] {
    Outcome total{true, ""};
    auto add = [&](const Outcome& o) {
      total.pass = total.pass && o.pass;
      total.detail += (total.detail.empty() ? "" : "; ") + o.detail;
    };
    add(stage_consistency(resnet, pruned));
    for (const char* file : {"resnet_noshare.yaml", "mobilenet.yaml"}) {
      const RunConfig c = config(file, std::string("sharing_") + file);
      add(stage_consistency(c, dhp::run(c)));
    }
    const auto oracles = dhp::tools::verify_sharing();
    add({oracles.passed(), "dense/upsampler oracles " + std::to_string(oracles.checks) +
                               " checks" + (oracles.passed() ? "" : " failed")});
    return total;
  });

  report(7, "ablation direction", [&] {
    std::vector<RunConfig> configs;
    for (const char* file : {"resnet.yaml", "resnet_noshare.yaml", "resnet_l2.yaml"}) {
      RunConfig c = config(file, "compare");
      c.out_dir = kOut / "compare" / c.name;
      configs.push_back(c);
    }
    const auto rows = dhp::compare(configs);
    const std::string table = dhp::compare_csv(rows);
    std::ofstream(kOut / "compare" / "compare.csv") << table;
    std::cout << table;
    const auto& l1 = rows.at(0);
    const auto& l2 = rows.at(2);
    Outcome o;
    o.pass = rows.size() == 3 && l1.status == "ok" && l1.lambda == l2.lambda &&
             l2.record.search_epochs > l1.record.search_epochs;
    o.detail = fmt("l2 search %.3f epochs vs l1 %.3f epochs at lambda %g", l2.record.search_epochs,
                   l1.record.search_epochs, l1.lambda) +
               " (l2 status " + l2.status + ")";
    return o;
  });

  report(8, "determinism", [] {
    const RunConfig a = config("plain.yaml", "det_a");
    const RunConfig b = config("plain.yaml", "det_b");
    dhp::run(a);
    dhp::run(b);
    const std::string ma = slurp(a.out_dir / "metrics.csv");
    const std::string mb = slurp(b.out_dir / "metrics.csv");
    return Outcome{!ma.empty() && ma == mb,
                   std::to_string(ma.size()) + " bytes of metrics.csv, " +
                       (ma == mb ? "identical" : "different")};
  });

  std::cout << (failed == 0 ? "ALL CRITERIA PASS" : std::to_string(failed) + " CRITERIA FAIL")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
