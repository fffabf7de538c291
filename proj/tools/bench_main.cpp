// bench: run the experiment matrix, plot it, check its shape.
//
//   bench run   [--workload findmax|aesgcm|all] [--variants ...] [--sizes 4K,1M] ... --out results.csv
//   bench plot  --in results.csv --outdir plots/
//   bench check --in results.csv [--physical-cores N]

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "encdp/bench/matrix.hpp"
#include "encdp/bench/plots.hpp"
#include "encdp/bench/shape_check.hpp"
#include "encdp/bench/units.hpp"
#include "encdp/error.hpp"

namespace {

using namespace encdp;
using namespace encdp::bench;

struct RunArgs {
  std::string workload = "all";
  std::vector<std::string> variants{"all"};
  std::vector<std::string> backends{"all"};
  std::vector<std::string> sizes;
  std::vector<unsigned> threads;
  unsigned reps = 30;
  std::string transition_cost = "10us";
  std::string epc_budget = "96M";
  std::string warmup = "200ms";
  std::string cooldown = "200ms";
  std::string window = "10ms";
  std::string mem_cap;
  std::string out;
};

bool is_all(const std::vector<std::string>& v) { return v.empty() || (v.size() == 1 && v[0] == "all"); }

MatrixConfig build_config(const RunArgs& a) {
  MatrixConfig c = default_matrix();
  if (a.workload != "all") {
    const auto w = parse_workload(a.workload);
    if (!w) raise(Errc::kInvalidArgument, "unknown workload '" + a.workload + "'");
    c.workloads = {*w};
  }
  if (!is_all(a.variants)) {
    for (const auto& name : a.variants) {
      const auto v = parse_variant(name);
      if (!v) raise(Errc::kInvalidArgument, "unknown variant '" + name + "'");
      c.variants.push_back(*v);
    }
  }
  if (!is_all(a.backends)) {
    c.backends.clear();
    for (const auto& name : a.backends) {
      const auto b = parse_backend(name);
      if (!b) raise(Errc::kInvalidArgument, "unknown backend '" + name + "'");
      c.backends.push_back(*b);
    }
  }
  if (!a.sizes.empty()) {
    c.sizes.clear();
    for (const auto& s : a.sizes) c.sizes.push_back(parse_size(s));
  }
  if (!a.threads.empty()) c.threads = a.threads;
  c.harness.reps = a.reps;
  c.harness.gate.transition_cost = parse_duration(a.transition_cost);
  c.harness.epc.budget_bytes = parse_size(a.epc_budget);
  c.harness.warmup = parse_duration(a.warmup);
  c.harness.cooldown = parse_duration(a.cooldown);
  c.harness.window = parse_duration(a.window);
  if (!a.mem_cap.empty()) c.harness.mem_cap = parse_size(a.mem_cap);
  c.validate();
  return c;
}

int run(const RunArgs& a) {
  const MatrixConfig config = build_config(a);
  std::ofstream file(a.out);
  if (!file) raise(Errc::kInvalidArgument, "cannot write " + a.out);
  CsvWriter csv(file);
  const std::size_t total = expand(config).size();
  std::size_t done = 0, failed = 0, not_overlapping = 0;
  const auto started = std::chrono::steady_clock::now();
  run_matrix(config, &csv, [&](const CellReport& r) {
    ++done;
    const BenchRecord& rec = r.record;
    std::fprintf(stderr, "[%zu/%zu] %s/%s/%s %s x%u: ", done, total, std::string(workload_name(rec.workload())).c_str(),
                 std::string(variant_name(rec.variant)).c_str(), std::string(backend_label(rec.backend)).c_str(),
                 size_label(rec.buffer_bytes).c_str(), rec.threads);
    if (!rec.ok()) {
      ++failed;
      std::fprintf(stderr, "ERROR %s\n", rec.error.c_str());
      return;
    }
    if (!r.diagnostics->overlap_ok) ++not_overlapping;
    std::fprintf(stderr, "%.1f MB/s (sd %.1f)%s\n", rec.mean_mbps, rec.stddev_mbps,
                 r.diagnostics->overlap_ok ? "" : " [threads did not overlap]");
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::fprintf(stderr, "%zu cells in %.1f s, %zu failed, %zu without full thread overlap\n", done, secs, failed,
               not_overlapping);
  return 0;
}

int check(const std::string& in, const std::string& workload, unsigned cores, const std::vector<std::string>& only) {
  ShapeCheckOptions opt;
  const auto w = parse_workload(workload);
  if (!w) raise(Errc::kInvalidArgument, "unknown workload '" + workload + "'");
  opt.workload = *w;
  if (*w == Workload::kFindMax) opt.backend.reset();
  opt.physical_cores = cores != 0 ? cores : detect_physical_cores();
  opt.only = only;
  const ShapeReport report = shape_check(read_csv_file(in), opt);
  std::cout << "physical cores: " << opt.physical_cores << '\n' << report.text();
  std::cout << (report.passed() ? "shape check passed\n" : "shape check FAILED\n");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark harness for the enclave data path"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run_cmd = app.add_subcommand("run", "run the benchmark matrix and write a CSV");
  run_cmd->add_option("--workload", ra.workload, "findmax, aesgcm or all")->capture_default_str();
  run_cmd->add_option("--variants", ra.variants, "variant names or all")->delimiter(',')->capture_default_str();
  run_cmd->add_option("--backends", ra.backends, "accelerated, portable or all (AES-GCM only)")
      ->delimiter(',')
      ->capture_default_str();
  run_cmd->add_option("--sizes", ra.sizes, "buffer sizes, e.g. 4K,64K,1M (default 4K..256M)")->delimiter(',');
  run_cmd->add_option("--threads", ra.threads, "thread counts (default 1,2,4,8,16)")->delimiter(',');
  run_cmd->add_option("--reps", ra.reps, "measurement windows per cell")->capture_default_str();
  run_cmd->add_option("--transition-cost", ra.transition_cost, "injected cost per trusted call")
      ->capture_default_str();
  run_cmd->add_option("--epc-budget", ra.epc_budget, "resident enclave memory")->capture_default_str();
  run_cmd->add_option("--warmup", ra.warmup)->capture_default_str();
  run_cmd->add_option("--cooldown", ra.cooldown)->capture_default_str();
  run_cmd->add_option("--window", ra.window, "length of one measurement window")->capture_default_str();
  run_cmd->add_option("--mem-cap", ra.mem_cap,
                      "cells estimated above this fail without running (default: 70% of physical memory)");
  run_cmd->add_option("--out", ra.out, "CSV output path")->required();

  std::string plot_in, plot_out;
  auto* plot_cmd = app.add_subcommand("plot", "render SVG plots from a CSV");
  plot_cmd->add_option("--in", plot_in)->required();
  plot_cmd->add_option("--outdir", plot_out)->required();

  std::string check_in, check_workload = "aesgcm";
  unsigned cores = 0;
  std::vector<std::string> only;
  auto* check_cmd = app.add_subcommand("check", "evaluate the curve-shape assertions; exit 1 on failure");
  check_cmd->add_option("--in", check_in)->required();
  check_cmd->add_option("--workload", check_workload, "findmax or aesgcm")->capture_default_str();
  check_cmd->add_option("--physical-cores", cores, "override the detected core count");
  check_cmd->add_option("--assert", only, "evaluate only these assertions")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run(ra);
    if (*plot_cmd) {
      for (const auto& p : emit_plots(std::filesystem::path(plot_in), plot_out)) std::cout << p.string() << '\n';
      return 0;
    }
    return check(check_in, check_workload, cores, only);
  } catch (const Error& e) {
    std::cerr << "bench: " << e.what() << '\n';
    return e.code() == Errc::kIncompleteMatrix || e.code() == Errc::kParseError ? 1 : 2;
  }
}
