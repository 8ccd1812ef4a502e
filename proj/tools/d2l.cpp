// d2l: pretrain-gen | train-oracle | run | cost | report
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "d2l/costmodel/costmodel.hpp"
#include "d2l/harness/report.hpp"
#include "d2l/nncore/checkpoint.hpp"

using namespace d2l;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kCheckpoint = 3, kNumeric = 4 };

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.validate();
    return c;
  }
  return load_config(path);
}

int cmd_pretrain(const std::string& config, std::string out) {
  const RunConfig cfg = config_or_default(config);
  if (out.empty()) out = cfg.assets.generator.string();
  const TaskStream bench = make_benchmark(cfg.benchmark);
  const TaskStream bank = generator_bank(bench, cfg.assets);
  PretrainReport rep;
  const FrozenGenerator g = pretrain_generator(bank, cfg.assets.pretrain, &rep);
  if (std::filesystem::path(out).has_parent_path()) std::filesystem::create_directories(std::filesystem::path(out).parent_path());
  save_generator(g, cfg.assets.pretrain, rep, out);
  std::printf("generator: %zu bank classes, holdout mse %.4f (mean-image %.4f), lambda %.3f -> %s\n",
              bank.num_classes(), rep.holdout_mse, rep.mean_image_mse, rep.quality_lambda, out.c_str());
  return kOk;
}

int cmd_train_oracle(const std::string& config, std::string gen_path, std::string out, const std::string& windows,
                     const std::string& bank_name) {
  const RunConfig cfg = config_or_default(config);
  if (gen_path.empty()) gen_path = cfg.assets.generator.string();
  if (out.empty()) out = cfg.assets.oracle.string();
  if (!std::filesystem::exists(gen_path)) throw MissingCheckpoint("generator checkpoint not found: " + gen_path);
  if (bank_name != "A" && bank_name != "B") throw ConfigError("--bank must be A or B");
  const FrozenGenerator g = load_generator(gen_path);
  const TaskStream bench = make_benchmark(cfg.benchmark);
  const OracleBanks banks = make_oracle_banks(bench, cfg);
  const auto trajectories = collect_bank(bank_name == "A" ? banks.a : banks.b, g, cfg);
  const OracleBuild b = build_oracle(trajectories, cfg);
  if (!windows.empty()) {
    std::ofstream f(windows);
    write_windows_csv(f, b.dataset);
  }
  save_oracle(b.oracle, &b, out);
  std::printf("oracle (bank %s): %zu trajectories, %zu discarded, %zu/%zu windows, val acc %.3f, epochs %zu -> %s\n",
              bank_name.c_str(), b.trajectories, b.dataset.discarded, b.dataset.train.size(),
              b.dataset.validation.size(), b.report.val_accuracy, b.report.epochs_run, out.c_str());
  return kOk;
}

int cmd_run(const std::string& config, std::size_t nseeds, std::size_t jobs, bool sweep) {
  RunConfig cfg = config_or_default(config);
  if (nseeds > 0) {
    cfg.seeds.clear();
    for (std::size_t s = 0; s < nseeds; ++s) cfg.seeds.push_back(s);
  }
  const std::vector<RunConfig> runs = sweep ? desk_sweep(cfg) : std::vector<RunConfig>{cfg};
  const TaskStream stream = make_benchmark(cfg.benchmark);
  bool any_dreams = false;
  for (const auto& r : runs) any_dreams = any_dreams || needs_generator(r);
  std::optional<Network> joint;
  if (any_dreams) joint = make_joint_classifier(stream, cfg);

  std::vector<ResultRow> rows;
  for (const auto& rc : runs) {
    const Assets assets = load_assets(rc);
    const auto records = run_seeds(rc, stream, assets, joint ? &*joint : nullptr, jobs, true);
    for (const auto& r : records) {
      ResultRow row = r.result_row();
      row.buffer = rc.method.buffer_capacity;
      rows.push_back(row);
      std::printf("%-14s buffer %-4zu seed %-3llu FAA %.4f FWT %+.4f leaks %zu (%.1fs)\n", r.label.c_str(),
                  rc.method.buffer_capacity, static_cast<unsigned long long>(r.seed), r.faa, r.fwt, row.leaks,
                  r.wall_seconds);
    }
  }
  write_aggregate(cfg.output_dir, rows);
  write_aggregate_text(std::cout, aggregate(rows));
  return kOk;
}

int cmd_cost(const std::string& preset, const std::vector<std::string>& overrides, const std::string& csv) {
  if (preset != "reference") throw ConfigError("unknown preset '" + preset + "' (available: reference)");
  CostInputs in = reference_preset();
  try {
    for (const auto& o : overrides) apply_override(in, o);
    in.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  }
  std::vector<CostReport> reports;
  for (auto m : all_cost_methods()) reports.push_back(method_total(m, in));
  write_cost_text(std::cout, reports);
  if (csv.empty() || csv == "-") {
    std::cout << '\n';
    write_cost_csv(std::cout, reports);
  } else {
    std::ofstream f(csv);
    write_cost_csv(f, reports);
  }
  return kOk;
}

int cmd_report(const std::string& input, const std::string& out, const std::string& svg) {
  const auto rows = collect_results(input);
  if (rows.empty()) throw ConfigError("no seed results under " + input);
  const auto agg = aggregate(rows);
  write_aggregate_text(std::cout, agg);
  if (!out.empty()) {
    std::ofstream f(out);
    write_aggregate_csv(f, agg);
  }
  if (!svg.empty()) write_accuracy_svg(svg, collect_final_accuracy(input), "final accuracy per task");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dream-class continual learning desk toolkit"};
  app.require_subcommand(1);

  std::string config, out, gen, windows, bank = "A", preset = "reference", csv, input, svg;
  std::size_t seeds = 0, jobs = 1;
  bool sweep = false;
  std::vector<std::string> overrides;

  auto* pre = app.add_subcommand("pretrain-gen", "pretrain the frozen generator on cells unused by the benchmark");
  pre->add_option("--config", config, "run config (JSON)");
  pre->add_option("--out", out, "generator checkpoint path");

  auto* tor = app.add_subcommand("train-oracle", "collect trajectories on an oracle bank, label them, train the oracle");
  tor->add_option("--config", config, "run config (JSON)");
  tor->add_option("--generator", gen, "generator checkpoint");
  tor->add_option("--out", out, "oracle checkpoint path");
  tor->add_option("--windows", windows, "write the labeled-window CSV here");
  tor->add_option("--bank", bank, "oracle bank, A or B")->check(CLI::IsMember({"A", "B"}));

  auto* run = app.add_subcommand("run", "run the continual pipeline for each seed");
  run->add_option("--config", config, "run config (JSON)");
  run->add_option("--seeds", seeds, "use seeds 0..N-1 instead of the config list");
  run->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--sweep", sweep, "{er, er-ace} x {with, without dreams} x buffer {200, 500}");

  auto* cost = app.add_subcommand("cost", "per-task compute accounting");
  cost->add_option("--preset", preset, "input preset");
  cost->add_option("--override", overrides, "key=value, repeatable");
  cost->add_option("--csv", csv, "CSV output path ('-' for stdout)");

  auto* rep = app.add_subcommand("report", "aggregate seed results into mean ± std tables");
  rep->add_option("--input", input, "run output directory")->required();
  rep->add_option("--out", out, "aggregate CSV path");
  rep->add_option("--svg", svg, "per-task accuracy plot");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) return cmd_pretrain(config, out);
    if (tor->parsed()) return cmd_train_oracle(config, gen, out, windows, bank);
    if (run->parsed()) return cmd_run(config, seeds, jobs, sweep);
    if (cost->parsed()) return cmd_cost(preset, overrides, csv);
    if (rep->parsed()) return cmd_report(input, out, svg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const MissingCheckpoint& e) {
    std::cerr << "missing checkpoint: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
