// hagps: ingest trips, train and evaluate policies, build comparison tables.

#include "hagps/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hagps;

namespace {

int fail(const std::string& command, const std::string& kind, const std::string& message, int code) {
  json err{{"error", {{"command", command}, {"type", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << err.dump() << std::endl;
  return code;
}

std::chrono::sys_days parse_day(const std::string& s) {
  const auto tp = parse_timestamp(s + " 00:00:00");
  if (!tp) throw ConfigError("invalid date '" + s + "' (expected YYYY-MM-DD)");
  return std::chrono::floor<std::chrono::days>(*tp);
}

struct TrainArgs {
  std::string config;
  std::string mode;
  std::optional<std::uint64_t> seed;
  bool no_id = false, no_splitmerge = false, no_hier = false, no_arp = false;
  std::string out;
  std::string demand;
  std::string synthetic;
  std::optional<int> epochs;
  std::optional<int> episodes;
  bool trace = false;
};

RunConfig resolve(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (!a.mode.empty()) cfg.mode = parse_mode(a.mode);
  if (a.seed) cfg.seed = *a.seed;
  cfg.ablations.no_id |= a.no_id;
  cfg.ablations.no_splitmerge |= a.no_splitmerge;
  cfg.ablations.no_hier |= a.no_hier;
  cfg.ablations.no_arp |= a.no_arp;
  if (!a.demand.empty()) {
    cfg.data.demand = a.demand;
    cfg.data.synthetic.clear();
  }
  if (!a.synthetic.empty()) cfg.data.synthetic = a.synthetic;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.episodes) cfg.train.episodes_per_epoch = *a.episodes;
  cfg.trace |= a.trace;
  cfg.validate();
  return cfg;
}

void add_run_flags(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--config", a.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--mode", a.mode, "hagps | no-share | share-all | static-groups");
  sub->add_option("--seed", a.seed, "master seed");
  sub->add_flag("--no-id", a.no_id, "zero and freeze ID embeddings");
  sub->add_flag("--no-splitmerge", a.no_splitmerge, "disable split and merge");
  sub->add_flag("--no-hier", a.no_hier, "single global group");
  sub->add_flag("--no-arp", a.no_arp, "fixed regroup period");
  sub->add_option("--demand", a.demand, "demand artifact (overrides the config)");
  sub->add_option("--synthetic", a.synthetic, "synthetic world: city | toy");
  sub->add_option("--epochs", a.epochs, "training epochs");
  sub->add_option("--episodes", a.episodes, "episodes per epoch");
  sub->add_flag("--trace", a.trace, "write an episode trace of the final evaluation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical adaptive grouping for bike-share rebalancing"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "aggregate a trip file into a demand artifact");
  std::string trips, period_start, period_end, ingest_out;
  std::vector<double> bbox;
  double cell_km = 1.0;
  double malformed = 0.01;
  ingest->add_option("trips", trips, "trip file (CSV or TSV with header)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--bbox", bbox, "lat_min lat_max lon_min lon_max")->required()->expected(4);
  ingest->add_option("--cell-km", cell_km, "cell edge in kilometers");
  ingest->add_option("--from", period_start, "first day YYYY-MM-DD");
  ingest->add_option("--to", period_end, "last day YYYY-MM-DD (inclusive)");
  ingest->add_option("--max-malformed", malformed, "abort above this fraction of malformed rows");
  ingest->add_option("--out", ingest_out, "demand artifact path")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic demand artifact and static features");
  std::string kind = "city", synth_out;
  std::uint64_t synth_seed = 0;
  synth->add_option("--kind", kind, "city | toy")->check(CLI::IsMember({"city", "toy"}));
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "demand artifact path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train one configuration into a run directory");
  TrainArgs targs;
  add_run_flags(train_cmd, targs);
  train_cmd->add_option("--out", targs.out, "run directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of a trained checkpoint");
  std::string run_dir, checkpoint, eval_out, trace_path;
  TrainArgs eargs;
  eval_cmd->add_option("--run", run_dir, "run directory (config.json + checkpoint.bin)");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval_cmd->add_option("--config", eargs.config, "JSON run configuration")->check(CLI::ExistingFile);
  eval_cmd->add_option("--demand", eargs.demand, "demand artifact to evaluate on");
  eval_cmd->add_option("--synthetic", eargs.synthetic, "synthetic world: city | toy");
  eval_cmd->add_option("--seed", eargs.seed, "master seed");
  eval_cmd->add_option("--trace", trace_path, "write a per-step trace here");
  eval_cmd->add_option("--out", eval_out, "write the metrics record here");

  // report
  auto* report = app.add_subcommand("report", "comparison table and training curves from run directories");
  std::vector<std::string> runs;
  std::string report_out;
  bool full_table = false;
  report->add_option("runs", runs, "run directories")->required();
  report->add_flag("--full-table", full_table, "include placeholder rows for methods not run");
  report->add_option("--out", report_out, "report directory")->required();

  std::string command = argc > 1 ? argv[1] : "";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(command, "usage", e.what(), e.get_exit_code() ? e.get_exit_code() : 2);
  }

  try {
    if (*ingest) {
      IngestOptions opts;
      opts.trips = trips;
      opts.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
      opts.cell_km = cell_km;
      opts.out = ingest_out;
      opts.max_malformed_fraction = malformed;
      if (!period_start.empty() || !period_end.empty()) {
        if (period_start.empty() || period_end.empty()) throw ConfigError("--from and --to must be given together");
        opts.period = Period{parse_day(period_start), parse_day(period_end)};
      }
      std::cout << report_json(run_ingest(opts)).dump(2) << std::endl;
    } else if (*synth) {
      SyntheticWorld w = kind == "city" ? archetype_city(synth_seed) : imbalance_toy();
      const fs::path out = synth_out;
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      save_demand(w.series, out);
      auto fpath = out;
      fpath.replace_extension(".features.csv");
      std::ofstream f(fpath);
      const auto& sf = w.grid.static_features();
      for (Index k = 0; k < sf.rows(); ++k) f << sf(k, 0) << ',' << sf(k, 1) << ',' << sf(k, 2) << '\n';
      std::cout << json{{"demand", out.string()},
                        {"features", fpath.string()},
                        {"T", w.series.intervals()},
                        {"K", w.series.regions()},
                        {"fleet_size", w.fleet_size}}
                       .dump(2)
                << std::endl;
    } else if (*train_cmd) {
      const RunConfig cfg = resolve(targs);
      const auto s = run_train(cfg, targs.out);
      std::cout << json{{"run", s.dir.string()},
                        {"method", method_label(cfg)},
                        {"service_ratio", s.final_eval.service_ratio},
                        {"rebalanced", s.final_eval.rebalanced},
                        {"seconds", s.seconds}}
                       .dump(2)
                << std::endl;
    } else if (*eval_cmd) {
      if (!run_dir.empty()) {
        if (eargs.config.empty()) eargs.config = (fs::path(run_dir) / "config.json").string();
        if (checkpoint.empty()) checkpoint = (fs::path(run_dir) / "checkpoint.bin").string();
      }
      if (checkpoint.empty()) throw ConfigError("eval needs --run or --checkpoint");
      const RunConfig cfg = resolve(eargs);
      const auto r = run_eval(cfg, checkpoint, trace_path.empty() ? std::nullopt : std::optional<fs::path>(trace_path));
      const json rec{{"checkpoint", checkpoint},
                     {"service_ratio", r.service_ratio},
                     {"rebalanced", r.rebalanced},
                     {"mean_reward", r.mean_reward},
                     {"demand", r.metrics.demand},
                     {"unmet", r.metrics.unmet}};
      if (!eval_out.empty()) write_json_atomic(eval_out, rec);
      std::cout << rec.dump(2) << std::endl;
    } else if (*report) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      write_report(dirs, report_out, full_table);
      std::cout << json{{"table", (fs::path(report_out) / "table.csv").string()},
                        {"curves", (fs::path(report_out) / "curves.csv").string()},
                        {"rows", collect_report(dirs, full_table).size()}}
                       .dump(2)
                << std::endl;
    }
  } catch (const ConfigError& e) {
    return fail(command, "config", e.what(), 2);
  } catch (const ValidationError& e) {
    return fail(command, "validation", e.what(), 3);
  } catch (const ShapeError& e) {
    return fail(command, "shape", e.what(), 4);
  } catch (const NumericError& e) {
    return fail(command, "numeric", e.what(), 5);
  } catch (const std::exception& e) {
    return fail(command, "internal", e.what(), 1);
  }
  return 0;
}
