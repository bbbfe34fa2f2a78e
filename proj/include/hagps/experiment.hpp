#pragma once

#include "hagps/checkpoint.hpp"
#include "hagps/ppo.hpp"
#include "hagps/synthetic.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hagps {

enum class Mode { Hagps, NoShare, ShareAll, StaticGroups };

std::string to_string(Mode m);
Mode parse_mode(std::string_view s);

struct Ablations {
  bool no_id = false;
  bool no_splitmerge = false;
  bool no_hier = false;
  bool no_arp = false;

  bool any() const { return no_id || no_splitmerge || no_hier || no_arp; }
};

struct DataConfig {
  std::string demand;     // demand artifact written by `ingest`
  std::string features;   // static features file; optional
  std::string synthetic;  // "city" or "toy" replaces the artifact
  std::uint64_t synthetic_seed = 0;
};

struct RunConfig {
  DataConfig data;
  EnvConfig env;
  ObservationConfig observation;
  TrainConfig train;
  ControllerConfig controller;
  GroupCaps caps;
  NetworkSizes network;
  int initial_globals = 2;   // G_init
  int initial_locals = 1;    // local groups per global group at start
  int static_groups = 4;     // clusters for the static-groups baseline
  Mode mode = Mode::Hagps;
  Ablations ablations;
  std::uint64_t seed = 0;
  bool trace = false;        // write an episode trace of the final evaluation

  void validate() const;
};

/// Reads a config document; absent fields keep their defaults, unknown fields
/// are rejected.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

/// Grid, demand and fleet the run operates on.
struct World {
  std::shared_ptr<const RegionGrid> grid;
  DemandSeries series;
  EnvConfig env;
};

World load_world(const RunConfig& cfg);

/// Training episodes and validation episodes draw resampled demand from
/// disjoint seed streams; without resampling both replay the recorded series.
EnvFactory make_env_factory(const World& world, const RunConfig& cfg);

/// Allocates trunks, heads, ID embeddings and the trajectory encoder for the
/// configured mode and ablations.
PolicyModel build_model(const RunConfig& cfg, const World& world);

/// Effective trainer and controller settings after mode and ablations.
TrainConfig effective_train_config(const RunConfig& cfg);
ControllerConfig effective_controller_config(const RunConfig& cfg);

/// Table label of a configuration, e.g. "HAG-PS w/o ID".
std::string method_label(const RunConfig& cfg);

struct RunSummary {
  std::filesystem::path dir;
  std::vector<MetricRecord> history;
  EvalResult final_eval;
  double seconds = 0.0;
};

/// Trains and writes config.json, metrics.csv, events.jsonl, checkpoint.bin
/// and, last and atomically, manifest.json into `out`.
RunSummary run_train(const RunConfig& cfg, const std::filesystem::path& out);

/// Greedy evaluation of a checkpoint on the recorded demand of `cfg`'s world.
EvalResult run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::optional<std::filesystem::path>& trace = std::nullopt);

struct ReportRow {
  std::string method;
  std::string run;  // run directory; empty for placeholder rows
  std::uint64_t seed = 0;
  std::optional<double> service_ratio_pct;
  std::optional<Count> rebalanced;
  std::string note;
};

/// Rows in table order (ties by directory name). With `full_table`, methods
/// that cannot be produced here appear as marked placeholders.
std::vector<ReportRow> collect_report(const std::vector<std::filesystem::path>& runs, bool full_table = false);

/// Writes table.csv and curves.csv into `out`.
void write_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out,
                  bool full_table = false);

struct IngestOptions {
  std::filesystem::path trips;
  BBox bbox;
  double cell_km = 1.0;
  std::optional<Period> period;
  std::filesystem::path out;              // demand artifact
  double max_malformed_fraction = 0.01;   // abort above this share of rows
};

/// Reads, filters and aggregates a trip file, then writes the demand artifact
/// and `<out stem>.report.json`. Aborts with a ValidationError when more than
/// max(1, fraction * rows) rows are malformed.
IngestReport run_ingest(const IngestOptions& opts);

nlohmann::json report_json(const IngestReport& r);

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace hagps
