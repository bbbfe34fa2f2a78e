#include "hagps/experiment.hpp"
#include "small_config.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace hagps;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = HAGPS_FIXTURES;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hagps_experiment_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void fake_run(const fs::path& dir, const std::string& method, double ratio, std::uint64_t seed) {
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json") << json{{"method", method},
                                               {"seed", seed},
                                               {"mode", "hagps"},
                                               {"final", {{"service_ratio", ratio}, {"rebalanced", 7}}}}
                                              .dump();
  std::ofstream(dir / "metrics.csv") << "epoch,x\n0,1\n";
}

}  // namespace

TEST_CASE("config parsing") {
  const auto d = config_from_json(json::object());
  CHECK(d.env.lambda_coef == 3.0);
  CHECK(d.env.alpha == 5.0);
  CHECK(d.env.beta == 15.0);
  CHECK(d.env.max_load == 20);
  CHECK(d.controller.initial_period == 8);
  CHECK(d.caps.max_local == 16);
  CHECK(d.mode == Mode::Hagps);

  const auto c = config_from_json(json::parse(R"({
    "data": {"synthetic": "toy"},
    "env": {"beta": 2.5, "horizon": 10},
    "train": {"reward_sharing": "team", "epochs": 3},
    "controller": {"merge_threshold": 0.1},
    "ablations": {"no_arp": true},
    "mode": "hagps",
    "seed": 17
  })"));
  CHECK(c.env.beta == 2.5);
  CHECK(c.env.horizon == 10);
  CHECK(c.train.sharing == RewardSharing::Team);
  CHECK(c.train.epochs == 3);
  CHECK(c.controller.merge_threshold == 0.1);
  CHECK(c.ablations.no_arp);
  CHECK(c.seed == 17);
  CHECK_NOTHROW(c.validate());

  // to_json and config_from_json are inverses.
  CHECK(to_json(config_from_json(to_json(c))) == to_json(c));

  CHECK_THROWS_AS(config_from_json(json::parse(R"({"env": {"betta": 1}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"colour": 1})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"env": {"beta": "high"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"mode": "share-some"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"reward_sharing": "all"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"env": []})")), ConfigError);

  auto bad = small_config(Mode::ShareAll);
  bad.ablations.no_id = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  RunConfig none;
  CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("load_config resolves data paths next to the file") {
  const auto dir = scratch("config");
  std::ofstream(dir / "run.json") << R"({"data": {"demand": "data/demand.json", "features": "/abs/f.csv"}})";
  const auto c = load_config(dir / "run.json");
  CHECK(fs::path(c.data.demand) == dir / "data" / "demand.json");
  CHECK(c.data.features == "/abs/f.csv");
  std::ofstream(dir / "broken.json") << "{";
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), ConfigError);
}

TEST_CASE("modes and model layouts") {
  auto cfg = small_config(Mode::ShareAll, "city");
  const auto world = load_world(cfg);
  const int N = world.grid->size();
  REQUIRE(N == 36);

  auto m = build_model(cfg, world);
  CHECK(m.tree.global_count() == 1);
  CHECK(m.tree.local_count() == 1);
  CHECK_FALSE(m.ids.enabled());
  CHECK(method_label(cfg) == "Share-All");

  cfg.mode = Mode::NoShare;
  m = build_model(cfg, world);
  CHECK(m.tree.global_count() == N);
  CHECK(m.tree.local_count() == N);
  CHECK(method_label(cfg) == "No-Share");

  cfg.mode = Mode::StaticGroups;
  cfg.static_groups = 3;
  m = build_model(cfg, world);
  CHECK(m.tree.global_count() == 3);
  CHECK(m.tree.local_count() == 3);
  CHECK(method_label(cfg) == "SePS");

  cfg.mode = Mode::Hagps;
  cfg.initial_globals = 2;
  cfg.initial_locals = 2;
  m = build_model(cfg, world);
  CHECK(m.tree.global_count() == 2);
  CHECK(m.tree.local_count() == 4);
  CHECK(m.ids.enabled());
  CHECK(method_label(cfg) == "HAG-PS");
  m.tree.check_invariants();
  CHECK(effective_train_config(cfg).use_controller);

  cfg.ablations.no_hier = true;
  m = build_model(cfg, world);
  CHECK(m.tree.global_count() == 1);
  CHECK(method_label(cfg) == "HAG-PS w/o HG");

  cfg.ablations = {};
  cfg.ablations.no_id = true;
  CHECK_FALSE(build_model(cfg, world).ids.enabled());
  CHECK(method_label(cfg) == "HAG-PS w/o ID");

  cfg.ablations = {};
  cfg.ablations.no_splitmerge = true;
  cfg.ablations.no_arp = true;
  CHECK_FALSE(effective_controller_config(cfg).split_merge);
  CHECK_FALSE(effective_controller_config(cfg).adaptive_period);
  CHECK(method_label(cfg) == "HAG-PS w/o SM+ARP");

  cfg.mode = Mode::ShareAll;
  cfg.ablations = {};
  CHECK_FALSE(effective_train_config(cfg).use_controller);
}

TEST_CASE("hierarchy collapsed to one group without IDs behaves like Share-All") {
  auto share = small_config(Mode::ShareAll);
  share.train.episodes_per_epoch = 4;
  share.train.epochs = 2;
  auto collapsed = share;
  collapsed.mode = Mode::Hagps;
  collapsed.ablations.no_id = true;
  collapsed.caps.max_local = 1;
  collapsed.caps.max_global = 1;

  auto run = [](const RunConfig& cfg) {
    const auto world = load_world(cfg);
    auto model = build_model(cfg, world);
    ControllerState st;
    st.period = 1;
    return train(make_env_factory(world, cfg), model, st, effective_controller_config(cfg),
                 effective_train_config(cfg))
        .history;
  };
  const auto a = run(share), b = run(collapsed);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].train_service_ratio == b[i].train_service_ratio);
    CHECK(a[i].train_rebalanced == b[i].train_rebalanced);
    CHECK(a[i].val_service_ratio == b[i].val_service_ratio);
    CHECK(a[i].val_rebalanced == b[i].val_rebalanced);
    CHECK(a[i].mean_reward == b[i].mean_reward);
    CHECK(b[i].local_groups == 1);
  }
}

TEST_CASE("train writes a complete run directory; eval is deterministic") {
  const auto dir = scratch("run");
  auto cfg = small_config();
  cfg.trace = true;
  const auto summary = run_train(cfg, dir / "r");
  for (const char* f : {"config.json", "metrics.csv", "events.jsonl", "checkpoint.bin", "manifest.json", "trace.jsonl"})
    CHECK_MESSAGE(fs::exists(dir / "r" / f), f);
  std::ifstream in(dir / "r" / "manifest.json");
  const auto m = json::parse(in);
  CHECK(m.at("method") == "HAG-PS");
  CHECK(m.at("seed") == 5);
  CHECK(m.at("final").at("service_ratio").get<double>() == summary.final_eval.service_ratio);
  CHECK(config_from_json(m.at("config")).seed == 5);

  std::ifstream trace(dir / "r" / "trace.jsonl");
  int lines = 0;
  for (std::string l; std::getline(trace, l);) lines += !l.empty();
  CHECK(lines == 31);

  const auto e1 = run_eval(cfg, dir / "r" / "checkpoint.bin");
  const auto e2 = run_eval(cfg, dir / "r" / "checkpoint.bin");
  CHECK(e1.service_ratio == e2.service_ratio);
  CHECK(e1.rebalanced == e2.rebalanced);
  CHECK(e1.service_ratio == summary.final_eval.service_ratio);

  // A checkpoint from another grid is refused.
  auto other = cfg;
  other.data.synthetic = "city";
  CHECK_THROWS_AS(run_eval(other, dir / "r" / "checkpoint.bin"), ShapeError);

  // Zero demand: every policy serves everything.
  const auto world = load_world(cfg);
  DemandSeries empty = world.series;
  empty.pickups.setZero();
  empty.dropoffs.setZero();
  const auto ck = load_checkpoint(dir / "r" / "checkpoint.bin");
  const auto z = evaluate(Environment(world.grid, empty, world.env, cfg.observation), ck.model,
                          effective_train_config(cfg));
  CHECK(z.service_ratio == 1.0);

  write_report({dir / "r"}, dir / "report");
  std::ifstream table(dir / "report" / "table.csv");
  std::string header, row;
  std::getline(table, header);
  std::getline(table, row);
  CHECK(header == "method,service_ratio_pct,total_rebalanced,seed,run,note");
  CHECK(row.rfind("HAG-PS,", 0) == 0);
  CHECK(fs::exists(dir / "report" / "curves.csv"));
}

TEST_CASE("report ordering") {
  const auto dir = scratch("report");
  fake_run(dir / "a", "HAG-PS", 0.9, 1);
  fake_run(dir / "b", "Share-All", 0.8, 1);
  fake_run(dir / "c", "No-Share", 0.7, 1);
  fake_run(dir / "d", "HAG-PS w/o ID", 0.85, 1);

  const auto one = collect_report({dir / "a"});
  REQUIRE(one.size() == 1);
  CHECK(*one[0].service_ratio_pct == doctest::Approx(90.0));
  CHECK(*one[0].rebalanced == 7);

  const auto three = collect_report({dir / "a", dir / "d", dir / "b", dir / "c"});
  REQUIRE(three.size() == 4);
  CHECK(three[0].method == "No-Share");
  CHECK(three[1].method == "Share-All");
  CHECK(three[2].method == "HAG-PS w/o ID");
  CHECK(three[3].method == "HAG-PS");

  const auto full = collect_report({dir / "a"}, true);
  const std::vector<std::string> order{"No-Share", "Share-All", "CDS",         "SePS",         "DyPS",
                                       "HAG-PS w/o ID", "HAG-PS w/o SM", "HAG-PS w/o HG", "HAG-PS w/o ARP", "HAG-PS"};
  REQUIRE(full.size() == order.size());
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(full[i].method == order[i]);
  CHECK(full[2].note == "external method, not implemented");
  CHECK(full[0].note == "not run");
  CHECK_FALSE(full[0].service_ratio_pct);
  CHECK(full[9].service_ratio_pct);

  CHECK_THROWS_AS(collect_report({}), ConfigError);
  CHECK_THROWS_AS(collect_report({dir / "missing"}), ConfigError);
}

TEST_CASE("ingest aborts when too many rows are malformed") {
  const auto dir = scratch("ingest");
  IngestOptions o;
  o.trips = kFixtures / "trips_5_malformed.csv";
  o.bbox = {40.0, 40.02, -74.0, -73.97};
  o.out = dir / "demand.json";
  const auto rep = run_ingest(o);
  CHECK(rep.rows_malformed == 1);
  CHECK(fs::exists(dir / "demand.json"));
  CHECK(fs::exists(dir / "demand.report.json"));

  std::ifstream src(o.trips);
  std::string all((std::istreambuf_iterator<char>(src)), {});
  all += "T9,2024-01-01 12:00:00,2024-01-01 12:10:00,north,-73.995,40.013,-73.983\n";
  std::ofstream(dir / "two_bad.csv") << all;
  o.trips = dir / "two_bad.csv";
  CHECK_THROWS_AS(run_ingest(o), ValidationError);
  o.max_malformed_fraction = 0.5;
  CHECK(run_ingest(o).rows_malformed == 2);
}
