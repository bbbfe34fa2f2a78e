#include "hagps/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

namespace hagps {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Pulls known keys out of one config object and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config section '" + where_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config field " + where_ + "." + key + ": " + e.what());
    }
  }

  const json* section(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config field " + where_ + "." + k);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string sharing_name(RewardSharing s) {
  switch (s) {
    case RewardSharing::Local: return "local";
    case RewardSharing::Neighborhood: return "neighborhood";
    case RewardSharing::Team: return "team";
  }
  return "neighborhood";
}

RewardSharing parse_sharing(const std::string& s) {
  if (s == "local") return RewardSharing::Local;
  if (s == "neighborhood") return RewardSharing::Neighborhood;
  if (s == "team") return RewardSharing::Team;
  throw ConfigError("unknown reward sharing '" + s + "'");
}

// Columns scaled to [0, 1] by their maximum; zero columns stay zero.
Mat scale_columns(Mat m) {
  for (Index c = 0; c < m.cols(); ++c) {
    const double mx = m.col(c).cwiseAbs().maxCoeff();
    if (mx > 0) m.col(c) /= mx;
  }
  return m;
}

// dim x K: mean pick-ups, mean drop-offs and the static features of each region.
Mat profile_points(const World& w) {
  const int K = w.grid->size();
  Mat p(K, 5);
  const double T = std::max(1, w.series.intervals());
  for (int k = 0; k < K; ++k) {
    p(k, 0) = w.series.intervals() ? w.series.pickups.col(k).cast<double>().sum() / T : 0.0;
    p(k, 1) = w.series.intervals() ? w.series.dropoffs.col(k).cast<double>().sum() / T : 0.0;
  }
  const double mx = std::max(p.leftCols(2).maxCoeff(), 1e-12);
  p.leftCols(2) /= mx;
  p.rightCols(3) = scale_columns(w.grid->static_features().cast<double>());
  return p.transpose();
}

Mat static_points(const World& w) {
  return scale_columns(w.grid->static_features().cast<double>()).transpose();
}

std::vector<std::vector<int>> clusters(const Mat& points, const std::vector<int>& members, int k, std::uint64_t seed) {
  k = std::clamp(k, 1, static_cast<int>(members.size()));
  if (k == 1) return {members};
  Mat sub(points.rows(), static_cast<Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j) sub.col(static_cast<Index>(j)) = points.col(members[j]);
  const auto assign = kmeans(sub, k, seed);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < members.size(); ++j) out[static_cast<std::size_t>(assign[j])].push_back(members[j]);
  std::erase_if(out, [](const auto& c) { return c.empty(); });
  return out;
}

std::string csv_line(const MetricRecord& r) {
  std::ostringstream s;
  s.precision(17);
  s << r.epoch << ',' << r.train_service_ratio << ',' << r.train_rebalanced << ',' << r.val_service_ratio << ','
    << r.val_rebalanced << ',' << r.mean_reward << ',' << r.local_groups << ',' << r.global_groups << ',' << r.period
    << ',' << r.running_divergence;
  return s.str();
}

constexpr const char* kMetricsHeader =
    "epoch,train_service_ratio,train_rebalanced,val_service_ratio,val_rebalanced,mean_reward,local_groups,"
    "global_groups,period,running_divergence";

json eval_json(const EvalResult& r) {
  return {{"service_ratio", r.service_ratio},
          {"rebalanced", r.rebalanced},
          {"mean_reward", r.mean_reward},
          {"demand", r.metrics.demand},
          {"unmet", r.metrics.unmet},
          {"steps", r.metrics.steps}};
}

const std::vector<std::string>& table_order() {
  static const std::vector<std::string> order = {
      "No-Share", "Share-All", "CDS", "SePS", "DyPS", "HAG-PS w/o ID", "HAG-PS w/o SM", "HAG-PS w/o HG",
      "HAG-PS w/o ARP", "HAG-PS"};
  return order;
}

// Combined ablations sit between the single ablations and the full method.
std::size_t order_of(const std::string& method) {
  const auto& o = table_order();
  const auto it = std::find(o.begin(), o.end(), method);
  if (it != o.end()) return 2 * static_cast<std::size_t>(it - o.begin());
  if (method.starts_with("HAG-PS w/o ")) return 2 * (o.size() - 1) - 1;
  return 2 * o.size();
}

// Quotes a CSV field when it holds a separator, quote or newline.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Hagps: return "hagps";
    case Mode::NoShare: return "no-share";
    case Mode::ShareAll: return "share-all";
    case Mode::StaticGroups: return "static-groups";
  }
  return "hagps";
}

Mode parse_mode(std::string_view s) {
  if (s == "hagps") return Mode::Hagps;
  if (s == "no-share") return Mode::NoShare;
  if (s == "share-all") return Mode::ShareAll;
  if (s == "static-groups") return Mode::StaticGroups;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

void RunConfig::validate() const {
  env.validate();
  train.validate();
  controller.validate();
  if (mode != Mode::Hagps && ablations.any()) throw ConfigError("ablation flags are only valid with mode hagps");
  if (data.demand.empty() && data.synthetic.empty()) throw ConfigError("no demand artifact or synthetic world given");
  if (!data.synthetic.empty() && data.synthetic != "city" && data.synthetic != "toy")
    throw ConfigError("synthetic world must be 'city' or 'toy'");
  if (initial_globals < 1 || initial_locals < 1 || static_groups < 1) throw ConfigError("group counts must be positive");
  if (caps.min_split_size < 1 || caps.max_subgroups < 2) throw ConfigError("invalid split caps");
  if (observation.history < 1) throw ConfigError("history window must be positive");
  if (network.trunk_hidden < 1 || network.trunk_out < 1 || network.head_hidden < 1 || network.id_dim < 1 ||
      network.latent < 1 || network.encoder_hidden < 1)
    throw ConfigError("network sizes must be positive");
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Fields top(j, "config");
  if (const auto* s = top.section("data")) {
    Fields f(*s, "data");
    f.get("demand", c.data.demand);
    f.get("features", c.data.features);
    f.get("synthetic", c.data.synthetic);
    f.get("synthetic_seed", c.data.synthetic_seed);
    f.finish();
  }
  if (const auto* s = top.section("env")) {
    Fields f(*s, "env");
    f.get("lambda", c.env.lambda_coef);
    f.get("alpha", c.env.alpha);
    f.get("beta", c.env.beta);
    f.get("max_load", c.env.max_load);
    f.get("epsilon", c.env.epsilon);
    f.get("fleet_size", c.env.fleet_size);
    f.get("horizon", c.env.horizon);
    f.finish();
  }
  if (const auto* s = top.section("observation")) {
    Fields f(*s, "observation");
    f.get("history", c.observation.history);
    std::string mode = c.observation.mode == HistoryFeatures::Stats ? "stats" : "last";
    f.get("history_features", mode);
    if (mode == "stats") c.observation.mode = HistoryFeatures::Stats;
    else if (mode == "last") c.observation.mode = HistoryFeatures::LastStep;
    else throw ConfigError("observation.history_features must be 'stats' or 'last'");
    f.finish();
  }
  if (const auto* s = top.section("train")) {
    Fields f(*s, "train");
    auto& t = c.train;
    f.get("gamma", t.gamma);
    f.get("gae_lambda", t.gae_lambda);
    f.get("lr_policy", t.lr_policy);
    f.get("lr_value", t.lr_value);
    f.get("clip_ratio", t.clip_ratio);
    f.get("epochs_per_update", t.epochs_per_update);
    f.get("minibatches", t.minibatches);
    f.get("episodes_per_epoch", t.episodes_per_epoch);
    f.get("max_steps", t.max_steps);
    f.get("epochs", t.epochs);
    f.get("val_episodes", t.val_episodes);
    f.get("entropy_coef", t.entropy_coef);
    f.get("value_coef", t.value_coef);
    f.get("value_clip", t.value_clip);
    f.get("max_grad_norm", t.max_grad_norm);
    f.get("reward_scale", t.reward_scale);
    std::string sharing = sharing_name(t.sharing);
    f.get("reward_sharing", sharing);
    t.sharing = parse_sharing(sharing);
    f.get("resample_demand", t.resample_demand);
    f.get("trajectory_window", t.trajectory_window);
    f.finish();
  }
  if (const auto* s = top.section("controller")) {
    Fields f(*s, "controller");
    auto& k = c.controller;
    f.get("split_threshold", k.split_threshold);
    f.get("merge_threshold", k.merge_threshold);
    f.get("initial_period", k.initial_period);
    f.get("min_period", k.min_period);
    f.get("max_period", k.max_period);
    f.get("smoothing", k.smoothing);
    f.get("sensitivity", k.sensitivity);
    f.get("target_divergence", k.target_divergence);
    f.get("refine_after_split", k.refine_after_split);
    f.get("kmeans_max_iter", k.kmeans_max_iter);
    f.finish();
  }
  if (const auto* s = top.section("caps")) {
    Fields f(*s, "caps");
    f.get("max_global", c.caps.max_global);
    f.get("max_local", c.caps.max_local);
    f.get("min_split_size", c.caps.min_split_size);
    f.get("max_subgroups", c.caps.max_subgroups);
    f.finish();
  }
  if (const auto* s = top.section("network")) {
    Fields f(*s, "network");
    f.get("trunk_hidden", c.network.trunk_hidden);
    f.get("trunk_out", c.network.trunk_out);
    f.get("head_hidden", c.network.head_hidden);
    f.get("id_dim", c.network.id_dim);
    f.get("latent", c.network.latent);
    f.get("encoder_hidden", c.network.encoder_hidden);
    f.finish();
  }
  if (const auto* s = top.section("ablations")) {
    Fields f(*s, "ablations");
    f.get("no_id", c.ablations.no_id);
    f.get("no_splitmerge", c.ablations.no_splitmerge);
    f.get("no_hier", c.ablations.no_hier);
    f.get("no_arp", c.ablations.no_arp);
    f.finish();
  }
  top.get("initial_globals", c.initial_globals);
  top.get("initial_locals", c.initial_locals);
  top.get("static_groups", c.static_groups);
  std::string mode = to_string(c.mode);
  top.get("mode", mode);
  c.mode = parse_mode(mode);
  top.get("seed", c.seed);
  top.get("trace", c.trace);
  top.finish();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& k = c.controller;
  return {
      {"data",
       {{"demand", c.data.demand},
        {"features", c.data.features},
        {"synthetic", c.data.synthetic},
        {"synthetic_seed", c.data.synthetic_seed}}},
      {"env",
       {{"lambda", c.env.lambda_coef},
        {"alpha", c.env.alpha},
        {"beta", c.env.beta},
        {"max_load", c.env.max_load},
        {"epsilon", c.env.epsilon},
        {"fleet_size", c.env.fleet_size},
        {"horizon", c.env.horizon}}},
      {"observation",
       {{"history", c.observation.history},
        {"history_features", c.observation.mode == HistoryFeatures::Stats ? "stats" : "last"}}},
      {"train",
       {{"gamma", t.gamma},
        {"gae_lambda", t.gae_lambda},
        {"lr_policy", t.lr_policy},
        {"lr_value", t.lr_value},
        {"clip_ratio", t.clip_ratio},
        {"epochs_per_update", t.epochs_per_update},
        {"minibatches", t.minibatches},
        {"episodes_per_epoch", t.episodes_per_epoch},
        {"max_steps", t.max_steps},
        {"epochs", t.epochs},
        {"val_episodes", t.val_episodes},
        {"entropy_coef", t.entropy_coef},
        {"value_coef", t.value_coef},
        {"value_clip", t.value_clip},
        {"max_grad_norm", t.max_grad_norm},
        {"reward_scale", t.reward_scale},
        {"reward_sharing", sharing_name(t.sharing)},
        {"resample_demand", t.resample_demand},
        {"trajectory_window", t.trajectory_window}}},
      {"controller",
       {{"split_threshold", k.split_threshold},
        {"merge_threshold", k.merge_threshold},
        {"initial_period", k.initial_period},
        {"min_period", k.min_period},
        {"max_period", k.max_period},
        {"smoothing", k.smoothing},
        {"sensitivity", k.sensitivity},
        {"target_divergence", k.target_divergence},
        {"refine_after_split", k.refine_after_split},
        {"kmeans_max_iter", k.kmeans_max_iter}}},
      {"caps",
       {{"max_global", c.caps.max_global},
        {"max_local", c.caps.max_local},
        {"min_split_size", c.caps.min_split_size},
        {"max_subgroups", c.caps.max_subgroups}}},
      {"network",
       {{"trunk_hidden", c.network.trunk_hidden},
        {"trunk_out", c.network.trunk_out},
        {"head_hidden", c.network.head_hidden},
        {"id_dim", c.network.id_dim},
        {"latent", c.network.latent},
        {"encoder_hidden", c.network.encoder_hidden}}},
      {"ablations",
       {{"no_id", c.ablations.no_id},
        {"no_splitmerge", c.ablations.no_splitmerge},
        {"no_hier", c.ablations.no_hier},
        {"no_arp", c.ablations.no_arp}}},
      {"initial_globals", c.initial_globals},
      {"initial_locals", c.initial_locals},
      {"static_groups", c.static_groups},
      {"mode", to_string(c.mode)},
      {"seed", c.seed},
      {"trace", c.trace},
  };
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c = config_from_json(j);
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  for (auto* p : {&c.data.demand, &c.data.features})
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  return c;
}

World load_world(const RunConfig& cfg) {
  World w;
  w.env = cfg.env;
  if (cfg.data.synthetic == "city" || cfg.data.synthetic == "toy") {
    SyntheticWorld s = cfg.data.synthetic == "city" ? archetype_city(cfg.data.synthetic_seed) : imbalance_toy();
    if (w.env.fleet_size == 0) w.env.fleet_size = s.fleet_size;
    w.grid = std::make_shared<const RegionGrid>(std::move(s.grid));
    w.series = std::move(s.series);
  } else {
    w.series = load_demand(cfg.data.demand);
    RegionGrid grid = RegionGrid::lattice(w.series.grid_rows, w.series.grid_cols);
    if (!cfg.data.features.empty()) grid.set_static_features(load_static_features(cfg.data.features, grid).features);
    w.grid = std::make_shared<const RegionGrid>(std::move(grid));
    if (w.env.fleet_size == 0 && w.series.intervals() > 0) {
      const double daily = static_cast<double>(w.series.pickups.sum()) / w.series.intervals();
      w.env.fleet_size = static_cast<Count>(std::llround(daily));
    }
  }
  if (w.series.regions() != w.grid->size()) throw ShapeError("demand series and grid disagree on region count");
  if (w.series.intervals() == 0) throw ConfigError("demand series is empty");
  w.env.validate();
  return w;
}

EnvFactory make_env_factory(const World& world, const RunConfig& cfg) {
  const SeedTree root = SeedTree(cfg.seed).child("demand");
  return [grid = world.grid, series = world.series, env = world.env, obs = cfg.observation,
          resample = cfg.train.resample_demand, root](int episode, bool validation) {
    if (!resample) return Environment(grid, series, env, obs);
    Rng rng = root.child(validation ? "validation" : "train").child(static_cast<std::uint64_t>(episode)).rng();
    return Environment(grid, resample_series(series, rng), env, obs);
  };
}

PolicyModel build_model(const RunConfig& cfg, const World& world) {
  const Environment probe(world.grid, world.series, world.env, cfg.observation);
  const int N = probe.agents();
  const SeedTree root(cfg.seed);

  std::vector<int> everyone(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) everyone[static_cast<std::size_t>(i)] = i;

  // Partition: global groups -> local groups -> agents.
  std::vector<std::vector<std::vector<int>>> layout;
  GroupCaps caps = cfg.caps;
  bool ids = false;
  switch (cfg.mode) {
    case Mode::ShareAll:
      layout = {{everyone}};
      caps.max_global = caps.max_local = 1;
      break;
    case Mode::NoShare:
      for (int i = 0; i < N; ++i) layout.push_back({{i}});
      caps.max_global = caps.max_local = N;
      break;
    case Mode::StaticGroups: {
      for (auto& c : clusters(profile_points(world), everyone, cfg.static_groups, root.child("static-groups").seed()))
        layout.push_back({std::move(c)});
      caps.max_global = caps.max_local = static_cast<int>(layout.size());
      break;
    }
    case Mode::Hagps: {
      const int g = cfg.ablations.no_hier ? 1 : std::min({cfg.initial_globals, caps.max_global, caps.max_local});
      const auto globals = clusters(static_points(world), everyone, g, root.child("globals").seed());
      const int per = std::max(1, std::min(cfg.initial_locals, caps.max_local / static_cast<int>(globals.size())));
      const Mat profile = profile_points(world);
      for (std::size_t gi = 0; gi < globals.size(); ++gi)
        layout.push_back(clusters(profile, globals[gi], per, root.child("locals").child(gi).seed()));
      ids = !cfg.ablations.no_id;
      break;
    }
  }

  PolicyModel m;
  m.sizes = cfg.network;
  m.sizes.state = probe.observation_size();
  m.sizes.bins = PolicyModel::bins_for(world.env.max_load);
  m.tree = GroupTree(N, caps);
  Rng rng = root.child("model").rng();
  for (auto& locals : layout) {
    const int gid = m.tree.add_global(make_trunk(m.sizes, rng));
    for (auto& members : locals) m.tree.add_local(gid, HeadNet::make(m.sizes, rng), std::move(members));
  }
  m.tree.check_invariants();
  m.ids = IdEmbedding(m.sizes.id_dim, N, rng, ids);
  Rng enc_rng = root.child("encoder").rng();
  m.autoencoder = nn::TrajectoryAutoencoder(kTupleSize, m.sizes.encoder_hidden, m.sizes.latent, enc_rng);
  return m;
}

TrainConfig effective_train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = SeedTree(cfg.seed).child("train").seed();
  t.use_controller = cfg.mode == Mode::Hagps;
  t.train_encoder = t.use_controller;
  return t;
}

ControllerConfig effective_controller_config(const RunConfig& cfg) {
  ControllerConfig c = cfg.controller;
  c.seed = SeedTree(cfg.seed).child("controller").seed();
  c.split_merge = c.split_merge && !cfg.ablations.no_splitmerge;
  c.adaptive_period = c.adaptive_period && !cfg.ablations.no_arp;
  return c;
}

std::string method_label(const RunConfig& cfg) {
  switch (cfg.mode) {
    case Mode::NoShare: return "No-Share";
    case Mode::ShareAll: return "Share-All";
    case Mode::StaticGroups: return "SePS";
    case Mode::Hagps: break;
  }
  std::vector<std::string> off;
  if (cfg.ablations.no_id) off.push_back("ID");
  if (cfg.ablations.no_splitmerge) off.push_back("SM");
  if (cfg.ablations.no_hier) off.push_back("HG");
  if (cfg.ablations.no_arp) off.push_back("ARP");
  if (off.empty()) return "HAG-PS";
  std::string s = "HAG-PS w/o ";
  for (std::size_t i = 0; i < off.size(); ++i) s += (i ? "+" : "") + off[i];
  return s;
}

void write_json_atomic(const fs::path& path, const json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp);
    out << j.dump(2) << '\n';
    if (!out) throw ConfigError("failed writing " + tmp);
  }
  fs::rename(tmp, path);
}

RunSummary run_train(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto started = std::chrono::system_clock::now();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out);
  fs::remove(out / "manifest.json");
  write_json_atomic(out / "config.json", to_json(cfg));

  const World world = load_world(cfg);
  PolicyModel model = build_model(cfg, world);
  const TrainConfig tcfg = effective_train_config(cfg);
  const ControllerConfig ccfg = effective_controller_config(cfg);
  ControllerState controller;
  controller.period = ccfg.initial_period;

  std::ofstream metrics(out / "metrics.csv", std::ios::trunc);
  if (!metrics) throw ConfigError("cannot write metrics to " + out.string());
  metrics << kMetricsHeader << '\n';
  GroupEventLog events(out / "events.jsonl");
  TrainHooks hooks;
  hooks.events = &events;
  hooks.on_epoch = [&](const MetricRecord& r) { metrics << csv_line(r) << '\n' << std::flush; };

  RunSummary summary;
  summary.dir = out;
  const auto result = train(make_env_factory(world, cfg), model, controller, ccfg, tcfg, hooks);
  summary.history = result.history;

  const json extra{{"config", to_json(cfg)}, {"method", method_label(cfg)}};
  save_checkpoint(out / "checkpoint.bin", model, result.controller, extra);
  summary.final_eval = run_eval(cfg, out / "checkpoint.bin",
                                cfg.trace ? std::optional<fs::path>(out / "trace.jsonl") : std::nullopt);
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json manifest;
  manifest["format"] = "hagps-run";
  manifest["version"] = 1;
  manifest["method"] = method_label(cfg);
  manifest["mode"] = to_string(cfg.mode);
  manifest["seed"] = cfg.seed;
  manifest["config"] = to_json(cfg);
  manifest["build"] = {{"compiler", __VERSION__}, {"cplusplus", static_cast<long>(__cplusplus)},
#ifdef NDEBUG
                       {"assertions", false}
#else
                       {"assertions", true}
#endif
  };
  manifest["timing"] = {
      {"started_unix", std::chrono::duration_cast<std::chrono::seconds>(started.time_since_epoch()).count()},
      {"seconds", summary.seconds}};
  manifest["groups"] = {{"global", model.tree.global_count()},
                        {"local", model.tree.local_count()},
                        {"period", result.controller.period},
                        {"running_divergence", result.controller.running_divergence}};
  manifest["final"] = eval_json(summary.final_eval);
  if (!summary.history.empty()) {
    const auto& last = summary.history.back();
    manifest["final"]["val_service_ratio"] = last.val_service_ratio;
    manifest["final"]["val_rebalanced"] = last.val_rebalanced;
    manifest["final"]["train_service_ratio"] = last.train_service_ratio;
  }
  manifest["files"] = {"config.json", "metrics.csv", "events.jsonl", "checkpoint.bin"};
  if (cfg.trace) manifest["files"].push_back("trace.jsonl");
  write_json_atomic(out / "manifest.json", manifest);
  return summary;
}

EvalResult run_eval(const RunConfig& cfg, const fs::path& checkpoint, const std::optional<fs::path>& trace) {
  const World world = load_world(cfg);
  Checkpoint ck = load_checkpoint(checkpoint);
  Environment env(world.grid, world.series, world.env, cfg.observation);
  if (ck.model.agents() != env.agents() || ck.model.sizes.state != env.observation_size() ||
      ck.model.sizes.bins != PolicyModel::bins_for(world.env.max_load))
    throw ShapeError("checkpoint does not match the environment's grid or action space");
  const TrainConfig tcfg = effective_train_config(cfg);
  const EvalResult res = evaluate(env, ck.model, tcfg);
  if (trace) {
    TrainConfig full = tcfg;
    full.max_steps = env.horizon();
    Rng unused(0);
    const auto ro = collect_rollout(env, ck.model, full, unused, true);
    env.reset();
    TraceWriter w(*trace);
    CountVec b = env.state().inventory;
    for (std::size_t t = 0; t < ro.outcomes.size(); ++t) {
      w.write(static_cast<int>(t), b, ro.outcomes[t]);
      b = ro.outcomes[t].next_inventory;
    }
  }
  return res;
}

std::vector<ReportRow> collect_report(const std::vector<fs::path>& runs, bool full_table) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<ReportRow> rows;
  for (const auto& dir : runs) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw ConfigError("missing manifest: " + path.string());
    json m;
    try {
      m = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("unreadable manifest " + path.string() + ": " + e.what());
    }
    ReportRow r;
    r.method = m.at("method").get<std::string>();
    r.run = dir.string();
    r.seed = m.value("seed", std::uint64_t{0});
    r.service_ratio_pct = 100.0 * m.at("final").at("service_ratio").get<double>();
    r.rebalanced = m.at("final").at("rebalanced").get<Count>();
    if (m.value("mode", std::string()) == "static-groups") r.note = "static-groups proxy";
    rows.push_back(std::move(r));
  }
  if (full_table) {
    for (const auto& method : table_order()) {
      const bool present = std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.method == method; });
      if (!present) {
        ReportRow r;
        r.method = method;
        r.note = (method == "CDS" || method == "DyPS") ? "external method, not implemented" : "not run";
        rows.push_back(std::move(r));
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    const auto oa = order_of(a.method), ob = order_of(b.method);
    if (oa != ob) return oa < ob;
    if (a.method != b.method) return a.method < b.method;
    return a.run < b.run;
  });
  return rows;
}

void write_report(const std::vector<fs::path>& runs, const fs::path& out, bool full_table) {
  const auto rows = collect_report(runs, full_table);
  fs::create_directories(out);
  {
    std::ofstream t(out / "table.csv", std::ios::trunc);
    if (!t) throw ConfigError("cannot write report to " + out.string());
    t << "method,service_ratio_pct,total_rebalanced,seed,run,note\n";
    t.setf(std::ios::fixed);
    t.precision(2);
    for (const auto& r : rows) {
      t << csv_field(r.method) << ',';
      if (r.service_ratio_pct) t << *r.service_ratio_pct;
      t << ',';
      if (r.rebalanced) t << *r.rebalanced;
      t << ',';
      if (!r.run.empty()) t << r.seed;
      t << ',' << csv_field(r.run) << ',' << csv_field(r.note) << '\n';
    }
  }
  std::ofstream c(out / "curves.csv", std::ios::trunc);
  c << "method,run," << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    if (r.run.empty()) continue;
    std::ifstream in(fs::path(r.run) / "metrics.csv");
    if (!in) throw ConfigError("missing metrics in " + r.run);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) c << csv_field(r.method) << ',' << csv_field(r.run) << ',' << line << '\n';
  }
}

json report_json(const IngestReport& r) {
  return {{"rows_read", r.rows_read},
          {"rows_malformed", r.rows_malformed},
          {"dropped_out_of_bounds", r.dropped_out_of_bounds},
          {"dropped_out_of_period", r.dropped_out_of_period},
          {"trips_aggregated", r.trips_aggregated},
          {"T", r.intervals},
          {"K", r.regions},
          {"warnings", r.warnings}};
}

IngestReport run_ingest(const IngestOptions& opts) {
  const RegionGrid grid = build_grid(opts.bbox, opts.cell_km);
  TripFile file = read_trips(opts.trips);
  const double limit = std::max(1.0, opts.max_malformed_fraction * static_cast<double>(file.report.rows_read));
  if (static_cast<double>(file.report.rows_malformed) > limit)
    throw ValidationError(std::to_string(file.report.rows_malformed) + " of " + std::to_string(file.report.rows_read) +
                          " rows are malformed");
  IngestReport report = file.report;
  const DemandSeries series = aggregate(file.trips, grid, report, opts.period);
  if (!opts.out.empty()) {
    if (opts.out.has_parent_path()) fs::create_directories(opts.out.parent_path());
    save_demand(series, opts.out);
    auto rp = opts.out;
    rp.replace_extension(".report.json");
    write_json_atomic(rp, report_json(report));
  }
  return report;
}

}  // namespace hagps
