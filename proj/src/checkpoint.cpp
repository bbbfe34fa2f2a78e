#include "hagps/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace hagps {

namespace {

using json = nlohmann::json;
constexpr std::array<char, 8> kMagic = {'H', 'A', 'G', 'P', 'S', 'C', 'K', '\0'};

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw ConfigError("checkpoint is truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint64_t limit) {
  const auto n = get<std::uint64_t>(in);
  if (n > limit) throw ConfigError("checkpoint string length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ConfigError("checkpoint is truncated");
  return s;
}

void put_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  put_string(out, name);
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m.data()[i]));
}

std::map<std::string, Mat> read_tensors(std::istream& in) {
  std::map<std::string, Mat> out;
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = get_string(in, 1 << 16);
    if (get<std::uint32_t>(in) != 2) throw ConfigError("checkpoint tensor " + name + " is not rank 2");
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows > (1u << 24) || cols > (1u << 24)) throw ConfigError("checkpoint tensor " + name + " is too large");
    Mat m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(get<std::uint64_t>(in));
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

struct NamedSet {
  std::string prefix;
  const nn::ParamSet<double>* set;
};

std::vector<NamedSet> named_sets(const PolicyModel& model) {
  std::vector<NamedSet> out;
  for (const auto& [id, g] : model.tree.globals()) out.push_back({"global/" + std::to_string(id), &g.trunk.params()});
  for (const auto& [id, l] : model.tree.locals()) {
    out.push_back({"local/" + std::to_string(id) + "/actor", &l.head.actor.params()});
    out.push_back({"local/" + std::to_string(id) + "/critic", &l.head.critic.params()});
  }
  out.push_back({"ids", &model.ids.params()});
  out.push_back({"encoder", &model.autoencoder.encoder.params()});
  out.push_back({"decoder", &model.autoencoder.decoder.params()});
  return out;
}

void restore(nn::ParamSet<double>& set, const std::string& prefix, const std::map<std::string, Mat>& tensors,
             std::int64_t steps) {
  auto fetch = [&](const std::string& name, const Mat& like) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("checkpoint lacks tensor " + name);
    if (it->second.rows() != like.rows() || it->second.cols() != like.cols())
      throw ShapeError("checkpoint tensor " + name + " has the wrong shape");
    return it->second;
  };
  for (auto& p : set) {
    const std::string base = prefix + "/" + p.name;
    p.value = fetch(base, p.value);
    p.moment1 = fetch(base + ":m1", p.value);
    p.moment2 = fetch(base + ":m2", p.value);
    p.grad.setZero();
  }
  set.adam_steps = steps;
}

json sizes_json(const NetworkSizes& s) {
  return {{"state", s.state},           {"trunk_hidden", s.trunk_hidden}, {"trunk_out", s.trunk_out},
          {"head_hidden", s.head_hidden}, {"id_dim", s.id_dim},             {"bins", s.bins},
          {"latent", s.latent},         {"encoder_hidden", s.encoder_hidden}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model, const ControllerState& controller,
                     const json& extra) {
  const auto& tree = model.tree;
  json meta;
  meta["sizes"] = sizes_json(model.sizes);
  meta["agents"] = tree.agents();
  const auto& caps = tree.caps();
  meta["caps"] = {{"max_global", caps.max_global},
                  {"max_local", caps.max_local},
                  {"min_split_size", caps.min_split_size},
                  {"max_subgroups", caps.max_subgroups}};
  meta["next_id"] = tree.next_id();
  json globals = json::array();
  for (const auto& [id, g] : tree.globals()) globals.push_back({{"id", id}, {"sizes", g.trunk.sizes()}, {"locals", g.locals}});
  json locals = json::array();
  for (const auto& [id, l] : tree.locals())
    locals.push_back({{"id", id},
                      {"global", l.global},
                      {"members", l.members},
                      {"actor", l.head.actor.sizes()},
                      {"critic", l.head.critic.sizes()}});
  meta["globals"] = globals;
  meta["locals"] = locals;
  meta["ids_enabled"] = model.ids.enabled();
  meta["encoder"] = {{"input", model.autoencoder.encoder.input_size()},
                     {"hidden", model.autoencoder.encoder.hidden_size()},
                     {"latent", model.autoencoder.encoder.latent_size()},
                     {"kl_weight", model.autoencoder.kl_weight}};
  meta["controller"] = {{"running_divergence", controller.running_divergence},
                        {"period", controller.period},
                        {"episodes_since_regroup", controller.episodes_since_regroup}};
  json steps = json::object();
  const auto sets = named_sets(model);
  for (const auto& s : sets) steps[s.prefix] = s.set->adam_steps;
  meta["adam_steps"] = steps;
  meta["extra"] = extra;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint " + tmp);
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, meta.dump());
    std::uint64_t count = 0;
    for (const auto& s : sets) count += 3 * static_cast<std::uint64_t>(s.set->size());
    put<std::uint64_t>(out, count);
    for (const auto& s : sets) {
      for (const auto& p : *s.set) {
        const std::string base = s.prefix + "/" + p.name;
        put_tensor(out, base, p.value);
        put_tensor(out, base + ":m1", p.moment1);
        put_tensor(out, base + ":m2", p.moment2);
      }
    }
    if (!out) throw ConfigError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ConfigError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  const json meta = json::parse(get_string(in, 1u << 30));
  const auto tensors = read_tensors(in);

  Checkpoint ck;
  auto& m = ck.model;
  const auto& sz = meta.at("sizes");
  m.sizes.state = sz.at("state");
  m.sizes.trunk_hidden = sz.at("trunk_hidden");
  m.sizes.trunk_out = sz.at("trunk_out");
  m.sizes.head_hidden = sz.at("head_hidden");
  m.sizes.id_dim = sz.at("id_dim");
  m.sizes.bins = sz.at("bins");
  m.sizes.latent = sz.at("latent");
  m.sizes.encoder_hidden = sz.at("encoder_hidden");

  const int agents = meta.at("agents");
  const auto& c = meta.at("caps");
  m.tree = GroupTree(agents, GroupCaps{c.at("max_global"), c.at("max_local"), c.at("min_split_size"),
                                       c.at("max_subgroups")});
  // Shapes come from the metadata; every value is overwritten below.
  Rng scratch(0);
  std::map<int, json> locals;
  for (const auto& l : meta.at("locals")) locals[l.at("id").get<int>()] = l;
  for (const auto& g : meta.at("globals")) {
    const int gid = g.at("id");
    m.tree.add_global_with_id(gid, TrunkNet(g.at("sizes").get<std::vector<int>>(), scratch));
    for (int lid : g.at("locals").get<std::vector<int>>()) {
      const auto& l = locals.at(lid);
      if (l.at("global").get<int>() != gid) throw ConfigError("checkpoint topology is inconsistent");
      HeadNet head{nn::Mlp<double>(l.at("actor").get<std::vector<int>>(), scratch),
                   nn::Mlp<double>(l.at("critic").get<std::vector<int>>(), scratch)};
      m.tree.add_local_with_id(lid, gid, std::move(head), l.at("members").get<std::vector<int>>());
    }
  }
  m.tree.set_next_id(meta.at("next_id"));
  m.tree.check_invariants();
  m.ids = IdEmbedding(m.sizes.id_dim, agents, scratch, meta.at("ids_enabled"));
  const auto& e = meta.at("encoder");
  m.autoencoder = nn::TrajectoryAutoencoder(e.at("input"), e.at("hidden"), e.at("latent"), scratch, e.at("kl_weight"));

  const auto& steps = meta.at("adam_steps");
  for (auto& [id, g] : m.tree.globals()) {
    const auto p = "global/" + std::to_string(id);
    restore(g.trunk.params(), p, tensors, steps.at(p));
  }
  for (auto& [id, l] : m.tree.locals()) {
    const auto pa = "local/" + std::to_string(id) + "/actor";
    const auto pc = "local/" + std::to_string(id) + "/critic";
    restore(l.head.actor.params(), pa, tensors, steps.at(pa));
    restore(l.head.critic.params(), pc, tensors, steps.at(pc));
  }
  restore(m.ids.params(), "ids", tensors, steps.at("ids"));
  restore(m.autoencoder.encoder.params(), "encoder", tensors, steps.at("encoder"));
  restore(m.autoencoder.decoder.params(), "decoder", tensors, steps.at("decoder"));

  const auto& ctl = meta.at("controller");
  ck.controller.running_divergence = ctl.at("running_divergence");
  ck.controller.period = ctl.at("period");
  ck.controller.episodes_since_regroup = ctl.at("episodes_since_regroup");
  ck.extra = meta.value("extra", json::object());
  return ck;
}

}  // namespace hagps
