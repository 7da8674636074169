#include "maskqa/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "maskqa/error.hpp"

namespace maskqa {

using json = nlohmann::ordered_json;

std::string center_sampling_name(CenterSampling s) {
  return s == CenterSampling::Foreground ? "foreground" : "bounding_box";
}

void UseCaseConfig::validate() const {
  require(!organs.empty(), ErrorKind::ConfigParse, "config: organs list is empty");
  std::set<std::string> seen;
  for (const auto& o : organs)
    require(!o.empty() && seen.insert(o).second, ErrorKind::ConfigParse,
            "config: organ names must be unique and nonempty");
  const auto C = organs.size();
  require(noise.size() == C, ErrorKind::ConfigParse, "config: need one noise spec per organ");
  require(thresholds.size() == C, ErrorKind::ConfigParse, "config: need one threshold per organ");
  for (double t : thresholds)
    require(t > 0.0 && t < 1.0, ErrorKind::ConfigParse, "config: thresholds must lie in (0, 1)");
  for (const auto& n : noise) n.validate();
  require(spacing.valid() && size.valid(), ErrorKind::ConfigParse, "config: spacing and size must be positive");
  if (crop) require(crop->valid(), ErrorKind::ConfigParse, "config: crop must be positive");
  for (const auto& [a, b] : mirror_pairs)
    require(a >= 0 && b >= 0 && a < channels() && b < channels() && a != b, ErrorKind::ConfigParse,
            "config: bad mirror pair");
  require(train.batch_size >= 1 && train.max_epochs >= 1 && train.patience >= 0 && train.lr > 0,
          ErrorKind::ConfigParse, "config: bad train settings");
  require(dae.kind == NetworkKind::DAE && dae.in_channels == channels() && dae.out_channels == channels(),
          ErrorKind::ConfigParse, "config: dae channels must equal the organ count");
  require(vae_multi.in_channels == channels() && vae_multi.out_channels == channels(),
          ErrorKind::ConfigParse, "config: vae_multi channels must equal the organ count");
  require(vae_single.in_channels == 1 && vae_single.out_channels == 1, ErrorKind::ConfigParse,
          "config: vae_single is a one-channel network");
  for (const NetworkSpec* s : {&dae, &vae_single, &vae_multi}) {
    try {
      s->validate();
    } catch (const Error& e) {
      fail(ErrorKind::ConfigParse, std::string("config: ") + e.what());
    }
    const Dims d = model_dims();
    for (int a = 0; a < 3; ++a)
      require(d[a] % s->total_stride() == 0, ErrorKind::ConfigParse,
              std::string("config: model dims not divisible by the ") + network_kind_name(s->kind) +
                  " stride product");
  }
}

int UseCaseConfig::organ_index(const std::string& organ) const {
  for (int i = 0; i < channels(); ++i)
    if (organs[i] == organ) return i;
  return -1;
}

const NetworkSpec& UseCaseConfig::network(NetworkKind kind) const {
  switch (kind) {
    case NetworkKind::DAE: return dae;
    case NetworkKind::VAESingle: return vae_single;
    case NetworkKind::VAEMulti: return vae_multi;
  }
  return dae;
}

void ExperimentConfig::validate() const {
  use_case.validate();
  for (const auto& m : methods)
    require(m == "dae" || m == "vae-single" || m == "vae-multi" || m == "statistical",
            ErrorKind::ConfigParse, "config: unknown method '" + m + "'");
  require(phantom.train_cases >= 1 && phantom.val_cases >= 1 && phantom.test_cases >= 1,
          ErrorKind::ConfigParse, "config: phantom case counts must be >= 1");
  require(eval.bootstrap_resamples >= 0 && eval.confidence > 0 && eval.confidence < 1,
          ErrorKind::ConfigParse, "config: bad evaluation settings");
  const auto organs = layout_organs(phantom.anatomy.layout);
  require(organs == use_case.organs, ErrorKind::ConfigParse,
          "config: organs must match the phantom layout's channel order");
}

// Parsing -------------------------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), ErrorKind::ConfigParse, "config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, ErrorKind::ConfigParse, "config: unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  require(j.contains(key), ErrorKind::ConfigParse, "config: missing key '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigParse, "config: bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return get<T>(j, key, where);
}

Dims parse_dims(const json& j, const std::string& where) {
  require(j.is_array() && j.size() == 3, ErrorKind::ConfigParse, "config: " + where + " must be [x, y, z]");
  try {
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigParse, "config: " + where + ": " + e.what());
  }
}

Spacing parse_spacing(const json& j, const std::string& where) {
  require(j.is_array() && j.size() == 3, ErrorKind::ConfigParse, "config: " + where + " must be [x, y, z]");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigParse, "config: " + where + ": " + e.what());
  }
}

NoiseSpec parse_noise(const json& j, const std::string& where) {
  check_keys(j, {"max_patches", "min_patch", "max_patch", "center_sampling"}, where);
  NoiseSpec n;
  n.max_patches = get<int>(j, "max_patches", where);
  n.min_patch = get<int>(j, "min_patch", where);
  n.max_patch = get<int>(j, "max_patch", where);
  const auto cs = get<std::string>(j, "center_sampling", where);
  require(cs == "foreground" || cs == "bounding_box", ErrorKind::ConfigParse,
          "config: center_sampling must be foreground or bounding_box in " + where);
  n.center_sampling = cs == "foreground" ? CenterSampling::Foreground : CenterSampling::BoundingBox;
  return n;
}

json dump_noise(const NoiseSpec& n) {
  json j;
  j["max_patches"] = n.max_patches;
  j["min_patch"] = n.min_patch;
  j["max_patch"] = n.max_patch;
  j["center_sampling"] = center_sampling_name(n.center_sampling);
  return j;
}

NetworkSpec parse_network(const json& j, NetworkKind kind, int channels, const std::string& where) {
  check_keys(j, {"channels", "strides", "num_res_units", "latent_size", "kl_weight"}, where);
  NetworkSpec s;
  s.kind = kind;
  s.in_channels = s.out_channels = channels;
  s.channels = get<std::vector<int>>(j, "channels", where);
  s.strides = get<std::vector<int>>(j, "strides", where);
  s.num_res_units = get_or<int>(j, "num_res_units", kind == NetworkKind::DAE ? 2 : 0, where);
  if (kind != NetworkKind::DAE) {
    s.latent_size = get<int>(j, "latent_size", where);
    s.kl_weight = get_or<double>(j, "kl_weight", 1e-3, where);
  } else {
    require(!j.contains("latent_size") && !j.contains("kl_weight"), ErrorKind::ConfigParse,
            "config: latent_size and kl_weight apply to VAE networks only");
  }
  return s;
}

json dump_network(const NetworkSpec& s) {
  json j;
  j["channels"] = s.channels;
  j["strides"] = s.strides;
  j["num_res_units"] = s.num_res_units;
  if (s.is_vae()) {
    j["latent_size"] = s.latent_size;
    j["kl_weight"] = s.kl_weight;
  }
  return j;
}

DegradationMix parse_mix(const json& j, const std::string& where) {
  check_keys(j, {"identity", "erode", "dilate", "truncate", "gap", "patch", "morph_max_k", "truncate_min",
                 "truncate_max", "gap_min", "gap_max", "patch_noise"},
             where);
  DegradationMix m;
  m.identity = get_or(j, "identity", m.identity, where);
  m.erode = get_or(j, "erode", m.erode, where);
  m.dilate = get_or(j, "dilate", m.dilate, where);
  m.truncate = get_or(j, "truncate", m.truncate, where);
  m.gap = get_or(j, "gap", m.gap, where);
  m.patch = get_or(j, "patch", m.patch, where);
  m.morph_max_k = get_or(j, "morph_max_k", m.morph_max_k, where);
  m.truncate_min = get_or(j, "truncate_min", m.truncate_min, where);
  m.truncate_max = get_or(j, "truncate_max", m.truncate_max, where);
  m.gap_min = get_or(j, "gap_min", m.gap_min, where);
  m.gap_max = get_or(j, "gap_max", m.gap_max, where);
  if (j.contains("patch_noise")) m.patch_noise = parse_noise(j["patch_noise"], where + ".patch_noise");
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorKind::ConfigParse, std::string("config: ") + e.what());
  }
  return m;
}

json dump_mix(const DegradationMix& m) {
  json j;
  j["identity"] = m.identity;
  j["erode"] = m.erode;
  j["dilate"] = m.dilate;
  j["truncate"] = m.truncate;
  j["gap"] = m.gap;
  j["patch"] = m.patch;
  j["morph_max_k"] = m.morph_max_k;
  j["truncate_min"] = m.truncate_min;
  j["truncate_max"] = m.truncate_max;
  j["gap_min"] = m.gap_min;
  j["gap_max"] = m.gap_max;
  j["patch_noise"] = dump_noise(m.patch_noise);
  return j;
}

template <class T, class F>
std::vector<T> per_organ(const json& j, const std::vector<std::string>& organs, const std::string& where, F parse) {
  require(j.is_object(), ErrorKind::ConfigParse, "config: " + where + " must map organ names to values");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& o : organs) known = known || o == key;
    require(known, ErrorKind::ConfigParse, "config: unknown organ '" + key + "' in " + where);
  }
  std::vector<T> out;
  for (const auto& o : organs) {
    require(j.contains(o), ErrorKind::ConfigParse, "config: " + where + " lacks organ '" + o + "'");
    out.push_back(parse(j[o], where + "." + o));
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigParse, std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(root, {"name", "organs", "spacing", "size", "crop", "noise", "thresholds", "mirror_pairs", "networks",
                    "train", "phantom", "evaluation", "methods", "out_dir", "threads"},
             "top level");
  ExperimentConfig cfg;
  UseCaseConfig& u = cfg.use_case;
  u.name = get<std::string>(root, "name", "top level");
  u.organs = get<std::vector<std::string>>(root, "organs", "top level");
  require(!u.organs.empty(), ErrorKind::ConfigParse, "config: organs list is empty");
  u.spacing = parse_spacing(root.at("spacing"), "spacing");
  require(root.contains("size"), ErrorKind::ConfigParse, "config: missing key 'size'");
  u.size = parse_dims(root["size"], "size");
  if (root.contains("crop") && !root["crop"].is_null()) u.crop = parse_dims(root["crop"], "crop");
  require(root.contains("noise") && root.contains("thresholds"), ErrorKind::ConfigParse,
          "config: noise and thresholds are required");
  u.noise = per_organ<NoiseSpec>(root["noise"], u.organs, "noise", parse_noise);
  u.thresholds = per_organ<double>(root["thresholds"], u.organs, "thresholds", [](const json& v, const std::string& w) {
    require(v.is_number(), ErrorKind::ConfigParse, "config: " + w + " must be a number");
    return v.get<double>();
  });
  if (root.contains("mirror_pairs")) {
    const auto pairs = get<std::vector<std::vector<std::string>>>(root, "mirror_pairs", "top level");
    for (const auto& p : pairs) {
      require(p.size() == 2, ErrorKind::ConfigParse, "config: mirror_pairs entries need two organs");
      u.mirror_pairs.emplace_back(u.organ_index(p[0]), u.organ_index(p[1]));
    }
  }
  const int C = static_cast<int>(u.organs.size());
  require(root.contains("networks"), ErrorKind::ConfigParse, "config: missing key 'networks'");
  const json& nets = root["networks"];
  check_keys(nets, {"dae", "vae_single", "vae_multi"}, "networks");
  for (const char* k : {"dae", "vae_single", "vae_multi"})
    require(nets.contains(k), ErrorKind::ConfigParse, std::string("config: networks lacks '") + k + "'");
  u.dae = parse_network(nets["dae"], NetworkKind::DAE, C, "networks.dae");
  u.vae_single = parse_network(nets["vae_single"], NetworkKind::VAESingle, 1, "networks.vae_single");
  u.vae_multi = parse_network(nets["vae_multi"], NetworkKind::VAEMulti, C, "networks.vae_multi");

  if (root.contains("train")) {
    const json& t = root["train"];
    const std::string w = "train";
    check_keys(t, {"batch_size", "max_epochs", "patience", "lr", "seed", "augment_flip", "augment_rotate"}, w);
    TrainConfig& tc = u.train;
    tc.batch_size = get_or(t, "batch_size", tc.batch_size, w);
    tc.max_epochs = get_or(t, "max_epochs", tc.max_epochs, w);
    tc.patience = get_or(t, "patience", tc.patience, w);
    tc.lr = get_or(t, "lr", tc.lr, w);
    tc.seed = get_or<std::uint64_t>(t, "seed", tc.seed, w);
    tc.augment_flip = get_or(t, "augment_flip", tc.augment_flip, w);
    tc.augment_rotate = get_or(t, "augment_rotate", tc.augment_rotate, w);
  }
  if (root.contains("phantom")) {
    const json& p = root["phantom"];
    const std::string w = "phantom";
    check_keys(p, {"layout", "dims", "spacing", "global_jitter", "organ_jitter", "radius_jitter", "train_cases",
                   "val_cases", "test_cases", "seed", "test_mix"},
               w);
    PhantomConfig& pc = cfg.phantom;
    pc.anatomy.layout = parse_layout(get<std::string>(p, "layout", w));
    pc.anatomy.dims = p.contains("dims") ? parse_dims(p["dims"], "phantom.dims") : u.size;
    pc.anatomy.spacing = p.contains("spacing") ? parse_spacing(p["spacing"], "phantom.spacing") : u.spacing;
    pc.anatomy.global_jitter = get_or(p, "global_jitter", pc.anatomy.global_jitter, w);
    pc.anatomy.organ_jitter = get_or(p, "organ_jitter", pc.anatomy.organ_jitter, w);
    pc.anatomy.radius_jitter = get_or(p, "radius_jitter", pc.anatomy.radius_jitter, w);
    pc.train_cases = get_or(p, "train_cases", pc.train_cases, w);
    pc.val_cases = get_or(p, "val_cases", pc.val_cases, w);
    pc.test_cases = get_or(p, "test_cases", pc.test_cases, w);
    pc.seed = get_or<std::uint64_t>(p, "seed", pc.seed, w);
    if (p.contains("test_mix")) pc.test_mix = parse_mix(p["test_mix"], "phantom.test_mix");
  } else {
    cfg.phantom.anatomy.dims = u.size;
    cfg.phantom.anatomy.spacing = u.spacing;
    cfg.phantom.anatomy.layout = C == 2 ? Layout::KidneyLike2 : Layout::PelvisLike7;
  }
  if (root.contains("evaluation")) {
    const json& e = root["evaluation"];
    const std::string w = "evaluation";
    check_keys(e, {"bootstrap_resamples", "confidence", "seed"}, w);
    cfg.eval.bootstrap_resamples = get_or(e, "bootstrap_resamples", cfg.eval.bootstrap_resamples, w);
    cfg.eval.confidence = get_or(e, "confidence", cfg.eval.confidence, w);
    cfg.eval.seed = get_or<std::uint64_t>(e, "seed", cfg.eval.seed, w);
  }
  cfg.methods = get_or<std::vector<std::string>>(root, "methods", {"dae", "vae-single", "vae-multi", "statistical"},
                                                 "top level");
  cfg.out_dir = get_or<std::string>(root, "out_dir", cfg.out_dir, "top level");
  cfg.threads = get_or(root, "threads", cfg.threads, "top level");
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  const UseCaseConfig& u = cfg.use_case;
  json root;
  root["name"] = u.name;
  root["organs"] = u.organs;
  root["spacing"] = {u.spacing.x, u.spacing.y, u.spacing.z};
  root["size"] = {u.size.x, u.size.y, u.size.z};
  root["crop"] = u.crop ? json{u.crop->x, u.crop->y, u.crop->z} : json(nullptr);
  json noise = json::object(), thresholds = json::object();
  for (int c = 0; c < u.channels(); ++c) {
    noise[u.organs[c]] = dump_noise(u.noise[c]);
    thresholds[u.organs[c]] = u.thresholds[c];
  }
  root["noise"] = noise;
  root["thresholds"] = thresholds;
  json pairs = json::array();
  for (const auto& [a, b] : u.mirror_pairs) pairs.push_back({u.organs[a], u.organs[b]});
  root["mirror_pairs"] = pairs;
  root["networks"] = {{"dae", dump_network(u.dae)},
                      {"vae_single", dump_network(u.vae_single)},
                      {"vae_multi", dump_network(u.vae_multi)}};
  const TrainConfig& t = u.train;
  root["train"] = {{"batch_size", t.batch_size},     {"max_epochs", t.max_epochs}, {"patience", t.patience},
                   {"lr", t.lr},                     {"seed", t.seed},             {"augment_flip", t.augment_flip},
                   {"augment_rotate", t.augment_rotate}};
  const PhantomConfig& p = cfg.phantom;
  root["phantom"] = {{"layout", layout_name(p.anatomy.layout)},
                     {"dims", {p.anatomy.dims.x, p.anatomy.dims.y, p.anatomy.dims.z}},
                     {"spacing", {p.anatomy.spacing.x, p.anatomy.spacing.y, p.anatomy.spacing.z}},
                     {"global_jitter", p.anatomy.global_jitter},
                     {"organ_jitter", p.anatomy.organ_jitter},
                     {"radius_jitter", p.anatomy.radius_jitter},
                     {"train_cases", p.train_cases},
                     {"val_cases", p.val_cases},
                     {"test_cases", p.test_cases},
                     {"seed", p.seed},
                     {"test_mix", dump_mix(p.test_mix)}};
  root["evaluation"] = {{"bootstrap_resamples", cfg.eval.bootstrap_resamples},
                        {"confidence", cfg.eval.confidence},
                        {"seed", cfg.eval.seed}};
  root["methods"] = cfg.methods;
  root["out_dir"] = cfg.out_dir;
  root["threads"] = cfg.threads;
  return root.dump(2) + "\n";
}

}  // namespace maskqa
