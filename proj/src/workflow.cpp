#include "maskqa/workflow.hpp"

#include <algorithm>

#include "maskqa/error.hpp"
#include "maskqa/neural/checkpoint.hpp"
#include "maskqa/parallel.hpp"
#include "maskqa/rng.hpp"

namespace maskqa {

namespace fs = std::filesystem;

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

const char* method_name(Method m) {
  switch (m) {
    case Method::DAE: return "dae";
    case Method::VAESingle: return "vae-single";
    case Method::VAEMulti: return "vae-multi";
    case Method::Statistical: return "statistical";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::DAE, Method::VAESingle, Method::VAEMulti, Method::Statistical})
    if (text == method_name(m)) return m;
  fail(ErrorKind::InvalidArgument, "unknown method '" + text + "'");
}

DatasetSpec split_spec(const ExperimentConfig& cfg, Split split) {
  DatasetSpec d;
  d.anatomy = cfg.phantom.anatomy;
  d.seed = derive_seed(cfg.phantom.seed, {static_cast<std::uint64_t>(split)});
  switch (split) {
    case Split::Train:
      d.cases = cfg.phantom.train_cases;
      break;
    case Split::Val:
      d.cases = cfg.phantom.val_cases;
      break;
    case Split::Test:
      d.cases = cfg.phantom.test_cases;
      d.mix = cfg.phantom.test_mix;
      d.thresholds = cfg.use_case.thresholds;
      return d;
  }
  d.mix = DegradationMix{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  return d;
}

void generate_data(const ExperimentConfig& cfg, const fs::path& dir, int threads) {
  for (Split s : {Split::Train, Split::Val, Split::Test})
    write_dataset(build_dataset(split_spec(cfg, s), threads), dir / split_name(s));
}

std::vector<std::string> list_cases(const fs::path& dir, const std::string& sub) {
  const fs::path where = dir / sub;
  require(fs::is_directory(where), ErrorKind::MissingFile, "no such directory " + where.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(where))
    if (e.is_regular_file() && e.path().extension() == ".omv") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  require(!ids.empty(), ErrorKind::MissingFile, "no .omv files in " + where.string());
  return ids;
}

std::vector<MultiChannelVolume> load_volumes(const fs::path& dir, const std::string& sub,
                                             const std::vector<std::string>& ids, int threads) {
  std::vector<MultiChannelVolume> out(ids.size());
  parallel_for(ids.size(), threads, [&](std::size_t i) { out[i] = read_omv(dir / sub / (ids[i] + ".omv")); });
  return out;
}

std::vector<MultiChannelVolume> load_training_split(const ExperimentConfig& cfg, const fs::path& data_dir,
                                                    Split split, int threads) {
  const fs::path dir = data_dir / split_name(split);
  auto vols = load_volumes(dir, "gt", list_cases(dir, "gt"), threads);
  parallel_for(vols.size(), threads, [&](std::size_t i) {
    auto pre = preprocess_case(vols[i], cfg.use_case);
    require(pre.missing.empty(), ErrorKind::SchemaMismatch,
            "training volume lacks organ '" + (pre.missing.empty() ? "" : pre.missing.front()) + "'");
    vols[i] = std::move(pre.volume);
  });
  return vols;
}

NetworkKind network_kind_for(Method m) {
  switch (m) {
    case Method::DAE: return NetworkKind::DAE;
    case Method::VAESingle: return NetworkKind::VAESingle;
    case Method::VAEMulti: return NetworkKind::VAEMulti;
    case Method::Statistical: break;
  }
  fail(ErrorKind::InvalidArgument, "statistical method has no network");
}

std::uint64_t init_seed(const UseCaseConfig& cfg, Method m, int channel) {
  return derive_seed(cfg.train.seed, {0x1417, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(channel + 1)});
}

std::unique_ptr<Network<float>> make_network(const UseCaseConfig& cfg, Method m, int channel) {
  return build_network<float>(cfg.network(network_kind_for(m)), cfg.model_dims(), init_seed(cfg, m, channel));
}

std::string checkpoint_name(Method m, const std::string& organ) {
  if (m == Method::Statistical) return "statistical.txt";
  return std::string(method_name(m)) + (organ.empty() ? "" : "_" + organ) + ".daew";
}

std::string log_name(Method m, const std::string& organ) {
  return std::string(method_name(m)) + (organ.empty() ? "" : "_" + organ) + "_log.csv";
}

MethodTraining train_method(const ExperimentConfig& cfg, Method m, const fs::path& data_dir, const fs::path& out_dir,
                            const std::function<void(const std::string&, const EpochLog&)>& on_epoch) {
  const UseCaseConfig& uc = cfg.use_case;
  fs::create_directories(out_dir);
  const int threads = resolve_threads(cfg.threads);
  const auto train_set = load_training_split(cfg, data_dir, Split::Train, threads);
  const auto val_set = load_training_split(cfg, data_dir, Split::Val, threads);
  MethodTraining out;
  if (m == Method::Statistical) {
    auto both = train_set;
    both.insert(both.end(), val_set.begin(), val_set.end());
    save_statistical(fit_statistical(both, uc), out_dir / checkpoint_name(m));
    return out;
  }
  auto run = [&](int channel) {
    const std::string organ = channel < 0 ? "" : uc.organs[channel];
    auto net = make_network(uc, m, channel);
    TrainOptions opt;
    opt.checkpoint = out_dir / checkpoint_name(m, organ);
    opt.log_csv = out_dir / log_name(m, organ);
    opt.selection.channel = channel;
    if (on_epoch) opt.on_epoch = [&](const EpochLog& e) { on_epoch(organ, e); };
    out.results.push_back(train(*net, train_set, val_set, uc, opt));
  };
  if (m == Method::VAESingle)
    for (int c = 0; c < uc.channels(); ++c) run(c);
  else
    run(-1);
  return out;
}

namespace {

std::unique_ptr<VarAutoEncoder<float>> as_vae(std::unique_ptr<Network<float>> net) {
  auto* raw = dynamic_cast<VarAutoEncoder<float>*>(net.get());
  require(raw != nullptr, ErrorKind::Logic, "expected a VAE");
  net.release();
  return std::unique_ptr<VarAutoEncoder<float>>(raw);
}

void load_into(Network<float>& net, const fs::path& path) {
  require(fs::exists(path), ErrorKind::MissingFile, "missing checkpoint " + path.string());
  auto params = net.parameters();
  nn::load_checkpoint(params, path);
}

}  // namespace

Scorer::Scorer(const UseCaseConfig& cfg, Method m, const fs::path& model) : cfg_(cfg), method_(m) {
  const bool file = fs::is_regular_file(model);
  require(!file || m != Method::VAESingle, ErrorKind::InvalidArgument,
          "vae-single needs a model directory, not a single checkpoint");
  switch (m) {
    case Method::Statistical: {
      const fs::path p = file ? model : model / checkpoint_name(m);
      require(fs::exists(p), ErrorKind::MissingFile, "missing statistical model " + p.string());
      stats_ = load_statistical(p);
      break;
    }
    case Method::VAESingle:
      for (int c = 0; c < cfg.channels(); ++c) {
        singles_.push_back(as_vae(make_network(cfg, m, c)));
        load_into(*singles_.back(), model / checkpoint_name(m, cfg.organs[c]));
      }
      break;
    default:
      net_ = make_network(cfg, m, -1);
      load_into(*net_, file ? model : model / checkpoint_name(m));
  }
}

std::vector<double> Scorer::score(const MultiChannelVolume& auto_seg, MultiChannelVolume* recon) {
  CaseScores s;
  switch (method_) {
    case Method::Statistical: return score_statistical(stats_, auto_seg, cfg_);
    case Method::VAESingle: s = score_vae_single(singles_, auto_seg, cfg_); break;
    case Method::VAEMulti: s = score_vae(*dynamic_cast<VarAutoEncoder<float>*>(net_.get()), auto_seg, cfg_); break;
    case Method::DAE: s = score_dae(*net_, auto_seg, cfg_); break;
  }
  if (recon) *recon = std::move(s.reconstruction);
  return s.scores;
}

std::vector<ScoredCase> score_cases(const ExperimentConfig& cfg, Method m, const fs::path& model,
                                    const fs::path& cases_dir, int threads) {
  const UseCaseConfig& uc = cfg.use_case;
  const auto ids = list_cases(cases_dir, "auto");
  threads = std::max(1, std::min<int>(resolve_threads(threads), static_cast<int>(ids.size())));
  std::vector<std::unique_ptr<Scorer>> scorers;
  for (int t = 0; t < threads; ++t) scorers.push_back(std::make_unique<Scorer>(uc, m, model));

  // One contiguous chunk of cases per worker, each with its own scorer.
  std::vector<std::vector<double>> per_case(ids.size());
  const std::size_t chunk = (ids.size() + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
  parallel_for(static_cast<std::size_t>(threads), threads, [&](std::size_t t) {
    Scorer& s = *scorers[t];
    for (std::size_t i = t * chunk; i < std::min(ids.size(), (t + 1) * chunk); ++i)
      per_case[i] = s.score(read_omv(cases_dir / "auto" / (ids[i] + ".omv")));
  });

  std::vector<ScoredCase> cases;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int c = 0; c < uc.channels(); ++c) {
      ScoredCase sc;
      sc.case_id = ids[i];
      sc.organ = uc.organs[c];
      sc.score = per_case[i][c];
      cases.push_back(sc);
    }
  if (fs::exists(cases_dir / "manifest.csv")) cases = attach_truth(std::move(cases), read_manifest(cases_dir / "manifest.csv"), uc);
  return cases;
}

}  // namespace maskqa
