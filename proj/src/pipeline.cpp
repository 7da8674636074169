#include "maskqa/pipeline.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "maskqa/corrupt.hpp"
#include "maskqa/error.hpp"
#include "maskqa/neural/adam.hpp"
#include "maskqa/neural/checkpoint.hpp"
#include "maskqa/rng.hpp"

namespace maskqa {

PreprocessedCase preprocess_case(const MultiChannelVolume& raw, const UseCaseConfig& cfg) {
  require(cfg.spacing.valid() && cfg.size.valid(), ErrorKind::InvalidArgument,
          "preprocess: spacing and size must be positive");
  PreprocessedCase out;
  std::vector<VoxelMask> masks;
  for (const auto& organ : cfg.organs) {
    const int idx = raw.channel_index(organ);
    if (idx < 0) {
      out.missing.push_back(organ);
      masks.emplace_back(cfg.size, cfg.spacing);
      continue;
    }
    masks.push_back(pad_or_crop_center(resample_nearest(raw.channel(idx), cfg.spacing), cfg.size));
  }
  out.volume = MultiChannelVolume::stack(cfg.organs, masks);
  if (cfg.crop) out.volume = crop_about_foreground_com(out.volume, *cfg.crop);
  return out;
}

std::pair<MultiChannelVolume, MultiChannelVolume> make_training_pair(const MultiChannelVolume& gt,
                                                                     const UseCaseConfig& cfg,
                                                                     std::uint64_t seed) {
  require(gt.channels() == cfg.channels(), ErrorKind::DimensionMismatch,
          "training pair: volume has " + std::to_string(gt.channels()) + " channels, config " +
              std::to_string(cfg.channels()));
  require(gt.is_binary(), ErrorKind::InvalidArgument, "training pair: ground truth must be binary");
  MultiChannelVolume input = gt;
  for (int c = 0; c < gt.channels(); ++c) {
    const VoxelMask target = gt.channel(c);
    if (target.empty_foreground()) continue;
    input.set_channel(c, corrupt_mask(target, cfg.noise[c], RngSeed{derive_seed(seed, {static_cast<std::uint64_t>(c)})}));
  }
  return {std::move(input), gt};
}

MultiChannelVolume augment(const MultiChannelVolume& gt, const UseCaseConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  MultiChannelVolume out = gt;
  const bool flip = uniform_int(rng, 0, 1) == 1;
  const int axis = static_cast<int>(uniform_int(rng, 0, 2));
  const double degrees = uniform_int(rng, 0, 1) == 1 ? 10.0 : -10.0;
  const bool rotate = uniform_int(rng, 0, 1) == 1;
  if (cfg.train.augment_flip && flip) out = flip_axis(out, Axis::X, cfg.mirror_pairs);
  if (cfg.train.augment_rotate && rotate)
    for (int c = 0; c < out.channels(); ++c)
      out.set_channel(c, rotate_mask(out.channel(c), static_cast<Axis>(axis), degrees));
  return out;
}

// Training ----------------------------------------------------------------------

std::uint64_t train_pair_seed(std::uint64_t seed, int epoch, std::size_t case_index) {
  return derive_seed(seed, {0x7124, static_cast<std::uint64_t>(epoch), case_index});
}

std::uint64_t val_pair_seed(std::uint64_t seed, std::size_t case_index) {
  return derive_seed(seed, {0x7A11, case_index});
}

MultiChannelVolume ChannelSelection::apply(const MultiChannelVolume& v) const {
  if (channel < 0) return v;
  require(channel < v.channels(), ErrorKind::InvalidArgument, "channel selection out of range");
  return MultiChannelVolume::stack({v.names()[channel]}, {v.channel(channel)});
}

namespace {

VarAutoEncoder<float>* as_vae(Network<float>& net) { return dynamic_cast<VarAutoEncoder<float>*>(&net); }

std::string format_log_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + format_real(e.train_loss) + "," + format_real(e.val_loss) + "," +
         (e.checkpointed ? "1" : "0");
}

}  // namespace

double validation_loss(Network<float>& net, const std::vector<MultiChannelVolume>& val_set,
                       const UseCaseConfig& cfg, const ChannelSelection& sel, std::uint64_t seed) {
  require(!val_set.empty(), ErrorKind::InvalidArgument, "validation set is empty");
  if (auto* vae = as_vae(net)) vae->set_latent_mode(LatentMode::Mean);
  double total = 0.0;
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    auto [input, target] = make_training_pair(val_set[i], cfg, val_pair_seed(seed, i));
    total += net.loss(to_tensor<float>(sel.apply(input)), to_tensor<float>(sel.apply(target)));
  }
  return total / static_cast<double>(val_set.size());
}

TrainResult train(Network<float>& net, const std::vector<MultiChannelVolume>& train_set,
                  const std::vector<MultiChannelVolume>& val_set, const UseCaseConfig& cfg,
                  const TrainOptions& opt) {
  require(!train_set.empty() && !val_set.empty(), ErrorKind::InvalidArgument,
          "train: training and validation sets must be nonempty");
  const TrainConfig& tc = cfg.train;
  auto params = net.parameters();
  nn::AdamConfig adam;
  adam.lr = tc.lr;
  auto* vae = as_vae(net);
  const bool augmenting = tc.augment_flip || tc.augment_rotate;

  TrainResult result;
  int since_best = 0;
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(tc.seed, {0x5A0F, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<std::int64_t>(i) - 1))]);
    if (vae) vae->set_latent_mode(LatentMode::Sample, derive_seed(tc.seed, {0x1A7E, static_cast<std::uint64_t>(epoch)}));

    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<MultiChannelVolume> inputs, targets;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const auto pair_seed = train_pair_seed(tc.seed, epoch, i);
        const MultiChannelVolume gt =
            augmenting ? augment(train_set[i], cfg, derive_seed(pair_seed, {0xA9})) : train_set[i];
        auto [input, target] = make_training_pair(gt, cfg, pair_seed);
        inputs.push_back(opt.selection.apply(input));
        targets.push_back(opt.selection.apply(target));
      }
      std::vector<const MultiChannelVolume*> xi, ti;
      for (std::size_t b = 0; b < inputs.size(); ++b) {
        xi.push_back(&inputs[b]);
        ti.push_back(&targets[b]);
      }
      for (auto* p : params) p->zero_grad();
      const double loss = net.loss_and_backward(to_batch<float>(xi), to_batch<float>(ti));
      require(std::isfinite(loss), ErrorKind::NonFiniteLoss,
              "training loss became " + format_real(loss) + " at epoch " + std::to_string(epoch) + ", batch " +
                  std::to_string(start / static_cast<std::size_t>(tc.batch_size)));
      nn::adam_step<float>(params, adam);
      sum += loss * static_cast<double>(end - start);
      seen += end - start;
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = sum / static_cast<double>(seen);
    row.val_loss = validation_loss(net, val_set, cfg, opt.selection, tc.seed);
    require(std::isfinite(row.val_loss), ErrorKind::NonFiniteLoss,
            "validation loss became " + format_real(row.val_loss) + " at epoch " + std::to_string(epoch));
    if (row.val_loss < result.best_val_loss) {
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      row.checkpointed = true;
      since_best = 0;
      if (!opt.checkpoint.empty()) nn::save_checkpoint(params, opt.checkpoint);
      ++result.checkpoints_written;
    } else {
      ++since_best;
    }
    result.log.push_back(row);
    if (!opt.log_csv.empty()) write_training_log(result.log, opt.log_csv);
    if (opt.on_epoch) opt.on_epoch(row);
    if (since_best >= std::max(tc.patience, 1)) break;
  }
  return result;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss,checkpointed\n";
  for (const auto& e : log) out << format_log_row(e) << '\n';
}

std::vector<EpochLog> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "epoch,train_loss,val_loss,checkpointed", ErrorKind::SchemaMismatch,
          "unexpected training-log header in " + path.string());
  std::vector<EpochLog> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    require(f.size() == 4 && (f[3] == "0" || f[3] == "1"), ErrorKind::SchemaMismatch, "bad training-log row: " + line);
    EpochLog e;
    e.epoch = std::stoi(f[0]);
    e.train_loss = parse_real(f[1]);
    e.val_loss = parse_real(f[2]);
    e.checkpointed = f[3] == "1";
    log.push_back(e);
  }
  return log;
}

// Scoring -----------------------------------------------------------------------

CaseScores score_with_network(Network<float>& net, const MultiChannelVolume& input) {
  const nn::Tensor<float> probs = nn::sigmoid(net.forward(to_tensor<float>(input)));
  CaseScores out;
  out.reconstruction = MultiChannelVolume(input.names(), input.dims(), input.spacing());
  for (std::size_t i = 0; i < probs.data.size(); ++i)
    out.reconstruction.values()[i] = probs.data[i] > 0.5f ? 1.0f : 0.0f;
  for (int c = 0; c < input.channels(); ++c) out.scores.push_back(1.0 - dice(input, c, out.reconstruction, c));
  return out;
}

CaseScores score_dae(Network<float>& net, const MultiChannelVolume& auto_seg, const UseCaseConfig& cfg) {
  return score_with_network(net, preprocess_case(auto_seg, cfg).volume);
}

CaseScores score_vae(VarAutoEncoder<float>& net, const MultiChannelVolume& auto_seg, const UseCaseConfig& cfg,
                     LatentMode mode, std::uint64_t seed) {
  net.set_latent_mode(mode, seed);
  return score_with_network(net, preprocess_case(auto_seg, cfg).volume);
}

CaseScores score_vae_single(std::vector<std::unique_ptr<VarAutoEncoder<float>>>& nets,
                            const MultiChannelVolume& auto_seg, const UseCaseConfig& cfg, LatentMode mode,
                            std::uint64_t seed) {
  require(static_cast<int>(nets.size()) == cfg.channels(), ErrorKind::DimensionMismatch,
          "VAE-Single needs one network per organ");
  const MultiChannelVolume vol = preprocess_case(auto_seg, cfg).volume;
  CaseScores out;
  out.reconstruction = MultiChannelVolume(vol.names(), vol.dims(), vol.spacing());
  for (int c = 0; c < cfg.channels(); ++c) {
    nets[c]->set_latent_mode(mode, derive_seed(seed, {static_cast<std::uint64_t>(c)}));
    const CaseScores one = score_with_network(*nets[c], ChannelSelection{c}.apply(vol));
    out.scores.push_back(one.scores[0]);
    out.reconstruction.set_channel(c, one.reconstruction.channel(0));
  }
  return out;
}

std::vector<GaussianModel> fit_statistical(const std::vector<MultiChannelVolume>& ground_truth,
                                           const UseCaseConfig& cfg) {
  std::vector<GaussianModel> models;
  std::vector<MultiChannelVolume> pre;
  for (const auto& g : ground_truth) pre.push_back(preprocess_case(g, cfg).volume);
  for (int c = 0; c < cfg.channels(); ++c) {
    std::vector<FeatureVector> feats;
    for (const auto& v : pre)
      if (!v.channel(c).empty_foreground()) feats.push_back(extract_features(v, c));
    models.push_back(fit_gaussian(feats, cfg.organs[c]));
  }
  return models;
}

std::vector<double> score_statistical(const std::vector<GaussianModel>& models, const MultiChannelVolume& auto_seg,
                                      const UseCaseConfig& cfg) {
  const MultiChannelVolume vol = preprocess_case(auto_seg, cfg).volume;
  std::vector<double> scores;
  for (int c = 0; c < cfg.channels(); ++c) {
    const GaussianModel* model = nullptr;
    for (const auto& m : models)
      if (m.organ == cfg.organs[c]) model = &m;
    require(model != nullptr, ErrorKind::SchemaMismatch, "no statistical model for " + cfg.organs[c]);
    if (vol.channel(c).empty_foreground()) {
      scores.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    scores.push_back(mahalanobis_score(*model, extract_features(vol, c)));
  }
  return scores;
}

void save_statistical(const std::vector<GaussianModel>& models, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  for (const auto& m : models) out << serialize_model(m);
}

std::vector<GaussianModel> load_statistical(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<GaussianModel> models;
  std::string line, block;
  int lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    block += line + "\n";
    if (++lines == 3) {
      models.push_back(parse_model(block));
      block.clear();
      lines = 0;
    }
  }
  require(lines == 0, ErrorKind::Truncated, "statistical model file ends mid-block");
  return models;
}

// Labels and explanations -------------------------------------------------------------

int label_for(const UseCaseConfig& cfg, const std::string& organ, double true_dice) {
  const int idx = cfg.organ_index(organ);
  require(idx >= 0, ErrorKind::InvalidArgument, "unknown organ '" + organ + "'");
  return true_dice < cfg.thresholds[idx] ? 1 : 0;
}

void label_cases(std::vector<ScoredCase>& cases, const UseCaseConfig& cfg) {
  for (auto& c : cases) {
    require(c.true_dice.has_value(), ErrorKind::SchemaMismatch,
            "case " + c.case_id + "/" + c.organ + " has no true Dice to label");
    c.label = label_for(cfg, c.organ, *c.true_dice);
  }
}

Explanation explain(const VoxelMask& auto_seg, const VoxelMask& recon) {
  require(auto_seg.dims() == recon.dims(), ErrorKind::DimensionMismatch, "explain: masks differ in dims");
  Explanation ex;
  ex.dims = auto_seg.dims();
  const auto n = static_cast<std::size_t>(ex.dims.count());
  ex.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = auto_seg.data()[i] != 0, r = recon.data()[i] != 0;
    ex.labels[i] = a ? (r ? kBothForeground : kAutoOnly) : (r ? kReconOnly : kBothBackground);
    ++ex.counts[ex.labels[i]];
  }
  std::vector<std::uint8_t> visited(n, 0);
  const Dims d = ex.dims;
  for (std::size_t seed = 0; seed < n; ++seed) {
    const std::uint8_t lab = ex.labels[seed];
    if (lab < kAutoOnly || visited[seed]) continue;
    DisagreementComponent comp;
    comp.label = lab;
    comp.box.lo = {d.x, d.y, d.z};
    comp.box.hi = {-1, -1, -1};
    std::deque<std::size_t> queue{seed};
    visited[seed] = 1;
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      const int x = static_cast<int>(v % d.x);
      const int y = static_cast<int>((v / d.x) % d.y);
      const int z = static_cast<int>(v / (static_cast<std::size_t>(d.x) * d.y));
      ++comp.voxels;
      const std::array<int, 3> p{x, y, z};
      for (int a = 0; a < 3; ++a) {
        comp.box.lo[a] = std::min(comp.box.lo[a], p[a]);
        comp.box.hi[a] = std::max(comp.box.hi[a], p[a]);
      }
      const int nb[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
      for (const auto& o : nb) {
        const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
        if (nx < 0 || ny < 0 || nz < 0 || nx >= d.x || ny >= d.y || nz >= d.z) continue;
        const std::size_t w = static_cast<std::size_t>(nx) +
                              static_cast<std::size_t>(d.x) * (static_cast<std::size_t>(ny) + static_cast<std::size_t>(d.y) * nz);
        if (!visited[w] && ex.labels[w] == lab) {
          visited[w] = 1;
          queue.push_back(w);
        }
      }
    }
    ex.components.push_back(comp);
  }
  return ex;
}

OmvImage explanation_image(const std::vector<Explanation>& maps, const std::vector<std::string>& organs,
                           const Spacing& spacing) {
  require(!maps.empty() && maps.size() == organs.size(), ErrorKind::InvalidArgument,
          "explanation image: one map per organ required");
  OmvImage img;
  img.dims = maps.front().dims;
  img.spacing = spacing;
  img.encoding = OmvEncoding::U8;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    require(maps[i].dims == img.dims, ErrorKind::DimensionMismatch, "explanation maps differ in dims");
    img.channel_names.push_back("explain:" + organs[i]);
    img.payload.insert(img.payload.end(), maps[i].labels.begin(), maps[i].labels.end());
  }
  return img;
}

// Evaluation --------------------------------------------------------------------

EvaluationReport evaluate(const std::vector<std::pair<std::string, std::vector<ScoredCase>>>& method_cases,
                          const EvalConfig& cfg) {
  EvaluationReport report;
  for (const auto& [method, cases] : method_cases) {
    report.methods.push_back(method);
    for (const auto& c : cases)
      if (std::find(report.organs.begin(), report.organs.end(), c.organ) == report.organs.end())
        report.organs.push_back(c.organ);
  }
  for (const auto& organ : report.organs)
    for (const auto& [method, cases] : method_cases) {
      std::vector<ScoredCase> subset;
      for (const auto& c : cases)
        if (c.organ == organ) subset.push_back(c);
      int inaccurate = 0;
      for (const auto& c : subset) inaccurate += c.label;
      for (Metric m : {Metric::Auroc, Metric::Aupr}) {
        EvalRow row;
        row.organ = organ;
        row.method = method;
        row.metric = m;
        row.cases = static_cast<int>(subset.size());
        row.inaccurate = inaccurate;
        row.defined = metric_defined(m, subset);
        if (row.defined) row.result = bootstrap_ci(subset, m, cfg.bootstrap_resamples, cfg.seed, cfg.confidence);
        report.rows.push_back(row);
      }
    }
  return report;
}

void write_evaluation_csv(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "organ,method,metric,value,lo,hi,cases,inaccurate,percentage_inaccurate,status\n";
  for (const auto& r : report.rows) {
    const double pct = r.cases ? 100.0 * r.inaccurate / r.cases : 0.0;
    out << r.organ << ',' << r.method << ',' << metric_name(r.metric) << ',';
    if (r.defined)
      out << format_real(r.result.point) << ',' << format_real(r.result.lo) << ',' << format_real(r.result.hi);
    else
      out << ",,";
    out << ',' << r.cases << ',' << r.inaccurate << ',' << format_real(pct) << ','
        << (r.defined ? "defined" : "undefined") << '\n';
  }
}

void write_evaluation_json(const EvaluationReport& report, const std::filesystem::path& path) {
  using json = nlohmann::ordered_json;
  json root;
  root["methods"] = report.methods;
  json organs = json::object();
  for (const auto& organ : report.organs) {
    json o;
    json metrics = json::object();
    for (const auto& r : report.rows) {
      if (r.organ != organ) continue;
      o["cases"] = r.cases;
      o["inaccurate"] = r.inaccurate;
      o["percentage_inaccurate"] = r.cases ? 100.0 * r.inaccurate / r.cases : 0.0;
      json entry;
      if (r.defined) {
        entry = {{"value", r.result.point},
                 {"lo", r.result.lo},
                 {"hi", r.result.hi},
                 {"resamples_used", r.result.used},
                 {"resamples_skipped", r.result.skipped}};
      } else {
        entry = {{"value", nullptr}, {"lo", nullptr}, {"hi", nullptr}, {"status", "undefined"}};
      }
      metrics[r.method][metric_name(r.metric)] = entry;
    }
    o["metrics"] = metrics;
    organs[organ] = o;
  }
  root["organs"] = organs;
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << root.dump(2) << '\n';
}

std::vector<ScoredCase> attach_truth(std::vector<ScoredCase> cases, const std::vector<ManifestRow>& manifest,
                                     const UseCaseConfig& cfg) {
  std::map<std::pair<std::string, std::string>, double> truth;
  for (const auto& r : manifest) truth[{r.case_id, r.organ}] = r.true_dice;
  for (auto& c : cases) {
    auto it = truth.find({c.case_id, c.organ});
    require(it != truth.end(), ErrorKind::SchemaMismatch,
            "manifest has no row for " + c.case_id + "/" + c.organ);
    c.true_dice = it->second;
  }
  label_cases(cases, cfg);
  return cases;
}

}  // namespace maskqa
