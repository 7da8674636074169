// maskqa: generate phantoms, train auto-encoders, score and evaluate
// segmentation quality.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maskqa/config.hpp"
#include "maskqa/corrupt.hpp"
#include "maskqa/error.hpp"
#include "maskqa/gradcheck.hpp"
#include "maskqa/parallel.hpp"
#include "maskqa/pipeline.hpp"
#include "maskqa/rng.hpp"
#include "maskqa/workflow.hpp"

using namespace maskqa;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::string data;
};

ExperimentConfig load(const Common& c) {
  require(!c.config.empty(), ErrorKind::InvalidArgument, "--config is required");
  ExperimentConfig cfg = load_config(c.config);
  if (const char* env = std::getenv("OUT_DIR"); env && *env) cfg.out_dir = env;
  if (const char* env = std::getenv("THREADS"); env && *env) {
    try {
      cfg.threads = std::stoi(env);
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidArgument, std::string("THREADS is not an integer: ") + env);
    }
  }
  if (c.threads) cfg.threads = *c.threads;
  return cfg;
}

fs::path data_dir(const Common& c, const ExperimentConfig& cfg) {
  return c.data.empty() ? fs::path(cfg.out_dir) / "data" : fs::path(c.data);
}

fs::path out_or(const Common& c, const fs::path& fallback) { return c.out.empty() ? fallback : fs::path(c.out); }

void add_common(CLI::App* app, Common& c, bool data = true) {
  app->add_option("--config", c.config, "Experiment config (JSON)")->required();
  app->add_option("--seed", c.seed, "Override the command's master seed");
  app->add_option("--out", c.out, "Output path");
  app->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
  if (data) app->add_option("--data", c.data, "Dataset root (default <out_dir>/data)");
}

int cmd_gen(const Common& c) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.phantom.seed = *c.seed;
  const fs::path out = out_or(c, fs::path(cfg.out_dir) / "data");
  generate_data(cfg, out, resolve_threads(cfg.threads));
  std::printf("wrote %d train, %d val, %d test cases to %s\n", cfg.phantom.train_cases, cfg.phantom.val_cases,
              cfg.phantom.test_cases, out.string().c_str());
  return 0;
}

fs::path find_gt(const fs::path& data, const std::string& id) {
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const fs::path p = data / split_name(s) / "gt" / (id + ".omv");
    if (fs::exists(p)) return p;
  }
  fail(ErrorKind::MissingFile, "no ground truth for case '" + id + "' under " + data.string());
}

int cmd_preview(const Common& c, const std::string& id) {
  ExperimentConfig cfg = load(c);
  const UseCaseConfig& uc = cfg.use_case;
  const auto pre = preprocess_case(read_omv(find_gt(data_dir(c, cfg), id)), uc);
  const std::uint64_t seed = c.seed ? *c.seed : uc.train.seed;
  auto [input, target] = make_training_pair(pre.volume, uc, seed);
  const fs::path out = out_or(c, fs::path(cfg.out_dir) / "preview");
  fs::create_directories(out);
  write_omv(input, out / (id + "_input.omv"));
  write_omv(target, out / (id + "_target.omv"));
  std::printf("organ,signed_dice\n");
  for (int k = 0; k < uc.channels(); ++k)
    std::printf("%s,%s\n", uc.organs[k].c_str(), format_real(signed_dice(input.channel(k), target.channel(k))).c_str());
  return 0;
}

int cmd_calibrate(const Common& c, int samples, int bins) {
  ExperimentConfig cfg = load(c);
  const UseCaseConfig& uc = cfg.use_case;
  const fs::path data = data_dir(c, cfg);
  std::vector<MultiChannelVolume> vols = load_training_split(cfg, data, Split::Train, resolve_threads(cfg.threads));
  for (auto& v : load_training_split(cfg, data, Split::Val, resolve_threads(cfg.threads))) vols.push_back(std::move(v));
  const std::uint64_t seed = c.seed ? *c.seed : uc.train.seed;
  std::printf("organ,min_bin_fraction,min,max");
  for (int b = 0; b < bins; ++b) std::printf(",bin%d", b);
  std::printf("\n");
  for (int k = 0; k < uc.channels(); ++k) {
    std::vector<VoxelMask> targets;
    for (const auto& v : vols) targets.push_back(v.channel(k));
    const auto h = calibration_histogram(targets, uc.noise[k], samples, static_cast<std::size_t>(bins),
                                         derive_seed(seed, {static_cast<std::uint64_t>(k)}));
    double lowest = 1.0;
    for (int b = 0; b < bins; ++b) lowest = std::min(lowest, h.fraction(static_cast<std::size_t>(b)));
    std::printf("%s,%.4f,%.4f,%.4f", uc.organs[k].c_str(), lowest, h.min_value, h.max_value);
    for (int b = 0; b < bins; ++b) std::printf(",%.4f", h.fraction(static_cast<std::size_t>(b)));
    std::printf("\n");
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& method, bool quiet) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.use_case.train.seed = *c.seed;
  const Method m = parse_method(method);
  const fs::path out = out_or(c, fs::path(cfg.out_dir) / "models");
  auto progress = [&](const std::string& organ, const EpochLog& e) {
    if (quiet) return;
    std::printf("%s%s epoch %d train %.5f val %.5f%s\n", method.c_str(), organ.empty() ? "" : (" " + organ).c_str(),
                e.epoch, e.train_loss, e.val_loss, e.checkpointed ? " *" : "");
    std::fflush(stdout);
  };
  const auto res = train_method(cfg, m, data_dir(c, cfg), out, progress);
  for (const auto& r : res.results)
    std::printf("best val loss %.5f at epoch %d\n", r.best_val_loss, r.best_epoch);
  std::printf("models in %s\n", out.string().c_str());
  return 0;
}

int cmd_score(const Common& c, const std::string& method, const std::string& checkpoint, const std::string& cases) {
  ExperimentConfig cfg = load(c);
  const Method m = parse_method(method);
  const fs::path model = checkpoint.empty() ? fs::path(cfg.out_dir) / "models" : fs::path(checkpoint);
  const fs::path case_dir = cases.empty() ? data_dir(c, cfg) / "test" : fs::path(cases);
  const fs::path out = out_or(c, fs::path(cfg.out_dir) / "scores" / (method + ".csv"));
  const auto scored = score_cases(cfg, m, model, case_dir, cfg.threads);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_scored_cases_csv(scored, out);
  std::printf("scored %zu rows into %s\n", scored.size(), out.string().c_str());
  return 0;
}

int cmd_eval(const Common& c, std::vector<std::string> reports, const std::string& manifest) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.eval.seed = *c.seed;
  if (reports.empty())
    for (const auto& m : cfg.methods) {
      const fs::path p = fs::path(cfg.out_dir) / "scores" / (m + ".csv");
      if (fs::exists(p)) reports.push_back(p.string());
    }
  require(!reports.empty(), ErrorKind::MissingFile, "no score reports given or found");
  std::optional<std::vector<ManifestRow>> rows;
  if (!manifest.empty()) rows = read_manifest(manifest);
  std::vector<std::pair<std::string, std::vector<ScoredCase>>> methods;
  for (const auto& r : reports) {
    require(fs::exists(r), ErrorKind::MissingFile, "missing report " + r);
    auto cases = read_scored_cases_csv(r);
    if (rows) cases = attach_truth(std::move(cases), *rows, cfg.use_case);
    methods.emplace_back(fs::path(r).stem().string(), std::move(cases));
  }
  const auto report = evaluate(methods, cfg.eval);
  const fs::path out = out_or(c, fs::path(cfg.out_dir) / "eval");
  fs::create_directories(out);
  write_evaluation_csv(report, out / "evaluation.csv");
  write_evaluation_json(report, out / "evaluation.json");
  std::printf("%-16s %-12s %-6s %8s %8s %8s %6s\n", "organ", "method", "metric", "value", "lo", "hi", "%inacc");
  for (const auto& r : report.rows) {
    const double pct = r.cases ? 100.0 * r.inaccurate / r.cases : 0.0;
    if (r.defined)
      std::printf("%-16s %-12s %-6s %8.4f %8.4f %8.4f %6.1f\n", r.organ.c_str(), r.method.c_str(), metric_name(r.metric),
                  r.result.point, r.result.lo, r.result.hi, pct);
    else
      std::printf("%-16s %-12s %-6s %8s %8s %8s %6.1f\n", r.organ.c_str(), r.method.c_str(), metric_name(r.metric),
                  "undef", "", "", pct);
  }
  return 0;
}

int cmd_explain(const Common& c, const std::string& method, const std::string& checkpoint, const std::string& cases,
                const std::string& id, const std::string& organ) {
  ExperimentConfig cfg = load(c);
  const UseCaseConfig& uc = cfg.use_case;
  const Method m = parse_method(method);
  require(m != Method::Statistical, ErrorKind::InvalidArgument, "explain needs a reconstruction-based method");
  const fs::path model = checkpoint.empty() ? fs::path(cfg.out_dir) / "models" : fs::path(checkpoint);
  const fs::path case_dir = cases.empty() ? data_dir(c, cfg) / "test" : fs::path(cases);
  const fs::path in = case_dir / "auto" / (id + ".omv");
  require(fs::exists(in), ErrorKind::MissingFile, "missing case " + in.string());

  std::vector<int> channels;
  if (organ == "all") {
    for (int k = 0; k < uc.channels(); ++k) channels.push_back(k);
  } else {
    const int k = uc.organ_index(organ);
    require(k >= 0, ErrorKind::InvalidArgument, "unknown organ '" + organ + "'");
    channels.push_back(k);
  }

  Scorer scorer(uc, m, model);
  const MultiChannelVolume pre = preprocess_case(read_omv(in), uc).volume;
  MultiChannelVolume recon;
  const auto scores = scorer.score(pre, &recon);

  std::vector<Explanation> maps;
  std::vector<std::string> names;
  const fs::path out = out_or(c, fs::path(cfg.out_dir) / "explain");
  fs::create_directories(out);
  std::ofstream comp(out / (id + "_components.csv"), std::ios::trunc);
  require(static_cast<bool>(comp), ErrorKind::Io, "cannot write components CSV");
  comp << "organ,label,voxels,lo_x,lo_y,lo_z,hi_x,hi_y,hi_z\n";
  std::printf("organ,score,auto_only,recon_only,components\n");
  for (int k : channels) {
    maps.push_back(explain(pre.channel(k), recon.channel(k)));
    names.push_back(uc.organs[k]);
    const Explanation& e = maps.back();
    for (const auto& d : e.components)
      comp << uc.organs[k] << ',' << int(d.label) << ',' << d.voxels << ',' << d.box.lo[0] << ',' << d.box.lo[1] << ','
           << d.box.lo[2] << ',' << d.box.hi[0] << ',' << d.box.hi[1] << ',' << d.box.hi[2] << '\n';
    std::printf("%s,%s,%lld,%lld,%zu\n", uc.organs[k].c_str(), format_real(scores[k]).c_str(),
                static_cast<long long>(e.counts[kAutoOnly]), static_cast<long long>(e.counts[kReconOnly]),
                e.components.size());
  }
  write_omv_image(explanation_image(maps, names, pre.spacing()), out / (id + "_explain.omv"));
  write_omv(recon, out / (id + "_recon.omv"));
  return 0;
}

int cmd_gradcheck(double tolerance, bool quick) {
  GradcheckOptions opt;
  opt.tolerance = tolerance;
  if (quick) {
    opt.random_shapes = 3;
    opt.samples_per_tensor = 6;
  }
  bool ok = true;
  auto show = [&](const std::vector<GradcheckResult>& rs) {
    for (const auto& r : rs) {
      const bool pass = r.passed(opt.tolerance);
      ok = ok && pass;
      std::printf("%-22s max_rel_error %.3e checked %lld kinks_skipped %lld %s\n", r.name.c_str(), r.max_rel_error,
                  static_cast<long long>(r.checked), static_cast<long long>(r.kinks_skipped), pass ? "PASS" : "FAIL");
      std::fflush(stdout);
    }
  };
  show(gradcheck_primitives(opt));
  show(gradcheck_networks(opt));
  require(ok, ErrorKind::Logic, "gradient check above tolerance " + format_real(opt.tolerance));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Auto-segmentation quality checks with denoising auto-encoders"};
  app.require_subcommand(1);

  Common c;
  std::string method = "dae", checkpoint, cases, case_id, organ = "all", manifest;
  std::vector<std::string> reports;
  int samples = 50, bins = 10;
  bool quiet = false, quick = false;
  double tolerance = 1e-4;

  auto* gen = app.add_subcommand("gen", "Generate train/val/test phantom datasets");
  add_common(gen, c, false);

  auto* preview = app.add_subcommand("corrupt-preview", "Write one corrupted training pair");
  add_common(preview, c);
  preview->add_option("--case", case_id, "Case id")->required();

  auto* calibrate = app.add_subcommand("calibrate", "Signed-Dice histograms of the configured noise");
  add_common(calibrate, c);
  calibrate->add_option("--samples", samples, "Corruptions per target");
  calibrate->add_option("--bins", bins, "Histogram bins");

  auto* train = app.add_subcommand("train", "Train one method");
  add_common(train, c);
  train->add_option("--method", method, "dae|vae-single|vae-multi|statistical")->required();
  train->add_flag("--quiet", quiet, "No per-epoch output");

  auto* score = app.add_subcommand("score", "Score auto-segmentations");
  add_common(score, c);
  score->add_option("--method", method, "dae|vae-single|vae-multi|statistical")->required();
  score->add_option("--checkpoint", checkpoint, "Model directory or checkpoint file");
  score->add_option("--cases", cases, "Directory with auto/ (and manifest.csv)");

  auto* eval = app.add_subcommand("eval", "AUROC/AUPR with bootstrap intervals");
  add_common(eval, c, false);
  eval->add_option("--reports", reports, "Scored-case CSVs; method = file stem");
  eval->add_option("--manifest", manifest, "Manifest to take true Dice from");

  auto* expl = app.add_subcommand("explain", "Disagreement maps for one case");
  add_common(expl, c);
  expl->add_option("--method", method, "dae|vae-single|vae-multi");
  expl->add_option("--checkpoint", checkpoint, "Model directory or checkpoint file");
  expl->add_option("--cases", cases, "Directory with auto/");
  expl->add_option("--case", case_id, "Case id")->required();
  expl->add_option("--organ", organ, "Organ name or 'all'");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--tolerance", tolerance, "Maximum relative error");
  grad->add_flag("--quick", quick, "Fewer shapes and samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error invalid-argument: %s\n", e.what());
    return exit_code_for(ErrorKind::InvalidArgument);
  }

  try {
    if (*gen) return cmd_gen(c);
    if (*preview) return cmd_preview(c, case_id);
    if (*calibrate) return cmd_calibrate(c, samples, bins);
    if (*train) return cmd_train(c, method, quiet);
    if (*score) return cmd_score(c, method, checkpoint, cases);
    if (*eval) return cmd_eval(c, reports, manifest);
    if (*expl) return cmd_explain(c, method, checkpoint, cases, case_id, organ);
    if (*grad) return cmd_gradcheck(tolerance, quick);
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::fprintf(stderr, "error %s: %s\n", std::string(error_kind_name(e.kind())).c_str(), msg.c_str());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error io: %s\n", e.what());
    return exit_code_for(ErrorKind::Io);
  }
  return 0;
}
