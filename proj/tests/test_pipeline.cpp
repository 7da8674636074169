#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>

#include "maskqa/pipeline.hpp"
#include "oracles.hpp"

using namespace maskqa;

namespace {

const char* kTinyConfig = R"({
  "name": "tiny",
  "organs": ["kidney_l", "kidney_r"],
  "spacing": [1.0, 1.0, 1.0],
  "size": [8, 8, 8],
  "crop": null,
  "noise": {
    "kidney_l": {"max_patches": 2, "min_patch": 1, "max_patch": 3, "center_sampling": "foreground"},
    "kidney_r": {"max_patches": 2, "min_patch": 1, "max_patch": 3, "center_sampling": "bounding_box"}
  },
  "thresholds": {"kidney_l": 0.5, "kidney_r": 0.9},
  "mirror_pairs": [],
  "networks": {
    "dae": {"channels": [4, 8], "strides": [2], "num_res_units": 0},
    "vae_single": {"channels": [4, 8], "strides": [2, 2], "latent_size": 4, "kl_weight": 0.001},
    "vae_multi": {"channels": [4, 8], "strides": [2, 2], "latent_size": 4, "kl_weight": 0.001}
  },
  "train": {"batch_size": 2, "max_epochs": 1, "patience": 0, "lr": 0.001, "seed": 3,
            "augment_flip": false, "augment_rotate": false},
  "phantom": {"layout": "kidney2", "train_cases": 2, "val_cases": 1, "test_cases": 2, "seed": 5},
  "evaluation": {"bootstrap_resamples": 50, "confidence": 0.9, "seed": 1},
  "methods": ["dae"],
  "out_dir": "out/tiny",
  "threads": 1
})";

UseCaseConfig tiny() { return parse_config(kTinyConfig).use_case; }

MultiChannelVolume two_balls(double ra, double rb) {
  return MultiChannelVolume::stack({"kidney_l", "kidney_r"}, {oracle::ball({8, 8, 8}, 3.5, 3.5, 3.5, ra),
                                                oracle::ball({8, 8, 8}, 3.5, 3.5, 3.5, rb)});
}

ScoredCase sc(const std::string& organ, double score, int label, double dice = 1.0) {
  return {"c", organ, score, label, dice};
}

// Components by flood fill over 6-neighbours with equal label (> 1).
int count_components(const std::vector<std::uint8_t>& lab, Dims d) {
  std::vector<char> seen(lab.size(), 0);
  int n = 0;
  auto idx = [&](int x, int y, int z) { return x + d.x * (y + d.y * z); };
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const int i = idx(x, y, z);
        if (lab[i] < 2 || seen[i]) continue;
        ++n;
        std::queue<std::array<int, 3>> q;
        q.push({x, y, z});
        seen[i] = 1;
        while (!q.empty()) {
          auto [a, b, c] = q.front();
          q.pop();
          const int nb[6][3] = {{a - 1, b, c}, {a + 1, b, c}, {a, b - 1, c}, {a, b + 1, c}, {a, b, c - 1}, {a, b, c + 1}};
          for (auto& p : nb) {
            if (p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] >= d.x || p[1] >= d.y || p[2] >= d.z) continue;
            const int j = idx(p[0], p[1], p[2]);
            if (!seen[j] && lab[j] == lab[i]) {
              seen[j] = 1;
              q.push({p[0], p[1], p[2]});
            }
          }
        }
      }
  return n;
}

}  // namespace

TEST_CASE("labels use a strict threshold") {
  const UseCaseConfig cfg = tiny();
  CHECK(label_for(cfg, "kidney_l", 0.5) == 0);
  CHECK(label_for(cfg, "kidney_l", std::nextafter(0.5, 0.0)) == 1);
  CHECK(label_for(cfg, "kidney_r", 0.95) == 0);
  CHECK(label_for(cfg, "kidney_r", 0.0) == 1);
  CHECK(oracle::raised([&] { label_for(cfg, "c", 0.1); }) == ErrorKind::InvalidArgument);

  std::vector<ScoredCase> cs{sc("kidney_l", 0, 0, 0.2), sc("kidney_r", 0, 1, 0.95)};
  label_cases(cs, cfg);
  CHECK(cs[0].label == 1);
  CHECK(cs[1].label == 0);
}

TEST_CASE("preprocessing matches channels by name") {
  const UseCaseConfig cfg = tiny();
  VoxelMask b = oracle::ball({4, 4, 4}, 1.5, 1.5, 1.5, 1);
  b = VoxelMask(b.dims(), {2, 2, 2}, b.data());
  const auto raw = MultiChannelVolume::stack({"kidney_r", "extra"}, {b, b});
  const auto pre = preprocess_case(raw, cfg);
  CHECK(pre.volume.names() == cfg.organs);
  CHECK(pre.volume.dims() == Dims{8, 8, 8});
  CHECK(pre.missing == std::vector<std::string>{"kidney_l"});
  CHECK(oracle::count(pre.volume.channel(0)) == 0);
  CHECK(oracle::count(pre.volume.channel(1)) == 8 * oracle::count(b));
}

TEST_CASE("training pairs corrupt each nonempty channel with its own seed") {
  const UseCaseConfig cfg = tiny();
  MultiChannelVolume gt = two_balls(2.5, 0);
  const auto [input, target] = make_training_pair(gt, cfg, 42);
  CHECK(target == gt);
  CHECK(input.channel(0) == corrupt_mask(gt.channel(0), cfg.noise[0], {derive_seed(42, {0})}));
  CHECK(oracle::count(input.channel(1)) == 0);
  CHECK(make_training_pair(gt, cfg, 42).first == input);
}

TEST_CASE("explain labels and components") {
  const VoxelMask gt = oracle::ball({16, 16, 16}, 7.5, 7.5, 7.5, 6);
  VoxelMask autoseg = gt;
  // two separated removed blocks
  for (int z = 6; z < 9; ++z)
    for (int y = 6; y < 9; ++y) {
      for (int x = 2; x < 4; ++x) autoseg.set(x, y, z, 0);
      for (int x = 11; x < 14; ++x) autoseg.set(x, y, z, 0);
    }
  // one spurious added voxel outside the organ
  autoseg.set(0, 0, 0, 1);
  const auto e = explain(autoseg, gt);
  CHECK(e.dims == gt.dims());
  std::array<std::int64_t, 4> counts{};
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const int a = autoseg.at(x, y, z), r = gt.at(x, y, z);
        const int expect = a && r ? 1 : a ? 2 : r ? 3 : 0;
        ++counts[expect];
        CHECK(e.labels[x + 16 * (y + 16 * z)] == expect);
      }
  CHECK(e.counts == counts);
  CHECK(counts[3] == 18 + 27);
  CHECK(counts[2] == 1);
  CHECK(static_cast<int>(e.components.size()) == count_components(e.labels, gt.dims()));
  CHECK(e.components.size() == 3);
  CHECK(e.components[0].label == kAutoOnly);
  CHECK(e.components[0].voxels == 1);
  CHECK(e.components[1].voxels + e.components[2].voxels == 45);

  const auto img = explanation_image({e}, {"kidney_l"}, {1, 1, 1});
  CHECK(img.channel_names == std::vector<std::string>{"explain:kidney_l"});
  CHECK(oracle::raised([&] { explain(gt, VoxelMask(Dims{2, 2, 2}, {1, 1, 1})); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("evaluation on trivial score sets") {
  EvalConfig ec;
  ec.bootstrap_resamples = 100;
  std::vector<ScoredCase> perfect{sc("kidney_l", 0.9, 1), sc("kidney_l", 0.8, 1), sc("kidney_l", 0.1, 0), sc("kidney_l", 0.2, 0),
                                  sc("kidney_r", 0.3, 0), sc("kidney_r", 0.4, 0)};
  const auto rep = evaluate({{"dae", perfect}}, ec);
  CHECK(rep.organs == std::vector<std::string>{"kidney_l", "kidney_r"});
  REQUIRE(rep.rows.size() == 4);
  for (const auto& r : rep.rows) {
    if (r.organ == "kidney_l") {
      CHECK(r.defined);
      CHECK(r.result.point == 1.0);
      CHECK(r.result.lo == 1.0);
      CHECK(r.inaccurate == 2);
      CHECK(r.cases == 4);
    } else {
      CHECK_FALSE(r.defined);
      CHECK(r.inaccurate == 0);
    }
  }
  const auto dir = std::filesystem::temp_directory_path() / "maskqa_eval_test";
  std::filesystem::create_directories(dir);
  write_evaluation_csv(rep, dir / "e.csv");
  write_evaluation_json(rep, dir / "e.json");
  std::ifstream in(dir / "e.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "organ,method,metric,value,lo,hi,cases,inaccurate,percentage_inaccurate,status");
  int lines = 0;
  for (std::string l; std::getline(in, l);) lines += !l.empty();
  CHECK(lines == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("attach_truth joins the manifest") {
  const UseCaseConfig cfg = tiny();
  std::vector<ScoredCase> cs{{"case_000", "kidney_l", 0.3, 0, {}}, {"case_000", "kidney_r", 0.1, 0, {}}};
  std::vector<ManifestRow> rows{{"case_000", "kidney_l", 0.4, "erode:1"}, {"case_000", "kidney_r", 0.95, "identity"}};
  const auto joined = attach_truth(cs, rows, cfg);
  CHECK(joined[0].true_dice == 0.4);
  CHECK(joined[0].label == 1);
  CHECK(joined[1].label == 0);
  rows.pop_back();
  CHECK(oracle::raised([&] { attach_truth(cs, rows, cfg); }) == ErrorKind::SchemaMismatch);
}

TEST_CASE("statistical baseline") {
  UseCaseConfig cfg = tiny();
  std::vector<MultiChannelVolume> gts;
  for (int i = 0; i < 8; ++i) gts.push_back(two_balls(1.5 + 0.25 * i, 2.0 + 0.2 * (i % 3)));
  const auto models = fit_statistical(gts, cfg);
  REQUIRE(models.size() == 2);
  CHECK(models[0].organ == "kidney_l");
  CHECK(models[0].samples == 8);
  const auto path = std::filesystem::temp_directory_path() / "maskqa_stat.txt";
  save_statistical(models, path);
  const auto back = load_statistical(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].covariance == models[1].covariance);
  std::filesystem::remove(path);

  const auto s = score_statistical(models, two_balls(0, 2.0), cfg);
  CHECK(std::isinf(s[0]));
  CHECK(std::isfinite(s[1]));
}

TEST_CASE("training with patience 0 and one epoch writes one checkpoint") {
  UseCaseConfig cfg = tiny();
  const std::vector<MultiChannelVolume> train_set{two_balls(2.5, 1.5), two_balls(2.0, 2.5), two_balls(3, 1)};
  const std::vector<MultiChannelVolume> val_set{two_balls(2.2, 2.0)};
  auto net = build_network<float>(cfg.dae, cfg.model_dims(), 1);
  const auto dir = std::filesystem::temp_directory_path() / "maskqa_train_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainOptions opt;
  opt.checkpoint = dir / "m.daew";
  opt.log_csv = dir / "log.csv";
  const auto res = train(*net, train_set, val_set, cfg, opt);
  CHECK(res.log.size() == 1);
  CHECK(res.checkpoints_written == 1);
  CHECK(res.log[0].checkpointed);
  CHECK(std::filesystem::exists(opt.checkpoint));
  const auto log = read_training_log(opt.log_csv);
  REQUIRE(log.size() == 1);
  CHECK(log[0].val_loss == res.log[0].val_loss);

  // reruns are bit-identical
  auto net2 = build_network<float>(cfg.dae, cfg.model_dims(), 1);
  TrainOptions opt2;
  opt2.checkpoint = dir / "m2.daew";
  const auto res2 = train(*net2, train_set, val_set, cfg, opt2);
  CHECK(res2.log[0].train_loss == res.log[0].train_loss);
  CHECK(res2.log[0].val_loss == res.log[0].val_loss);

  // patience 1 stops one epoch after the last strict improvement
  cfg.train.max_epochs = 40;
  cfg.train.patience = 1;
  cfg.train.lr = 0.0;
  auto frozen = build_network<float>(cfg.dae, cfg.model_dims(), 1);
  TrainOptions opt3;
  opt3.checkpoint = dir / "m3.daew";
  const auto res3 = train(*frozen, train_set, val_set, cfg, opt3);
  CHECK(res3.log.size() == 2);
  CHECK(res3.checkpoints_written == 1);

  const auto scored = score_dae(*net, val_set[0], cfg);
  CHECK(scored.scores.size() == 2);
  for (double v : scored.scores) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::filesystem::remove_all(dir);
}
