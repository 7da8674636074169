#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "maskqa/config.hpp"
#include "maskqa/geomstats.hpp"
#include "maskqa/metrics.hpp"
#include "maskqa/nets.hpp"

namespace maskqa {

// Preprocessing -----------------------------------------------------------------

struct PreprocessedCase {
  MultiChannelVolume volume;          // channels in cfg.organs order
  std::vector<std::string> missing;   // organs absent from the input (left empty)
};

/// Per organ: resample_nearest to cfg.spacing, pad_or_crop_center to
/// cfg.size; stack; then crop_about_foreground_com to cfg.crop when set.
/// Channels are matched to organs by name.
PreprocessedCase preprocess_case(const MultiChannelVolume& raw, const UseCaseConfig& cfg);

/// Target = gt; input = each nonempty channel corrupted with its organ's
/// NoiseSpec under derive_seed(seed, {channel}). Empty channels stay empty.
std::pair<MultiChannelVolume, MultiChannelVolume> make_training_pair(const MultiChannelVolume& gt,
                                                                     const UseCaseConfig& cfg,
                                                                     std::uint64_t seed);

/// Training-time augmentation per cfg.train (flip and/or +-10 degree rotation).
MultiChannelVolume augment(const MultiChannelVolume& gt, const UseCaseConfig& cfg, std::uint64_t seed);

// Training ----------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool checkpointed = false;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int checkpoints_written = 0;
};

/// Seed streams used by train(); exposed so tests can rebuild the pairs.
std::uint64_t train_pair_seed(std::uint64_t seed, int epoch, std::size_t case_index);
std::uint64_t val_pair_seed(std::uint64_t seed, std::size_t case_index);

/// Which slice of each volume a model sees: all channels, or one organ for
/// VAE-Single.
struct ChannelSelection {
  int channel = -1;  // -1 = all
  MultiChannelVolume apply(const MultiChannelVolume& v) const;
};

struct TrainOptions {
  std::filesystem::path checkpoint;  // written on every strict improvement
  std::filesystem::path log_csv;     // optional; rewritten after each epoch
  ChannelSelection selection;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Adam on soft Dice (+ KL for VAEs) over freshly corrupted training pairs;
/// validation pairs use fixed seeds. Stops at max_epochs or after `patience`
/// (at least 1) epochs without strict improvement.
TrainResult train(Network<float>& net, const std::vector<MultiChannelVolume>& train_set,
                  const std::vector<MultiChannelVolume>& val_set, const UseCaseConfig& cfg,
                  const TrainOptions& opt);

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);
std::vector<EpochLog> read_training_log(const std::filesystem::path& path);

/// Mean soft Dice loss (+ regulariser) over a fixed set of corrupted pairs.
double validation_loss(Network<float>& net, const std::vector<MultiChannelVolume>& val_set,
                       const UseCaseConfig& cfg, const ChannelSelection& sel, std::uint64_t seed);

// Scoring -----------------------------------------------------------------------

struct CaseScores {
  std::vector<double> scores;         // per organ, cfg order
  MultiChannelVolume reconstruction;  // binarised at 0.5
};

/// Forward pass, sigmoid, binarise at 0.5, per channel 1 - dice(input, recon).
/// `input` must already be preprocessed.
CaseScores score_with_network(Network<float>& net, const MultiChannelVolume& input);

/// preprocess_case followed by score_with_network.
CaseScores score_dae(Network<float>& net, const MultiChannelVolume& auto_seg, const UseCaseConfig& cfg);

/// VAE scoring through the mean latent by default; LatentMode::Sample draws
/// from `seed`.
CaseScores score_vae(VarAutoEncoder<float>& net, const MultiChannelVolume& auto_seg, const UseCaseConfig& cfg,
                     LatentMode mode = LatentMode::Mean, std::uint64_t seed = 0);

/// One single-channel VAE per organ.
CaseScores score_vae_single(std::vector<std::unique_ptr<VarAutoEncoder<float>>>& nets,
                            const MultiChannelVolume& auto_seg, const UseCaseConfig& cfg,
                            LatentMode mode = LatentMode::Mean, std::uint64_t seed = 0);

/// One Gaussian per organ fitted on preprocessed ground truths.
std::vector<GaussianModel> fit_statistical(const std::vector<MultiChannelVolume>& ground_truth,
                                           const UseCaseConfig& cfg);
/// Empty organs score +inf.
std::vector<double> score_statistical(const std::vector<GaussianModel>& models, const MultiChannelVolume& auto_seg,
                                      const UseCaseConfig& cfg);

void save_statistical(const std::vector<GaussianModel>& models, const std::filesystem::path& path);
std::vector<GaussianModel> load_statistical(const std::filesystem::path& path);

// Labels and explanations -------------------------------------------------------------

/// label = 1 iff true_dice < organ threshold (strict).
int label_for(const UseCaseConfig& cfg, const std::string& organ, double true_dice);
void label_cases(std::vector<ScoredCase>& cases, const UseCaseConfig& cfg);

enum ExplainLabel : std::uint8_t { kBothBackground = 0, kBothForeground = 1, kAutoOnly = 2, kReconOnly = 3 };

struct DisagreementComponent {
  std::uint8_t label = kAutoOnly;
  std::int64_t voxels = 0;
  BoundingBox box;
};

struct Explanation {
  Dims dims;
  std::vector<std::uint8_t> labels;  // x-fastest, values 0..3
  std::array<std::int64_t, 4> counts{};
  std::vector<DisagreementComponent> components;  // 6-connected, one label each, scan order
};

Explanation explain(const VoxelMask& auto_seg, const VoxelMask& recon);

/// u8 OMV, one `explain:<organ>` channel per explanation.
OmvImage explanation_image(const std::vector<Explanation>& maps, const std::vector<std::string>& organs,
                           const Spacing& spacing);

// Evaluation --------------------------------------------------------------------

struct EvalRow {
  std::string organ;
  std::string method;
  Metric metric = Metric::Auroc;
  bool defined = false;
  BootstrapResult result;
  int cases = 0;
  int inaccurate = 0;
};

struct EvaluationReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> organs;
  std::vector<std::string> methods;
};

/// One row per (organ, method, metric); organs lacking one label class are
/// marked undefined instead of failing.
EvaluationReport evaluate(const std::vector<std::pair<std::string, std::vector<ScoredCase>>>& method_cases,
                          const EvalConfig& cfg);

void write_evaluation_csv(const EvaluationReport& report, const std::filesystem::path& path);
void write_evaluation_json(const EvaluationReport& report, const std::filesystem::path& path);

/// Joins scores with the manifest's true Dice and applies label_cases.
std::vector<ScoredCase> attach_truth(std::vector<ScoredCase> cases, const std::vector<ManifestRow>& manifest,
                                     const UseCaseConfig& cfg);

}  // namespace maskqa
