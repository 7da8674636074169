#pragma once

// On-disk layout shared by the command-line tool and the acceptance suite.
//
//   data/{train,val,test}/{gt,auto}/<case>.omv, data/<split>/manifest.csv
//   models: <method>.daew (one per organ for vae-single), <method>_log.csv,
//           statistical.txt

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "maskqa/config.hpp"
#include "maskqa/pipeline.hpp"

namespace maskqa {

enum class Split { Train, Val, Test };
const char* split_name(Split split);

enum class Method { DAE, VAESingle, VAEMulti, Statistical };
const char* method_name(Method m);
Method parse_method(const std::string& text);

/// Train and validation splits use the identity mix; the test split uses
/// phantom.test_mix with the use-case thresholds enforced.
DatasetSpec split_spec(const ExperimentConfig& cfg, Split split);

void generate_data(const ExperimentConfig& cfg, const std::filesystem::path& dir, int threads);

/// Case ids (file stems) of `dir/<sub>/*.omv`, sorted.
std::vector<std::string> list_cases(const std::filesystem::path& dir, const std::string& sub);
std::vector<MultiChannelVolume> load_volumes(const std::filesystem::path& dir, const std::string& sub,
                                             const std::vector<std::string>& ids, int threads);

/// Preprocessed ground truths of one split.
std::vector<MultiChannelVolume> load_training_split(const ExperimentConfig& cfg,
                                                    const std::filesystem::path& data_dir, Split split,
                                                    int threads);

NetworkKind network_kind_for(Method m);
/// Initial weights of network `channel` (-1 for multi-channel models).
std::uint64_t init_seed(const UseCaseConfig& cfg, Method m, int channel);
std::unique_ptr<Network<float>> make_network(const UseCaseConfig& cfg, Method m, int channel);

std::string checkpoint_name(Method m, const std::string& organ = "");
std::string log_name(Method m, const std::string& organ = "");

struct MethodTraining {
  std::vector<TrainResult> results;  // one per network; empty for statistical
};

/// Trains `m` on data_dir/train with data_dir/val for model selection and
/// writes checkpoints and logs under out_dir. The statistical model is fitted
/// on train and val together.
MethodTraining train_method(const ExperimentConfig& cfg, Method m, const std::filesystem::path& data_dir,
                            const std::filesystem::path& out_dir,
                            const std::function<void(const std::string&, const EpochLog&)>& on_epoch = {});

/// A loaded model able to score preprocessed-or-raw auto-segmentations.
class Scorer {
 public:
  /// `model` is a model directory or, except for vae-single, one checkpoint file.
  Scorer(const UseCaseConfig& cfg, Method m, const std::filesystem::path& model);

  Method method() const { return method_; }
  /// Per-organ scores in cfg order; `recon` receives the reconstruction for
  /// neural methods.
  std::vector<double> score(const MultiChannelVolume& auto_seg, MultiChannelVolume* recon = nullptr);

 private:
  UseCaseConfig cfg_;
  Method method_;
  std::unique_ptr<Network<float>> net_;
  std::vector<std::unique_ptr<VarAutoEncoder<float>>> singles_;
  std::vector<GaussianModel> stats_;
};

/// Scores every case of cases_dir/auto. True Dice and labels come from
/// cases_dir/manifest.csv when it exists.
std::vector<ScoredCase> score_cases(const ExperimentConfig& cfg, Method m, const std::filesystem::path& model,
                                    const std::filesystem::path& cases_dir, int threads);

}  // namespace maskqa
