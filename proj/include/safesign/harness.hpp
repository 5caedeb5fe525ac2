#pragma once

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "safesign/light_attacks.hpp"
#include "safesign/mask_lab.hpp"
#include "safesign/patch_forge.hpp"
#include "safesign/reconstructor.hpp"
#include "safesign/sign_data.hpp"
#include "safesign/tsr_classifier.hpp"

namespace safesign::harness {

struct ToySpec {
  int classes = 10;
  int per_class = 50;
  uint64_t seed = 7;
  double train_fraction = 0.8;
};

struct DatasetSpec {
  std::string kind = "toy";  // "toy" | "manifest"
  ToySpec toy;
  std::string path;    // manifest root when kind == "manifest"
  bool augment = true;  // 8x expansion of the train split
};

// One declarative description of a full run; a run is reproducible from this
// plus nothing else.
struct ExperimentConfig {
  uint64_t seed = 42;
  DatasetSpec dataset;

  tsr_classifier::ClassifierConfig classifier_arch;
  tsr_classifier::TrainConfig classifier_train;

  std::vector<int> mask_levels{1, 2, 4, 6};

  patch_forge::GeneratorConfig generator_arch;
  patch_forge::GenTrainConfig generator_train;

  reconstructor::ReconConfig recon_arch;
  reconstructor::ReconTrainConfig recon_train;
  reconstructor::ViewJitter view_jitter;

  int attack_suite_size = 60;
  uint64_t attack_seed = 9;
  uint64_t eval_seed = 11;
};

ExperimentConfig default_config();
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
uint64_t config_fingerprint(const ExperimentConfig& cfg);

// Procedurally rendered 64x64 sign-like corpus: per class a distinct
// (shape, palette, glyph) triple, with pose and photometric jitter inside the
// class. Supports 2..10 classes.
sign_data::Dataset make_toy_dataset(int classes, int per_class, uint64_t seed,
                                    double train_fraction = 0.8);

struct ConditionResult {
  std::string condition;
  tsr_classifier::Metrics metrics;
};

struct ReportBundle {
  std::string variant = "base";
  uint64_t config_fingerprint = 0;
  uint64_t classifier_hash = 0;
  bool partial = false;
  std::string failed_stage;
  std::string failure;

  std::vector<ConditionResult> conditions;

  // feature-similarity study on the toy pipeline
  std::vector<double> sim_aa, sim_ca, sim_ra;

  double noise_diversity = 0.0;  // mean pairwise MAE across pattern slots

  std::vector<double> classifier_loss, generator_total, generator_l2, generator_l3, recon_loss;

  const tsr_classifier::Metrics* find(const std::string& condition) const;
  double accuracy(const std::string& condition) const;
  nlohmann::ordered_json to_json() const;
};

struct PipelineArtifacts {
  sign_data::Dataset raw;       // as loaded/synthesized
  sign_data::Dataset prepared;  // augmented when the config says so
  std::vector<mask_lab::BinaryMask> masks;
  std::optional<tsr_classifier::Classifier> classifier;
  std::optional<patch_forge::Generator> generator;
  std::optional<reconstructor::Reconstructor> recon;
  std::map<std::string, std::vector<light_attacks::AttackSpec>> suites;
};

// Stage functions; each loads its artifact from out_dir when a checkpoint with
// a matching config fingerprint is already there.
void stage_prepare(const ExperimentConfig& cfg, PipelineArtifacts& art);
void stage_train_classifier(const ExperimentConfig& cfg, const std::string& out_dir,
                            PipelineArtifacts& art, ReportBundle* bundle = nullptr);
void stage_train_generator(const ExperimentConfig& cfg, const std::string& out_dir,
                           PipelineArtifacts& art, ReportBundle* bundle = nullptr);
void stage_attack_suites(const ExperimentConfig& cfg, const std::string& out_dir,
                         PipelineArtifacts& art);
void stage_train_reconstructor(const ExperimentConfig& cfg, const std::string& out_dir,
                               PipelineArtifacts& art, ReportBundle* bundle = nullptr);
void stage_evaluate(const ExperimentConfig& cfg, PipelineArtifacts& art, ReportBundle& bundle);

// ingest/augment -> train classifier -> train generator -> build attack
// suites -> train reconstructor -> evaluate; per-stage checkpoints under
// out_dir; resumable from any completed stage.
ReportBundle run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir,
                          PipelineArtifacts* keep = nullptr);

// Paired ablations sharing the base run's frozen classifier (and, where the
// axis permits, its generator): attention on/off, diversity loss on/off,
// augmentation on/off, mask-level subsets, view-count sweep.
std::vector<ReportBundle> run_ablations(const ExperimentConfig& base_cfg,
                                        const std::string& out_dir);

// metrics.json, metrics.csv, plots/*.png, config.lock
void emit_report(const ReportBundle& bundle, const ExperimentConfig& cfg,
                 const std::string& out_dir);

// --- evaluation helpers (exposed for tests and the acceptance suite) ---

std::vector<std::pair<SignImage, int>> test_pairs(const sign_data::Dataset& d);

tsr_classifier::Metrics eval_gen_contaminated(tsr_classifier::Classifier& c,
                                              patch_forge::Generator& g,
                                              const std::vector<mask_lab::BinaryMask>& masks,
                                              const sign_data::Dataset& d, uint64_t seed);

std::vector<reconstructor::MultiViewInput> make_eval_views(const sign_data::Dataset& d, int views,
                                                           const reconstructor::ViewJitter& jitter,
                                                           uint64_t seed);
std::vector<reconstructor::MultiViewInput> contaminate_eval_views(
    const std::vector<reconstructor::MultiViewInput>& clean, patch_forge::Generator& g,
    const std::vector<mask_lab::BinaryMask>& masks, uint64_t seed);
std::vector<reconstructor::MultiViewInput> attack_eval_views(
    const std::vector<reconstructor::MultiViewInput>& clean,
    const std::vector<light_attacks::AttackSpec>& suite, uint64_t seed);

// accuracy of the classifier over every individual view
tsr_classifier::Metrics eval_views_direct(tsr_classifier::Classifier& c,
                                          const std::vector<reconstructor::MultiViewInput>& items);
// accuracy over repaired outputs, one per group
tsr_classifier::Metrics eval_repaired(reconstructor::Reconstructor& s,
                                      tsr_classifier::Classifier& c,
                                      const std::vector<reconstructor::MultiViewInput>& items);

double mean_noise_diversity(patch_forge::Generator& g, const sign_data::Dataset& d, int max_samples,
                            uint64_t seed);

}  // namespace safesign::harness
