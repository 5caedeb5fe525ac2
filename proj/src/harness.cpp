#include "safesign/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "safesign/plots.hpp"

namespace fs = std::filesystem;

namespace safesign::harness {

namespace {

std::string hex64(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig default_config() { return ExperimentConfig{}; }

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"toy",
                   {{"classes", c.dataset.toy.classes},
                    {"per_class", c.dataset.toy.per_class},
                    {"seed", c.dataset.toy.seed},
                    {"train_fraction", c.dataset.toy.train_fraction}}},
                  {"path", c.dataset.path},
                  {"augment", c.dataset.augment}};
  j["classifier"] = {{"conv_channels", c.classifier_arch.conv_channels},
                     {"fc_hidden", c.classifier_arch.fc_hidden},
                     {"dropout", c.classifier_arch.dropout},
                     {"init_seed", c.classifier_arch.init_seed},
                     {"lr", c.classifier_train.lr},
                     {"batch", c.classifier_train.batch},
                     {"epochs", c.classifier_train.epochs},
                     {"max_steps", c.classifier_train.max_steps},
                     {"seed", c.classifier_train.seed}};
  j["mask_levels"] = c.mask_levels;
  j["generator"] = {{"stage_widths", c.generator_arch.stage_widths},
                    {"patterns", c.generator_arch.patterns},
                    {"init_seed", c.generator_arch.init_seed},
                    {"alpha", c.generator_train.alpha},
                    {"beta", c.generator_train.beta},
                    {"beta_warmup_steps", c.generator_train.beta_warmup_steps},
                    {"lr", c.generator_train.lr},
                    {"batch", c.generator_train.batch},
                    {"epochs", c.generator_train.epochs},
                    {"max_steps", c.generator_train.max_steps},
                    {"seed", c.generator_train.seed}};
  j["reconstructor"] = {{"min_views", c.recon_arch.min_views},
                        {"max_views", c.recon_arch.max_views},
                        {"extractor_hidden", c.recon_arch.extractor_hidden},
                        {"attn_dim", c.recon_arch.attn_dim},
                        {"shared_weights", c.recon_arch.shared_weights},
                        {"fixed_views", c.recon_arch.fixed_views},
                        {"attention", c.recon_arch.attention},
                        {"merge", c.recon_arch.merge == reconstructor::HeadMerge::Sum ? "sum" : "mean"},
                        {"fidelity_weight", c.recon_arch.fidelity_weight},
                        {"init_seed", c.recon_arch.init_seed},
                        {"views", c.recon_train.views},
                        {"train_view_counts", c.recon_train.train_view_counts},
                        {"lr", c.recon_train.lr},
                        {"group_batch", c.recon_train.group_batch},
                        {"epochs", c.recon_train.epochs},
                        {"max_steps", c.recon_train.max_steps},
                        {"clean_fraction", c.recon_train.clean_fraction},
                        {"seed", c.recon_train.seed}};
  j["view_jitter"] = {{"rotation_deg", c.view_jitter.rotation_deg},
                      {"translate_px", c.view_jitter.translate_px},
                      {"scale_lo", c.view_jitter.scale_lo},
                      {"scale_hi", c.view_jitter.scale_hi},
                      {"brightness_lo", c.view_jitter.brightness_lo},
                      {"brightness_hi", c.view_jitter.brightness_hi},
                      {"saturation_lo", c.view_jitter.saturation_lo},
                      {"saturation_hi", c.view_jitter.saturation_hi},
                      {"contrast_lo", c.view_jitter.contrast_lo},
                      {"contrast_hi", c.view_jitter.contrast_hi}};
  j["attacks"] = {{"suite_size", c.attack_suite_size}, {"seed", c.attack_seed}};
  j["eval_seed"] = c.eval_seed;
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    c.dataset.kind = d.value("kind", c.dataset.kind);
    c.dataset.path = d.value("path", c.dataset.path);
    c.dataset.augment = d.value("augment", c.dataset.augment);
    if (d.contains("toy")) {
      const auto& t = d["toy"];
      c.dataset.toy.classes = t.value("classes", c.dataset.toy.classes);
      c.dataset.toy.per_class = t.value("per_class", c.dataset.toy.per_class);
      c.dataset.toy.seed = t.value("seed", c.dataset.toy.seed);
      c.dataset.toy.train_fraction = t.value("train_fraction", c.dataset.toy.train_fraction);
    }
  }
  if (j.contains("classifier")) {
    const auto& k = j["classifier"];
    c.classifier_arch.conv_channels = k.value("conv_channels", c.classifier_arch.conv_channels);
    c.classifier_arch.fc_hidden = k.value("fc_hidden", c.classifier_arch.fc_hidden);
    c.classifier_arch.dropout = k.value("dropout", c.classifier_arch.dropout);
    c.classifier_arch.init_seed = k.value("init_seed", c.classifier_arch.init_seed);
    c.classifier_train.lr = k.value("lr", c.classifier_train.lr);
    c.classifier_train.batch = k.value("batch", c.classifier_train.batch);
    c.classifier_train.epochs = k.value("epochs", c.classifier_train.epochs);
    c.classifier_train.max_steps = k.value("max_steps", c.classifier_train.max_steps);
    c.classifier_train.seed = k.value("seed", c.classifier_train.seed);
  }
  c.mask_levels = j.value("mask_levels", c.mask_levels);
  if (j.contains("generator")) {
    const auto& g = j["generator"];
    c.generator_arch.stage_widths = g.value("stage_widths", c.generator_arch.stage_widths);
    c.generator_arch.patterns = g.value("patterns", c.generator_arch.patterns);
    c.generator_arch.init_seed = g.value("init_seed", c.generator_arch.init_seed);
    c.generator_train.alpha = g.value("alpha", c.generator_train.alpha);
    c.generator_train.beta = g.value("beta", c.generator_train.beta);
    c.generator_train.beta_warmup_steps =
        g.value("beta_warmup_steps", c.generator_train.beta_warmup_steps);
    c.generator_train.lr = g.value("lr", c.generator_train.lr);
    c.generator_train.batch = g.value("batch", c.generator_train.batch);
    c.generator_train.epochs = g.value("epochs", c.generator_train.epochs);
    c.generator_train.max_steps = g.value("max_steps", c.generator_train.max_steps);
    c.generator_train.seed = g.value("seed", c.generator_train.seed);
  }
  if (j.contains("reconstructor")) {
    const auto& r = j["reconstructor"];
    c.recon_arch.min_views = r.value("min_views", c.recon_arch.min_views);
    c.recon_arch.max_views = r.value("max_views", c.recon_arch.max_views);
    c.recon_arch.extractor_hidden = r.value("extractor_hidden", c.recon_arch.extractor_hidden);
    c.recon_arch.attn_dim = r.value("attn_dim", c.recon_arch.attn_dim);
    c.recon_arch.shared_weights = r.value("shared_weights", c.recon_arch.shared_weights);
    c.recon_arch.fixed_views = r.value("fixed_views", c.recon_arch.fixed_views);
    c.recon_arch.attention = r.value("attention", c.recon_arch.attention);
    c.recon_arch.merge = r.value("merge", std::string("sum")) == "mean"
                             ? reconstructor::HeadMerge::Mean
                             : reconstructor::HeadMerge::Sum;
    c.recon_arch.fidelity_weight = r.value("fidelity_weight", c.recon_arch.fidelity_weight);
    c.recon_arch.init_seed = r.value("init_seed", c.recon_arch.init_seed);
    c.recon_train.views = r.value("views", c.recon_train.views);
    c.recon_train.train_view_counts = r.value("train_view_counts", c.recon_train.train_view_counts);
    c.recon_train.lr = r.value("lr", c.recon_train.lr);
    c.recon_train.group_batch = r.value("group_batch", c.recon_train.group_batch);
    c.recon_train.epochs = r.value("epochs", c.recon_train.epochs);
    c.recon_train.max_steps = r.value("max_steps", c.recon_train.max_steps);
    c.recon_train.clean_fraction = r.value("clean_fraction", c.recon_train.clean_fraction);
    c.recon_train.seed = r.value("seed", c.recon_train.seed);
  }
  if (j.contains("view_jitter")) {
    const auto& v = j["view_jitter"];
    c.view_jitter.rotation_deg = v.value("rotation_deg", c.view_jitter.rotation_deg);
    c.view_jitter.translate_px = v.value("translate_px", c.view_jitter.translate_px);
    c.view_jitter.scale_lo = v.value("scale_lo", c.view_jitter.scale_lo);
    c.view_jitter.scale_hi = v.value("scale_hi", c.view_jitter.scale_hi);
    c.view_jitter.brightness_lo = v.value("brightness_lo", c.view_jitter.brightness_lo);
    c.view_jitter.brightness_hi = v.value("brightness_hi", c.view_jitter.brightness_hi);
    c.view_jitter.saturation_lo = v.value("saturation_lo", c.view_jitter.saturation_lo);
    c.view_jitter.saturation_hi = v.value("saturation_hi", c.view_jitter.saturation_hi);
    c.view_jitter.contrast_lo = v.value("contrast_lo", c.view_jitter.contrast_lo);
    c.view_jitter.contrast_hi = v.value("contrast_hi", c.view_jitter.contrast_hi);
  }
  if (j.contains("attacks")) {
    c.attack_suite_size = j["attacks"].value("suite_size", c.attack_suite_size);
    c.attack_seed = j["attacks"].value("seed", c.attack_seed);
  }
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  return config_from_json(nlohmann::json::parse(in));
}

uint64_t config_fingerprint(const ExperimentConfig& cfg) {
  return fnv1a(config_to_json(cfg).dump());
}

namespace {

// Stage checkpoints are keyed on the config subset they depend on, so editing
// later-stage settings does not invalidate earlier artifacts.
std::string classifier_stage_fp(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = config_to_json(cfg);
  nlohmann::ordered_json k;
  k["seed"] = j["seed"];
  k["dataset"] = j["dataset"];
  k["classifier"] = j["classifier"];
  return hex64(fnv1a(k.dump()));
}

std::string generator_stage_fp(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = config_to_json(cfg);
  nlohmann::ordered_json k;
  k["seed"] = j["seed"];
  k["dataset"] = j["dataset"];
  k["classifier"] = j["classifier"];
  k["mask_levels"] = j["mask_levels"];
  k["generator"] = j["generator"];
  return hex64(fnv1a(k.dump()));
}

std::string recon_stage_fp(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = config_to_json(cfg);
  nlohmann::ordered_json k;
  k["seed"] = j["seed"];
  k["dataset"] = j["dataset"];
  k["classifier"] = j["classifier"];
  k["mask_levels"] = j["mask_levels"];
  k["generator"] = j["generator"];
  k["reconstructor"] = j["reconstructor"];
  k["view_jitter"] = j["view_jitter"];
  return hex64(fnv1a(k.dump()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Bundle

const tsr_classifier::Metrics* ReportBundle::find(const std::string& condition) const {
  for (const auto& c : conditions)
    if (c.condition == condition) return &c.metrics;
  return nullptr;
}

double ReportBundle::accuracy(const std::string& condition) const {
  const auto* m = find(condition);
  if (m == nullptr) throw std::runtime_error("bundle: no condition " + condition);
  return m->accuracy;
}

namespace {

nlohmann::ordered_json metrics_to_json(const tsr_classifier::Metrics& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["per_class_precision"] = m.per_class_precision;
  j["precision_defined"] = m.precision_defined;
  const int mm = m.confusion.dim(0);
  nlohmann::ordered_json conf = nlohmann::ordered_json::array();
  for (int i = 0; i < mm; ++i) {
    std::vector<long> row(static_cast<size_t>(mm));
    for (int k = 0; k < mm; ++k) row[static_cast<size_t>(k)] = static_cast<long>(m.confusion(i, k));
    conf.push_back(row);
  }
  j["confusion"] = conf;
  return j;
}

double mean_or_zero(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

nlohmann::ordered_json ReportBundle::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["config_fingerprint"] = hex64(config_fingerprint);
  j["classifier_hash"] = hex64(classifier_hash);
  j["partial"] = partial;
  j["failed_stage"] = failed_stage;
  j["failure"] = failure;
  nlohmann::ordered_json conds;
  for (const auto& c : conditions) conds[c.condition] = metrics_to_json(c.metrics);
  j["conditions"] = conds;
  j["similarity"] = {{"mean_aa", mean_or_zero(sim_aa)},
                     {"mean_ca", mean_or_zero(sim_ca)},
                     {"mean_ra", mean_or_zero(sim_ra)}};
  j["noise_diversity"] = noise_diversity;
  j["curves"] = {{"classifier_loss", classifier_loss},
                 {"generator_total", generator_total},
                 {"generator_l2", generator_l2},
                 {"generator_l3", generator_l3},
                 {"recon_loss", recon_loss}};
  return j;
}

// ---------------------------------------------------------------------------
// Stages

void stage_prepare(const ExperimentConfig& cfg, PipelineArtifacts& art) {
  if (cfg.dataset.kind == "toy") {
    art.raw = make_toy_dataset(cfg.dataset.toy.classes, cfg.dataset.toy.per_class,
                               cfg.dataset.toy.seed, cfg.dataset.toy.train_fraction);
  } else if (cfg.dataset.kind == "manifest") {
    art.raw = sign_data::load_manifest(cfg.dataset.path);
  } else {
    throw std::invalid_argument("unknown dataset kind: " + cfg.dataset.kind);
  }
  art.prepared = cfg.dataset.augment
                     ? sign_data::augment_dataset(art.raw, sign_data::default_recipe(), cfg.seed)
                     : art.raw;
  art.masks = mask_lab::default_mask_suite(cfg.mask_levels);
}

void stage_train_classifier(const ExperimentConfig& cfg, const std::string& out_dir,
                            PipelineArtifacts& art, ReportBundle* bundle) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "classifier.ckpt").string();
  const std::string fp = classifier_stage_fp(cfg);
  if (fs::exists(path)) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.header.value("config_fingerprint", std::string()) == fp) {
      art.classifier = tsr_classifier::Classifier::from_checkpoint(ck);
      return;
    }
  }
  tsr_classifier::ClassifierConfig arch = cfg.classifier_arch;
  arch.classes = art.prepared.classes();
  std::vector<double> curve;
  art.classifier = tsr_classifier::train_classifier(art.prepared, arch, cfg.classifier_train, &curve);
  if (bundle != nullptr) bundle->classifier_loss = curve;
  Checkpoint ck = art.classifier->to_checkpoint();
  ck.header["config_fingerprint"] = fp;
  ck.save(path);
}

void stage_train_generator(const ExperimentConfig& cfg, const std::string& out_dir,
                           PipelineArtifacts& art, ReportBundle* bundle) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "generator.ckpt").string();
  const std::string fp = generator_stage_fp(cfg);
  if (fs::exists(path)) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.header.value("config_fingerprint", std::string()) == fp) {
      art.generator = patch_forge::Generator::from_checkpoint(ck);
      return;
    }
  }
  art.generator = patch_forge::Generator(cfg.generator_arch);
  auto log = patch_forge::train_generator(*art.generator, *art.classifier, art.prepared, art.masks,
                                          cfg.generator_train);
  if (bundle != nullptr) {
    bundle->generator_total = log.per_epoch_total;
    bundle->generator_l2 = log.per_epoch_l2;
    bundle->generator_l3 = log.per_epoch_l3;
  }
  Checkpoint ck = art.generator->to_checkpoint();
  ck.header["config_fingerprint"] = fp;
  ck.save(path);
}

void stage_attack_suites(const ExperimentConfig& cfg, const std::string& out_dir,
                         PipelineArtifacts& art) {
  fs::create_directories(fs::path(out_dir) / "attacks");
  for (auto kind : {light_attacks::AttackKind::IS, light_attacks::AttackKind::LL,
                    light_attacks::AttackKind::NLS, light_attacks::AttackKind::PG}) {
    auto suite = light_attacks::make_attack_suite(kind, cfg.attack_suite_size, cfg.attack_seed);
    std::ofstream out(fs::path(out_dir) / "attacks" / (std::string(light_attacks::kind_name(kind)) + ".json"));
    out << light_attacks::suite_to_json(suite) << "\n";
    art.suites[light_attacks::kind_name(kind)] = std::move(suite);
  }
}

void stage_train_reconstructor(const ExperimentConfig& cfg, const std::string& out_dir,
                               PipelineArtifacts& art, ReportBundle* bundle) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "reconstructor.ckpt").string();
  const std::string fp = recon_stage_fp(cfg);
  if (fs::exists(path)) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.header.value("config_fingerprint", std::string()) == fp) {
      art.recon = reconstructor::Reconstructor::from_checkpoint(ck);
      return;
    }
  }
  art.recon = reconstructor::Reconstructor(cfg.recon_arch);
  auto log = reconstructor::train_reconstructor(*art.recon, *art.classifier, art.prepared,
                                                *art.generator, art.masks, cfg.recon_train,
                                                cfg.view_jitter);
  if (bundle != nullptr) bundle->recon_loss = log.per_epoch_loss;
  Checkpoint ck = art.recon->to_checkpoint();
  ck.header["config_fingerprint"] = fp;
  ck.save(path);
}

// ---------------------------------------------------------------------------
// Evaluation helpers

std::vector<std::pair<SignImage, int>> test_pairs(const sign_data::Dataset& d) {
  std::vector<std::pair<SignImage, int>> out;
  out.reserve(d.test.size());
  for (const auto& s : d.test) out.emplace_back(s.image, s.label);
  return out;
}

tsr_classifier::Metrics eval_gen_contaminated(tsr_classifier::Classifier& c,
                                              patch_forge::Generator& g,
                                              const std::vector<mask_lab::BinaryMask>& masks,
                                              const sign_data::Dataset& d, uint64_t seed) {
  Rng rng(mix_seed(seed, 0xc047a3));
  std::vector<std::pair<SignImage, int>> contaminated;
  contaminated.reserve(d.test.size());
  for (const auto& s : d.test) {
    const int cond = rng.uniform_int(g.patterns());
    const auto& mask = masks[static_cast<size_t>(rng.uniform_int(static_cast<int>(masks.size())))];
    auto noise = patch_forge::unet_forward(g, s.image, cond);
    contaminated.emplace_back(patch_forge::contaminate(s.image, noise.values, mask), s.label);
  }
  return tsr_classifier::evaluate(c, contaminated);
}

std::vector<reconstructor::MultiViewInput> make_eval_views(const sign_data::Dataset& d, int views,
                                                           const reconstructor::ViewJitter& jitter,
                                                           uint64_t seed) {
  std::vector<reconstructor::MultiViewInput> items;
  items.reserve(d.test.size());
  for (size_t i = 0; i < d.test.size(); ++i) {
    Rng rng(mix_seed(seed, 0xe7a1 + i));
    reconstructor::MultiViewInput mv;
    mv.views = reconstructor::synthesize_views(d.test[i].image, views, jitter, rng);
    mv.label = d.test[i].label;
    mv.base = d.test[i].image;
    mv.view_group = d.test[i].view_group;
    items.push_back(std::move(mv));
  }
  return items;
}

std::vector<reconstructor::MultiViewInput> contaminate_eval_views(
    const std::vector<reconstructor::MultiViewInput>& clean, patch_forge::Generator& g,
    const std::vector<mask_lab::BinaryMask>& masks, uint64_t seed) {
  std::vector<reconstructor::MultiViewInput> out = clean;
  for (size_t i = 0; i < out.size(); ++i) {
    Rng rng(mix_seed(seed, 0xc0a7 + i));
    out[i].views = reconstructor::contaminate_views(clean[i].views, g, masks, rng);
  }
  return out;
}

std::vector<reconstructor::MultiViewInput> attack_eval_views(
    const std::vector<reconstructor::MultiViewInput>& clean,
    const std::vector<light_attacks::AttackSpec>& suite, uint64_t seed) {
  if (suite.empty()) throw std::invalid_argument("attack_eval_views: empty suite");
  std::vector<reconstructor::MultiViewInput> out = clean;
  for (size_t i = 0; i < out.size(); ++i) {
    Rng rng(mix_seed(seed, 0xa77a + i));
    for (auto& v : out[i].views) {
      const auto& spec = suite[static_cast<size_t>(rng.uniform_int(static_cast<int>(suite.size())))];
      v = light_attacks::apply_light_patch(v, spec);
    }
  }
  return out;
}

tsr_classifier::Metrics eval_views_direct(tsr_classifier::Classifier& c,
                                          const std::vector<reconstructor::MultiViewInput>& items) {
  std::vector<std::pair<SignImage, int>> flat;
  for (const auto& mv : items)
    for (const auto& v : mv.views) flat.emplace_back(v, mv.label);
  return tsr_classifier::evaluate(c, flat);
}

tsr_classifier::Metrics eval_repaired(reconstructor::Reconstructor& s,
                                      tsr_classifier::Classifier& c,
                                      const std::vector<reconstructor::MultiViewInput>& items) {
  std::vector<std::pair<SignImage, int>> repaired;
  repaired.reserve(items.size());
  for (const auto& mv : items) repaired.emplace_back(s.repair(mv), mv.label);
  return tsr_classifier::evaluate(c, repaired);
}

double mean_noise_diversity(patch_forge::Generator& g, const sign_data::Dataset& d, int max_samples,
                            uint64_t seed) {
  (void)seed;
  const int p = g.patterns();
  if (p < 2) return 0.0;
  const int n = static_cast<int>(std::min<size_t>(d.test.size(), static_cast<size_t>(max_samples)));
  if (n == 0) return 0.0;
  const long dsz = static_cast<long>(kSignChannels) * kSignSize * kSignSize;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    Tensor batch({p, kSignChannels, kSignSize, kSignSize});
    std::vector<int> conds(static_cast<size_t>(p));
    for (int s = 0; s < p; ++s) {
      std::copy(d.test[static_cast<size_t>(i)].image.data(),
                d.test[static_cast<size_t>(i)].image.data() + dsz, &batch(s, 0, 0, 0));
      conds[static_cast<size_t>(s)] = s;
    }
    Tensor noise = g.forward_batch(batch, conds, /*train=*/false);
    double sum = 0.0;
    int np = 0;
    for (int a = 0; a < p; ++a)
      for (int b = a + 1; b < p; ++b) {
        const double* pa = &noise(a, 0, 0, 0);
        const double* pb = &noise(b, 0, 0, 0);
        double mae = 0.0;
        for (long k = 0; k < dsz; ++k) mae += std::abs(pa[k] - pb[k]);
        sum += mae / static_cast<double>(dsz);
        ++np;
      }
    total += sum / np;
  }
  return total / n;
}

// ---------------------------------------------------------------------------
// Evaluate stage

void stage_evaluate(const ExperimentConfig& cfg, PipelineArtifacts& art, ReportBundle& bundle) {
  auto& clf = *art.classifier;
  auto& gen = *art.generator;
  auto& rec = *art.recon;
  bundle.classifier_hash = clf.param_hash();

  // the evaluation threat always gates on the full default mask suite
  auto eval_masks = mask_lab::default_mask_suite();

  bundle.conditions.push_back({"clean", tsr_classifier::evaluate(clf, test_pairs(art.prepared))});
  bundle.conditions.push_back(
      {"contaminated_generator",
       eval_gen_contaminated(clf, gen, eval_masks, art.prepared, cfg.eval_seed)});

  const int views = cfg.recon_train.views;
  auto clean_views = make_eval_views(art.prepared, views, cfg.view_jitter, cfg.eval_seed);
  auto gen_views = contaminate_eval_views(clean_views, gen, eval_masks, cfg.eval_seed + 1);

  bundle.conditions.push_back({"views_clean", eval_views_direct(clf, clean_views)});
  bundle.conditions.push_back({"views_contaminated_generator", eval_views_direct(clf, gen_views)});
  bundle.conditions.push_back({"repaired_generator", eval_repaired(rec, clf, gen_views)});
  bundle.conditions.push_back({"clean_repaired", eval_repaired(rec, clf, clean_views)});

  uint64_t k = 2;
  for (const auto& [kind, suite] : art.suites) {
    auto atk_views = attack_eval_views(clean_views, suite, cfg.eval_seed + k++);
    bundle.conditions.push_back({"contaminated_" + kind, eval_views_direct(clf, atk_views)});
    bundle.conditions.push_back({"repaired_" + kind, eval_repaired(rec, clf, atk_views)});
  }

  // feature-similarity study: repaired/contaminated/authentic against authentic
  const size_t sim_cap = std::min<size_t>(gen_views.size(), 60);
  for (size_t i = 0; i < sim_cap; ++i) {
    const auto& base = art.prepared.test[i];
    // another authentic sample of the same class
    const sign_data::SignSample* other = nullptr;
    for (size_t j = 1; j < art.prepared.test.size(); ++j) {
      const auto& cand = art.prepared.test[(i + j) % art.prepared.test.size()];
      if (cand.label == base.label && cand.id != base.id) {
        other = &cand;
        break;
      }
    }
    auto mean_sim = [&](const SignImage& a, const SignImage& b) {
      auto sims = tsr_classifier::feature_similarity(clf, a, b);
      double sum = 0.0;
      int cnt = 0;
      for (const auto& s : sims)
        if (s.has_value()) {
          sum += *s;
          ++cnt;
        }
      return cnt > 0 ? sum / cnt : 0.0;
    };
    if (other != nullptr) bundle.sim_aa.push_back(mean_sim(other->image, base.image));
    bundle.sim_ca.push_back(mean_sim(gen_views[i].views[0], base.image));
    bundle.sim_ra.push_back(mean_sim(rec.repair(gen_views[i]), base.image));
  }

  bundle.noise_diversity = mean_noise_diversity(gen, art.prepared, 40, cfg.eval_seed);
}

// ---------------------------------------------------------------------------
// Pipeline / ablations / report

ReportBundle run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir,
                          PipelineArtifacts* keep) {
  fs::create_directories(out_dir);
  ReportBundle bundle;
  bundle.config_fingerprint = config_fingerprint(cfg);
  PipelineArtifacts local;
  PipelineArtifacts& art = keep != nullptr ? *keep : local;
  std::string stage;
  try {
    stage = "prepare";
    stage_prepare(cfg, art);
    stage = "train-classifier";
    stage_train_classifier(cfg, out_dir, art, &bundle);
    stage = "train-generator";
    stage_train_generator(cfg, out_dir, art, &bundle);
    stage = "attack";
    stage_attack_suites(cfg, out_dir, art);
    stage = "train-reconstructor";
    stage_train_reconstructor(cfg, out_dir, art, &bundle);
    stage = "evaluate";
    stage_evaluate(cfg, art, bundle);
  } catch (const std::exception& e) {
    bundle.partial = true;
    bundle.failed_stage = stage;
    bundle.failure = e.what();
  }
  return bundle;
}

namespace {

// Variant artifacts share the frozen base classifier (and optionally the
// generator); the reconstructor is retrained per variant.
PipelineArtifacts fork_base(const PipelineArtifacts& base, bool share_generator) {
  PipelineArtifacts art;
  art.raw = base.raw;
  art.prepared = base.prepared;
  art.masks = base.masks;
  art.classifier = base.classifier;
  if (share_generator) art.generator = base.generator;
  art.suites = base.suites;
  return art;
}

}  // namespace

std::vector<ReportBundle> run_ablations(const ExperimentConfig& base_cfg,
                                        const std::string& out_dir) {
  std::vector<ReportBundle> bundles;
  PipelineArtifacts base;
  ReportBundle base_bundle = run_pipeline(base_cfg, (fs::path(out_dir) / "base").string(), &base);
  if (base_bundle.partial)
    throw std::runtime_error("run_ablations: base pipeline failed in stage " +
                             base_bundle.failed_stage + ": " + base_bundle.failure);
  bundles.push_back(base_bundle);

  auto run_variant = [&](const std::string& name, const ExperimentConfig& cfg, bool share_generator,
                         bool retrain_generator) {
    const std::string dir = (fs::path(out_dir) / name).string();
    fs::create_directories(dir);
    ReportBundle b;
    b.variant = name;
    b.config_fingerprint = config_fingerprint(cfg);
    PipelineArtifacts art = fork_base(base, share_generator);
    std::string stage;
    try {
      stage = "prepare";
      if (!cfg.dataset.augment && base_cfg.dataset.augment) {
        art.prepared = art.raw;  // augmentation-off variant retrains on the raw corpus
      }
      art.masks = mask_lab::default_mask_suite(cfg.mask_levels);
      if (retrain_generator) {
        stage = "train-generator";
        stage_train_generator(cfg, dir, art, &b);
      }
      stage = "train-reconstructor";
      stage_train_reconstructor(cfg, dir, art, &b);
      stage = "evaluate";
      stage_evaluate(cfg, art, b);
    } catch (const std::exception& e) {
      b.partial = true;
      b.failed_stage = stage;
      b.failure = e.what();
    }
    emit_report(b, cfg, dir);
    bundles.push_back(std::move(b));
  };

  // attention on/off
  {
    ExperimentConfig cfg = base_cfg;
    cfg.recon_arch.attention = false;
    run_variant("attention_off", cfg, /*share_generator=*/true, /*retrain_generator=*/false);
  }
  // diversity loss on/off (generator retrained with beta = 0)
  {
    ExperimentConfig cfg = base_cfg;
    cfg.generator_train.beta = 0.0;
    run_variant("diversity_off", cfg, /*share_generator=*/false, /*retrain_generator=*/true);
  }
  // data augmentation on/off
  {
    ExperimentConfig cfg = base_cfg;
    cfg.dataset.augment = false;
    run_variant("augmentation_off", cfg, /*share_generator=*/false, /*retrain_generator=*/true);
  }
  // mask-level subsets (shared generator, reconstructor sees fewer granularities)
  {
    std::vector<std::vector<int>> level_sets = {{1}, {1, 2}, {1, 2, 4}};
    for (const auto& levels : level_sets) {
      ExperimentConfig cfg = base_cfg;
      cfg.mask_levels = levels;
      std::string name = "mask_levels";
      for (int l : levels) name += "_" + std::to_string(l);
      run_variant(name, cfg, /*share_generator=*/true, /*retrain_generator=*/false);
    }
  }
  // view-count sweep (evaluation-only on the base reconstructor)
  {
    for (int r = 2; r <= 10; r += 2) {
      ExperimentConfig cfg = base_cfg;
      cfg.recon_train.views = r;
      const std::string name = "views_" + std::to_string(r);
      ReportBundle b;
      b.variant = name;
      b.config_fingerprint = config_fingerprint(cfg);
      PipelineArtifacts art = fork_base(base, /*share_generator=*/true);
      art.recon = base.recon;
      std::string stage = "evaluate";
      try {
        stage_evaluate(cfg, art, b);
      } catch (const std::exception& e) {
        b.partial = true;
        b.failed_stage = stage;
        b.failure = e.what();
      }
      const std::string dir = (fs::path(out_dir) / name).string();
      fs::create_directories(dir);
      emit_report(b, cfg, dir);
      bundles.push_back(std::move(b));
    }
  }
  return bundles;
}

void emit_report(const ReportBundle& bundle, const ExperimentConfig& cfg,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "plots");

  {
    std::ofstream out(fs::path(out_dir) / "metrics.json");
    if (!out) throw std::runtime_error("emit_report: cannot write to " + out_dir);
    out << bundle.to_json().dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(out_dir) / "metrics.csv");
    out << "condition,accuracy,class,class_precision,precision_defined\n";
    char buf[64];
    auto num = [&buf](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    for (const auto& c : bundle.conditions) {
      for (size_t k = 0; k < c.metrics.per_class_precision.size(); ++k) {
        out << c.condition << ',' << num(c.metrics.accuracy) << ',' << k << ','
            << num(c.metrics.per_class_precision[k]) << ','
            << (c.metrics.precision_defined[k] ? 1 : 0) << "\n";
      }
    }
  }
  {
    nlohmann::ordered_json lock;
    lock["config"] = config_to_json(cfg);
    lock["fingerprint"] = hex64(bundle.config_fingerprint);
    std::ofstream out(fs::path(out_dir) / "config.lock");
    out << lock.dump(2) << "\n";
  }

  // plots
  if (!bundle.conditions.empty()) {
    std::vector<std::string> cats;
    plots::Series acc;
    acc.label = "ACCURACY";
    acc.color = {0.20, 0.45, 0.80};
    for (const auto& c : bundle.conditions) {
      cats.push_back(c.condition);
      acc.values.push_back(c.metrics.accuracy);
    }
    plots::bar_chart((fs::path(out_dir) / "plots" / "accuracy.png").string(),
                     "ACCURACY PER CONDITION", cats, {acc}, 0.0, 1.05);
  }
  if (!bundle.sim_ra.empty()) {
    plots::Series aa{"AA", bundle.sim_aa, {0.2, 0.6, 0.2}};
    plots::Series ca{"CA", bundle.sim_ca, {0.8, 0.25, 0.2}};
    plots::Series ra{"RA", bundle.sim_ra, {0.2, 0.4, 0.8}};
    plots::histogram((fs::path(out_dir) / "plots" / "similarity.png").string(),
                     "FEATURE SIMILARITY", {aa, ca, ra}, 16);
  }
  auto curve_plot = [&](const std::string& file, const std::string& title,
                        const std::vector<double>& values) {
    if (values.empty()) return;
    std::vector<double> xs(values.size());
    std::iota(xs.begin(), xs.end(), 1.0);
    plots::line_chart((fs::path(out_dir) / "plots" / file).string(), title, xs,
                      {plots::Series{"LOSS", values, {0.75, 0.3, 0.1}}});
  };
  curve_plot("classifier_loss.png", "CLASSIFIER LOSS", bundle.classifier_loss);
  curve_plot("generator_total.png", "GENERATOR OBJECTIVE", bundle.generator_total);
  curve_plot("recon_loss.png", "RECONSTRUCTOR LOSS", bundle.recon_loss);
}

}  // namespace safesign::harness
