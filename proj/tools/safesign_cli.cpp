// Command-line front end for the SafeSign pipeline. Every subcommand reads one
// JSON config (defaults when omitted), honors --seed/--out overrides, and exits
// nonzero naming the failing stage.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "safesign/harness.hpp"
#include "safesign/plots.hpp"

namespace fs = std::filesystem;
using namespace safesign;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "runs/default";
  uint64_t seed = 0;
  bool seed_set = false;
};

harness::ExperimentConfig resolve_config(const CommonOpts& o) {
  harness::ExperimentConfig cfg =
      o.config_path.empty() ? harness::default_config() : harness::load_config_file(o.config_path);
  if (o.seed_set) cfg.seed = o.seed;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config");
  cmd->add_option("--out", o.out_dir, "artifact/output directory");
  cmd->add_option("--seed", o.seed, "override the top-level seed")
      ->each([&o](const std::string&) { o.seed_set = true; });
}

int fail(const std::string& stage, const std::exception& e) {
  std::cerr << "error in stage " << stage << ": " << e.what() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SafeSign: light-patch attack generation and multi-view sign repair"};
  app.require_subcommand(1);

  CommonOpts prepare_o, clf_o, gen_o, atk_o, rec_o, eval_o, abl_o, rep_o;

  auto* cmd_prepare = app.add_subcommand("prepare", "synthesize/load the dataset and write it out");
  add_common(cmd_prepare, prepare_o);
  auto* cmd_clf = app.add_subcommand("train-classifier", "train and freeze the recognition model");
  add_common(cmd_clf, clf_o);
  auto* cmd_gen = app.add_subcommand("train-generator", "train the contaminated-sign generator");
  add_common(cmd_gen, gen_o);
  auto* cmd_atk = app.add_subcommand("attack", "emit the held-out light-patch suites and corpora");
  add_common(cmd_atk, atk_o);
  auto* cmd_rec = app.add_subcommand("train-reconstructor", "train the multi-view repair network");
  add_common(cmd_rec, rec_o);
  auto* cmd_eval = app.add_subcommand("evaluate", "run the full pipeline and report metrics");
  add_common(cmd_eval, eval_o);
  auto* cmd_abl = app.add_subcommand("ablate", "run the paired ablation suite");
  add_common(cmd_abl, abl_o);
  auto* cmd_rep = app.add_subcommand("report", "re-emit reports from an evaluate run");
  add_common(cmd_rep, rep_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_prepare->parsed()) {
      auto cfg = resolve_config(prepare_o);
      harness::PipelineArtifacts art;
      try {
        harness::stage_prepare(cfg, art);
        sign_data::save_manifest_dataset(art.raw, (fs::path(prepare_o.out_dir) / "dataset").string());
      } catch (const std::exception& e) {
        return fail("prepare", e);
      }
      std::cout << "prepared " << art.raw.train.size() << " train / " << art.raw.test.size()
                << " test samples (" << art.prepared.train.size() << " after augmentation)\n";
      return 0;
    }

    if (cmd_clf->parsed()) {
      auto cfg = resolve_config(clf_o);
      harness::PipelineArtifacts art;
      try {
        harness::stage_prepare(cfg, art);
        harness::stage_train_classifier(cfg, clf_o.out_dir, art);
      } catch (const std::exception& e) {
        return fail("train-classifier", e);
      }
      auto m = tsr_classifier::evaluate(*art.classifier, harness::test_pairs(art.prepared));
      std::cout << "classifier frozen, clean test accuracy " << m.accuracy << "\n";
      return 0;
    }

    if (cmd_gen->parsed()) {
      auto cfg = resolve_config(gen_o);
      harness::PipelineArtifacts art;
      try {
        harness::stage_prepare(cfg, art);
        harness::stage_train_classifier(cfg, gen_o.out_dir, art);
        harness::stage_train_generator(cfg, gen_o.out_dir, art);
      } catch (const std::exception& e) {
        return fail("train-generator", e);
      }
      auto m = harness::eval_gen_contaminated(*art.classifier, *art.generator, art.masks,
                                              art.prepared, cfg.eval_seed);
      std::cout << "generator trained, contaminated test accuracy " << m.accuracy << "\n";
      return 0;
    }

    if (cmd_atk->parsed()) {
      auto cfg = resolve_config(atk_o);
      harness::PipelineArtifacts art;
      try {
        harness::stage_prepare(cfg, art);
        harness::stage_attack_suites(cfg, atk_o.out_dir, art);
        // contaminated corpora, loadable through the manifest reader
        for (const auto& [kind, suite] : art.suites) {
          sign_data::Dataset contaminated = art.raw;
          Rng rng(mix_seed(cfg.attack_seed, 0xc0 + kind.size()));
          for (auto* split : {&contaminated.train, &contaminated.test})
            for (auto& s : *split)
              s.image = light_attacks::apply_light_patch(
                  s.image, suite[static_cast<size_t>(rng.uniform_int(static_cast<int>(suite.size())))]);
          sign_data::save_manifest_dataset(
              contaminated, (fs::path(atk_o.out_dir) / "contaminated" / kind).string());
        }
      } catch (const std::exception& e) {
        return fail("attack", e);
      }
      std::cout << "wrote 4 attack suites and contaminated corpora\n";
      return 0;
    }

    if (cmd_rec->parsed()) {
      auto cfg = resolve_config(rec_o);
      harness::PipelineArtifacts art;
      try {
        harness::stage_prepare(cfg, art);
        harness::stage_train_classifier(cfg, rec_o.out_dir, art);
        harness::stage_train_generator(cfg, rec_o.out_dir, art);
        harness::stage_train_reconstructor(cfg, rec_o.out_dir, art);
      } catch (const std::exception& e) {
        return fail("train-reconstructor", e);
      }
      std::cout << "reconstructor trained\n";
      return 0;
    }

    if (cmd_eval->parsed()) {
      auto cfg = resolve_config(eval_o);
      auto bundle = harness::run_pipeline(cfg, eval_o.out_dir);
      harness::emit_report(bundle, cfg, eval_o.out_dir);
      if (bundle.partial) {
        std::cerr << "pipeline failed in stage " << bundle.failed_stage << ": " << bundle.failure
                  << "\n";
        return 1;
      }
      std::cout << "clean " << bundle.accuracy("clean") << ", contaminated "
                << bundle.accuracy("contaminated_generator") << ", repaired "
                << bundle.accuracy("repaired_generator") << "\n";
      return 0;
    }

    if (cmd_abl->parsed()) {
      auto cfg = resolve_config(abl_o);
      auto bundles = harness::run_ablations(cfg, abl_o.out_dir);
      harness::emit_report(bundles.front(), cfg, (fs::path(abl_o.out_dir) / "base").string());
      // cross-variant summary curves
      std::vector<double> xs;
      plots::Series sweep{"REPAIRED", {}, {0.2, 0.4, 0.8}};
      for (const auto& b : bundles) {
        if (b.variant.rfind("views_", 0) == 0) {
          xs.push_back(std::stod(b.variant.substr(6)));
          sweep.values.push_back(b.accuracy("repaired_generator"));
        }
        std::cout << b.variant << ": repaired_generator="
                  << (b.find("repaired_generator") != nullptr ? b.accuracy("repaired_generator") : -1)
                  << (b.partial ? " (partial: " + b.failed_stage + ")" : "") << "\n";
      }
      if (!xs.empty())
        plots::line_chart((fs::path(abl_o.out_dir) / "view_sweep.png").string(),
                          "REPAIRED ACCURACY VS VIEW COUNT", xs, {sweep});
      return 0;
    }

    if (cmd_rep->parsed()) {
      auto cfg = resolve_config(rep_o);
      auto bundle = harness::run_pipeline(cfg, rep_o.out_dir);  // resumes from checkpoints
      harness::emit_report(bundle, cfg, rep_o.out_dir);
      std::cout << "report written to " << rep_o.out_dir << "\n";
      return bundle.partial ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
