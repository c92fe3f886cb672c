// Command-line front end for the tri-modal adversarial re-id laboratory:
// corpus synthesis, model training, attack training, evaluation, ablations,
// defenses and image export. Every command records a manifest with the
// effective config hash and seeds so reruns are comparable.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mua/defense.hpp"
#include "mua/errors.hpp"
#include "mua/experiment.hpp"
#include "mua/image_io.hpp"
#include "mua/retrieval.hpp"
#include "mua/rng.hpp"

namespace fs = std::filesystem;
using namespace mua;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> flags;
  std::optional<int> k;
};

ExperimentConfig effective_config(const CommonArgs& args, const std::string& command) {
  ExperimentConfig config = load_config(args.config_path);
  if (args.seed) {
    if (command == "synth")
      config.corpus.seed = *args.seed;
    else if (command == "train-models")
      config.models.seed = *args.seed;
    else
      config.attack.seed = *args.seed;
  }
  if (args.flags) config.attack.flags = flags_from_string(*args.flags);
  if (args.k) config.eval.k = *args.k;
  return config;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const ExperimentConfig& config) {
  fs::create_directories(out_dir);
  std::ofstream mf(fs::path(out_dir) / ("manifest_" + command + ".txt"));
  if (!mf) throw ArtifactError("cannot write manifest in " + out_dir);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  mf << "command = " << command << "\n";
  mf << "config_hash = " << hash << "\n";
  mf << "corpus_seed = " << config.corpus.seed << "\n";
  mf << "models_seed = " << config.models.seed << "\n";
  mf << "attack_seed = " << config.attack.seed << "\n";
  mf << "defense_seed = " << config.defense.seed << "\n";
}

Corpus load_corpus_artifact(const std::string& out_dir) {
  fs::path dir = fs::path(out_dir) / "corpus";
  if (!fs::exists(dir / "manifest.txt"))
    throw ArtifactError("missing artifact: corpus manifest at " + (dir / "manifest.txt").string() +
                        " (run `mua synth` first)");
  return load_corpus(dir.string());
}

SurrogateModel load_surrogate_artifact(const std::string& out_dir) {
  fs::path dir = fs::path(out_dir) / "models" / "surrogate";
  if (!fs::exists(dir / "meta.txt"))
    throw ArtifactError("missing artifact: surrogate checkpoint at " + dir.string() +
                        " (run `mua train-models` first)");
  return SurrogateModel::load(dir.string());
}

TargetZoo load_zoo_artifact(const std::string& out_dir) {
  fs::path dir = fs::path(out_dir) / "models";
  for (const char* name : {"single_rgb", "cross_rn", "multi_alt"})
    if (!fs::exists(dir / name / "meta.txt"))
      throw ArtifactError("missing artifact: checkpoint " + (dir / name).string() +
                          " (run `mua train-models` first)");
  return TargetZoo::load(dir.string());
}

GeneratorBundle load_bundle_artifact(const std::string& out_dir) {
  fs::path dir = fs::path(out_dir) / "attack";
  if (!fs::exists(dir / "gen_rgb" / "meta.txt"))
    throw ArtifactError("missing artifact: generator checkpoint at " + dir.string() +
                        " (run `mua train-attack` first)");
  return GeneratorBundle::load(dir.string());
}

int cmd_synth(const CommonArgs& args) {
  ExperimentConfig config = effective_config(args, "synth");
  Corpus corpus = synth_corpus(config.corpus.seed, config.corpus.train_ids,
                               config.corpus.eval_ids, config.corpus.per_id,
                               config.corpus.height, config.corpus.width);
  persist_corpus(corpus, (fs::path(args.out_dir) / "corpus").string());
  write_manifest(args.out_dir, "synth", config);
  std::printf("corpus: %zu train / %zu query / %zu gallery samples -> %s/corpus\n",
              corpus.train.size(), corpus.query.size(), corpus.gallery.size(),
              args.out_dir.c_str());
  return 0;
}

int cmd_train_models(const CommonArgs& args) {
  ExperimentConfig config = effective_config(args, "train-models");
  Corpus corpus = load_corpus_artifact(args.out_dir);
  std::uint64_t checksum = corpus_checksum(corpus);
  TrainOptions opts = config.train_options();

  SurrogateModel surrogate = train_surrogate(corpus, config.models.seed, opts);
  TargetZoo zoo = train_target_zoo(corpus, derive_seed(config.models.seed, 0x200), opts);

  fs::path models_dir = fs::path(args.out_dir) / "models";
  surrogate.save((models_dir / "surrogate").string(), checksum);
  zoo.save(models_dir.string(), checksum);

  double map_rnt = map_eval(*retrieval_view(surrogate), corpus, EvalMode::RNT);
  double map_rr = map_eval(*retrieval_view(*zoo.single_rgb), corpus, EvalMode::RR);
  double map_rn = map_eval(*retrieval_view(*zoo.cross_rn), corpus, EvalMode::RN);
  double map_nr = map_eval(*retrieval_view(*zoo.cross_rn), corpus, EvalMode::NR);
  double map_alt = map_eval(*retrieval_view(*zoo.multi_alt), corpus, EvalMode::RNT);

  std::ofstream report(models_dir / "report.txt");
  char line[128];
  auto emit = [&](const char* name, double v, double gate) {
    std::snprintf(line, sizeof line, "%-22s %6.2f  (gate %.0f, %s)\n", name, v, gate,
                  v >= gate ? "pass" : "FAIL");
    report << line;
    std::fputs(line, stdout);
  };
  emit("surrogate RNT->RNT", map_rnt, 90.0);
  emit("single_rgb R->R", map_rr, 90.0);
  emit("cross_rn R->N", map_rn, 70.0);
  emit("cross_rn N->R", map_nr, 70.0);
  emit("multi_alt RNT->RNT", map_alt, 90.0);
  write_manifest(args.out_dir, "train-models", config);
  return 0;
}

int cmd_train_attack(const CommonArgs& args) {
  ExperimentConfig config = effective_config(args, "train-attack");
  Corpus corpus = load_corpus_artifact(args.out_dir);
  SurrogateModel surrogate = load_surrogate_artifact(args.out_dir);

  std::vector<LossBreakdown> log;
  GeneratorBundle bundle = train_mua(corpus, surrogate, config.attack, &log);

  fs::path attack_dir = fs::path(args.out_dir) / "attack";
  bundle.save(attack_dir.string(), corpus_checksum(corpus));
  write_loss_log_csv((attack_dir / "loss_log.csv").string(), log);
  write_manifest(args.out_dir, "train-attack", config);
  std::printf("trained %d iterations with flags {%s}; checkpoints in %s\n",
              config.attack.iterations, flags_to_string(config.attack.flags).c_str(),
              attack_dir.string().c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  ExperimentConfig config = effective_config(args, "evaluate");
  Corpus corpus = load_corpus_artifact(args.out_dir);
  SurrogateModel surrogate = load_surrogate_artifact(args.out_dir);
  TargetZoo zoo = load_zoo_artifact(args.out_dir);
  GeneratorBundle bundle = load_bundle_artifact(args.out_dir);

  auto reports =
      evaluate_suite(surrogate, zoo, &bundle, corpus, config.eval.k, config.attack.epsilon);

  fs::path eval_dir = fs::path(args.out_dir) / "eval";
  fs::create_directories(eval_dir);
  write_reports_json((eval_dir / "report.json").string(), reports);
  write_reports_csv((eval_dir / "report.csv").string(), reports);
  for (const auto& r : reports)
    std::printf("%-6s aAP %6.1f -> %6.1f  mDR %5.1f  succ@%d %.3f\n",
                eval_mode_name(r.setting).c_str(), r.aap, r.aap_adv, r.mdr, r.k,
                r.k_success_rate);
  write_manifest(args.out_dir, "evaluate", config);
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  ExperimentConfig config = effective_config(args, "ablate");
  Corpus corpus = load_corpus_artifact(args.out_dir);
  SurrogateModel surrogate = load_surrogate_artifact(args.out_dir);
  TargetZoo zoo = load_zoo_artifact(args.out_dir);

  const std::vector<std::pair<std::string, LossFlags>> progression = {
      {"+MD", {LossFlag::MD}},
      {"+MMCD", {LossFlag::MD, LossFlag::MMCD}},
      {"+CMSD", {LossFlag::MD, LossFlag::MMCD, LossFlag::CMSD}},
      {"+MMCD'", {LossFlag::MD, LossFlag::MMCD, LossFlag::CMSD, LossFlag::MMCD_PRIME}},
  };
  LossFlags limit = config.attack.flags;
  std::vector<std::pair<std::string, LossFlags>> selected;
  for (const auto& [name, flags] : progression) {
    bool subset = true;
    for (LossFlag f : flags) subset = subset && limit.count(f);
    if (subset) selected.emplace_back(name, flags);
  }
  if (selected.empty()) throw ValidationError("ablate: flag limit excludes every stage");

  fs::path dir = fs::path(args.out_dir) / "ablation";
  fs::create_directories(dir);
  std::ofstream csv(dir / "ablation.csv");
  csv << "flags";
  const EvalMode modes[4] = {EvalMode::RR, EvalMode::RN, EvalMode::NR, EvalMode::RNT};
  for (EvalMode m : modes)
    csv << "," << eval_mode_name(m) << "_aap_benign"
        << "," << eval_mode_name(m) << "_aap_adv"
        << "," << eval_mode_name(m) << "_mdr";
  csv << "\n";

  for (const auto& [name, flags] : selected) {
    double benign[4] = {0, 0, 0, 0}, adv[4] = {0, 0, 0, 0};
    for (int s = 0; s < config.ablate.seeds; ++s) {
      AttackConfig run_cfg = config.attack;
      run_cfg.flags = flags;
      run_cfg.iterations = config.ablate.iterations;
      run_cfg.seed = derive_seed(config.attack.seed, static_cast<std::uint64_t>(s));
      GeneratorBundle bundle = train_mua(corpus, surrogate, run_cfg, nullptr);
      auto reports =
          evaluate_suite(surrogate, zoo, &bundle, corpus, config.eval.k, run_cfg.epsilon);
      for (int m = 0; m < 4; ++m) {
        benign[m] += reports[static_cast<std::size_t>(m)].aap;
        adv[m] += reports[static_cast<std::size_t>(m)].aap_adv;
      }
    }
    csv << name;
    char cell[160];
    for (int m = 0; m < 4; ++m) {
      double b = benign[m] / config.ablate.seeds;
      double a = adv[m] / config.ablate.seeds;
      std::snprintf(cell, sizeof cell, ",%.17g,%.17g,%.17g", b, a, mdr(b, a));
      csv << cell;
    }
    csv << "\n";
    std::printf("%-7s done (%d seeds x %d iterations)\n", name.c_str(), config.ablate.seeds,
                config.ablate.iterations);
  }
  write_manifest(args.out_dir, "ablate", config);
  return 0;
}

int cmd_defense(const CommonArgs& args) {
  ExperimentConfig config = effective_config(args, "defense");
  Corpus corpus = load_corpus_artifact(args.out_dir);
  TargetZoo zoo = load_zoo_artifact(args.out_dir);
  GeneratorBundle bundle = load_bundle_artifact(args.out_dir);

  struct Row {
    EvalMode mode;
    const RetrievalModel* model;
  };
  auto single_view = retrieval_view(*zoo.single_rgb);
  auto cross_view = retrieval_view(*zoo.cross_rn);
  auto multi_view = retrieval_view(*zoo.multi_alt);
  const std::vector<Row> rows = {
      {EvalMode::RR, single_view.get()},
      {EvalMode::RN, cross_view.get()},
      {EvalMode::NR, cross_view.get()},
      {EvalMode::RNT, multi_view.get()},
  };

  fs::path dir = fs::path(args.out_dir) / "defense";
  fs::create_directories(dir);
  std::ofstream csv(dir / "defense.csv");
  csv << "setting,randomization_benign,randomization_attacked,jpeg_benign,jpeg_attacked,"
         "aap_benign,aap_attacked,mdr\n";
  for (const auto& row : rows) {
    DefendedReport rand = defended_eval(*row.model, corpus, row.mode, &bundle,
                                        config.defense_config(DefenseKind::RANDOMIZATION),
                                        config.attack.epsilon);
    DefendedReport jpeg = defended_eval(*row.model, corpus, row.mode, &bundle,
                                        config.defense_config(DefenseKind::JPEG),
                                        config.attack.epsilon);
    double aap_benign = aap({rand.benign_map, jpeg.benign_map});
    double aap_attacked = aap({rand.attacked_map, jpeg.attacked_map});
    char line[320];
    std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  eval_mode_name(row.mode).c_str(), rand.benign_map, rand.attacked_map,
                  jpeg.benign_map, jpeg.attacked_map, aap_benign, aap_attacked,
                  mdr(aap_benign, aap_attacked));
    csv << line;
    std::printf("%-6s rand %5.1f->%5.1f jpeg %5.1f->%5.1f mDR %5.1f\n",
                eval_mode_name(row.mode).c_str(), rand.benign_map, rand.attacked_map,
                jpeg.benign_map, jpeg.attacked_map, mdr(aap_benign, aap_attacked));
  }
  write_manifest(args.out_dir, "defense", config);
  return 0;
}

int cmd_export(const CommonArgs& args) {
  ExperimentConfig config = effective_config(args, "export");
  Corpus corpus = load_corpus_artifact(args.out_dir);
  GeneratorBundle bundle = load_bundle_artifact(args.out_dir);

  const std::vector<TriModalSample>* split = &corpus.query;
  if (config.export_.split == "train") split = &corpus.train;
  if (config.export_.split == "gallery") split = &corpus.gallery;
  if (config.export_.index < 0 || config.export_.index >= static_cast<int>(split->size()))
    throw ValidationError("export: sample index out of range");
  const TriModalSample& sample = (*split)[static_cast<std::size_t>(config.export_.index)];

  fs::path dir = fs::path(args.out_dir) / "export";
  fs::create_directories(dir);
  auto to_png = [&](const ImageArray& img, const std::string& name) {
    io::Image8 out;
    out.height = img.height;
    out.width = img.width;
    out.channels = img.channels;
    out.pixels.resize(img.pixels.size());
    std::size_t i = 0;
    for (int h = 0; h < img.height; ++h)
      for (int w = 0; w < img.width; ++w)
        for (int c = 0; c < img.channels; ++c)
          out.pixels[i++] = static_cast<std::uint8_t>(
              std::lround(std::min(1.0, std::max(0.0, img.at(c, h, w))) * 255.0));
    io::write_png((dir / name).string(), out);
  };

  for (Modality m : kAllModalities) {
    const ImageArray& benign = sample.image(m);
    ImageArray adv = generate_ae(bundle.generator(m), benign, config.attack.epsilon);
    ImageArray pert = benign;  // (x' - x) / eps rescaled from [-1,1] to [0,1]
    for (std::size_t i = 0; i < pert.pixels.size(); ++i)
      pert.pixels[i] =
          ((adv.pixels[i] - benign.pixels[i]) / config.attack.epsilon + 1.0) / 2.0;
    to_png(benign, modality_name(m) + "_benign.png");
    to_png(adv, modality_name(m) + "_ae.png");
    to_png(pert, modality_name(m) + "_pert.png");
  }
  std::printf("exported 9 images to %s\n", dir.string().c_str());
  write_manifest(args.out_dir, "export", config);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modality-unified adversarial attack laboratory"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd, bool with_seed, bool with_flags, bool with_k) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--out", args.out_dir, "artifact directory")->required();
    if (with_seed) cmd->add_option("--seed", args.seed, "override the stage seed");
    if (with_flags) cmd->add_option("--flags", args.flags, "loss flags, e.g. md,mmcd,cmsd");
    if (with_k) cmd->add_option("--k", args.k, "top-K for the success-rate metric");
  };

  add_common(app.add_subcommand("synth", "generate and persist the toy corpus"), true, false,
             false);
  add_common(app.add_subcommand("train-models", "train surrogate and target zoo"), true, false,
             false);
  add_common(app.add_subcommand("train-attack", "train the adversarial generators"), true, true,
             false);
  add_common(app.add_subcommand("evaluate", "run the four-setting evaluation"), false, false,
             true);
  add_common(app.add_subcommand("ablate", "run the loss-term ablation grid"), true, true, false);
  add_common(app.add_subcommand("defense", "evaluate input-transformation defenses"), false,
             false, false);
  add_common(app.add_subcommand("export", "dump benign/AE/perturbation images"), false, false,
             false);

  try {
    app.parse(argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "synth") return cmd_synth(args);
    if (command == "train-models") return cmd_train_models(args);
    if (command == "train-attack") return cmd_train_attack(args);
    if (command == "evaluate") return cmd_evaluate(args);
    if (command == "ablate") return cmd_ablate(args);
    if (command == "defense") return cmd_defense(args);
    if (command == "export") return cmd_export(args);
    std::cerr << "unknown command\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
