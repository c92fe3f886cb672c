#pragma once

#include <cstdint>
#include <string>

#include "mua/attack.hpp"
#include "mua/defense.hpp"
#include "mua/models.hpp"

namespace mua {

// Flat sectioned key-value configuration; parse rejects unknown sections and
// keys, and parse(serialize(c)) reproduces c exactly (doubles round-trip via
// %.17g).
struct ExperimentConfig {
  struct CorpusSection {
    std::uint64_t seed = 7;
    int train_ids = 10;
    int eval_ids = 20;
    int per_id = 8;
    int height = 64;
    int width = 32;
  };
  struct ModelsSection {
    std::uint64_t seed = 1;
    int epochs = 40;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double logit_scale = 10.0;
    double align_weight = 3.0;
    double cross_input_noise = 0.03;
  };
  struct EvalSection {
    int k = 10;
  };
  struct AblateSection {
    int seeds = 3;
    int iterations = 400;
  };
  struct DefenseSection {
    int jpeg_quality = 60;
    double rand_scale_low = 0.85;
    double rand_scale_high = 1.0;
    std::uint64_t seed = 5;
  };
  struct ExportSection {
    std::string split = "query";
    int index = 0;
  };

  std::uint64_t global_seed = 7;
  CorpusSection corpus;
  ModelsSection models;
  AttackConfig attack;
  EvalSection eval;
  AblateSection ablate;
  DefenseSection defense;
  ExportSection export_;

  TrainOptions train_options() const;
  DefenseConfig defense_config(DefenseKind kind) const;

  bool operator==(const ExperimentConfig& other) const;
};

std::string serialize_config(const ExperimentConfig& config);
ExperimentConfig parse_config_text(const std::string& text);  // ValidationError on bad input
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace mua
