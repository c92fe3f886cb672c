#pragma once

#include <cstdint>
#include <string>

#include "mua/corpus.hpp"
#include "mua/retrieval.hpp"

namespace mua {

enum class DefenseKind { NONE, JPEG, RANDOMIZATION };

std::string defense_kind_name(DefenseKind kind);
DefenseKind defense_kind_from_name(const std::string& name);

struct DefenseConfig {
  DefenseKind kind = DefenseKind::NONE;
  int jpeg_quality = 60;
  double rand_scale_low = 0.85;
  double rand_scale_high = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Round-trip through baseline JPEG at the given quality; NI images travel as
// grayscale JPEG, RGB/TI as three-channel. The 8-bit quantization is part of
// the defense semantics.
ImageArray jpeg_defense(const ImageArray& image, int quality);

// Resize to a random scale in [low,high] (bilinear), paste at a random offset
// onto a zero canvas of the original size. Draw order: scale, then row
// offset, then column offset, all from config.seed.
ImageArray randomization_defense(const ImageArray& image, const DefenseConfig& config);

// Batch application with per-image seeds derived as base_seed + image_index.
Tensor defend_batch(const Tensor& images, Modality m, const DefenseConfig& config);

struct DefendedReport {
  EvalMode setting = EvalMode::RR;
  DefenseKind kind = DefenseKind::NONE;
  double benign_map = 0.0;    // benign queries under the defense
  double attacked_map = 0.0;  // adversarial queries under the defense
  double mdr_value = 0.0;
};

DefendedReport defended_eval(const RetrievalModel& model, const Corpus& corpus, EvalMode mode,
                             const GeneratorBundle* perturb, const DefenseConfig& defense,
                             double epsilon = 8.0 / 255.0);

}  // namespace mua
