#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "mua/autodiff.hpp"
#include "mua/corpus.hpp"
#include "mua/models.hpp"

namespace mua {

enum class LossFlag { MD, CMSD, MMCD, MMCD_PRIME };
using LossFlags = std::set<LossFlag>;

std::string flags_to_string(const LossFlags& flags);
LossFlags flags_from_string(const std::string& csv);  // "md,mmcd,cmsd,mmcd_prime"

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double lambda1 = 50.0;
  double lambda2 = 50.0;
  double lambda3 = 10.0;
  double learning_rate = 2e-4;
  int iterations = 1000;
  int batch_identities = 4;  // P
  int batch_samples = 4;     // K images per identity
  LossFlags flags{LossFlag::MD, LossFlag::CMSD, LossFlag::MMCD, LossFlag::MMCD_PRIME};
  std::uint64_t seed = 0;

  void validate() const;
};

// Encoder-decoder perturbation generator with skip connections; the final
// tanh bounds every output entry to [-1,1] before epsilon scaling. The NI
// generator emits one channel, RGB/TI emit three.
class Generator {
 public:
  Generator(Modality modality, int height, int width, std::uint64_t seed);
  nn::Value forward(const nn::Value& images) const;  // bounded perturbation maps
  Modality modality() const { return modality_; }
  int out_channels() const { return out_channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static Generator load(const std::string& dir);

 private:
  struct Block {
    nn::Value w, b, gamma, beta;
  };
  nn::Value block(const nn::Value& x, const Block& blk) const;
  Modality modality_;
  int height_, width_, out_channels_;
  std::uint64_t seed_;
  Block enc1_, enc2_, neck_, dec2_;
  nn::Value out_w_, out_b_;
  nn::ParamStore params_;
};

// Strided patch discriminator; mean patch score through a sigmoid.
class Discriminator {
 public:
  Discriminator(Modality modality, int height, int width, std::uint64_t seed);
  nn::Value score(const nn::Value& images) const;  // {N,1}, entries in (0,1)
  Modality modality() const { return modality_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static Discriminator load(const std::string& dir);

 private:
  struct Block {
    nn::Value w, b, gamma, beta;
    bool normed = true;
  };
  Modality modality_;
  int height_, width_;
  std::uint64_t seed_;
  std::vector<Block> blocks_;
  nn::Value patch_w_, patch_b_;
  nn::ParamStore params_;
};

struct GeneratorBundle {
  std::array<std::unique_ptr<Generator>, 3> generators;
  std::array<std::unique_ptr<Discriminator>, 3> discriminators;

  Generator& generator(Modality m) { return *generators[static_cast<std::size_t>(m)]; }
  const Generator& generator(Modality m) const {
    return *generators[static_cast<std::size_t>(m)];
  }
  Discriminator& discriminator(Modality m) {
    return *discriminators[static_cast<std::size_t>(m)];
  }
  const Discriminator& discriminator(Modality m) const {
    return *discriminators[static_cast<std::size_t>(m)];
  }

  std::uint64_t checksum() const;
  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static GeneratorBundle load(const std::string& dir);
};

GeneratorBundle make_bundle(int height, int width, std::uint64_t seed);

// x' = clip(x + eps * bounded(G(x)), 0, 1); differentiable w.r.t. generator
// parameters, and ||x'-x||_inf <= eps by construction.
nn::Value generate_ae(const Generator& gen, const nn::Value& images, double epsilon);
Tensor generate_ae(const Generator& gen, const Tensor& images, double epsilon);
ImageArray generate_ae(const Generator& gen, const ImageArray& image, double epsilon);

// ---- loss terms (batch means; the FeatureVec overloads take single rows) ----
nn::Value md_loss(const nn::Value& f_benign, const nn::Value& f_adv);
double md_loss(const FeatureVec& f_benign, const FeatureVec& f_adv);

nn::Value cmsd_loss(const SurrogateModel& surrogate, Modality h, const nn::Value& x,
                    const nn::Value& x_adv);
double cmsd_loss(const SurrogateModel& surrogate, Modality h, const ImageArray& x,
                 const ImageArray& x_adv);

nn::Value mmcd_loss(const nn::Value& f_adv, const FeatureCenters& centers,
                    const std::vector<int>& identities);
double mmcd_loss(const FeatureVec& f_adv, const FeatureCenters& centers, int identity);

nn::Value gan_d_loss(const Discriminator& disc, const nn::Value& x, const nn::Value& x_adv);
nn::Value gan_g_loss(const Discriminator& disc, const nn::Value& x_adv);

double adv_loss(double md, double cmsd, double mmcd, const AttackConfig& config);
double total_loss(double gan_g, double adv);

struct LossBreakdown {
  int iteration = 0;
  Modality modality = Modality::RGB;
  double md = 0, cmsd = 0, mmcd = 0, gan_g = 0, gan_d = 0, adv = 0, total = 0;
};

void write_loss_log_csv(const std::string& path, const std::vector<LossBreakdown>& log);

// Alg: per iteration, sample a P x K batch of trios, build AEs per modality,
// push adversarial features from their benign counterparts (and centers /
// cross-fed embeddings per config.flags), then descend the generators on
// L_G = L_gan + L_adv and ascend the discriminators on L_D.
GeneratorBundle train_mua(const Corpus& corpus, SurrogateModel& surrogate,
                          const AttackConfig& config,
                          std::vector<LossBreakdown>* log = nullptr);

}  // namespace mua
