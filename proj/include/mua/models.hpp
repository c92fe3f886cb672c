#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mua/autodiff.hpp"
#include "mua/corpus.hpp"

namespace mua {

using FeatureVec = std::vector<double>;

// Small convolutional feature extractor: per block conv3x3 -> instance norm ->
// leaky relu -> 2x2 average pool; then global average pool, linear projection
// and L2 normalization. Accepts images of the other channel count through
// fixed channel adaptation (1->3 replicate, 3->1 luminance), which is what
// cross-feeding relies on.
class Subnetwork {
 public:
  Subnetwork(Modality modality, int height, int width, std::vector<int> widths, int out_dim,
             std::uint64_t seed);

  nn::Value forward(const nn::Value& images) const;   // {N,C,H,W} -> {N,out_dim}, unit rows
  Tensor extract(const Tensor& images) const;         // no-grad convenience

  Modality modality() const { return modality_; }
  int out_dim() const { return out_dim_; }
  int in_channels() const { return in_channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<int>& widths() const { return widths_; }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  std::uint64_t forward_calls() const { return forward_calls_; }

 private:
  struct Block {
    nn::Value w, b, gamma, beta;
  };
  Modality modality_;
  int height_, width_, out_dim_, in_channels_;
  std::vector<int> widths_;
  std::vector<Block> blocks_;
  nn::Value proj_w_, proj_b_;
  nn::ParamStore params_;
  mutable std::uint64_t forward_calls_ = 0;
};

// identity x modality -> unit-norm feature centers
class FeatureCenters {
 public:
  void set(int identity, Modality m, FeatureVec center);
  const FeatureVec& at(int identity, Modality m) const;  // throws on missing center
  bool has(int identity, Modality m) const;
  std::size_t size() const { return centers_.size(); }

 private:
  std::map<std::pair<int, int>, FeatureVec> centers_;
};

// Three modality-specific subnetworks plus a concat->linear fusion head.
class SurrogateModel {
 public:
  SurrogateModel(int height, int width, std::uint64_t seed,
                 std::vector<int> widths = {12, 24, 36, 48}, int out_dim = 64);

  const Subnetwork& subnet(Modality m) const { return *subnets_[static_cast<std::size_t>(m)]; }
  Subnetwork& subnet(Modality m) { return *subnets_[static_cast<std::size_t>(m)]; }

  // fr/fn/ft are {N,out_dim}; result is the unit-norm fused embedding
  nn::Value fuse(const nn::Value& fr, const nn::Value& fn, const nn::Value& ft) const;
  Tensor fused_embed(const Tensor& xr, const Tensor& xn, const Tensor& xt) const;

  nn::Value fusion_w() const { return fusion_w_; }
  nn::Value fusion_b() const { return fusion_b_; }

  std::vector<std::pair<std::string, nn::Value>> all_params() const;
  void set_trainable(bool trainable);
  std::uint64_t checksum() const;

  int height() const { return height_; }
  int width() const { return width_; }
  int out_dim() const { return out_dim_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<int>& widths() const { return widths_; }

  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static SurrogateModel load(const std::string& dir);

 private:
  int height_, width_, out_dim_;
  std::uint64_t seed_;
  std::vector<int> widths_;
  std::vector<std::unique_ptr<Subnetwork>> subnets_;
  nn::Value fusion_w_, fusion_b_;
  nn::ParamStore fusion_params_;
};

// ---- spec operations over single images ----
FeatureVec extract_features(const Subnetwork& subnet, const ImageArray& image);
// NI image -> S_R route, RGB image -> S_N route; TI input is rejected.
FeatureVec cross_extract(const SurrogateModel& surrogate, const ImageArray& image);
Tensor cross_extract_batch(const SurrogateModel& surrogate, const Tensor& images, Modality h);
nn::Value cross_extract_graph(const SurrogateModel& surrogate, const nn::Value& images,
                              Modality h);
FeatureVec fuse(const SurrogateModel& surrogate, const FeatureVec& f_r, const FeatureVec& f_n,
                const FeatureVec& f_t);
FeatureCenters feature_centers(const SurrogateModel& surrogate,
                               const std::vector<TriModalSample>& batch);
FeatureCenters feature_centers(const SurrogateModel& surrogate,
                               const std::vector<const TriModalSample*>& batch);

// ---- held-out target models ----
class SingleRgbModel {
 public:
  SingleRgbModel(int height, int width, std::uint64_t seed);
  nn::Value forward(const nn::Value& images) const { return net_->forward(images); }
  Tensor extract(const Tensor& images) const { return net_->extract(images); }
  Subnetwork& net() { return *net_; }
  const Subnetwork& net() const { return *net_; }
  std::uint64_t seed() const { return seed_; }

  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static SingleRgbModel load(const std::string& dir);

 private:
  std::uint64_t seed_;
  std::unique_ptr<Subnetwork> net_;
};

// Two-stream model: separate RGB/NI stems feeding one shared tail, so both
// modalities land in a single embedding space.
class CrossRnModel {
 public:
  CrossRnModel(int height, int width, std::uint64_t seed);
  nn::Value embed(const nn::Value& images, Modality m) const;  // m in {RGB, NI}
  Tensor extract(const Tensor& images, Modality m) const;

  std::vector<std::pair<std::string, nn::Value>> all_params() const;
  void set_trainable(bool trainable);
  int out_dim() const { return out_dim_; }
  std::uint64_t seed() const { return seed_; }

  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static CrossRnModel load(const std::string& dir);

 private:
  struct Block {
    nn::Value w, b, gamma, beta;
  };
  int height_, width_, out_dim_;
  std::uint64_t seed_;
  nn::Value stem_rgb_w_, stem_rgb_b_, stem_ni_w_, stem_ni_b_;  // 1x1 linear adapters
  std::vector<Block> tail_;
  nn::Value proj_w_, proj_b_;
  nn::ParamStore params_;
};

// Multi-modality model with summation fusion; architecture differs from the
// surrogate on purpose.
class MultiAltModel {
 public:
  MultiAltModel(int height, int width, std::uint64_t seed);
  const Subnetwork& subnet(Modality m) const { return *subnets_[static_cast<std::size_t>(m)]; }
  Subnetwork& subnet(Modality m) { return *subnets_[static_cast<std::size_t>(m)]; }
  nn::Value fuse(const nn::Value& fr, const nn::Value& fn, const nn::Value& ft) const;
  Tensor fused_embed(const Tensor& xr, const Tensor& xn, const Tensor& xt) const;

  std::vector<std::pair<std::string, nn::Value>> all_params() const;
  void set_trainable(bool trainable);
  int out_dim() const { return out_dim_; }
  std::uint64_t seed() const { return seed_; }

  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static MultiAltModel load(const std::string& dir);

 private:
  int height_, width_, out_dim_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Subnetwork>> subnets_;
  nn::Value fusion_w_, fusion_b_;
  nn::ParamStore fusion_params_;
};

struct TargetZoo {
  std::unique_ptr<SingleRgbModel> single_rgb;
  std::unique_ptr<CrossRnModel> cross_rn;
  std::unique_ptr<MultiAltModel> multi_alt;

  void save(const std::string& dir, std::uint64_t corpus_checksum) const;
  static TargetZoo load(const std::string& dir);
};

// ---- training ----
struct TrainOptions {
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double logit_scale = 10.0;
  double align_weight = 3.0;      // cross-modal pair pull in the two-stream model
  double cross_input_noise = 0.03;  // noise augmentation for the two-stream model
};

SurrogateModel train_surrogate(const Corpus& corpus, std::uint64_t seed,
                               const TrainOptions& opts = {});
TargetZoo train_target_zoo(const Corpus& corpus, std::uint64_t seed,
                           const TrainOptions& opts = {});

}  // namespace mua
