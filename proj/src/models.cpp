#include "mua/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "mua/checkpoint.hpp"
#include "mua/errors.hpp"
#include "mua/rng.hpp"

namespace mua {

using nn::Value;

namespace {

Tensor he_conv_init(Rng& rng, int cout, int cin, int k) {
  Tensor w({cout, cin, k, k});
  double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, std);
  return w;
}

Tensor xavier_linear_init(Rng& rng, int out, int in) {
  Tensor w({out, in});
  double lim = std::sqrt(6.0 / (static_cast<double>(in) + out));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-lim, lim);
  return w;
}

// adapt input channel count to what a network expects
Value adapt_channels(const Value& images, int expected) {
  int have = images->val.dim(1);
  if (have == expected) return images;
  if (have == 1 && expected == 3) return nn::replicate_channels(images, 3);
  if (have == 3 && expected == 1) return nn::luminance(images);
  throw ValidationError("channel adaptation: cannot map " + std::to_string(have) +
                        " channels to " + std::to_string(expected));
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::uint64_t meta_u64(const std::map<std::string, std::string>& meta, const std::string& key,
                       const std::string& dir) {
  auto it = meta.find(key);
  if (it == meta.end())
    throw CorruptDataError("checkpoint meta in " + dir + " lacks key '" + key + "'");
  return std::stoull(it->second);
}

std::string meta_str(const std::map<std::string, std::string>& meta, const std::string& key,
                     const std::string& dir) {
  auto it = meta.find(key);
  if (it == meta.end())
    throw CorruptDataError("checkpoint meta in " + dir + " lacks key '" + key + "'");
  return it->second;
}

}  // namespace

Subnetwork::Subnetwork(Modality modality, int height, int width, std::vector<int> widths,
                       int out_dim, std::uint64_t seed)
    : modality_(modality),
      height_(height),
      width_(width),
      out_dim_(out_dim),
      in_channels_(modality_channels(modality)),
      widths_(std::move(widths)) {
  if (widths_.empty()) throw ValidationError("Subnetwork: needs at least one block");
  int div = 1 << static_cast<int>(widths_.size());
  if (height % div != 0 || width % div != 0)
    throw ValidationError("Subnetwork: H,W must be divisible by 2^blocks");

  Rng rng(derive_seed(seed, 0xB10C5 + static_cast<std::uint64_t>(modality)));
  int cin = in_channels_;
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    Block blk;
    std::string p = "b" + std::to_string(i) + ".";
    blk.w = params_.add(p + "w", he_conv_init(rng, widths_[i], cin, 3));
    blk.b = params_.add(p + "b", Tensor({widths_[i]}));
    blk.gamma = params_.add(p + "gamma", Tensor::full({widths_[i]}, 1.0));
    blk.beta = params_.add(p + "beta", Tensor({widths_[i]}));
    blocks_.push_back(blk);
    cin = widths_[i];
  }
  proj_w_ = params_.add("proj.w", xavier_linear_init(rng, out_dim_, cin));
  proj_b_ = params_.add("proj.b", Tensor({out_dim_}));
}

Value Subnetwork::forward(const Value& images) const {
  const auto& s = images->val.shape();
  if (s.size() != 4) throw ValidationError("Subnetwork: expects {N,C,H,W} input");
  if (s[2] != height_ || s[3] != width_)
    throw ValidationError("Subnetwork: shape mismatch, trained on " +
                          std::to_string(height_) + "x" + std::to_string(width_) + ", got " +
                          std::to_string(s[2]) + "x" + std::to_string(s[3]));
  ++forward_calls_;
  Value h = adapt_channels(images, in_channels_);
  for (const auto& blk : blocks_) {
    h = nn::conv2d(h, blk.w, blk.b, 1, 1);
    h = nn::instance_norm(h, blk.gamma, blk.beta);
    h = nn::leaky_relu(h, 0.1);
    h = nn::avg_pool2(h);
  }
  h = nn::global_avg_pool(h);
  h = nn::linear(h, proj_w_, proj_b_);
  return nn::l2_normalize_rows(h);
}

Tensor Subnetwork::extract(const Tensor& images) const {
  return forward(nn::constant(images))->val;
}

void FeatureCenters::set(int identity, Modality m, FeatureVec center) {
  centers_[{identity, static_cast<int>(m)}] = std::move(center);
}

const FeatureVec& FeatureCenters::at(int identity, Modality m) const {
  auto it = centers_.find({identity, static_cast<int>(m)});
  if (it == centers_.end())
    throw ValidationError("missing center for identity " + std::to_string(identity) +
                          " modality " + modality_name(m));
  return it->second;
}

bool FeatureCenters::has(int identity, Modality m) const {
  return centers_.count({identity, static_cast<int>(m)}) != 0;
}

SurrogateModel::SurrogateModel(int height, int width, std::uint64_t seed,
                               std::vector<int> widths, int out_dim)
    : height_(height), width_(width), out_dim_(out_dim), seed_(seed), widths_(widths) {
  for (Modality m : kAllModalities)
    subnets_.push_back(std::make_unique<Subnetwork>(m, height, width, widths, out_dim,
                                                    derive_seed(seed, 7 + static_cast<int>(m))));
  Rng rng(derive_seed(seed, 0xF051));
  fusion_w_ = fusion_params_.add("fusion.w", xavier_linear_init(rng, out_dim, 3 * out_dim));
  fusion_b_ = fusion_params_.add("fusion.b", Tensor({out_dim}));
}

Value SurrogateModel::fuse(const Value& fr, const Value& fn, const Value& ft) const {
  for (const Value& f : {fr, fn, ft})
    if (f->val.rank() != 2 || f->val.dim(1) != out_dim_)
      throw ValidationError("fuse: dimension mismatch, expected {N," +
                            std::to_string(out_dim_) + "}, got " + shape_str(f->val.shape()));
  Value cat = nn::concat_c(nn::concat_c(fr, fn), ft);
  return nn::l2_normalize_rows(nn::linear(cat, fusion_w_, fusion_b_));
}

Tensor SurrogateModel::fused_embed(const Tensor& xr, const Tensor& xn, const Tensor& xt) const {
  Value fr = subnet(Modality::RGB).forward(nn::constant(xr));
  Value fn = subnet(Modality::NI).forward(nn::constant(xn));
  Value ft = subnet(Modality::TI).forward(nn::constant(xt));
  return fuse(fr, fn, ft)->val;
}

std::vector<std::pair<std::string, Value>> SurrogateModel::all_params() const {
  nn::ParamStore agg;
  for (Modality m : kAllModalities)
    agg.append(subnet(m).params(), modality_name(m) + ".");
  agg.append(fusion_params_, "");
  return agg.items;
}

void SurrogateModel::set_trainable(bool trainable) {
  for (auto& [name, v] : all_params()) v->requires_grad = trainable;
}

std::uint64_t SurrogateModel::checksum() const {
  nn::ParamStore agg;
  agg.items = all_params();
  return agg.checksum();
}

void SurrogateModel::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  std::map<std::string, std::string> meta;
  meta["model"] = "surrogate";
  meta["height"] = std::to_string(height_);
  meta["width"] = std::to_string(width_);
  meta["out_dim"] = std::to_string(out_dim_);
  meta["widths"] = join_ints(widths_);
  meta["seed"] = std::to_string(seed_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(corpus_checksum));
  meta["corpus_checksum"] = buf;
  save_checkpoint(dir, all_params(), meta);
}

SurrogateModel SurrogateModel::load(const std::string& dir) {
  auto meta = read_checkpoint_meta(dir);
  if (meta_str(meta, "model", dir) != "surrogate")
    throw CorruptDataError("checkpoint in " + dir + " is not a surrogate model");
  SurrogateModel model(static_cast<int>(meta_u64(meta, "height", dir)),
                       static_cast<int>(meta_u64(meta, "width", dir)),
                       meta_u64(meta, "seed", dir), parse_ints(meta_str(meta, "widths", dir)),
                       static_cast<int>(meta_u64(meta, "out_dim", dir)));
  load_checkpoint_params(dir, model.all_params());
  return model;
}

FeatureVec extract_features(const Subnetwork& subnet, const ImageArray& image) {
  Tensor batch({1, image.channels, image.height, image.width});
  std::copy(image.pixels.begin(), image.pixels.end(), batch.data());
  Tensor f = subnet.extract(batch);
  return FeatureVec(f.data(), f.data() + f.numel());
}

Value cross_extract_graph(const SurrogateModel& surrogate, const Value& images, Modality h) {
  switch (h) {
    case Modality::NI: return surrogate.subnet(Modality::RGB).forward(images);
    case Modality::RGB: return surrogate.subnet(Modality::NI).forward(images);
    case Modality::TI: break;
  }
  throw ValidationError("cross_extract: unsupported modality TI, no cross route exists");
}

Tensor cross_extract_batch(const SurrogateModel& surrogate, const Tensor& images, Modality h) {
  return cross_extract_graph(surrogate, nn::constant(images), h)->val;
}

FeatureVec cross_extract(const SurrogateModel& surrogate, const ImageArray& image) {
  Tensor batch({1, image.channels, image.height, image.width});
  std::copy(image.pixels.begin(), image.pixels.end(), batch.data());
  Tensor f = cross_extract_batch(surrogate, batch, image.modality);
  return FeatureVec(f.data(), f.data() + f.numel());
}

FeatureVec fuse(const SurrogateModel& surrogate, const FeatureVec& f_r, const FeatureVec& f_n,
                const FeatureVec& f_t) {
  auto wrap = [&](const FeatureVec& f) {
    if (static_cast<int>(f.size()) != surrogate.out_dim())
      throw ValidationError("fuse: dimension mismatch");
    Tensor t({1, static_cast<int>(f.size())});
    std::copy(f.begin(), f.end(), t.data());
    return nn::constant(t);
  };
  Tensor out = surrogate.fuse(wrap(f_r), wrap(f_n), wrap(f_t))->val;
  return FeatureVec(out.data(), out.data() + out.numel());
}

FeatureCenters feature_centers(const SurrogateModel& surrogate,
                               const std::vector<const TriModalSample*>& batch) {
  if (batch.empty()) throw ValidationError("feature_centers: empty batch");
  std::map<int, std::vector<const TriModalSample*>> by_id;
  for (const auto* s : batch) by_id[s->identity].push_back(s);

  FeatureCenters centers;
  for (const auto& [id, samples] : by_id) {
    for (Modality m : kAllModalities) {
      Tensor images = stack_images(samples, m);
      Tensor f = surrogate.subnet(m).extract(images);
      const int n = f.dim(0), d = f.dim(1);
      FeatureVec mean(static_cast<std::size_t>(d), 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += f[f.idx2(i, j)];
      double norm = 0.0;
      for (double& v : mean) {
        v /= n;
        norm += v * v;
      }
      norm = std::sqrt(norm);
      if (norm >= 1e-12)
        for (double& v : mean) v /= norm;
      else
        std::fill(mean.begin(), mean.end(), 0.0);
      centers.set(id, m, std::move(mean));
    }
  }
  return centers;
}

FeatureCenters feature_centers(const SurrogateModel& surrogate,
                               const std::vector<TriModalSample>& batch) {
  std::vector<const TriModalSample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return feature_centers(surrogate, ptrs);
}

// ---------------------------------------------------------------------------
// target zoo
// ---------------------------------------------------------------------------

SingleRgbModel::SingleRgbModel(int height, int width, std::uint64_t seed) : seed_(seed) {
  net_ = std::make_unique<Subnetwork>(Modality::RGB, height, width,
                                      std::vector<int>{24, 48, 96}, 80,
                                      derive_seed(seed, 0x517E));
}

void SingleRgbModel::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  std::map<std::string, std::string> meta;
  meta["model"] = "single_rgb";
  meta["height"] = std::to_string(net_->height());
  meta["width"] = std::to_string(net_->width());
  meta["seed"] = std::to_string(seed_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(corpus_checksum));
  meta["corpus_checksum"] = buf;
  save_checkpoint(dir, net_->params().items, meta);
}

SingleRgbModel SingleRgbModel::load(const std::string& dir) {
  auto meta = read_checkpoint_meta(dir);
  if (meta_str(meta, "model", dir) != "single_rgb")
    throw CorruptDataError("checkpoint in " + dir + " is not a single_rgb model");
  SingleRgbModel model(static_cast<int>(meta_u64(meta, "height", dir)),
                       static_cast<int>(meta_u64(meta, "width", dir)),
                       meta_u64(meta, "seed", dir));
  load_checkpoint_params(dir, model.net_->params().items);
  return model;
}

CrossRnModel::CrossRnModel(int height, int width, std::uint64_t seed)
    : height_(height), width_(width), out_dim_(64), seed_(seed) {
  if (height % 16 != 0 || width % 16 != 0)
    throw ValidationError("CrossRnModel: H,W must be divisible by 16");
  Rng rng(derive_seed(seed, 0xC505));
  auto make_block = [&](const std::string& name, int cin, int cout) {
    Block blk;
    blk.w = params_.add(name + ".w", he_conv_init(rng, cout, cin, 3));
    blk.b = params_.add(name + ".b", Tensor({cout}));
    blk.gamma = params_.add(name + ".gamma", Tensor::full({cout}, 1.0));
    blk.beta = params_.add(name + ".beta", Tensor({cout}));
    return blk;
  };
  // streams are linear 1x1 channel adapters into a fully shared trunk; an
  // adapter can only learn a colorimetric reduction, so the alignment it
  // acquires on training identities carries over to unseen ones
  // luminance-projection start: both adapters begin in the aligned regime and
  // training refines them jointly instead of compensating per identity
  Tensor rgb_w({1, 3, 1, 1});
  rgb_w[0] = nn::kLuminanceR;
  rgb_w[1] = nn::kLuminanceG;
  rgb_w[2] = nn::kLuminanceB;
  stem_rgb_w_ = params_.add("stem_rgb.w", rgb_w);
  stem_rgb_b_ = params_.add("stem_rgb.b", Tensor({1}));
  stem_ni_w_ = params_.add("stem_ni.w", Tensor::full({1, 1, 1, 1}, 1.0));
  stem_ni_b_ = params_.add("stem_ni.b", Tensor({1}));
  tail_.push_back(make_block("tail.b0", 1, 16));
  tail_.push_back(make_block("tail.b1", 16, 32));
  tail_.push_back(make_block("tail.b2", 32, 48));
  tail_.push_back(make_block("tail.b3", 48, 64));
  proj_w_ = params_.add("proj.w", xavier_linear_init(rng, out_dim_, 64));
  proj_b_ = params_.add("proj.b", Tensor({out_dim_}));
}

Value CrossRnModel::embed(const Value& images, Modality m) const {
  const auto& s = images->val.shape();
  if (s.size() != 4) throw ValidationError("CrossRnModel: expects {N,C,H,W}");
  if (s[2] != height_ || s[3] != width_)
    throw ValidationError("CrossRnModel: shape mismatch");
  Value h;
  if (m == Modality::RGB) {
    if (s[1] != 3) throw ValidationError("CrossRnModel: RGB stream expects 3 channels");
    h = nn::conv2d(images, stem_rgb_w_, stem_rgb_b_, 1, 0);
  } else if (m == Modality::NI) {
    if (s[1] != 1) throw ValidationError("CrossRnModel: NI stream expects 1 channel");
    h = nn::conv2d(images, stem_ni_w_, stem_ni_b_, 1, 0);
  } else {
    throw ValidationError("CrossRnModel: unsupported modality " + modality_name(m));
  }
  for (const auto& blk : tail_) {
    h = nn::conv2d(h, blk.w, blk.b, 1, 1);
    h = nn::instance_norm(h, blk.gamma, blk.beta);
    h = nn::leaky_relu(h, 0.1);
    h = nn::avg_pool2(h);
  }
  h = nn::global_avg_pool(h);
  h = nn::linear(h, proj_w_, proj_b_);
  return nn::l2_normalize_rows(h);
}

Tensor CrossRnModel::extract(const Tensor& images, Modality m) const {
  return embed(nn::constant(images), m)->val;
}

std::vector<std::pair<std::string, Value>> CrossRnModel::all_params() const {
  return params_.items;
}

void CrossRnModel::set_trainable(bool trainable) { params_.set_requires_grad(trainable); }

void CrossRnModel::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  std::map<std::string, std::string> meta;
  meta["model"] = "cross_rn";
  meta["height"] = std::to_string(height_);
  meta["width"] = std::to_string(width_);
  meta["seed"] = std::to_string(seed_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(corpus_checksum));
  meta["corpus_checksum"] = buf;
  save_checkpoint(dir, params_.items, meta);
}

CrossRnModel CrossRnModel::load(const std::string& dir) {
  auto meta = read_checkpoint_meta(dir);
  if (meta_str(meta, "model", dir) != "cross_rn")
    throw CorruptDataError("checkpoint in " + dir + " is not a cross_rn model");
  CrossRnModel model(static_cast<int>(meta_u64(meta, "height", dir)),
                     static_cast<int>(meta_u64(meta, "width", dir)),
                     meta_u64(meta, "seed", dir));
  load_checkpoint_params(dir, model.params_.items);
  return model;
}

MultiAltModel::MultiAltModel(int height, int width, std::uint64_t seed)
    : height_(height), width_(width), out_dim_(64), seed_(seed) {
  for (Modality m : kAllModalities)
    subnets_.push_back(std::make_unique<Subnetwork>(
        m, height, width, std::vector<int>{16, 28, 40, 56}, out_dim_,
        derive_seed(seed, 0xA17 + static_cast<int>(m))));
  Rng rng(derive_seed(seed, 0xA17F));
  fusion_w_ = fusion_params_.add("fusion.w", xavier_linear_init(rng, out_dim_, out_dim_));
  fusion_b_ = fusion_params_.add("fusion.b", Tensor({out_dim_}));
}

Value MultiAltModel::fuse(const Value& fr, const Value& fn, const Value& ft) const {
  Value sum = nn::add(nn::add(fr, fn), ft);
  return nn::l2_normalize_rows(nn::linear(sum, fusion_w_, fusion_b_));
}

Tensor MultiAltModel::fused_embed(const Tensor& xr, const Tensor& xn, const Tensor& xt) const {
  Value fr = subnet(Modality::RGB).forward(nn::constant(xr));
  Value fn = subnet(Modality::NI).forward(nn::constant(xn));
  Value ft = subnet(Modality::TI).forward(nn::constant(xt));
  return fuse(fr, fn, ft)->val;
}

std::vector<std::pair<std::string, Value>> MultiAltModel::all_params() const {
  nn::ParamStore agg;
  for (Modality m : kAllModalities) agg.append(subnet(m).params(), modality_name(m) + ".");
  agg.append(fusion_params_, "");
  return agg.items;
}

void MultiAltModel::set_trainable(bool trainable) {
  for (auto& [name, v] : all_params()) v->requires_grad = trainable;
}

void MultiAltModel::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  std::map<std::string, std::string> meta;
  meta["model"] = "multi_alt";
  meta["height"] = std::to_string(height_);
  meta["width"] = std::to_string(width_);
  meta["seed"] = std::to_string(seed_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(corpus_checksum));
  meta["corpus_checksum"] = buf;
  save_checkpoint(dir, all_params(), meta);
}

MultiAltModel MultiAltModel::load(const std::string& dir) {
  auto meta = read_checkpoint_meta(dir);
  if (meta_str(meta, "model", dir) != "multi_alt")
    throw CorruptDataError("checkpoint in " + dir + " is not a multi_alt model");
  MultiAltModel model(static_cast<int>(meta_u64(meta, "height", dir)),
                      static_cast<int>(meta_u64(meta, "width", dir)),
                      meta_u64(meta, "seed", dir));
  load_checkpoint_params(dir, model.all_params());
  return model;
}

void TargetZoo::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  single_rgb->save(dir + "/single_rgb", corpus_checksum);
  cross_rn->save(dir + "/cross_rn", corpus_checksum);
  multi_alt->save(dir + "/multi_alt", corpus_checksum);
}

TargetZoo TargetZoo::load(const std::string& dir) {
  TargetZoo zoo;
  zoo.single_rgb = std::make_unique<SingleRgbModel>(SingleRgbModel::load(dir + "/single_rgb"));
  zoo.cross_rn = std::make_unique<CrossRnModel>(CrossRnModel::load(dir + "/cross_rn"));
  zoo.multi_alt = std::make_unique<MultiAltModel>(MultiAltModel::load(dir + "/multi_alt"));
  return zoo;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

struct LabelMap {
  std::map<int, int> to_class;
  int n_classes = 0;
};

LabelMap build_label_map(const std::vector<TriModalSample>& samples) {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.identity);
  LabelMap lm;
  for (int id : ids) lm.to_class[id] = lm.n_classes++;
  return lm;
}

std::vector<std::vector<int>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    std::vector<int> b(idx.begin() + static_cast<std::ptrdiff_t>(i),
                       idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                         n, i + static_cast<std::size_t>(batch_size))));
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<const TriModalSample*> gather(const std::vector<TriModalSample>& samples,
                                          const std::vector<int>& idx) {
  std::vector<const TriModalSample*> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(&samples[static_cast<std::size_t>(i)]);
  return out;
}

void check_finite(double v, const std::string& where) {
  if (!std::isfinite(v))
    throw NumericError("divergence: non-finite loss in " + where);
}

}  // namespace

SurrogateModel train_surrogate(const Corpus& corpus, std::uint64_t seed,
                               const TrainOptions& opts) {
  if (corpus.train.empty()) throw ValidationError("train_surrogate: empty train split");
  SurrogateModel model(corpus.height, corpus.width, derive_seed(seed, 0x50D3));
  if (opts.epochs == 0) return model;

  LabelMap lm = build_label_map(corpus.train);
  Rng rng(derive_seed(seed, 0x7A19));
  nn::ParamStore heads;
  Value head_w[3], head_b[3];
  for (Modality m : kAllModalities) {
    head_w[static_cast<int>(m)] = heads.add(
        "head_" + modality_name(m) + ".w", xavier_linear_init(rng, lm.n_classes, model.out_dim()));
    head_b[static_cast<int>(m)] =
        heads.add("head_" + modality_name(m) + ".b", Tensor({lm.n_classes}));
  }
  Value head_fused_w =
      heads.add("head_fused.w", xavier_linear_init(rng, lm.n_classes, model.out_dim()));
  Value head_fused_b = heads.add("head_fused.b", Tensor({lm.n_classes}));

  auto params = model.all_params();
  params.insert(params.end(), heads.items.begin(), heads.items.end());
  nn::Adam opt(opts.learning_rate);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const auto& batch_idx : make_batches(corpus.train.size(), opts.batch_size, rng)) {
      auto batch = gather(corpus.train, batch_idx);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (const auto* s : batch) labels.push_back(lm.to_class.at(s->identity));

      nn::Adam::zero_grad(params);
      Value f[3];
      Value loss;
      for (Modality m : kAllModalities) {
        int mi = static_cast<int>(m);
        f[mi] = model.subnet(m).forward(nn::constant(stack_images(batch, m)));
        Value logits =
            nn::scale(nn::linear(f[mi], head_w[mi], head_b[mi]), opts.logit_scale);
        Value ce = nn::softmax_cross_entropy(logits, labels);
        loss = loss ? nn::add(loss, ce) : ce;
      }
      Value fused = model.fuse(f[0], f[1], f[2]);
      Value logits = nn::scale(nn::linear(fused, head_fused_w, head_fused_b), opts.logit_scale);
      loss = nn::add(loss, nn::softmax_cross_entropy(logits, labels));

      check_finite(loss->val[0], "train_surrogate epoch " + std::to_string(epoch));
      nn::backward(loss);
      opt.step(params);
    }
  }
  return model;
}

namespace {

SingleRgbModel train_single_rgb(const Corpus& corpus, std::uint64_t seed,
                                const TrainOptions& opts) {
  SingleRgbModel model(corpus.height, corpus.width, derive_seed(seed, 0x51D));
  if (opts.epochs == 0) return model;
  LabelMap lm = build_label_map(corpus.train);
  Rng rng(derive_seed(seed, 0x51D0));
  nn::ParamStore heads;
  Value hw = heads.add("head.w", xavier_linear_init(rng, lm.n_classes, model.net().out_dim()));
  Value hb = heads.add("head.b", Tensor({lm.n_classes}));
  auto params = model.net().params().items;
  params.insert(params.end(), heads.items.begin(), heads.items.end());
  nn::Adam opt(opts.learning_rate);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const auto& batch_idx : make_batches(corpus.train.size(), opts.batch_size, rng)) {
      auto batch = gather(corpus.train, batch_idx);
      std::vector<int> labels;
      for (const auto* s : batch) labels.push_back(lm.to_class.at(s->identity));
      nn::Adam::zero_grad(params);
      Value f = model.forward(nn::constant(stack_images(batch, Modality::RGB)));
      Value loss = nn::softmax_cross_entropy(nn::scale(nn::linear(f, hw, hb), opts.logit_scale),
                                             labels);
      check_finite(loss->val[0], "train_single_rgb epoch " + std::to_string(epoch));
      nn::backward(loss);
      opt.step(params);
    }
  }
  return model;
}

CrossRnModel train_cross_rn(const Corpus& corpus, std::uint64_t seed, const TrainOptions& opts) {
  CrossRnModel model(corpus.height, corpus.width, derive_seed(seed, 0xC20));
  if (opts.epochs == 0) return model;
  LabelMap lm = build_label_map(corpus.train);
  Rng rng(derive_seed(seed, 0xC201));
  nn::ParamStore heads;
  Value hw = heads.add("head.w", xavier_linear_init(rng, lm.n_classes, model.out_dim()));
  Value hb = heads.add("head.b", Tensor({lm.n_classes}));
  auto params = model.all_params();
  params.insert(params.end(), heads.items.begin(), heads.items.end());
  nn::Adam opt(opts.learning_rate);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const auto& batch_idx : make_batches(corpus.train.size(), opts.batch_size, rng)) {
      auto batch = gather(corpus.train, batch_idx);
      std::vector<int> labels;
      for (const auto* s : batch) labels.push_back(lm.to_class.at(s->identity));
      nn::Adam::zero_grad(params);
      auto noisy = [&](Tensor t) {
        for (std::size_t i = 0; i < t.numel(); ++i)
          t[i] += rng.normal(0.0, opts.cross_input_noise);
        return t;
      };
      // both streams share the classifier, pulling R and N into one space;
      // the noise augmentation keeps the trunk from keying on pixel noise
      Value fr = model.embed(nn::constant(noisy(stack_images(batch, Modality::RGB))),
                             Modality::RGB);
      Value fn = model.embed(nn::constant(noisy(stack_images(batch, Modality::NI))),
                             Modality::NI);
      Value loss = nn::add(
          nn::softmax_cross_entropy(nn::scale(nn::linear(fr, hw, hb), opts.logit_scale), labels),
          nn::softmax_cross_entropy(nn::scale(nn::linear(fn, hw, hb), opts.logit_scale),
                                    labels));
      // classifier sharing alone leaves the two streams far apart in Euclidean
      // space; pull aligned R/N pairs together explicitly
      Value pair_dist = nn::rowwise_distance(fr, fn);
      loss = nn::add(loss, nn::scale(nn::mean_all(nn::mul(pair_dist, pair_dist)),
                                     opts.align_weight));
      check_finite(loss->val[0], "train_cross_rn epoch " + std::to_string(epoch));
      nn::backward(loss);
      opt.step(params);
    }
  }
  return model;
}

MultiAltModel train_multi_alt(const Corpus& corpus, std::uint64_t seed,
                              const TrainOptions& opts) {
  MultiAltModel model(corpus.height, corpus.width, derive_seed(seed, 0xA7A));
  if (opts.epochs == 0) return model;
  LabelMap lm = build_label_map(corpus.train);
  Rng rng(derive_seed(seed, 0xA7A1));
  nn::ParamStore heads;
  Value hw = heads.add("head.w", xavier_linear_init(rng, lm.n_classes, model.out_dim()));
  Value hb = heads.add("head.b", Tensor({lm.n_classes}));
  auto params = model.all_params();
  params.insert(params.end(), heads.items.begin(), heads.items.end());
  nn::Adam opt(opts.learning_rate);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const auto& batch_idx : make_batches(corpus.train.size(), opts.batch_size, rng)) {
      auto batch = gather(corpus.train, batch_idx);
      std::vector<int> labels;
      for (const auto* s : batch) labels.push_back(lm.to_class.at(s->identity));
      nn::Adam::zero_grad(params);
      Value fr = model.subnet(Modality::RGB).forward(nn::constant(stack_images(batch, Modality::RGB)));
      Value fn = model.subnet(Modality::NI).forward(nn::constant(stack_images(batch, Modality::NI)));
      Value ft = model.subnet(Modality::TI).forward(nn::constant(stack_images(batch, Modality::TI)));
      Value fused = model.fuse(fr, fn, ft);
      Value loss = nn::softmax_cross_entropy(
          nn::scale(nn::linear(fused, hw, hb), opts.logit_scale), labels);
      check_finite(loss->val[0], "train_multi_alt epoch " + std::to_string(epoch));
      nn::backward(loss);
      opt.step(params);
    }
  }
  return model;
}

}  // namespace

TargetZoo train_target_zoo(const Corpus& corpus, std::uint64_t seed, const TrainOptions& opts) {
  if (corpus.train.empty()) throw ValidationError("train_target_zoo: empty train split");
  TargetZoo zoo;
  zoo.single_rgb = std::make_unique<SingleRgbModel>(
      train_single_rgb(corpus, derive_seed(seed, 1), opts));
  zoo.cross_rn =
      std::make_unique<CrossRnModel>(train_cross_rn(corpus, derive_seed(seed, 2), opts));
  zoo.multi_alt =
      std::make_unique<MultiAltModel>(train_multi_alt(corpus, derive_seed(seed, 3), opts));
  return zoo;
}

}  // namespace mua
