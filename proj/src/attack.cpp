#include "mua/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mua/checkpoint.hpp"
#include "mua/errors.hpp"
#include "mua/rng.hpp"

namespace mua {

using nn::Value;

std::string flags_to_string(const LossFlags& flags) {
  std::string out;
  auto append = [&out](const char* name) {
    if (!out.empty()) out += ",";
    out += name;
  };
  if (flags.count(LossFlag::MD)) append("md");
  if (flags.count(LossFlag::MMCD)) append("mmcd");
  if (flags.count(LossFlag::CMSD)) append("cmsd");
  if (flags.count(LossFlag::MMCD_PRIME)) append("mmcd_prime");
  return out;
}

LossFlags flags_from_string(const std::string& csv) {
  LossFlags flags;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t\r");
    if (b == std::string::npos) continue;
    item = item.substr(b, e - b + 1);
    if (item == "md")
      flags.insert(LossFlag::MD);
    else if (item == "cmsd")
      flags.insert(LossFlag::CMSD);
    else if (item == "mmcd")
      flags.insert(LossFlag::MMCD);
    else if (item == "mmcd_prime")
      flags.insert(LossFlag::MMCD_PRIME);
    else
      throw ValidationError("unknown loss flag '" + item + "'");
  }
  return flags;
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw ValidationError("AttackConfig: epsilon must be in (0,1]");
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw ValidationError("AttackConfig: negative loss weight");
  if (iterations < 1) throw ValidationError("AttackConfig: iterations must be >= 1");
  if (batch_identities < 1 || batch_samples < 1)
    throw ValidationError("AttackConfig: batch shape must be positive");
  if (learning_rate <= 0) throw ValidationError("AttackConfig: learning rate must be positive");
}

namespace {

Tensor he_conv_init(Rng& rng, int cout, int cin, int k) {
  Tensor w({cout, cin, k, k});
  double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, std);
  return w;
}

constexpr double kLogClamp = 1e-6;

Value log_clamped(const Value& p) { return nn::log_(nn::clamp_(p, kLogClamp, 1.0 - kLogClamp)); }

// log(1 - p), clamped
Value log1m_clamped(const Value& p) {
  return nn::log_(nn::clamp_(nn::add_scalar(nn::neg(p), 1.0), kLogClamp, 1.0 - kLogClamp));
}

}  // namespace

Generator::Generator(Modality modality, int height, int width, std::uint64_t seed)
    : modality_(modality),
      height_(height),
      width_(width),
      out_channels_(modality == Modality::NI ? 1 : 3),
      seed_(seed) {
  if (height % 4 != 0 || width % 4 != 0)
    throw ValidationError("Generator: H,W must be divisible by 4");
  Rng rng(derive_seed(seed, 0x6E4 + static_cast<std::uint64_t>(modality)));
  int in = modality_channels(modality);
  auto make_block = [&](const std::string& name, int cin, int cout) {
    Block blk;
    blk.w = params_.add(name + ".w", he_conv_init(rng, cout, cin, 3));
    blk.b = params_.add(name + ".b", Tensor({cout}));
    blk.gamma = params_.add(name + ".gamma", Tensor::full({cout}, 1.0));
    blk.beta = params_.add(name + ".beta", Tensor({cout}));
    return blk;
  };
  enc1_ = make_block("enc1", in, 8);
  enc2_ = make_block("enc2", 8, 16);
  neck_ = make_block("neck", 16, 16);
  dec2_ = make_block("dec2", 32, 8);
  // zero-initialized head: a fresh generator perturbs nothing
  out_w_ = params_.add("out.w", Tensor({out_channels_, 16, 3, 3}));
  out_b_ = params_.add("out.b", Tensor({out_channels_}));
}

Value Generator::block(const Value& x, const Block& blk) const {
  return nn::leaky_relu(nn::instance_norm(nn::conv2d(x, blk.w, blk.b, 1, 1), blk.gamma,
                                          blk.beta),
                        0.1);
}

Value Generator::forward(const Value& images) const {
  const auto& s = images->val.shape();
  if (s.size() != 4 || s[1] != modality_channels(modality_))
    throw ValidationError("Generator: expected {N," +
                          std::to_string(modality_channels(modality_)) + ",H,W}, got " +
                          shape_str(s));
  if (s[2] != height_ || s[3] != width_) throw ValidationError("Generator: shape mismatch");
  Value e1 = block(images, enc1_);
  Value e2 = block(nn::avg_pool2(e1), enc2_);
  Value n = block(nn::avg_pool2(e2), neck_);
  Value d2 = block(nn::concat_c(nn::upsample2(n), e2), dec2_);
  Value d1 = nn::concat_c(nn::upsample2(d2), e1);
  return nn::tanh_(nn::conv2d(d1, out_w_, out_b_, 1, 1));
}

void Generator::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  std::map<std::string, std::string> meta;
  meta["model"] = "generator";
  meta["modality"] = modality_name(modality_);
  meta["height"] = std::to_string(height_);
  meta["width"] = std::to_string(width_);
  meta["seed"] = std::to_string(seed_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(corpus_checksum));
  meta["corpus_checksum"] = buf;
  save_checkpoint(dir, params_.items, meta);
}

Generator Generator::load(const std::string& dir) {
  auto meta = read_checkpoint_meta(dir);
  if (!meta.count("model") || meta.at("model") != "generator")
    throw CorruptDataError("checkpoint in " + dir + " is not a generator");
  Generator gen(modality_from_name(meta.at("modality")), std::stoi(meta.at("height")),
                std::stoi(meta.at("width")), std::stoull(meta.at("seed")));
  load_checkpoint_params(dir, gen.params_.items);
  return gen;
}

Discriminator::Discriminator(Modality modality, int height, int width, std::uint64_t seed)
    : modality_(modality), height_(height), width_(width), seed_(seed) {
  if (height % 8 != 0 || width % 8 != 0)
    throw ValidationError("Discriminator: H,W must be divisible by 8");
  Rng rng(derive_seed(seed, 0xD15C + static_cast<std::uint64_t>(modality)));
  int in = modality_channels(modality);
  auto make_block = [&](const std::string& name, int cin, int cout, bool normed) {
    Block blk;
    blk.w = params_.add(name + ".w", he_conv_init(rng, cout, cin, 3));
    blk.b = params_.add(name + ".b", Tensor({cout}));
    blk.normed = normed;
    if (normed) {
      blk.gamma = params_.add(name + ".gamma", Tensor::full({cout}, 1.0));
      blk.beta = params_.add(name + ".beta", Tensor({cout}));
    }
    return blk;
  };
  blocks_.push_back(make_block("b0", in, 8, false));
  blocks_.push_back(make_block("b1", 8, 16, true));
  blocks_.push_back(make_block("b2", 16, 24, true));
  patch_w_ = params_.add("patch.w", he_conv_init(rng, 1, 24, 3));
  patch_b_ = params_.add("patch.b", Tensor({1}));
}

Value Discriminator::score(const nn::Value& images) const {
  const auto& s = images->val.shape();
  if (s.size() != 4 || s[1] != modality_channels(modality_))
    throw ValidationError("Discriminator: channel mismatch");
  if (s[2] != height_ || s[3] != width_)
    throw ValidationError("Discriminator: shape mismatch");
  Value h = images;
  for (const auto& blk : blocks_) {
    h = nn::conv2d(h, blk.w, blk.b, 2, 1);
    if (blk.normed) h = nn::instance_norm(h, blk.gamma, blk.beta);
    h = nn::leaky_relu(h, 0.2);
  }
  Value patches = nn::conv2d(h, patch_w_, patch_b_, 1, 1);  // {N,1,h,w}
  return nn::sigmoid_(nn::global_avg_pool(patches));        // {N,1}
}

void Discriminator::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  std::map<std::string, std::string> meta;
  meta["model"] = "discriminator";
  meta["modality"] = modality_name(modality_);
  meta["height"] = std::to_string(height_);
  meta["width"] = std::to_string(width_);
  meta["seed"] = std::to_string(seed_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(corpus_checksum));
  meta["corpus_checksum"] = buf;
  save_checkpoint(dir, params_.items, meta);
}

Discriminator Discriminator::load(const std::string& dir) {
  auto meta = read_checkpoint_meta(dir);
  if (!meta.count("model") || meta.at("model") != "discriminator")
    throw CorruptDataError("checkpoint in " + dir + " is not a discriminator");
  Discriminator disc(modality_from_name(meta.at("modality")), std::stoi(meta.at("height")),
                     std::stoi(meta.at("width")), std::stoull(meta.at("seed")));
  load_checkpoint_params(dir, disc.params_.items);
  return disc;
}

std::uint64_t GeneratorBundle::checksum() const {
  nn::ParamStore agg;
  for (Modality m : kAllModalities) {
    agg.append(generator(m).params(), "gen_" + modality_name(m) + ".");
    agg.append(discriminator(m).params(), "disc_" + modality_name(m) + ".");
  }
  return agg.checksum();
}

void GeneratorBundle::save(const std::string& dir, std::uint64_t corpus_checksum) const {
  for (Modality m : kAllModalities) {
    generator(m).save(dir + "/gen_" + modality_name(m), corpus_checksum);
    discriminator(m).save(dir + "/disc_" + modality_name(m), corpus_checksum);
  }
}

GeneratorBundle GeneratorBundle::load(const std::string& dir) {
  GeneratorBundle bundle;
  for (Modality m : kAllModalities) {
    bundle.generators[static_cast<std::size_t>(m)] =
        std::make_unique<Generator>(Generator::load(dir + "/gen_" + modality_name(m)));
    bundle.discriminators[static_cast<std::size_t>(m)] = std::make_unique<Discriminator>(
        Discriminator::load(dir + "/disc_" + modality_name(m)));
  }
  return bundle;
}

GeneratorBundle make_bundle(int height, int width, std::uint64_t seed) {
  GeneratorBundle bundle;
  for (Modality m : kAllModalities) {
    bundle.generators[static_cast<std::size_t>(m)] = std::make_unique<Generator>(
        m, height, width, derive_seed(seed, 0x9E0 + static_cast<std::uint64_t>(m)));
    bundle.discriminators[static_cast<std::size_t>(m)] = std::make_unique<Discriminator>(
        m, height, width, derive_seed(seed, 0xD10 + static_cast<std::uint64_t>(m)));
  }
  return bundle;
}

Value generate_ae(const Generator& gen, const nn::Value& images, double epsilon) {
  const auto& s = images->val.shape();
  if (s.size() != 4 || s[1] != gen.out_channels())
    throw ValidationError("generate_ae: image channels do not match the generator");
  Value bounded = gen.forward(images);
  return nn::clamp_(nn::add(images, nn::scale(bounded, epsilon)), 0.0, 1.0);
}

Tensor generate_ae(const Generator& gen, const Tensor& images, double epsilon) {
  return generate_ae(gen, nn::constant(images), epsilon)->val;
}

ImageArray generate_ae(const Generator& gen, const ImageArray& image, double epsilon) {
  Tensor batch({1, image.channels, image.height, image.width});
  std::copy(image.pixels.begin(), image.pixels.end(), batch.data());
  Tensor out = generate_ae(gen, batch, epsilon);
  ImageArray adv = image;
  std::copy(out.data(), out.data() + out.numel(), adv.pixels.begin());
  return adv;
}

Value md_loss(const nn::Value& f_benign, const nn::Value& f_adv) {
  return nn::neg(nn::mean_all(nn::rowwise_distance(f_benign, f_adv)));
}

double md_loss(const FeatureVec& f_benign, const FeatureVec& f_adv) {
  if (f_benign.size() != f_adv.size()) throw ValidationError("md_loss: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < f_benign.size(); ++i) {
    double d = f_benign[i] - f_adv[i];
    s += d * d;
  }
  return -std::sqrt(s);
}

Value cmsd_loss(const SurrogateModel& surrogate, Modality h, const nn::Value& x,
                const nn::Value& x_adv) {
  if (h == Modality::TI) return nn::constant(Tensor::scalar(0.0));
  if (!x->val.same_shape(x_adv->val)) throw ValidationError("cmsd_loss: shape mismatch");
  Value f_benign = cross_extract_graph(surrogate, nn::detach(x), h);
  Value f_adv = cross_extract_graph(surrogate, x_adv, h);
  return md_loss(nn::detach(f_benign), f_adv);
}

double cmsd_loss(const SurrogateModel& surrogate, Modality h, const ImageArray& x,
                 const ImageArray& x_adv) {
  if (h == Modality::TI) return 0.0;
  if (x.pixels.size() != x_adv.pixels.size()) throw ValidationError("cmsd_loss: shape mismatch");
  return md_loss(cross_extract(surrogate, x), cross_extract(surrogate, x_adv));
}

Value mmcd_loss(const nn::Value& f_adv, const FeatureCenters& centers,
                const std::vector<int>& identities) {
  const auto& s = f_adv->val.shape();
  if (s.size() != 2) throw ValidationError("mmcd_loss: expects {N,D} features");
  const int n = s[0], d = s[1];
  if (static_cast<int>(identities.size()) != n)
    throw ValidationError("mmcd_loss: identity count mismatch");
  Value sum;
  for (Modality m : kAllModalities) {
    Tensor c({n, d});
    for (int i = 0; i < n; ++i) {
      const FeatureVec& center = centers.at(identities[static_cast<std::size_t>(i)], m);
      if (static_cast<int>(center.size()) != d)
        throw ValidationError("mmcd_loss: center dimension mismatch");
      std::copy(center.begin(), center.end(), c.data() + c.idx2(i, 0));
    }
    Value dist = nn::rowwise_distance(f_adv, nn::constant(c));
    sum = sum ? nn::add(sum, dist) : dist;
  }
  return nn::neg(nn::mean_all(sum));
}

double mmcd_loss(const FeatureVec& f_adv, const FeatureCenters& centers, int identity) {
  double total = 0.0;
  for (Modality m : kAllModalities) {
    const FeatureVec& c = centers.at(identity, m);
    if (c.size() != f_adv.size()) throw ValidationError("mmcd_loss: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      double diff = f_adv[i] - c[i];
      s += diff * diff;
    }
    total -= std::sqrt(s);
  }
  return total;
}

Value gan_d_loss(const Discriminator& disc, const nn::Value& x, const nn::Value& x_adv) {
  if (!x->val.same_shape(x_adv->val)) throw ValidationError("gan_d_loss: shape mismatch");
  Value real = log_clamped(disc.score(nn::detach(x)));
  Value fake = log1m_clamped(disc.score(nn::detach(x_adv)));  // AE is a constant here
  return nn::add(nn::mean_all(real), nn::mean_all(fake));
}

Value gan_g_loss(const Discriminator& disc, const nn::Value& x_adv) {
  return nn::mean_all(log1m_clamped(disc.score(x_adv)));
}

double adv_loss(double md, double cmsd, double mmcd, const AttackConfig& config) {
  config.validate();
  double out = 0.0;
  if (config.flags.count(LossFlag::MD)) out += config.lambda1 * md;
  if (config.flags.count(LossFlag::CMSD)) out += config.lambda2 * cmsd;
  if (config.flags.count(LossFlag::MMCD) || config.flags.count(LossFlag::MMCD_PRIME))
    out += config.lambda3 * mmcd;
  return out;
}

double total_loss(double gan_g, double adv) { return gan_g + adv; }

void write_loss_log_csv(const std::string& path, const std::vector<LossBreakdown>& log) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("write_loss_log_csv: cannot open " + path);
  out << "iter,modality,md,cmsd,mmcd,gan_g,gan_d,adv,total\n";
  char line[512];
  for (const auto& row : log) {
    std::snprintf(line, sizeof line, "%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  row.iteration, modality_name(row.modality).c_str(), row.md, row.cmsd,
                  row.mmcd, row.gan_g, row.gan_d, row.adv, row.total);
    out << line;
  }
}

namespace {

// P x K sampler over train identities; the id deck reshuffles when exhausted.
class BatchSampler {
 public:
  BatchSampler(const std::vector<TriModalSample>& samples, int p, int k, std::uint64_t seed)
      : samples_(samples), p_(p), k_(k), rng_(seed) {
    for (std::size_t i = 0; i < samples.size(); ++i)
      by_id_[samples[i].identity].push_back(static_cast<int>(i));
    for (const auto& [id, idxs] : by_id_) ids_.push_back(id);
    deck_pos_ = ids_.size();  // force reshuffle on first use
  }

  std::vector<const TriModalSample*> next() {
    std::vector<const TriModalSample*> batch;
    for (int i = 0; i < p_; ++i) {
      if (deck_pos_ >= ids_.size()) {
        rng_.shuffle(ids_);
        deck_pos_ = 0;
      }
      int id = ids_[deck_pos_++];
      auto idxs = by_id_.at(id);
      rng_.shuffle(idxs);
      for (int j = 0; j < k_; ++j)
        batch.push_back(&samples_[static_cast<std::size_t>(idxs[static_cast<std::size_t>(j) %
                                                                idxs.size()])]);
    }
    return batch;
  }

 private:
  const std::vector<TriModalSample>& samples_;
  int p_, k_;
  Rng rng_;
  std::map<int, std::vector<int>> by_id_;
  std::vector<int> ids_;
  std::size_t deck_pos_ = 0;
};

FeatureCenters centers_from_features(const Tensor f[3], const std::vector<int>& ids) {
  FeatureCenters centers;
  std::map<int, std::vector<int>> rows_by_id;
  for (std::size_t i = 0; i < ids.size(); ++i)
    rows_by_id[ids[i]].push_back(static_cast<int>(i));
  for (Modality m : kAllModalities) {
    const Tensor& fm = f[static_cast<std::size_t>(m)];
    const int d = fm.dim(1);
    for (const auto& [id, rows] : rows_by_id) {
      FeatureVec mean(static_cast<std::size_t>(d), 0.0);
      for (int r : rows)
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += fm[fm.idx2(r, j)];
      double norm = 0.0;
      for (double& v : mean) {
        v /= static_cast<double>(rows.size());
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

void check_term(double v, const char* term, int iteration) {
  if (!std::isfinite(v))
    throw NumericError("train_mua: non-finite loss term '" + std::string(term) +
                       "' at iteration " + std::to_string(iteration));
}

}  // namespace

GeneratorBundle train_mua(const Corpus& corpus, SurrogateModel& surrogate,
                          const AttackConfig& config, std::vector<LossBreakdown>* log) {
  config.validate();
  if (corpus.train.empty()) throw ValidationError("train_mua: empty train split");

  const std::uint64_t surrogate_before = surrogate.checksum();
  surrogate.set_trainable(false);

  GeneratorBundle bundle = make_bundle(corpus.height, corpus.width, config.seed);
  std::array<nn::Adam, 3> gen_opt{nn::Adam(config.learning_rate),
                                  nn::Adam(config.learning_rate),
                                  nn::Adam(config.learning_rate)};
  std::array<nn::Adam, 3> disc_opt{nn::Adam(config.learning_rate),
                                   nn::Adam(config.learning_rate),
                                   nn::Adam(config.learning_rate)};

  BatchSampler sampler(corpus.train, config.batch_identities, config.batch_samples,
                       derive_seed(config.seed, 0x3A77));

  const bool use_md = config.flags.count(LossFlag::MD) != 0;
  const bool use_cmsd = config.flags.count(LossFlag::CMSD) != 0;
  const bool use_mmcd = config.flags.count(LossFlag::MMCD) != 0;
  const bool use_mmcd_prime = config.flags.count(LossFlag::MMCD_PRIME) != 0;

  for (int iter = 0; iter < config.iterations; ++iter) {
    auto batch = sampler.next();
    std::vector<int> ids;
    ids.reserve(batch.size());
    for (const auto* s : batch) ids.push_back(s->identity);

    Tensor x[3], f_benign[3];
    for (Modality m : kAllModalities) {
      x[static_cast<std::size_t>(m)] = stack_images(batch, m);
      f_benign[static_cast<std::size_t>(m)] =
          surrogate.subnet(m).extract(x[static_cast<std::size_t>(m)]);
    }
    FeatureCenters centers;
    if (use_mmcd || use_mmcd_prime) centers = centers_from_features(f_benign, ids);

    for (Modality m : kAllModalities) {
      const std::size_t mi = static_cast<std::size_t>(m);
      Generator& gen = bundle.generator(m);
      Discriminator& disc = bundle.discriminator(m);

      nn::Adam::zero_grad(gen.params().items);
      nn::Adam::zero_grad(disc.params().items);

      Value x_in = nn::constant(x[mi]);
      Value x_adv = generate_ae(gen, x_in, config.epsilon);

      Value md_term, cmsd_term, mmcd_straight, mmcd_prime;
      if (use_md || use_mmcd) {
        Value f_adv = surrogate.subnet(m).forward(x_adv);
        if (use_md) md_term = md_loss(nn::constant(f_benign[mi]), f_adv);
        if (use_mmcd) mmcd_straight = mmcd_loss(f_adv, centers, ids);
      }
      if (m != Modality::TI && (use_cmsd || use_mmcd_prime)) {
        Value f_cross_adv = cross_extract_graph(surrogate, x_adv, m);
        if (use_cmsd) {
          Tensor f_cross_benign = cross_extract_batch(surrogate, x[mi], m);
          cmsd_term = md_loss(nn::constant(f_cross_benign), f_cross_adv);
        }
        if (use_mmcd_prime) mmcd_prime = mmcd_loss(f_cross_adv, centers, ids);
      }

      Value mmcd_term;
      if (mmcd_straight && mmcd_prime)
        mmcd_term = nn::add(mmcd_straight, mmcd_prime);
      else if (mmcd_straight)
        mmcd_term = mmcd_straight;
      else if (mmcd_prime)
        mmcd_term = mmcd_prime;

      Value adv_term;
      auto add_weighted = [&adv_term](const Value& term, double weight) {
        if (!term) return;
        Value scaled = nn::scale(term, weight);
        adv_term = adv_term ? nn::add(adv_term, scaled) : scaled;
      };
      if (use_md) add_weighted(md_term, config.lambda1);
      add_weighted(cmsd_term, config.lambda2);
      add_weighted(mmcd_term, config.lambda3);

      Value g_gan = gan_g_loss(disc, x_adv);
      Value g_total = adv_term ? nn::add(g_gan, adv_term) : g_gan;

      nn::backward(g_total);
      gen_opt[mi].step(gen.params().items);

      // discriminator ascends L_D on the detached AE
      nn::Adam::zero_grad(gen.params().items);
      nn::Adam::zero_grad(disc.params().items);
      Value d_term = gan_d_loss(disc, x_in, x_adv);
      nn::backward(nn::neg(d_term));
      disc_opt[mi].step(disc.params().items);

      LossBreakdown row;
      row.iteration = iter;
      row.modality = m;
      row.md = md_term ? md_term->val[0] : 0.0;
      row.cmsd = cmsd_term ? cmsd_term->val[0] : 0.0;
      row.mmcd = mmcd_term ? mmcd_term->val[0] : 0.0;
      row.gan_g = g_gan->val[0];
      row.gan_d = d_term->val[0];
      row.adv = adv_term ? adv_term->val[0] : 0.0;
      row.total = g_total->val[0];
      check_term(row.md, "md", iter);
      check_term(row.cmsd, "cmsd", iter);
      check_term(row.mmcd, "mmcd", iter);
      check_term(row.gan_g, "gan_g", iter);
      check_term(row.gan_d, "gan_d", iter);
      check_term(row.total, "total", iter);
      if (log) log->push_back(row);
    }
  }

  if (surrogate.checksum() != surrogate_before)
    throw NumericError("train_mua: surrogate parameters changed during attack training");
  return bundle;
}

}  // namespace mua
