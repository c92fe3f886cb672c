#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "mua/errors.hpp"
#include "mua/models.hpp"
#include "mua/rng.hpp"

using namespace mua;

namespace {

void set_param(Subnetwork& net, const std::string& name, const std::vector<double>& values) {
  for (auto& [n, v] : net.params().items) {
    if (n == name) {
      REQUIRE(v->val.numel() == values.size());
      std::copy(values.begin(), values.end(), v->val.data());
      return;
    }
  }
  FAIL("no parameter named ", name);
}

void zero_all_params(Subnetwork& net) {
  for (auto& [n, v] : net.params().items) v->val.fill(0.0);
}

ImageArray make_image(Modality m, int H, int W, std::uint64_t seed) {
  ImageArray img;
  img.modality = m;
  img.height = H;
  img.width = W;
  img.channels = modality_channels(m);
  img.pixels.resize(static_cast<std::size_t>(img.channels) * H * W);
  Rng rng(seed);
  for (double& p : img.pixels) p = rng.uniform();
  return img;
}

double vec_norm(const FeatureVec& f) {
  double s = 0.0;
  for (double v : f) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("all-zero weights hit the zero-vector guard") {
  Subnetwork net(Modality::NI, 16, 16, {4}, 8, 3);
  zero_all_params(net);
  FeatureVec f = extract_features(net, make_image(Modality::NI, 16, 16, 5));
  for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("minimal 1-block subnetwork matches a hand-computed oracle") {
  // 2x2 single-channel image, one block of width 1, projection to 2 dims
  Subnetwork net(Modality::NI, 2, 2, {1}, 2, 1);
  std::vector<double> conv_w{0.0, 0.1, -0.2, 0.3,  0.5, -0.4, 0.2, 0.1, -0.3};
  set_param(net, "b0.w", conv_w);
  set_param(net, "b0.b", {0.05});
  set_param(net, "b0.gamma", {1.2});
  set_param(net, "b0.beta", {-0.1});
  set_param(net, "proj.w", {0.7, -0.3});  // shape {2,1}
  set_param(net, "proj.b", {0.02, 0.01});

  ImageArray img = make_image(Modality::NI, 2, 2, 77);

  // independent oracle: plain loops, no autodiff machinery
  auto px = [&](int h, int w) -> double {
    if (h < 0 || h > 1 || w < 0 || w > 1) return 0.0;
    return img.at(0, h, w);
  };
  double conv[4];
  int i = 0;
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 2; ++w) {
      double s = 0.05;
      for (int ki = -1; ki <= 1; ++ki)
        for (int kj = -1; kj <= 1; ++kj)
          s += conv_w[static_cast<std::size_t>((ki + 1) * 3 + (kj + 1))] * px(h + ki, w + kj);
      conv[i++] = s;
    }
  double mu = (conv[0] + conv[1] + conv[2] + conv[3]) / 4.0;
  double var = 0.0;
  for (double v : conv) var += (v - mu) * (v - mu);
  var /= 4.0;
  double act[4];
  for (int k = 0; k < 4; ++k) {
    double norm = 1.2 * (conv[k] - mu) / std::sqrt(var + 1e-5) - 0.1;
    act[k] = norm > 0 ? norm : 0.1 * norm;
  }
  double pooled = (act[0] + act[1] + act[2] + act[3]) / 4.0;  // avg pool == GAP here
  double o0 = 0.7 * pooled + 0.02, o1 = -0.3 * pooled + 0.01;
  double norm = std::sqrt(o0 * o0 + o1 * o1);

  FeatureVec f = extract_features(net, img);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == doctest::Approx(o0 / norm).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx(o1 / norm).epsilon(1e-12));
}

TEST_CASE("extraction is deterministic and unit-normalized") {
  Subnetwork net(Modality::RGB, 16, 16, {4, 6}, 8, 9);
  ImageArray img = make_image(Modality::RGB, 16, 16, 3);
  FeatureVec a = extract_features(net, img);
  FeatureVec b = extract_features(net, img);
  CHECK(a == b);
  CHECK(std::fabs(vec_norm(a) - 1.0) < 1e-6);
}

TEST_CASE("shape mismatch is rejected") {
  Subnetwork net(Modality::RGB, 16, 16, {4}, 8, 9);
  CHECK_THROWS_AS(extract_features(net, make_image(Modality::RGB, 32, 16, 3)),
                  ValidationError);
}

TEST_CASE("feature gradient wrt pixels matches finite differences") {
  Subnetwork net(Modality::RGB, 16, 16, {4, 6}, 8, 21);
  Tensor batch({1, 3, 16, 16});
  Rng rng(4);
  for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform();

  auto probe = [&](const Tensor& t) {
    return nn::sum_all(net.forward(nn::constant(t)))->val[0];
  };
  auto v = nn::variable(batch);
  nn::backward(nn::sum_all(net.forward(v)));

  const double step = 1e-4;
  for (int k = 0; k < 10; ++k) {
    std::size_t idx = static_cast<std::size_t>(rng.randint(0, static_cast<int>(batch.numel()) - 1));
    Tensor plus = batch, minus = batch;
    plus[idx] += step;
    minus[idx] -= step;
    double fd = (probe(plus) - probe(minus)) / (2.0 * step);
    double an = v->grad[idx];
    double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-10});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("cross_extract equals the channel-adapted straight route exactly") {
  SurrogateModel surrogate(16, 16, 31, {4, 6}, 8);

  ImageArray ni = make_image(Modality::NI, 16, 16, 41);
  FeatureVec via_cross = cross_extract(surrogate, ni);
  // construction oracle: replicate NI to 3 channels, feed S_R directly
  ImageArray ni3;
  ni3.modality = Modality::RGB;
  ni3.height = 16;
  ni3.width = 16;
  ni3.channels = 3;
  ni3.pixels.resize(3 * 16 * 16);
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w) ni3.at(c, h, w) = ni.at(0, h, w);
  FeatureVec via_straight = extract_features(surrogate.subnet(Modality::RGB), ni3);
  CHECK(via_cross == via_straight);

  ImageArray rgb = make_image(Modality::RGB, 16, 16, 42);
  FeatureVec rgb_cross = cross_extract(surrogate, rgb);
  ImageArray lum;
  lum.modality = Modality::NI;
  lum.height = 16;
  lum.width = 16;
  lum.channels = 1;
  lum.pixels.resize(16 * 16);
  for (int h = 0; h < 16; ++h)
    for (int w = 0; w < 16; ++w)
      lum.at(0, h, w) = nn::kLuminanceR * rgb.at(0, h, w) + nn::kLuminanceG * rgb.at(1, h, w) +
                        nn::kLuminanceB * rgb.at(2, h, w);
  FeatureVec rgb_straight = extract_features(surrogate.subnet(Modality::NI), lum);
  CHECK(rgb_cross == rgb_straight);

  ImageArray ti = make_image(Modality::TI, 16, 16, 43);
  CHECK_THROWS_AS(cross_extract(surrogate, ti), ValidationError);
}

TEST_CASE("fuse: determinism, averaging identity, matrix-product oracle") {
  SurrogateModel surrogate(16, 16, 8, {4}, 2);

  // identity-averaging fusion: W = [I/3 | I/3 | I/3], b = 0
  Tensor w({2, 6});
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) w[w.idx2(i, k * 2 + i)] = 1.0 / 3.0;
  std::copy(w.data(), w.data() + w.numel(), surrogate.fusion_w()->val.data());
  surrogate.fusion_b()->val.fill(0.0);

  FeatureVec v{0.6, 0.8};  // unit norm
  FeatureVec fused = fuse(surrogate, v, v, v);
  CHECK(fused[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(fused[1] == doctest::Approx(0.8).epsilon(1e-12));

  FeatureVec again = fuse(surrogate, v, v, v);
  CHECK(fused == again);

  // hand-set weights oracle
  Tensor w2 = Tensor::from({2, 6}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6,
                                    0.7, 0.8, -0.9, 1.0, 1.1, -1.2});
  std::copy(w2.data(), w2.data() + w2.numel(), surrogate.fusion_w()->val.data());
  surrogate.fusion_b()->val[0] = 0.05;
  surrogate.fusion_b()->val[1] = -0.05;
  FeatureVec a{0.3, -0.4}, b{0.5, 0.12}, c{-0.2, 0.9};
  double cat[6] = {a[0], a[1], b[0], b[1], c[0], c[1]};
  double o0 = 0.05, o1 = -0.05;
  for (int k = 0; k < 6; ++k) {
    o0 += w2[w2.idx2(0, k)] * cat[k];
    o1 += w2[w2.idx2(1, k)] * cat[k];
  }
  double nrm = std::sqrt(o0 * o0 + o1 * o1);
  FeatureVec out = fuse(surrogate, a, b, c);
  CHECK(out[0] == doctest::Approx(o0 / nrm).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(o1 / nrm).epsilon(1e-12));

  CHECK_THROWS_AS(fuse(surrogate, {0.1, 0.2, 0.3}, v, v), ValidationError);
}

TEST_CASE("feature_centers: trivial cases and counting") {
  SurrogateModel surrogate(32, 16, 13, {4, 6}, 8);
  Corpus corpus = synth_corpus(3, 4, 2, 4, 32, 16);

  // single sample per identity: center equals that sample's feature
  std::vector<TriModalSample> singles;
  for (int id = 0; id < 4; ++id) singles.push_back(corpus.train[static_cast<std::size_t>(id * 4)]);
  FeatureCenters fc = feature_centers(surrogate, singles);
  CHECK(fc.size() == 4 * 3);
  for (const auto& s : singles) {
    FeatureVec f = extract_features(surrogate.subnet(Modality::RGB), s.image(Modality::RGB));
    const FeatureVec& center = fc.at(s.identity, Modality::RGB);
    for (std::size_t i = 0; i < f.size(); ++i)
      CHECK(center[i] == doctest::Approx(f[i]).epsilon(1e-9));
  }

  // two samples: center = normalize((u+v)/2)
  std::vector<TriModalSample> pair{corpus.train[0], corpus.train[1]};
  FeatureCenters fc2 = feature_centers(surrogate, pair);
  FeatureVec u = extract_features(surrogate.subnet(Modality::NI), pair[0].image(Modality::NI));
  FeatureVec w = extract_features(surrogate.subnet(Modality::NI), pair[1].image(Modality::NI));
  FeatureVec mean(u.size());
  double nrm = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    mean[i] = (u[i] + w[i]) / 2.0;
    nrm += mean[i] * mean[i];
  }
  nrm = std::sqrt(nrm);
  const FeatureVec& center = fc2.at(pair[0].identity, Modality::NI);
  for (std::size_t i = 0; i < mean.size(); ++i)
    CHECK(center[i] == doctest::Approx(mean[i] / nrm).epsilon(1e-9));

  // 4 ids x 2 samples -> 12 centers
  std::vector<TriModalSample> batch;
  for (int id = 0; id < 4; ++id) {
    batch.push_back(corpus.train[static_cast<std::size_t>(id * 4)]);
    batch.push_back(corpus.train[static_cast<std::size_t>(id * 4 + 1)]);
  }
  CHECK(feature_centers(surrogate, batch).size() == 12);

  CHECK_THROWS_AS(feature_centers(surrogate, std::vector<TriModalSample>{}), ValidationError);
  CHECK_THROWS_AS(fc.at(999, Modality::RGB), ValidationError);
}

TEST_CASE("identical features per identity give back exactly that feature") {
  SurrogateModel surrogate(32, 16, 13, {4}, 8);
  Corpus corpus = synth_corpus(3, 2, 2, 4, 32, 16);
  // duplicate one sample: all features of the identity equal
  std::vector<TriModalSample> batch{corpus.train[0], corpus.train[0]};
  FeatureCenters fc = feature_centers(surrogate, batch);
  FeatureVec f = extract_features(surrogate.subnet(Modality::TI), batch[0].image(Modality::TI));
  const FeatureVec& c = fc.at(batch[0].identity, Modality::TI);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(c[i] == doctest::Approx(f[i]).epsilon(1e-12));
}

TEST_CASE("model construction is seed-deterministic; zoo shares nothing with surrogate") {
  SurrogateModel a(16, 16, 5, {4}, 8);
  SurrogateModel b(16, 16, 5, {4}, 8);
  CHECK(a.checksum() == b.checksum());
  SurrogateModel c(16, 16, 6, {4}, 8);
  CHECK(a.checksum() != c.checksum());

  Corpus corpus = synth_corpus(3, 2, 2, 4, 32, 16);
  TrainOptions fast;
  fast.epochs = 0;
  SurrogateModel surrogate = train_surrogate(corpus, 1, fast);
  TargetZoo zoo = train_target_zoo(corpus, 2, fast);
  std::set<const nn::Node*> surrogate_nodes;
  for (const auto& [n, v] : surrogate.all_params()) surrogate_nodes.insert(v.get());
  for (const auto& [n, v] : zoo.single_rgb->net().params().items)
    CHECK(surrogate_nodes.count(v.get()) == 0);
  for (const auto& [n, v] : zoo.cross_rn->all_params())
    CHECK(surrogate_nodes.count(v.get()) == 0);
  for (const auto& [n, v] : zoo.multi_alt->all_params())
    CHECK(surrogate_nodes.count(v.get()) == 0);
}

TEST_CASE("checkpoint round-trip preserves parameters") {
  SurrogateModel a(16, 16, 5, {4, 6}, 8);
  auto dir = std::filesystem::temp_directory_path() / "mua_ckpt_test";
  std::filesystem::remove_all(dir);
  a.save(dir.string(), 0xabcdef);
  SurrogateModel b = SurrogateModel::load(dir.string());
  CHECK(a.checksum() == b.checksum());
  CHECK(b.out_dim() == 8);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training declines on an empty split and respects epochs=0") {
  Corpus corpus = synth_corpus(3, 2, 2, 4, 32, 16);
  Corpus empty = corpus;
  empty.train.clear();
  CHECK_THROWS_AS(train_surrogate(empty, 1, {}), ValidationError);

  TrainOptions zero;
  zero.epochs = 0;
  SurrogateModel m1 = train_surrogate(corpus, 4, zero);
  SurrogateModel m2(corpus.height, corpus.width, derive_seed(4, 0x50D3));
  CHECK(m1.checksum() == m2.checksum());
}

TEST_CASE("surrogate training is seed-reproducible") {
  Corpus corpus = synth_corpus(3, 3, 2, 4, 32, 16);
  TrainOptions fast;
  fast.epochs = 2;
  SurrogateModel a = train_surrogate(corpus, 11, fast);
  SurrogateModel b = train_surrogate(corpus, 11, fast);
  CHECK(a.checksum() == b.checksum());
  SurrogateModel c = train_surrogate(corpus, 12, fast);
  CHECK(a.checksum() != c.checksum());
}
