#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mua/attack.hpp"
#include "mua/errors.hpp"
#include "mua/rng.hpp"

using namespace mua;

namespace {

Tensor random_images(int n, int c, int h, int w, std::uint64_t seed) {
  Tensor t({n, c, h, w});
  Rng rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

void randomize_params(nn::ParamStore& store, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& [name, v] : store.items)
    for (std::size_t i = 0; i < v->val.numel(); ++i) v->val[i] = rng.normal(0.0, scale);
}

FeatureVec random_unit(int d, Rng& rng) {
  FeatureVec f(static_cast<std::size_t>(d));
  double n = 0.0;
  for (double& v : f) {
    v = rng.normal();
    n += v * v;
  }
  n = std::sqrt(n);
  for (double& v : f) v /= n;
  return f;
}

}  // namespace

TEST_CASE("generate_ae: fresh generator perturbs nothing") {
  Generator gen(Modality::RGB, 32, 16, 5);
  Tensor x = random_images(2, 3, 32, 16, 9);
  Tensor adv = generate_ae(gen, x, 8.0 / 255.0);
  CHECK(adv.checksum() == x.checksum());
}

TEST_CASE("generate_ae: clip at the range boundary and interior arithmetic") {
  const double eps = 8.0 / 255.0;
  Generator gen(Modality::NI, 32, 16, 5);
  // saturate the head bias so the bounded output is ~±1
  for (auto& [name, v] : gen.params().items)
    if (name == "out.b") v->val.fill(30.0);

  Tensor ones = Tensor::full({1, 1, 32, 16}, 1.0);
  Tensor adv = generate_ae(gen, ones, eps);
  double linf = 0.0;
  for (std::size_t i = 0; i < adv.numel(); ++i) {
    CHECK(adv[i] == 1.0);  // clipped at the top of the range
    linf = std::max(linf, std::fabs(adv[i] - ones[i]));
  }
  CHECK(linf <= eps);

  for (auto& [name, v] : gen.params().items)
    if (name == "out.b") v->val.fill(-30.0);
  Tensor mid = Tensor::full({1, 1, 32, 16}, 0.5);
  Tensor down = generate_ae(gen, mid, eps);
  for (std::size_t i = 0; i < down.numel(); ++i)
    CHECK(down[i] == doctest::Approx(0.5 - eps).epsilon(1e-9));
}

TEST_CASE("generate_ae: budget invariant under random generator weights") {
  const double eps = 8.0 / 255.0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Generator gen(Modality::RGB, 32, 16, seed);
    randomize_params(gen.params(), seed * 7 + 1, 0.8);
    Tensor x = random_images(4, 3, 32, 16, seed + 40);
    Tensor adv = generate_ae(gen, x, eps);
    for (std::size_t i = 0; i < adv.numel(); ++i) {
      CHECK(std::fabs(adv[i] - x[i]) <= eps + 1e-6);
      CHECK(adv[i] >= 0.0);
      CHECK(adv[i] <= 1.0);
    }
  }
}

TEST_CASE("generate_ae: channel mismatch is rejected") {
  Generator gen(Modality::NI, 32, 16, 5);
  CHECK_THROWS_AS(generate_ae(gen, random_images(1, 3, 32, 16, 4), 0.03), ValidationError);
}

TEST_CASE("md_loss: trivial values and direct-formula oracle") {
  CHECK(md_loss(FeatureVec{0.1, 0.2}, FeatureVec{0.1, 0.2}) == 0.0);
  CHECK(md_loss(FeatureVec{0.0, 0.0}, FeatureVec{3.0, 4.0}) ==
        doctest::Approx(-5.0).epsilon(1e-12));

  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    FeatureVec u = random_unit(16, rng), v = random_unit(16, rng);
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    double expect = -std::sqrt(std::max(0.0, 2.0 - 2.0 * dot));
    CHECK(md_loss(u, v) == doctest::Approx(expect).epsilon(1e-6));
    CHECK(md_loss(u, v) == md_loss(v, u));
    CHECK(md_loss(u, v) <= 0.0);
  }
  CHECK_THROWS_AS(md_loss(FeatureVec{1.0}, FeatureVec{1.0, 2.0}), ValidationError);
}

TEST_CASE("md_loss batch form averages rowwise distances") {
  Tensor a = Tensor::from({2, 2}, {0.0, 0.0, 1.0, 0.0});
  Tensor b = Tensor::from({2, 2}, {3.0, 4.0, 1.0, 2.0});
  // distances are 5 and 2 -> mean 3.5
  auto loss = md_loss(nn::constant(a), nn::constant(b));
  CHECK(loss->val[0] == doctest::Approx(-3.5).epsilon(1e-12));
}

TEST_CASE("cmsd_loss: TI short-circuits without touching any subnetwork") {
  SurrogateModel surrogate(32, 16, 3, {4, 6}, 8);
  Tensor x = random_images(2, 3, 32, 16, 1);
  Tensor xa = random_images(2, 3, 32, 16, 2);
  std::uint64_t calls_before = 0;
  for (Modality m : kAllModalities) calls_before += surrogate.subnet(m).forward_calls();
  auto zero = cmsd_loss(surrogate, Modality::TI, nn::constant(x), nn::constant(xa));
  CHECK(zero->val[0] == 0.0);
  std::uint64_t calls_after = 0;
  for (Modality m : kAllModalities) calls_after += surrogate.subnet(m).forward_calls();
  CHECK(calls_before == calls_after);
}

TEST_CASE("cmsd_loss: identical pair gives zero; composition oracle holds") {
  SurrogateModel surrogate(32, 16, 3, {4, 6}, 8);
  Corpus corpus = synth_corpus(5, 2, 2, 4, 32, 16);
  const ImageArray& rgb = corpus.train[0].image(Modality::RGB);
  CHECK(cmsd_loss(surrogate, Modality::RGB, rgb, rgb) == 0.0);

  const ImageArray& ni_a = corpus.train[1].image(Modality::NI);
  const ImageArray& ni_b = corpus.train[2].image(Modality::NI);
  double composed = md_loss(cross_extract(surrogate, ni_a), cross_extract(surrogate, ni_b));
  CHECK(cmsd_loss(surrogate, Modality::NI, ni_a, ni_b) ==
        doctest::Approx(composed).epsilon(1e-12));

  // graph form agrees with the scalar form
  Tensor ba({1, 1, 32, 16}), bb({1, 1, 32, 16});
  std::copy(ni_a.pixels.begin(), ni_a.pixels.end(), ba.data());
  std::copy(ni_b.pixels.begin(), ni_b.pixels.end(), bb.data());
  auto graph = cmsd_loss(surrogate, Modality::NI, nn::constant(ba), nn::constant(bb));
  CHECK(graph->val[0] == doctest::Approx(composed).epsilon(1e-9));
}

TEST_CASE("mmcd_loss: coincident centers, orthonormal case, brute-force oracle") {
  FeatureCenters centers;
  FeatureVec f{0.6, 0.8, 0.0};
  for (Modality m : kAllModalities) centers.set(1, m, f);
  CHECK(mmcd_loss(f, centers, 1) == 0.0);

  FeatureCenters ortho;
  ortho.set(2, Modality::RGB, {1.0, 0.0, 0.0});
  ortho.set(2, Modality::NI, {0.0, 1.0, 0.0});
  ortho.set(2, Modality::TI, {0.0, 0.0, 1.0});
  CHECK(mmcd_loss(FeatureVec{1.0, 0.0, 0.0}, ortho, 2) ==
        doctest::Approx(-2.0 * std::sqrt(2.0)).epsilon(1e-12));

  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    FeatureCenters c;
    FeatureVec probe = random_unit(8, rng);
    double expect = 0.0;
    for (Modality m : kAllModalities) {
      FeatureVec center = random_unit(8, rng);
      double s = 0.0;
      for (std::size_t i = 0; i < center.size(); ++i) {
        double d = probe[i] - center[i];
        s += d * d;
      }
      expect -= std::sqrt(s);
      c.set(7, m, center);
    }
    CHECK(mmcd_loss(probe, c, 7) == doctest::Approx(expect).epsilon(1e-6));
  }

  CHECK_THROWS_AS(mmcd_loss(f, ortho, 99), ValidationError);  // missing center
}

TEST_CASE("mmcd_loss batch form averages per-sample sums") {
  FeatureCenters centers;
  centers.set(0, Modality::RGB, {1.0, 0.0});
  centers.set(0, Modality::NI, {0.0, 1.0});
  centers.set(0, Modality::TI, {1.0, 0.0});
  centers.set(1, Modality::RGB, {0.0, 1.0});
  centers.set(1, Modality::NI, {0.0, 1.0});
  centers.set(1, Modality::TI, {0.0, 1.0});
  Tensor f = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  double s0 = -(0.0 + std::sqrt(2.0) + 0.0);  // row 0 vs centers of id 0
  double s1 = 0.0;                            // row 1 coincides with id 1 centers
  auto loss = mmcd_loss(nn::constant(f), centers, {0, 1});
  CHECK(loss->val[0] == doctest::Approx((s0 + s1) / 2.0).epsilon(1e-12));
}

TEST_CASE("gan losses: uniform discriminator, clamped extremes, formula oracle") {
  Discriminator disc(Modality::RGB, 32, 16, 4);
  Tensor x = random_images(2, 3, 32, 16, 5);
  Tensor xa = random_images(2, 3, 32, 16, 6);

  // all-zero parameters force D(anything) = sigmoid(0) = 0.5
  for (auto& [name, v] : disc.params().items) v->val.fill(0.0);
  auto d = gan_d_loss(disc, nn::constant(x), nn::constant(xa));
  CHECK(d->val[0] == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));
  auto g = gan_g_loss(disc, nn::constant(xa));
  CHECK(g->val[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));

  // saturated discriminator: both scores ~1, so the clamp takes over
  for (auto& [name, v] : disc.params().items)
    if (name == "patch.b") v->val.fill(50.0);
  auto dsat = gan_d_loss(disc, nn::constant(x), nn::constant(xa));
  CHECK(dsat->val[0] ==
        doctest::Approx(std::log(1.0 - 1e-6) + std::log(1e-6)).epsilon(1e-9));
  auto gsat = gan_g_loss(disc, nn::constant(xa));
  CHECK(gsat->val[0] == doctest::Approx(std::log(1e-6)).epsilon(1e-9));

  // random discriminator: scalar formula oracle from the raw scores
  Discriminator rdisc(Modality::RGB, 32, 16, 11);
  randomize_params(rdisc.params(), 12, 0.3);
  Tensor sx = rdisc.score(nn::constant(x))->val;
  Tensor sa = rdisc.score(nn::constant(xa))->val;
  double expect_d = 0.0, expect_g = 0.0;
  for (int i = 0; i < 2; ++i) {
    auto clamp = [](double v) { return std::min(std::max(v, 1e-6), 1.0 - 1e-6); };
    expect_d += std::log(clamp(sx[sx.idx2(i, 0)])) / 2.0 +
                std::log(clamp(1.0 - sa[sa.idx2(i, 0)])) / 2.0;
    expect_g += std::log(clamp(1.0 - sa[sa.idx2(i, 0)])) / 2.0;
  }
  CHECK(gan_d_loss(rdisc, nn::constant(x), nn::constant(xa))->val[0] ==
        doctest::Approx(expect_d).epsilon(1e-9));
  CHECK(gan_g_loss(rdisc, nn::constant(xa))->val[0] ==
        doctest::Approx(expect_g).epsilon(1e-9));
}

TEST_CASE("adv_loss weighting, masking and validation") {
  AttackConfig cfg;
  cfg.lambda1 = 50;
  cfg.lambda2 = 50;
  cfg.lambda3 = 10;
  CHECK(adv_loss(-1.0, -2.0, -3.0, cfg) == doctest::Approx(-180.0).epsilon(1e-12));

  AttackConfig zeros = cfg;
  zeros.lambda1 = zeros.lambda2 = zeros.lambda3 = 0.0;
  CHECK(adv_loss(-1.0, -2.0, -3.0, zeros) == 0.0);

  AttackConfig md_only = cfg;
  md_only.flags = {LossFlag::MD};
  CHECK(adv_loss(-1.0, -2.0, -3.0, md_only) == doctest::Approx(-50.0).epsilon(1e-12));

  AttackConfig bad = cfg;
  bad.lambda2 = -1.0;
  CHECK_THROWS_AS(adv_loss(-1, -2, -3, bad), ValidationError);

  CHECK(total_loss(-0.69, -180.0) == doctest::Approx(-180.69).epsilon(1e-12));
  CHECK(total_loss(0.0, 0.0) == 0.0);
}

TEST_CASE("flag sets parse and print") {
  LossFlags all{LossFlag::MD, LossFlag::MMCD, LossFlag::CMSD, LossFlag::MMCD_PRIME};
  CHECK(flags_from_string("md,mmcd,cmsd,mmcd_prime") == all);
  CHECK(flags_to_string(all) == "md,mmcd,cmsd,mmcd_prime");
  CHECK(flags_from_string(flags_to_string(all)) == all);
  CHECK(flags_from_string("md") == LossFlags{LossFlag::MD});
  CHECK_THROWS_AS(flags_from_string("bogus"), ValidationError);
}

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = AttackConfig{};
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = AttackConfig{};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("train_mua: smoke, breakdown identity, determinism, frozen surrogate") {
  Corpus corpus = synth_corpus(5, 3, 2, 4, 32, 16);
  SurrogateModel surrogate(32, 16, 3, {4, 6}, 8);
  const std::uint64_t surrogate_sum = surrogate.checksum();

  AttackConfig cfg;
  cfg.iterations = 3;
  cfg.batch_identities = 2;
  cfg.batch_samples = 2;
  cfg.seed = 9;

  std::vector<LossBreakdown> log;
  GeneratorBundle bundle = train_mua(corpus, surrogate, cfg, &log);
  CHECK(surrogate.checksum() == surrogate_sum);
  CHECK(log.size() == 3 * 3);

  GeneratorBundle fresh = make_bundle(32, 16, cfg.seed);
  CHECK(bundle.checksum() != fresh.checksum());  // parameters moved

  for (const auto& row : log) {
    CHECK(std::isfinite(row.total));
    double expect_adv = adv_loss(row.md, row.cmsd, row.mmcd, cfg);
    CHECK(row.adv == doctest::Approx(expect_adv).epsilon(1e-9));
    CHECK(row.total == doctest::Approx(total_loss(row.gan_g, row.adv)).epsilon(1e-9));
    if (row.modality == Modality::TI) CHECK(row.cmsd == 0.0);
  }

  SurrogateModel surrogate2(32, 16, 3, {4, 6}, 8);
  GeneratorBundle again = train_mua(corpus, surrogate2, cfg, nullptr);
  CHECK(bundle.checksum() == again.checksum());

  AttackConfig other = cfg;
  other.seed = 10;
  SurrogateModel surrogate3(32, 16, 3, {4, 6}, 8);
  GeneratorBundle different = train_mua(corpus, surrogate3, other, nullptr);
  CHECK(bundle.checksum() != different.checksum());
}

TEST_CASE("train_mua respects flag subsets in the logged breakdown") {
  Corpus corpus = synth_corpus(5, 2, 2, 4, 32, 16);
  SurrogateModel surrogate(32, 16, 3, {4}, 8);
  AttackConfig cfg;
  cfg.iterations = 1;
  cfg.batch_identities = 2;
  cfg.batch_samples = 2;
  cfg.flags = {LossFlag::MD};
  cfg.seed = 4;
  std::vector<LossBreakdown> log;
  train_mua(corpus, surrogate, cfg, &log);
  for (const auto& row : log) {
    CHECK(row.cmsd == 0.0);
    CHECK(row.mmcd == 0.0);
    CHECK(row.adv == doctest::Approx(cfg.lambda1 * row.md).epsilon(1e-9));
  }
}

TEST_CASE("adv-loss gradient wrt perturbation pixels matches finite differences") {
  SurrogateModel surrogate(32, 16, 21, {4}, 8);
  surrogate.set_trainable(false);
  Corpus corpus = synth_corpus(6, 2, 2, 4, 32, 16);

  std::vector<TriModalSample> batch{corpus.train[0], corpus.train[1]};
  std::vector<int> ids{batch[0].identity, batch[1].identity};
  FeatureCenters centers = feature_centers(surrogate, batch);

  AttackConfig cfg;
  cfg.flags = {LossFlag::MD, LossFlag::MMCD, LossFlag::CMSD, LossFlag::MMCD_PRIME};

  Tensor x = stack_images(batch, Modality::RGB);
  Tensor f_benign = surrogate.subnet(Modality::RGB).extract(x);
  Tensor f_cross_benign = cross_extract_batch(surrogate, x, Modality::RGB);

  Rng rng(31);
  Tensor pert({2, 3, 32, 16});
  for (std::size_t i = 0; i < pert.numel(); ++i) pert[i] = rng.uniform(-0.01, 0.01);

  auto adv_value = [&](const nn::Value& p) {
    nn::Value x_adv = nn::clamp_(nn::add(nn::constant(x), p), 0.0, 1.0);
    nn::Value f_adv = surrogate.subnet(Modality::RGB).forward(x_adv);
    nn::Value f_cross = cross_extract_graph(surrogate, x_adv, Modality::RGB);
    nn::Value term = nn::scale(md_loss(nn::constant(f_benign), f_adv), cfg.lambda1);
    term = nn::add(term, nn::scale(md_loss(nn::constant(f_cross_benign), f_cross),
                                   cfg.lambda2));
    nn::Value mm = nn::add(mmcd_loss(f_adv, centers, ids), mmcd_loss(f_cross, centers, ids));
    return nn::add(term, nn::scale(mm, cfg.lambda3));
  };

  auto v = nn::variable(pert);
  nn::backward(adv_value(v));

  const double step = 1e-4;
  for (int k = 0; k < 10; ++k) {
    std::size_t idx =
        static_cast<std::size_t>(rng.randint(0, static_cast<int>(pert.numel()) - 1));
    Tensor plus = pert, minus = pert;
    plus[idx] += step;
    minus[idx] -= step;
    double fp = adv_value(nn::constant(plus))->val[0];
    double fm = adv_value(nn::constant(minus))->val[0];
    double fd = (fp - fm) / (2.0 * step);
    double an = v->grad[idx];
    double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-10});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("bundle checkpoints round-trip") {
  GeneratorBundle bundle = make_bundle(32, 16, 77);
  auto dir = std::filesystem::temp_directory_path() / "mua_bundle_test";
  std::filesystem::remove_all(dir);
  bundle.save(dir.string(), 0x1234);
  GeneratorBundle back = GeneratorBundle::load(dir.string());
  CHECK(back.checksum() == bundle.checksum());
  std::filesystem::remove_all(dir);
}
