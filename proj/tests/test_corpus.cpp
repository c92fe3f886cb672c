#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mua/corpus.hpp"
#include "mua/errors.hpp"

using namespace mua;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("mua_corpus_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void check_image_invariants(const TriModalSample& s, int H, int W) {
  for (Modality m : kAllModalities) {
    const ImageArray& img = s.image(m);
    CHECK(img.channels == modality_channels(m));
    CHECK(img.height == H);
    CHECK(img.width == W);
    for (double p : img.pixels) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
}

}  // namespace

TEST_CASE("synth_corpus counting contract") {
  Corpus c = synth_corpus(7, 10, 20, 8, 64, 32);
  CHECK(c.train.size() == 10 * 8);
  CHECK(c.query.size() + c.gallery.size() == 20 * 8);

  std::set<int> qids, gids;
  for (const auto& s : c.query) qids.insert(s.identity);
  for (const auto& s : c.gallery) gids.insert(s.identity);
  CHECK(qids == gids);
  CHECK(qids.size() == 20);
}

TEST_CASE("synth_corpus determinism and seed sensitivity") {
  Corpus a = synth_corpus(7, 3, 3, 4, 32, 16);
  Corpus b = synth_corpus(7, 3, 3, 4, 32, 16);
  CHECK(corpus_checksum(a) == corpus_checksum(b));
  CHECK(a.train[0].image(Modality::RGB).pixels == b.train[0].image(Modality::RGB).pixels);

  Corpus c = synth_corpus(8, 3, 3, 4, 32, 16);
  CHECK(corpus_checksum(a) != corpus_checksum(c));
}

TEST_CASE("synth_corpus validation errors") {
  CHECK_THROWS_AS(synth_corpus(1, 10, 20, 8, 8, 32), ValidationError);   // H too small
  CHECK_THROWS_AS(synth_corpus(1, 10, 20, 8, 64, 8), ValidationError);   // W too small
  CHECK_THROWS_AS(synth_corpus(1, 10, 20, 3, 64, 32), ValidationError);  // per_id < 4
  CHECK_THROWS_AS(synth_corpus(1, 1, 20, 8, 64, 32), ValidationError);   // too few ids
}

TEST_CASE("image invariants and split disjointness hold across seeds") {
  for (std::uint64_t seed : {3ull, 11ull, 42ull}) {
    Corpus c = synth_corpus(seed, 3, 4, 4, 32, 16);
    std::set<int> train_ids, eval_ids;
    for (const auto& s : c.train) {
      check_image_invariants(s, 32, 16);
      train_ids.insert(s.identity);
    }
    for (const auto& s : c.query) eval_ids.insert(s.identity);
    for (const auto& s : c.gallery) eval_ids.insert(s.identity);
    for (int id : train_ids) CHECK(eval_ids.count(id) == 0);
  }
}

TEST_CASE("identities render distinctly") {
  Corpus c = synth_corpus(5, 4, 2, 4, 32, 16);
  CHECK(c.train[0].image(Modality::RGB).pixels != c.train[4].image(Modality::RGB).pixels);
  CHECK(c.train[0].image(Modality::NI).pixels != c.train[4].image(Modality::NI).pixels);
}

TEST_CASE("persist/load round-trip is pixel exact") {
  Corpus c = synth_corpus(7, 2, 2, 4, 32, 16);
  auto dir = temp_dir("roundtrip");
  persist_corpus(c, dir.string());
  Corpus back = load_corpus(dir.string());
  CHECK(back.seed == c.seed);
  CHECK(back.height == c.height);
  CHECK(back.width == c.width);
  CHECK(corpus_checksum(back) == corpus_checksum(c));
  REQUIRE(back.train.size() == c.train.size());
  for (std::size_t i = 0; i < c.train.size(); ++i)
    for (Modality m : kAllModalities)
      CHECK(back.train[i].image(m).pixels == c.train[i].image(m).pixels);
  fs::remove_all(dir);
}

TEST_CASE("load of an empty directory reports a missing manifest") {
  auto dir = temp_dir("empty");
  CHECK_THROWS_AS(load_corpus(dir.string()), ArtifactError);
  fs::remove_all(dir);
}

TEST_CASE("manifest without TI is rejected as corrupt") {
  Corpus c = synth_corpus(7, 2, 2, 4, 32, 16);
  auto dir = temp_dir("noti");
  persist_corpus(c, dir.string());
  {
    std::ofstream mf(dir / "manifest.txt");
    mf << "seed = 7\nheight = 32\nwidth = 16\nsplits = train,query,gallery\n"
       << "modalities = rgb,ni\nidentities = 0,1,2,3\n";
  }
  CHECK_THROWS_AS(load_corpus(dir.string()), CorruptDataError);
  try {
    load_corpus(dir.string());
  } catch (const CorruptDataError& e) {
    CHECK(std::string(e.what()).find("ti") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupt png is reported with the offending file name") {
  Corpus c = synth_corpus(7, 2, 2, 4, 32, 16);
  auto dir = temp_dir("corrupt");
  persist_corpus(c, dir.string());
  fs::path victim = dir / "train" / "ni" / "0_0.png";
  {
    std::ofstream f(victim, std::ios::binary | std::ios::trunc);
    f << "not a png";
  }
  try {
    load_corpus(dir.string());
    FAIL("expected CorruptDataError");
  } catch (const CorruptDataError& e) {
    CHECK(std::string(e.what()).find("0_0.png") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("stack_images produces NCHW batches matching pixels") {
  Corpus c = synth_corpus(9, 2, 2, 4, 32, 16);
  Tensor t = stack_images(c.train, Modality::RGB);
  CHECK(t.shape() == std::vector<int>{static_cast<int>(c.train.size()), 3, 32, 16});
  CHECK(t[t.idx4(1, 2, 5, 7)] == c.train[1].image(Modality::RGB).at(2, 5, 7));

  Tensor n = stack_images(c.train, Modality::NI);
  CHECK(n.shape() == std::vector<int>{static_cast<int>(c.train.size()), 1, 32, 16});
}
