#include "mua/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mua/errors.hpp"
#include "mua/image_io.hpp"
#include "mua/rng.hpp"

namespace fs = std::filesystem;

namespace mua {

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::RGB: return "rgb";
    case Modality::NI: return "ni";
    case Modality::TI: return "ti";
  }
  throw ValidationError("modality_name: bad modality");
}

Modality modality_from_name(const std::string& name) {
  if (name == "rgb") return Modality::RGB;
  if (name == "ni") return Modality::NI;
  if (name == "ti") return Modality::TI;
  throw ValidationError("modality_from_name: unknown modality '" + name + "'");
}

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double quantize255(double v) { return std::lround(clamp01(v) * 255.0) / 255.0; }

// smoothstep over [e0, e1]
double sstep(double e0, double e1, double x) {
  double t = clamp01((x - e0) / (e1 - e0));
  return t * t * (3.0 - 2.0 * t);
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1)      { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else             { r = c; b = x; }
  double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

struct Appearance {
  double torso_hsv[3];
  double legs_hsv[3];
  double head_hsv[3];
  double head_cv, head_r;
  double torso_top, torso_bot, torso_hw;
  double leg_bot, leg_hw, leg_gap;
  double stripe_freq, stripe_amp, stripe_phase;
  double ti_heat;
};

Appearance identity_appearance(std::uint64_t seed, int id) {
  Rng rng(derive_seed(derive_seed(seed, 0xA11CE5), static_cast<std::uint64_t>(id)));
  Appearance a;
  // golden-angle hue spacing keeps identities separable even at 30 ids
  a.torso_hsv[0] =
      std::fmod(static_cast<double>(id) * 0.61803398874989 + rng.uniform() * 0.03, 1.0);
  a.torso_hsv[1] = rng.uniform(0.55, 0.95);
  a.torso_hsv[2] = rng.uniform(0.50, 0.95);
  a.legs_hsv[0] = std::fmod(a.torso_hsv[0] + rng.uniform(0.25, 0.75), 1.0);
  a.legs_hsv[1] = rng.uniform(0.4, 0.9);
  a.legs_hsv[2] = rng.uniform(0.35, 0.85);
  a.head_hsv[0] = 0.08;
  a.head_hsv[1] = rng.uniform(0.25, 0.45);
  a.head_hsv[2] = rng.uniform(0.55, 0.85);

  a.head_cv = rng.uniform(0.12, 0.16);
  a.head_r = rng.uniform(0.055, 0.075);
  a.torso_top = a.head_cv + a.head_r + rng.uniform(0.01, 0.03);
  a.torso_bot = rng.uniform(0.50, 0.58);
  a.torso_hw = rng.uniform(0.16, 0.24);
  a.leg_bot = rng.uniform(0.88, 0.94);
  a.leg_hw = a.torso_hw * rng.uniform(0.36, 0.46);
  a.leg_gap = rng.uniform(0.03, 0.08);

  int freq_pick = rng.randint(0, 5);
  a.stripe_freq = freq_pick <= 1 ? 0.0 : static_cast<double>(freq_pick);
  a.stripe_amp = rng.uniform(0.12, 0.30);
  a.stripe_phase = rng.uniform(0.0, 2.0 * M_PI);
  a.ti_heat = rng.uniform();
  return a;
}

struct Jitter {
  double dx, dy, brightness, width_scale, thermal_gain;
  double hue_shift, sat_scale;
};

ImageArray blank_image(Modality m, int H, int W) {
  ImageArray img;
  img.modality = m;
  img.height = H;
  img.width = W;
  img.channels = modality_channels(m);
  img.pixels.assign(static_cast<std::size_t>(img.channels) * H * W, 0.0);
  return img;
}

TriModalSample render_sample(std::uint64_t seed, int id, std::uint64_t sample_salt, int H,
                             int W) {
  const Appearance ap = identity_appearance(seed, id);
  Rng rng(derive_seed(seed, sample_salt));
  Jitter j;
  j.dx = rng.uniform(-0.09, 0.09);
  j.dy = rng.uniform(-0.05, 0.05);
  j.brightness = rng.uniform(0.85, 1.15);
  j.width_scale = rng.uniform(0.94, 1.06);
  j.thermal_gain = rng.uniform(0.93, 1.07);
  j.hue_shift = rng.uniform(-0.02, 0.02);
  j.sat_scale = rng.uniform(0.88, 1.12);

  auto sample_rgb = [&j](const double hsv[3], double out[3]) {
    hsv_to_rgb(hsv[0] + j.hue_shift, clamp01(hsv[1] * j.sat_scale), hsv[2], out);
  };
  double torso_rgb[3], legs_rgb[3], head_rgb[3];
  sample_rgb(ap.torso_hsv, torso_rgb);
  sample_rgb(ap.legs_hsv, legs_rgb);
  sample_rgb(ap.head_hsv, head_rgb);

  TriModalSample s;
  s.identity = id;
  s.image(Modality::RGB) = blank_image(Modality::RGB, H, W);
  s.image(Modality::NI) = blank_image(Modality::NI, H, W);
  s.image(Modality::TI) = blank_image(Modality::TI, H, W);
  ImageArray& rgb = s.image(Modality::RGB);
  ImageArray& ni = s.image(Modality::NI);
  ImageArray& ti = s.image(Modality::TI);

  const double eu = 0.75 / W, ev = 0.75 / H;
  const double cu = 0.5 + j.dx;
  const double hw = ap.torso_hw * j.width_scale;
  const double lw = ap.leg_hw * j.width_scale;

  for (int h = 0; h < H; ++h) {
    double v = (h + 0.5) / H;
    for (int w = 0; w < W; ++w) {
      double u = (w + 0.5) / W;

      // part coverages, soft-edged
      double du = u - cu, dv = v - (ap.head_cv + j.dy);
      double rad = std::sqrt(du * du * 0.25 + dv * dv);  // u squeezed: W is half of H
      double cov_head = 1.0 - sstep(ap.head_r - ev, ap.head_r + ev, rad);

      double t0 = ap.torso_top + j.dy, t1 = ap.torso_bot + j.dy;
      double cov_torso = (sstep(t0 - ev, t0 + ev, v) - sstep(t1 - ev, t1 + ev, v)) *
                         (sstep(-hw - eu, -hw + eu, du) - sstep(hw - eu, hw + eu, du));

      double l1 = ap.leg_bot + j.dy;
      double leg_v = sstep(t1 - ev, t1 + ev, v) - sstep(l1 - ev, l1 + ev, v);
      double lc = ap.leg_gap / 2.0 + lw;
      double dul = du + lc, dur = du - lc;
      double cov_legs =
          leg_v * std::max(sstep(-lw - eu, -lw + eu, dul) - sstep(lw - eu, lw + eu, dul),
                           sstep(-lw - eu, -lw + eu, dur) - sstep(lw - eu, lw + eu, dur));

      double stripe = 1.0;
      if (ap.stripe_freq > 0.0 && v > t0 && v < t1) {
        double phase = (v - t0) / std::max(t1 - t0, 1e-6);
        stripe = 1.0 + ap.stripe_amp * std::sin(2.0 * M_PI * ap.stripe_freq * phase +
                                                ap.stripe_phase);
      }

      // clean RGB composite (background -> legs -> torso -> head)
      double base = 0.30 - 0.12 * v;
      double col[3] = {base, base, base};
      for (int c = 0; c < 3; ++c) {
        col[c] = col[c] * (1.0 - cov_legs) + legs_rgb[c] * cov_legs;
        double torso_c = clamp01(torso_rgb[c] * stripe);
        col[c] = col[c] * (1.0 - cov_torso) + torso_c * cov_torso;
        col[c] = col[c] * (1.0 - cov_head) + head_rgb[c] * cov_head;
      }

      double lum = 0.299 * col[0] + 0.587 * col[1] + 0.114 * col[2];

      for (int c = 0; c < 3; ++c)
        rgb.at(c, h, w) = quantize255(col[c] * j.brightness + rng.normal(0.0, 0.025));

      ni.at(0, h, w) = quantize255((0.10 + 0.85 * lum) * j.brightness +
                                   rng.normal(0.0, 0.04));

      double body_heat = cov_head * 0.92 +
                         cov_torso * (0.60 + 0.30 * ap.ti_heat) * (stripe > 1.0 ? 0.92 : 1.0) +
                         cov_legs * 0.45;
      double heat = clamp01((0.10 + 0.05 * (1.0 - v)) * (1.0 - std::min(1.0, cov_head +
                            cov_torso + cov_legs)) + body_heat) * j.thermal_gain;
      double tr = clamp01(2.5 * heat);
      double tg = clamp01(2.5 * heat - 1.0);
      double tb = clamp01(2.5 * heat - 1.9);
      ti.at(0, h, w) = quantize255(tr + rng.normal(0.0, 0.03));
      ti.at(1, h, w) = quantize255(tg + rng.normal(0.0, 0.03));
      ti.at(2, h, w) = quantize255(tb + rng.normal(0.0, 0.03));
    }
  }
  return s;
}

std::uint64_t sample_salt(int split_code, int id, int index) {
  return (static_cast<std::uint64_t>(split_code) * 1000003ULL +
          static_cast<std::uint64_t>(id)) *
             1000003ULL +
         static_cast<std::uint64_t>(index);
}

}  // namespace

Corpus synth_corpus(std::uint64_t seed, int n_train_ids, int n_eval_ids, int per_id,
                    int height, int width) {
  if (height < 16 || width < 16)
    throw ValidationError("synth_corpus: invalid shape, H and W must be >= 16");
  if (n_train_ids < 2 || n_eval_ids < 2)
    throw ValidationError("synth_corpus: invalid count, need at least 2 train and 2 eval ids");
  if (per_id < 4)
    throw ValidationError(
        "synth_corpus: invalid count, per_id must be >= 4 to split query/gallery");

  Corpus c;
  c.seed = seed;
  c.height = height;
  c.width = width;
  for (int id = 0; id < n_train_ids; ++id)
    for (int k = 0; k < per_id; ++k)
      c.train.push_back(render_sample(seed, id, sample_salt(0, id, k), height, width));
  int gallery_count = per_id - per_id / 2;
  for (int e = 0; e < n_eval_ids; ++e) {
    int id = n_train_ids + e;
    for (int k = 0; k < per_id; ++k) {
      auto s = render_sample(seed, id, sample_salt(1, id, k), height, width);
      if (k < gallery_count)
        c.gallery.push_back(std::move(s));
      else
        c.query.push_back(std::move(s));
    }
  }
  return c;
}

namespace {

io::Image8 to_image8(const ImageArray& img) {
  io::Image8 out;
  out.height = img.height;
  out.width = img.width;
  out.channels = img.channels;
  out.pixels.resize(static_cast<std::size_t>(img.channels) * img.height * img.width);
  // CHW doubles -> HWC bytes
  std::size_t i = 0;
  for (int h = 0; h < img.height; ++h)
    for (int w = 0; w < img.width; ++w)
      for (int c = 0; c < img.channels; ++c)
        out.pixels[i++] = static_cast<std::uint8_t>(std::lround(img.at(c, h, w) * 255.0));
  return out;
}

ImageArray from_image8(const io::Image8& img, Modality m) {
  ImageArray out;
  out.modality = m;
  out.height = img.height;
  out.width = img.width;
  out.channels = img.channels;
  out.pixels.resize(static_cast<std::size_t>(img.channels) * img.height * img.width);
  std::size_t i = 0;
  for (int h = 0; h < img.height; ++h)
    for (int w = 0; w < img.width; ++w)
      for (int c = 0; c < img.channels; ++c)
        out.at(c, h, w) = static_cast<double>(img.pixels[i++]) / 255.0;
  return out;
}

const std::array<std::string, 3> kSplitNames{"train", "query", "gallery"};

const std::vector<TriModalSample>& split_of(const Corpus& c, const std::string& name) {
  if (name == "train") return c.train;
  if (name == "query") return c.query;
  return c.gallery;
}

std::vector<TriModalSample>& split_of(Corpus& c, const std::string& name) {
  if (name == "train") return c.train;
  if (name == "query") return c.query;
  return c.gallery;
}

}  // namespace

void persist_corpus(const Corpus& corpus, const std::string& directory) {
  fs::create_directories(directory);
  std::set<int> ids;
  for (const auto& split : kSplitNames) {
    std::map<int, int> next_index;
    for (const auto& sample : split_of(corpus, split)) {
      ids.insert(sample.identity);
      int idx = next_index[sample.identity]++;
      for (Modality m : kAllModalities) {
        fs::path dir = fs::path(directory) / split / modality_name(m);
        fs::create_directories(dir);
        fs::path file = dir / (std::to_string(sample.identity) + "_" + std::to_string(idx) +
                               ".png");
        io::write_png(file.string(), to_image8(sample.image(m)));
      }
    }
  }

  std::ofstream mf(fs::path(directory) / "manifest.txt");
  if (!mf) throw ArtifactError("persist_corpus: cannot write manifest in " + directory);
  mf << "seed = " << corpus.seed << "\n";
  mf << "height = " << corpus.height << "\n";
  mf << "width = " << corpus.width << "\n";
  mf << "splits = train,query,gallery\n";
  mf << "modalities = rgb,ni,ti\n";
  mf << "identities = ";
  bool first = true;
  for (int id : ids) {
    if (!first) mf << ",";
    mf << id;
    first = false;
  }
  mf << "\n";
}

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::map<std::string, std::string> parse_keyvalue_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("missing manifest: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CorruptDataError("corrupt manifest line in " + path + ": " + line);
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace

Corpus load_corpus(const std::string& directory) {
  fs::path manifest = fs::path(directory) / "manifest.txt";
  if (!fs::exists(manifest)) throw ArtifactError("missing manifest: " + manifest.string());
  auto kv = parse_keyvalue_file(manifest.string());
  for (const auto& key : {"seed", "height", "width", "splits", "modalities", "identities"})
    if (!kv.count(key))
      throw CorruptDataError("corrupt corpus: manifest missing key '" + std::string(key) + "'");

  auto modalities = split_csv(kv["modalities"]);
  for (Modality m : kAllModalities) {
    if (std::find(modalities.begin(), modalities.end(), modality_name(m)) == modalities.end())
      throw CorruptDataError("corrupt corpus: manifest modalities missing " + modality_name(m));
  }
  auto splits = split_csv(kv["splits"]);
  for (const auto& s : kSplitNames)
    if (std::find(splits.begin(), splits.end(), s) == splits.end())
      throw CorruptDataError("corrupt corpus: manifest splits missing " + s);

  Corpus c;
  c.seed = std::stoull(kv["seed"]);
  c.height = std::stoi(kv["height"]);
  c.width = std::stoi(kv["width"]);

  for (const auto& split : kSplitNames) {
    // enumerate (id, index) pairs from the rgb directory, then demand the trio
    fs::path rgbdir = fs::path(directory) / split / "rgb";
    if (!fs::exists(rgbdir))
      throw CorruptDataError("corrupt corpus: missing directory " + rgbdir.string());
    std::vector<std::pair<int, int>> entries;
    for (const auto& e : fs::directory_iterator(rgbdir)) {
      std::string name = e.path().filename().string();
      int id = 0, idx = 0;
      if (std::sscanf(name.c_str(), "%d_%d.png", &id, &idx) != 2)
        throw CorruptDataError("corrupt corpus: unexpected file name " + e.path().string());
      entries.emplace_back(id, idx);
    }
    std::sort(entries.begin(), entries.end());
    for (auto [id, idx] : entries) {
      TriModalSample s;
      s.identity = id;
      for (Modality m : kAllModalities) {
        fs::path file = fs::path(directory) / split / modality_name(m) /
                        (std::to_string(id) + "_" + std::to_string(idx) + ".png");
        if (!fs::exists(file))
          throw CorruptDataError("corrupt corpus: missing image " + file.string());
        auto img8 = io::read_png(file.string());
        if (img8.height != c.height || img8.width != c.width ||
            img8.channels != modality_channels(m))
          throw CorruptDataError("corrupt corpus: bad shape in " + file.string());
        s.image(m) = from_image8(img8, m);
      }
      split_of(c, split).push_back(std::move(s));
    }
  }
  return c;
}

std::uint64_t corpus_checksum(const Corpus& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_byte = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  auto mix_int = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) mix_byte(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  mix_int(corpus.seed);
  mix_int(static_cast<std::uint64_t>(corpus.height));
  mix_int(static_cast<std::uint64_t>(corpus.width));
  for (const auto* split : {&corpus.train, &corpus.query, &corpus.gallery}) {
    for (const auto& s : *split) {
      mix_int(static_cast<std::uint64_t>(s.identity));
      for (Modality m : kAllModalities)
        for (double p : s.image(m).pixels)
          mix_byte(static_cast<std::uint8_t>(std::lround(p * 255.0)));
    }
  }
  return h;
}

Tensor stack_images(const std::vector<TriModalSample>& samples, Modality m) {
  std::vector<const TriModalSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return stack_images(ptrs, m);
}

Tensor stack_images(const std::vector<const TriModalSample*>& samples, Modality m) {
  if (samples.empty()) throw ValidationError("stack_images: empty batch");
  const ImageArray& first = samples.front()->image(m);
  Tensor t({static_cast<int>(samples.size()), first.channels, first.height, first.width});
  const std::size_t stride = first.pixels.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageArray& img = samples[i]->image(m);
    if (img.pixels.size() != stride)
      throw ValidationError("stack_images: inconsistent image sizes");
    std::copy(img.pixels.begin(), img.pixels.end(), t.data() + i * stride);
  }
  return t;
}

std::vector<int> sample_identities(const std::vector<TriModalSample>& samples) {
  std::vector<int> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.identity);
  return ids;
}

ImageArray tensor_slice_to_image(const Tensor& batch, int index, Modality m) {
  ImageArray img;
  img.modality = m;
  img.channels = batch.dim(1);
  img.height = batch.dim(2);
  img.width = batch.dim(3);
  const std::size_t stride = static_cast<std::size_t>(img.channels) * img.height * img.width;
  img.pixels.assign(batch.data() + index * stride, batch.data() + (index + 1) * stride);
  return img;
}

}  // namespace mua
