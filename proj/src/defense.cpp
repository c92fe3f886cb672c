#include "mua/defense.hpp"

#include <algorithm>
#include <cmath>

#include "mua/errors.hpp"
#include "mua/image_io.hpp"
#include "mua/rng.hpp"

namespace mua {

std::string defense_kind_name(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::NONE: return "none";
    case DefenseKind::JPEG: return "jpeg";
    case DefenseKind::RANDOMIZATION: return "randomization";
  }
  throw ValidationError("defense_kind_name: bad kind");
}

DefenseKind defense_kind_from_name(const std::string& name) {
  if (name == "none") return DefenseKind::NONE;
  if (name == "jpeg") return DefenseKind::JPEG;
  if (name == "randomization") return DefenseKind::RANDOMIZATION;
  throw ValidationError("unknown defense kind '" + name + "'");
}

void DefenseConfig::validate() const {
  if (jpeg_quality < 1 || jpeg_quality > 100)
    throw ValidationError("DefenseConfig: jpeg_quality must be in [1,100]");
  if (!(rand_scale_low > 0.0 && rand_scale_low <= rand_scale_high && rand_scale_high <= 1.0))
    throw ValidationError("DefenseConfig: need 0 < low <= high <= 1");
}

ImageArray jpeg_defense(const ImageArray& image, int quality) {
  if (quality < 1 || quality > 100)
    throw ValidationError("jpeg_defense: quality must be in [1,100]");
  io::Image8 raw;
  raw.height = image.height;
  raw.width = image.width;
  raw.channels = image.channels;
  raw.pixels.resize(static_cast<std::size_t>(image.channels) * image.height * image.width);
  std::size_t i = 0;
  for (int h = 0; h < image.height; ++h)
    for (int w = 0; w < image.width; ++w)
      for (int c = 0; c < image.channels; ++c)
        raw.pixels[i++] = static_cast<std::uint8_t>(
            std::lround(std::min(1.0, std::max(0.0, image.at(c, h, w))) * 255.0));

  io::Image8 back = io::decode_jpeg(io::encode_jpeg(raw, quality));
  if (back.height != image.height || back.width != image.width ||
      back.channels != image.channels)
    throw CorruptDataError("jpeg_defense: decoder changed the image shape");

  ImageArray out = image;
  i = 0;
  for (int h = 0; h < image.height; ++h)
    for (int w = 0; w < image.width; ++w)
      for (int c = 0; c < image.channels; ++c)
        out.at(c, h, w) = static_cast<double>(back.pixels[i++]) / 255.0;
  return out;
}

namespace {

// bilinear sample with edge clamping; exact identity at scale 1
double bilinear(const ImageArray& img, int c, double y, double x) {
  int y0 = static_cast<int>(std::floor(y));
  int x0 = static_cast<int>(std::floor(x));
  double fy = y - y0, fx = x - x0;
  auto clampi = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
  int y1 = clampi(y0 + 1, img.height - 1), x1 = clampi(x0 + 1, img.width - 1);
  y0 = clampi(y0, img.height - 1);
  x0 = clampi(x0, img.width - 1);
  return img.at(c, y0, x0) * (1 - fy) * (1 - fx) + img.at(c, y0, x1) * (1 - fy) * fx +
         img.at(c, y1, x0) * fy * (1 - fx) + img.at(c, y1, x1) * fy * fx;
}

}  // namespace

ImageArray randomization_defense(const ImageArray& image, const DefenseConfig& config) {
  config.validate();
  Rng rng(config.seed);
  double scale = rng.uniform(config.rand_scale_low, config.rand_scale_high);
  int hs = static_cast<int>(std::lround(image.height * scale));
  int ws = static_cast<int>(std::lround(image.width * scale));
  if (hs < 1 || ws < 1)
    throw ValidationError("randomization_defense: scale produced an empty image");

  ImageArray resized = image;
  resized.height = hs;
  resized.width = ws;
  resized.pixels.assign(static_cast<std::size_t>(image.channels) * hs * ws, 0.0);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < hs; ++y)
      for (int x = 0; x < ws; ++x) {
        double sy = (y + 0.5) * (static_cast<double>(image.height) / hs) - 0.5;
        double sx = (x + 0.5) * (static_cast<double>(image.width) / ws) - 0.5;
        resized.at(c, y, x) = bilinear(image, c, sy, sx);
      }

  int oy = rng.randint(0, image.height - hs);
  int ox = rng.randint(0, image.width - ws);

  ImageArray out = image;
  std::fill(out.pixels.begin(), out.pixels.end(), 0.0);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < hs; ++y)
      for (int x = 0; x < ws; ++x) out.at(c, y + oy, x + ox) = resized.at(c, y, x);
  return out;
}

Tensor defend_batch(const Tensor& images, Modality m, const DefenseConfig& config) {
  config.validate();
  if (config.kind == DefenseKind::NONE) return images;
  const int n = images.dim(0);
  Tensor out(images.shape());
  for (int i = 0; i < n; ++i) {
    ImageArray img = tensor_slice_to_image(images, i, m);
    ImageArray defended;
    if (config.kind == DefenseKind::JPEG) {
      defended = jpeg_defense(img, config.jpeg_quality);
    } else {
      DefenseConfig per_image = config;
      per_image.seed = config.seed + static_cast<std::uint64_t>(i);
      defended = randomization_defense(img, per_image);
    }
    std::copy(defended.pixels.begin(), defended.pixels.end(),
              out.data() + static_cast<std::size_t>(i) * defended.pixels.size());
  }
  return out;
}

DefendedReport defended_eval(const RetrievalModel& model, const Corpus& corpus, EvalMode mode,
                             const GeneratorBundle* perturb, const DefenseConfig& defense,
                             double epsilon) {
  defense.validate();
  auto transform = [&defense](const Tensor& t, Modality m) {
    return defend_batch(t, m, defense);
  };

  EvalOptions benign;
  benign.epsilon = epsilon;
  benign.query_transform = transform;
  EvalOptions attacked = benign;
  attacked.perturb = perturb;

  DefendedReport report;
  report.setting = mode;
  report.kind = defense.kind;
  report.benign_map = map_eval(model, corpus, mode, benign);
  report.attacked_map = map_eval(model, corpus, mode, attacked);
  report.mdr_value = mdr(report.benign_map, report.attacked_map);
  return report;
}

}  // namespace mua
