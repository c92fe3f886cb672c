#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mua/tensor.hpp"

namespace mua {

enum class Modality { RGB = 0, NI = 1, TI = 2 };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::RGB, Modality::NI,
                                                        Modality::TI};

inline int modality_channels(Modality m) { return m == Modality::NI ? 1 : 3; }

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// One image, CHW layout, every pixel in [0,1].
struct ImageArray {
  Modality modality = Modality::RGB;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;  // channels * height * width

  double& at(int c, int h, int w) {
    return pixels[(static_cast<std::size_t>(c) * height + h) * width + w];
  }
  double at(int c, int h, int w) const {
    return pixels[(static_cast<std::size_t>(c) * height + h) * width + w];
  }
};

// Aligned RGB/NI/TI trio of one identity, indexed by Modality.
struct TriModalSample {
  int identity = 0;
  std::array<ImageArray, 3> images;

  const ImageArray& image(Modality m) const { return images[static_cast<std::size_t>(m)]; }
  ImageArray& image(Modality m) { return images[static_cast<std::size_t>(m)]; }
};

struct Corpus {
  std::vector<TriModalSample> train;
  std::vector<TriModalSample> query;
  std::vector<TriModalSample> gallery;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
};

// Procedural tri-modal person corpus. Identities carry stable appearance
// signatures (silhouette geometry, clothing colors, stripe texture, thermal
// level); samples of one identity differ by pose offset, brightness and
// noise. Pixels are quantized to the k/255 grid so PNG persistence is exact.
Corpus synth_corpus(std::uint64_t seed, int n_train_ids, int n_eval_ids, int per_id,
                    int height, int width);

// Layout: <dir>/<split>/<modality>/<identity>_<index>.png plus manifest.txt
// (keys: seed, height, width, splits, modalities, identities).
void persist_corpus(const Corpus& corpus, const std::string& directory);
Corpus load_corpus(const std::string& directory);

std::uint64_t corpus_checksum(const Corpus& corpus);

// Batch helpers: stack one modality of a sample list into {N,C,H,W}.
Tensor stack_images(const std::vector<TriModalSample>& samples, Modality m);
Tensor stack_images(const std::vector<const TriModalSample*>& samples, Modality m);
std::vector<int> sample_identities(const std::vector<TriModalSample>& samples);

ImageArray tensor_slice_to_image(const Tensor& batch, int index, Modality m);

}  // namespace mua
