#include "mua/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mua/errors.hpp"

namespace mua {

TrainOptions ExperimentConfig::train_options() const {
  TrainOptions opts;
  opts.epochs = models.epochs;
  opts.batch_size = models.batch_size;
  opts.learning_rate = models.learning_rate;
  opts.logit_scale = models.logit_scale;
  opts.align_weight = models.align_weight;
  opts.cross_input_noise = models.cross_input_noise;
  return opts;
}

DefenseConfig ExperimentConfig::defense_config(DefenseKind kind) const {
  DefenseConfig cfg;
  cfg.kind = kind;
  cfg.jpeg_quality = defense.jpeg_quality;
  cfg.rand_scale_low = defense.rand_scale_low;
  cfg.rand_scale_high = defense.rand_scale_high;
  cfg.seed = defense.seed;
  return cfg;
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return serialize_config(*this) == serialize_config(other);
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "seed = " << c.global_seed << "\n";
  out << "\n[corpus]\n";
  out << "seed = " << c.corpus.seed << "\n";
  out << "train_ids = " << c.corpus.train_ids << "\n";
  out << "eval_ids = " << c.corpus.eval_ids << "\n";
  out << "per_id = " << c.corpus.per_id << "\n";
  out << "height = " << c.corpus.height << "\n";
  out << "width = " << c.corpus.width << "\n";
  out << "\n[models]\n";
  out << "seed = " << c.models.seed << "\n";
  out << "epochs = " << c.models.epochs << "\n";
  out << "batch_size = " << c.models.batch_size << "\n";
  out << "learning_rate = " << fmt_double(c.models.learning_rate) << "\n";
  out << "logit_scale = " << fmt_double(c.models.logit_scale) << "\n";
  out << "align_weight = " << fmt_double(c.models.align_weight) << "\n";
  out << "cross_input_noise = " << fmt_double(c.models.cross_input_noise) << "\n";
  out << "\n[attack]\n";
  out << "seed = " << c.attack.seed << "\n";
  out << "epsilon = " << fmt_double(c.attack.epsilon) << "\n";
  out << "lambda1 = " << fmt_double(c.attack.lambda1) << "\n";
  out << "lambda2 = " << fmt_double(c.attack.lambda2) << "\n";
  out << "lambda3 = " << fmt_double(c.attack.lambda3) << "\n";
  out << "learning_rate = " << fmt_double(c.attack.learning_rate) << "\n";
  out << "iterations = " << c.attack.iterations << "\n";
  out << "batch_identities = " << c.attack.batch_identities << "\n";
  out << "batch_samples = " << c.attack.batch_samples << "\n";
  out << "flags = " << flags_to_string(c.attack.flags) << "\n";
  out << "\n[eval]\n";
  out << "k = " << c.eval.k << "\n";
  out << "\n[ablate]\n";
  out << "seeds = " << c.ablate.seeds << "\n";
  out << "iterations = " << c.ablate.iterations << "\n";
  out << "\n[defense]\n";
  out << "jpeg_quality = " << c.defense.jpeg_quality << "\n";
  out << "rand_scale_low = " << fmt_double(c.defense.rand_scale_low) << "\n";
  out << "rand_scale_high = " << fmt_double(c.defense.rand_scale_high) << "\n";
  out << "seed = " << c.defense.seed << "\n";
  out << "\n[export]\n";
  out << "split = " << c.export_.split << "\n";
  out << "index = " << c.export_.index << "\n";
  return out.str();
}

namespace {

struct KeyHandler {
  std::function<void(ExperimentConfig&, const std::string&)> apply;
};

int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config: bad integer for '" + key + "': " + v);
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config: bad seed for '" + key + "': " + v);
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config: bad number for '" + key + "': " + v);
  }
}

const std::map<std::string, KeyHandler>& handlers() {
  static const std::map<std::string, KeyHandler> table = {
      {"experiment.seed",
       {[](ExperimentConfig& c, const std::string& v) {
         c.global_seed = parse_u64(v, "experiment.seed");
       }}},
      {"corpus.seed",
       {[](ExperimentConfig& c, const std::string& v) {
         c.corpus.seed = parse_u64(v, "corpus.seed");
       }}},
      {"corpus.train_ids",
       {[](ExperimentConfig& c, const std::string& v) {
         c.corpus.train_ids = parse_int(v, "corpus.train_ids");
       }}},
      {"corpus.eval_ids",
       {[](ExperimentConfig& c, const std::string& v) {
         c.corpus.eval_ids = parse_int(v, "corpus.eval_ids");
       }}},
      {"corpus.per_id",
       {[](ExperimentConfig& c, const std::string& v) {
         c.corpus.per_id = parse_int(v, "corpus.per_id");
       }}},
      {"corpus.height",
       {[](ExperimentConfig& c, const std::string& v) {
         c.corpus.height = parse_int(v, "corpus.height");
       }}},
      {"corpus.width",
       {[](ExperimentConfig& c, const std::string& v) {
         c.corpus.width = parse_int(v, "corpus.width");
       }}},
      {"models.seed",
       {[](ExperimentConfig& c, const std::string& v) {
         c.models.seed = parse_u64(v, "models.seed");
       }}},
      {"models.epochs",
       {[](ExperimentConfig& c, const std::string& v) {
         c.models.epochs = parse_int(v, "models.epochs");
       }}},
      {"models.batch_size",
       {[](ExperimentConfig& c, const std::string& v) {
         c.models.batch_size = parse_int(v, "models.batch_size");
       }}},
      {"models.learning_rate",
       {[](ExperimentConfig& c, const std::string& v) {
         c.models.learning_rate = parse_double(v, "models.learning_rate");
       }}},
      {"models.logit_scale",
       {[](ExperimentConfig& c, const std::string& v) {
         c.models.logit_scale = parse_double(v, "models.logit_scale");
       }}},
      {"models.align_weight",
       {[](ExperimentConfig& c, const std::string& v) {
         c.models.align_weight = parse_double(v, "models.align_weight");
       }}},
      {"models.cross_input_noise",
       {[](ExperimentConfig& c, const std::string& v) {
         c.models.cross_input_noise = parse_double(v, "models.cross_input_noise");
       }}},
      {"attack.seed",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.seed = parse_u64(v, "attack.seed");
       }}},
      {"attack.epsilon",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.epsilon = parse_double(v, "attack.epsilon");
       }}},
      {"attack.lambda1",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.lambda1 = parse_double(v, "attack.lambda1");
       }}},
      {"attack.lambda2",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.lambda2 = parse_double(v, "attack.lambda2");
       }}},
      {"attack.lambda3",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.lambda3 = parse_double(v, "attack.lambda3");
       }}},
      {"attack.learning_rate",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.learning_rate = parse_double(v, "attack.learning_rate");
       }}},
      {"attack.iterations",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.iterations = parse_int(v, "attack.iterations");
       }}},
      {"attack.batch_identities",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.batch_identities = parse_int(v, "attack.batch_identities");
       }}},
      {"attack.batch_samples",
       {[](ExperimentConfig& c, const std::string& v) {
         c.attack.batch_samples = parse_int(v, "attack.batch_samples");
       }}},
      {"attack.flags",
       {[](ExperimentConfig& c, const std::string& v) { c.attack.flags = flags_from_string(v); }}},
      {"eval.k",
       {[](ExperimentConfig& c, const std::string& v) { c.eval.k = parse_int(v, "eval.k"); }}},
      {"ablate.seeds",
       {[](ExperimentConfig& c, const std::string& v) {
         c.ablate.seeds = parse_int(v, "ablate.seeds");
       }}},
      {"ablate.iterations",
       {[](ExperimentConfig& c, const std::string& v) {
         c.ablate.iterations = parse_int(v, "ablate.iterations");
       }}},
      {"defense.jpeg_quality",
       {[](ExperimentConfig& c, const std::string& v) {
         c.defense.jpeg_quality = parse_int(v, "defense.jpeg_quality");
       }}},
      {"defense.rand_scale_low",
       {[](ExperimentConfig& c, const std::string& v) {
         c.defense.rand_scale_low = parse_double(v, "defense.rand_scale_low");
       }}},
      {"defense.rand_scale_high",
       {[](ExperimentConfig& c, const std::string& v) {
         c.defense.rand_scale_high = parse_double(v, "defense.rand_scale_high");
       }}},
      {"defense.seed",
       {[](ExperimentConfig& c, const std::string& v) {
         c.defense.seed = parse_u64(v, "defense.seed");
       }}},
      {"export.split",
       {[](ExperimentConfig& c, const std::string& v) {
         if (v != "train" && v != "query" && v != "gallery")
           throw ValidationError("config: export.split must be train/query/gallery");
         c.export_.split = v;
       }}},
      {"export.index",
       {[](ExperimentConfig& c, const std::string& v) {
         c.export_.index = parse_int(v, "export.index");
       }}},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = t.substr(1, t.size() - 2);
      if (section != "experiment" && section != "corpus" && section != "models" &&
          section != "attack" && section != "eval" && section != "ablate" &&
          section != "defense" && section != "export")
        throw ValidationError("config line " + std::to_string(line_no) + ": unknown section [" +
                              section + "]");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw ValidationError("config line " + std::to_string(line_no) + ": key outside a section");
    std::string key = section + "." + trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    auto it = handlers().find(key);
    if (it == handlers().end())
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
    it->second.apply(config, value);
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write config file: " + path);
  out << serialize_config(config);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  std::string s = serialize_config(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mua
