#include "mua/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mua/errors.hpp"

namespace mua {

DistanceMatrix pairwise_distances(const Tensor& queries, const Tensor& gallery,
                                  std::vector<int> query_ids, std::vector<int> gallery_ids) {
  if (queries.rank() != 2 || gallery.rank() != 2 || queries.dim(1) != gallery.dim(1))
    throw ValidationError("pairwise_distances: feature dimension mismatch");
  const int q = queries.dim(0), g = gallery.dim(0), d = queries.dim(1);
  if (static_cast<int>(query_ids.size()) != q || static_cast<int>(gallery_ids.size()) != g)
    throw ValidationError("pairwise_distances: id list length mismatch");
  DistanceMatrix dm;
  dm.values = Tensor({q, g});
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < g; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        double diff = queries[queries.idx2(i, k)] - gallery[gallery.idx2(j, k)];
        s += diff * diff;
      }
      dm.values[dm.values.idx2(i, j)] = std::sqrt(s);
    }
  dm.query_ids = std::move(query_ids);
  dm.gallery_ids = std::move(gallery_ids);
  return dm;
}

DistanceMatrix pairwise_distances(const std::vector<FeatureVec>& queries,
                                  const std::vector<FeatureVec>& gallery,
                                  std::vector<int> query_ids, std::vector<int> gallery_ids) {
  if (queries.empty() || gallery.empty())
    throw ValidationError("pairwise_distances: empty feature list");
  const int d = static_cast<int>(queries.front().size());
  Tensor q({static_cast<int>(queries.size()), d});
  Tensor g({static_cast<int>(gallery.size()), d});
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (static_cast<int>(queries[i].size()) != d)
      throw ValidationError("pairwise_distances: ragged query features");
    std::copy(queries[i].begin(), queries[i].end(), q.data() + q.idx2(static_cast<int>(i), 0));
  }
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    if (static_cast<int>(gallery[j].size()) != d)
      throw ValidationError("pairwise_distances: ragged gallery features");
    std::copy(gallery[j].begin(), gallery[j].end(), g.data() + g.idx2(static_cast<int>(j), 0));
  }
  return pairwise_distances(q, g, std::move(query_ids), std::move(gallery_ids));
}

int rank_of(const std::vector<double>& dist_row, int target_index) {
  if (target_index < 0 || target_index >= static_cast<int>(dist_row.size()))
    throw ValidationError("rank_of: target index out of range");
  const double target = dist_row[static_cast<std::size_t>(target_index)];
  int rank = 1;
  for (int j = 0; j < static_cast<int>(dist_row.size()); ++j) {
    if (j == target_index) continue;
    double v = dist_row[static_cast<std::size_t>(j)];
    if (v < target || (v == target && j < target_index)) ++rank;
  }
  return rank;
}

double average_precision(const std::vector<bool>& ranked_relevance) {
  int relevant = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (ranked_relevance[k]) {
      ++relevant;
      sum += static_cast<double>(relevant) / static_cast<double>(k + 1);
    }
  }
  if (relevant == 0) throw ValidationError("average_precision: no relevant match in ranking");
  return sum / relevant;
}

namespace {

std::vector<int> ranked_gallery_order(const DistanceMatrix& dm, int query) {
  std::vector<int> order(static_cast<std::size_t>(dm.values.dim(1)));
  std::iota(order.begin(), order.end(), 0);
  const double* row = dm.values.data() + dm.values.idx2(query, 0);
  std::stable_sort(order.begin(), order.end(), [row](int a, int b) {
    if (row[a] != row[b]) return row[a] < row[b];
    return a < b;
  });
  return order;
}

}  // namespace

double mean_average_precision(const DistanceMatrix& dm) {
  const int q = dm.values.dim(0);
  if (q == 0) throw ValidationError("mean_average_precision: empty query set");
  double total = 0.0;
  for (int i = 0; i < q; ++i) {
    auto order = ranked_gallery_order(dm, i);
    std::vector<bool> rel(order.size());
    for (std::size_t k = 0; k < order.size(); ++k)
      rel[k] = dm.gallery_ids[static_cast<std::size_t>(order[k])] ==
               dm.query_ids[static_cast<std::size_t>(i)];
    total += average_precision(rel);
  }
  return 100.0 * total / q;
}

double aap(const std::vector<double>& maps) {
  if (maps.empty()) throw ValidationError("aap: empty mAP list");
  double s = 0.0;
  for (double m : maps) s += m;
  return s / static_cast<double>(maps.size());
}

double mdr(double aap_benign, double aap_adv) {
  if (!(aap_benign > 0.0)) throw ValidationError("mdr: zero baseline aAP");
  return 100.0 * (aap_benign - aap_adv) / aap_benign;
}

std::string eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::RR: return "S_RR";
    case EvalMode::RN: return "C_RN";
    case EvalMode::NR: return "C_NR";
    case EvalMode::RNT: return "M_RNT";
  }
  throw ValidationError("eval_mode_name: bad mode");
}

namespace {

Modality query_modality(EvalMode mode) {
  switch (mode) {
    case EvalMode::RR:
    case EvalMode::RN: return Modality::RGB;
    case EvalMode::NR: return Modality::NI;
    case EvalMode::RNT: return Modality::RGB;  // trio handled separately
  }
  throw ValidationError("bad mode");
}

Modality gallery_modality(EvalMode mode) {
  switch (mode) {
    case EvalMode::RR:
    case EvalMode::NR: return Modality::RGB;
    case EvalMode::RN: return Modality::NI;
    case EvalMode::RNT: return Modality::RGB;
  }
  throw ValidationError("bad mode");
}

class SurrogateView final : public RetrievalModel {
 public:
  explicit SurrogateView(const SurrogateModel& m) : model_(m) {}
  std::string name() const override { return "surrogate"; }
  bool supports(EvalMode mode) const override { return mode == EvalMode::RNT; }
  Tensor embed(const std::array<Tensor, 3>& images, EvalMode, bool) const override {
    return model_.fused_embed(images[0], images[1], images[2]);
  }

 private:
  const SurrogateModel& model_;
};

class SingleRgbView final : public RetrievalModel {
 public:
  explicit SingleRgbView(const SingleRgbModel& m) : model_(m) {}
  std::string name() const override { return "single_rgb"; }
  bool supports(EvalMode mode) const override { return mode == EvalMode::RR; }
  Tensor embed(const std::array<Tensor, 3>& images, EvalMode, bool) const override {
    return model_.extract(images[static_cast<std::size_t>(Modality::RGB)]);
  }

 private:
  const SingleRgbModel& model_;
};

class CrossRnView final : public RetrievalModel {
 public:
  explicit CrossRnView(const CrossRnModel& m) : model_(m) {}
  std::string name() const override { return "cross_rn"; }
  bool supports(EvalMode mode) const override {
    return mode == EvalMode::RN || mode == EvalMode::NR;
  }
  Tensor embed(const std::array<Tensor, 3>& images, EvalMode mode,
               bool query_side) const override {
    Modality m = query_side ? query_modality(mode) : gallery_modality(mode);
    return model_.extract(images[static_cast<std::size_t>(m)], m);
  }

 private:
  const CrossRnModel& model_;
};

class MultiAltView final : public RetrievalModel {
 public:
  explicit MultiAltView(const MultiAltModel& m) : model_(m) {}
  std::string name() const override { return "multi_alt"; }
  bool supports(EvalMode mode) const override { return mode == EvalMode::RNT; }
  Tensor embed(const std::array<Tensor, 3>& images, EvalMode, bool) const override {
    return model_.fused_embed(images[0], images[1], images[2]);
  }

 private:
  const MultiAltModel& model_;
};

std::vector<Modality> query_modalities(EvalMode mode) {
  if (mode == EvalMode::RNT) return {Modality::RGB, Modality::NI, Modality::TI};
  return {query_modality(mode)};
}

std::vector<Modality> gallery_modalities(EvalMode mode) {
  if (mode == EvalMode::RNT) return {Modality::RGB, Modality::NI, Modality::TI};
  return {gallery_modality(mode)};
}

DistanceMatrix eval_distances(const RetrievalModel& model, const Corpus& corpus, EvalMode mode,
                              const EvalOptions& opts) {
  if (!model.supports(mode))
    throw ValidationError("map_eval: model '" + model.name() + "' does not support mode " +
                          eval_mode_name(mode));
  if (corpus.query.empty() || corpus.gallery.empty())
    throw ValidationError("map_eval: empty query or gallery split");

  std::array<Tensor, 3> qimgs, gimgs;
  for (Modality m : query_modalities(mode)) {
    Tensor x = stack_images(corpus.query, m);
    if (opts.perturb) x = generate_ae(opts.perturb->generator(m), x, opts.epsilon);
    if (opts.query_transform) x = opts.query_transform(x, m);
    qimgs[static_cast<std::size_t>(m)] = std::move(x);
  }
  for (Modality m : gallery_modalities(mode))
    gimgs[static_cast<std::size_t>(m)] = stack_images(corpus.gallery, m);

  Tensor qf = model.embed(qimgs, mode, true);
  Tensor gf = model.embed(gimgs, mode, false);
  return pairwise_distances(qf, gf, sample_identities(corpus.query),
                            sample_identities(corpus.gallery));
}

}  // namespace

double map_eval(const RetrievalModel& model, const Corpus& corpus, EvalMode mode,
                const EvalOptions& opts) {
  return mean_average_precision(eval_distances(model, corpus, mode, opts));
}

double attack_success_rate(const RetrievalModel& model, const Corpus& corpus, EvalMode mode,
                           const EvalOptions& opts, int k) {
  if (k < 1) throw ValidationError("attack_success_rate: k must be >= 1");
  DistanceMatrix dm = eval_distances(model, corpus, mode, opts);
  const int q = dm.values.dim(0);
  int successes = 0;
  for (int i = 0; i < q; ++i) {
    auto order = ranked_gallery_order(dm, i);
    bool match_in_topk = false;
    for (int pos = 0; pos < std::min<int>(k, static_cast<int>(order.size())); ++pos)
      if (dm.gallery_ids[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] ==
          dm.query_ids[static_cast<std::size_t>(i)]) {
        match_in_topk = true;
        break;
      }
    if (!match_in_topk) ++successes;
  }
  return static_cast<double>(successes) / q;
}

std::unique_ptr<RetrievalModel> retrieval_view(const SurrogateModel& model) {
  return std::make_unique<SurrogateView>(model);
}
std::unique_ptr<RetrievalModel> retrieval_view(const SingleRgbModel& model) {
  return std::make_unique<SingleRgbView>(model);
}
std::unique_ptr<RetrievalModel> retrieval_view(const CrossRnModel& model) {
  return std::make_unique<CrossRnView>(model);
}
std::unique_ptr<RetrievalModel> retrieval_view(const MultiAltModel& model) {
  return std::make_unique<MultiAltView>(model);
}

std::vector<EvalReport> evaluate_suite(const SurrogateModel& surrogate, const TargetZoo& zoo,
                                       const GeneratorBundle* perturb, const Corpus& corpus,
                                       int k, double epsilon) {
  auto surrogate_view = retrieval_view(surrogate);
  auto single_view = retrieval_view(*zoo.single_rgb);
  auto cross_view = retrieval_view(*zoo.cross_rn);
  auto multi_view = retrieval_view(*zoo.multi_alt);

  struct Setting {
    EvalMode mode;
    std::vector<const RetrievalModel*> models;
  };
  const std::vector<Setting> settings{
      {EvalMode::RR, {single_view.get()}},
      {EvalMode::RN, {cross_view.get()}},
      {EvalMode::NR, {cross_view.get()}},
      {EvalMode::RNT, {surrogate_view.get(), multi_view.get()}},
  };

  EvalOptions benign;
  benign.epsilon = epsilon;
  EvalOptions attacked;
  attacked.perturb = perturb;
  attacked.epsilon = epsilon;

  std::vector<EvalReport> reports;
  for (const auto& setting : settings) {
    EvalReport report;
    report.setting = setting.mode;
    report.k = k;
    std::vector<double> benign_maps, adv_maps;
    double success = 0.0;
    for (const auto* model : setting.models) {
      double b = map_eval(*model, corpus, setting.mode, benign);
      double a = map_eval(*model, corpus, setting.mode, attacked);
      report.per_model_map.emplace_back(model->name(), b);
      report.per_model_map_adv.emplace_back(model->name(), a);
      benign_maps.push_back(b);
      adv_maps.push_back(a);
      success += attack_success_rate(*model, corpus, setting.mode, attacked, k);
    }
    report.aap = aap(benign_maps);
    report.aap_adv = aap(adv_maps);
    report.mdr = mdr(report.aap, report.aap_adv);
    report.k_success_rate = success / static_cast<double>(setting.models.size());
    reports.push_back(std::move(report));
  }
  return reports;
}

void write_reports_json(const std::string& path, const std::vector<EvalReport>& reports) {
  nlohmann::json root = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json entry;
    entry["setting"] = eval_mode_name(r.setting);
    entry["k"] = r.k;
    entry["aap"] = r.aap;
    entry["aap_adv"] = r.aap_adv;
    entry["mdr"] = r.mdr;
    entry["k_success_rate"] = r.k_success_rate;
    nlohmann::json benign = nlohmann::json::object();
    for (const auto& [name, v] : r.per_model_map) benign[name] = v;
    nlohmann::json adv = nlohmann::json::object();
    for (const auto& [name, v] : r.per_model_map_adv) adv[name] = v;
    entry["per_model_map"] = benign;
    entry["per_model_map_adv"] = adv;
    root.push_back(entry);
  }
  std::ofstream out(path);
  if (!out) throw ArtifactError("write_reports_json: cannot open " + path);
  out << root.dump(2) << "\n";
}

void write_reports_csv(const std::string& path, const std::vector<EvalReport>& reports) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("write_reports_csv: cannot open " + path);
  char line[256];
  std::snprintf(line, sizeof line, "%-8s,%-12s,%10s,%10s,%10s,%10s\n", "setting", "model",
                "benign", "attacked", "aAP/mDR", "succ@K");
  out << line;
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.per_model_map.size(); ++i) {
      std::snprintf(line, sizeof line, "%-8s,%-12s,%10.1f,%10.1f,%10s,%10s\n",
                    eval_mode_name(r.setting).c_str(), r.per_model_map[i].first.c_str(),
                    r.per_model_map[i].second, r.per_model_map_adv[i].second, "", "");
      out << line;
    }
    std::snprintf(line, sizeof line, "%-8s,%-12s,%10.1f,%10.1f,%10.1f,%10.3f\n",
                  eval_mode_name(r.setting).c_str(), "aAP", r.aap, r.aap_adv, r.mdr,
                  r.k_success_rate);
    out << line;
  }
}

}  // namespace mua
