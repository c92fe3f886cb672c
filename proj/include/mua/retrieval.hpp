#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mua/attack.hpp"
#include "mua/corpus.hpp"
#include "mua/models.hpp"

namespace mua {

struct DistanceMatrix {
  Tensor values;  // {Q,G}
  std::vector<int> query_ids;
  std::vector<int> gallery_ids;
};

DistanceMatrix pairwise_distances(const Tensor& queries, const Tensor& gallery,
                                  std::vector<int> query_ids, std::vector<int> gallery_ids);
DistanceMatrix pairwise_distances(const std::vector<FeatureVec>& queries,
                                  const std::vector<FeatureVec>& gallery,
                                  std::vector<int> query_ids, std::vector<int> gallery_ids);

// 1-based rank of target_index under ascending distance; ties resolve by
// ascending gallery index.
int rank_of(const std::vector<double>& dist_row, int target_index);

// mean over relevant positions k of (relevant-in-top-k)/k
double average_precision(const std::vector<bool>& ranked_relevance);

double mean_average_precision(const DistanceMatrix& dm);  // percent

double aap(const std::vector<double>& maps);
double mdr(double aap_benign, double aap_adv);  // percent drop rate

enum class EvalMode { RR, RN, NR, RNT };
std::string eval_mode_name(EvalMode mode);  // S_RR / C_RN / C_NR / M_RNT

// Evaluation adapter over a trained model; embeds preprocessed image stacks.
class RetrievalModel {
 public:
  virtual ~RetrievalModel() = default;
  virtual std::string name() const = 0;
  virtual bool supports(EvalMode mode) const = 0;
  // images: stacked {N,C,H,W} per modality slot (unused slots may be empty)
  virtual Tensor embed(const std::array<Tensor, 3>& images, EvalMode mode,
                       bool query_side) const = 0;
};

std::unique_ptr<RetrievalModel> retrieval_view(const SurrogateModel& model);
std::unique_ptr<RetrievalModel> retrieval_view(const SingleRgbModel& model);
std::unique_ptr<RetrievalModel> retrieval_view(const CrossRnModel& model);
std::unique_ptr<RetrievalModel> retrieval_view(const MultiAltModel& model);

struct EvalOptions {
  const GeneratorBundle* perturb = nullptr;  // query-side attack; gallery stays benign
  double epsilon = 8.0 / 255.0;
  // optional query-side transform applied after the attack (defense hook);
  // receives the stacked batch and its modality
  std::function<Tensor(const Tensor&, Modality)> query_transform;
};

double map_eval(const RetrievalModel& model, const Corpus& corpus, EvalMode mode,
                const EvalOptions& opts = {});

double attack_success_rate(const RetrievalModel& model, const Corpus& corpus, EvalMode mode,
                           const EvalOptions& opts, int k);

struct EvalReport {
  EvalMode setting = EvalMode::RR;
  std::vector<std::pair<std::string, double>> per_model_map;      // benign mAP, percent
  std::vector<std::pair<std::string, double>> per_model_map_adv;  // attacked mAP, percent
  double aap = 0.0;
  double aap_adv = 0.0;
  double mdr = 0.0;
  double k_success_rate = 0.0;
  int k = 10;
};

std::vector<EvalReport> evaluate_suite(const SurrogateModel& surrogate, const TargetZoo& zoo,
                                       const GeneratorBundle* perturb, const Corpus& corpus,
                                       int k, double epsilon = 8.0 / 255.0);

void write_reports_json(const std::string& path, const std::vector<EvalReport>& reports);
void write_reports_csv(const std::string& path, const std::vector<EvalReport>& reports);

}  // namespace mua
