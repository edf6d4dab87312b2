#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steerlab/model/trace.hpp"
#include "steerlab/traces/traces.hpp"

namespace steerlab::probe {

// Dense sample x feature matrix (double) with binary labels.
// feature_index maps each column back to a flat neuron id (layer * d_mlp + i).
struct FeatureMatrix {
  std::size_t n_samples = 0;
  std::size_t n_features = 0;
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::size_t> feature_index;

  double at(std::size_t s, std::size_t f) const noexcept { return values[s * n_features + f]; }
  std::span<const double> row(std::size_t s) const noexcept {
    return {values.data() + s * n_features, n_features};
  }

  void validate() const;
  std::size_t count_label(int label) const noexcept;
};

// MLP post-activations of every layer at the final token, layer-major.
std::vector<double> extract_last_token_features(const model::ActivationTrace& t);

// Last-token features of each trace, label 1 = correct.
FeatureMatrix build_feature_matrix(std::span<const traces::LabeledTrace> traces);

FeatureMatrix select_rows(const FeatureMatrix& x, std::span<const std::size_t> rows);
FeatureMatrix select_columns(const FeatureMatrix& x, std::span<const std::size_t> cols);

// Two-group one-way ANOVA F per feature. Constant features (and equal group
// means) give 0; zero within-group variance with separated means gives +inf.
std::vector<double> f_statistic(const FeatureMatrix& x);

// Column positions of the `count` largest F values (inf first), ties to the
// lower column. count == 0 or count >= n selects every column in F order.
std::vector<std::size_t> top_f_columns(std::span<const double> f, std::size_t count);

struct NormalizerStats {
  std::vector<double> sigma;          // population std per feature
  std::string scale_rule = "10sigma";

  bool operator==(const NormalizerStats&) const = default;
};

NormalizerStats fit_normalizer(const FeatureMatrix& train);

// x / (10 sigma); zero-sigma features map to 0.
FeatureMatrix normalize(const FeatureMatrix& x, const NormalizerStats& stats);
double normalize_value(double x, double sigma) noexcept;

struct ProbeModel {
  std::vector<std::size_t> feature_indices;  // flat neuron ids, one per weight
  std::vector<double> weights;
  double bias = 0.0;
  double lambda = 0.0;
  NormalizerStats normalizer;

  // Decision value w . normalize(x) + b for a full-width last-token vector.
  double decision(std::span<const double> full_features) const;
  std::size_t nonzero_count() const noexcept;

  bool operator==(const ProbeModel&) const = default;
};

// Inverse class frequency normalized to mean 1 over samples: n / (2 n_c).
std::vector<double> balanced_sample_weights(std::span<const int> labels);

// Smooth part of the probe objective: weighted mean logistic loss
//   (1/n) sum_i s_i [softplus(z_i) - y_i z_i],  z_i = w . x_i + b
// over params = [w..., b]. gradient() writes d/dparams.
class LogisticLoss {
 public:
  LogisticLoss(const FeatureMatrix& x, std::vector<double> sample_weights);

  double value(std::span<const double> params) const;
  double value_and_gradient(std::span<const double> params, std::span<double> grad) const;
  std::size_t n_params() const noexcept { return x_.n_features + 1; }

 private:
  const FeatureMatrix& x_;
  std::vector<double> s_;
};

struct FitOptions {
  double lambda = 1e-2;
  std::size_t max_iter = 50;
  double tolerance = 1e-7;
  bool balanced = true;
};

struct FitReport {
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<double> objective;  // objective[0] at the start, one entry per iteration after
};

struct FitResult {
  ProbeModel model;
  FitReport report;
};

// Proximal gradient (ISTA with backtracking) on the balanced-weighted
// logistic loss + lambda * ||w||_1; the bias is not penalized. Input must be
// already normalized; the returned model carries no normalizer and indexes
// columns 0..n-1 unless the caller fills those in.
FitResult fit_l1_logistic(const FeatureMatrix& x_normalized, const FitOptions& opts);

// Mann-Whitney AUROC: P(score_pos > score_neg) with ties counted 1/2.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct CvConfig {
  std::size_t folds = 5;
  std::vector<double> lambdas = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  std::uint64_t seed = 42;
  std::size_t max_iter = 50;
  std::size_t feature_count = 0;  // F-statistic pre-selection; 0 = keep all
};

struct CvRow {
  std::size_t fold = 0;
  double lambda = 0.0;
  double auroc = 0.0;
};

struct CvReport {
  std::vector<CvRow> rows;
  std::vector<double> lambdas;
  std::vector<double> mean_auroc;  // per lambda, grid order
  double best_lambda = 0.0;
  double best_mean_auroc = 0.0;
  std::uint64_t seed = 0;
};

struct CvResult {
  CvReport report;
  ProbeModel model;  // refit on all samples with best_lambda
};

// Fold index per sample: each class shuffled with the seed, then dealt
// round-robin over folds.
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed);

// Full pipeline per (fold, lambda): F-selection and normalizer fitted on the
// training part only, L1 fit, AUROC on the held-out fold.
CvResult cross_validate(const FeatureMatrix& raw, const CvConfig& cfg);

// Fits the pipeline once on all of `raw` with a fixed lambda.
ProbeModel fit_probe(const FeatureMatrix& raw, double lambda, std::size_t max_iter,
                     std::size_t feature_count);

// Per layer: mean over generated tokens of sum_j w_j * a_{t, layer(j), neuron(j)}
// for probe features located in that layer. unit_norm rescales w to ||w|| = 1.
std::vector<double> probe_projection(const model::ActivationTrace& t, const ProbeModel& probe,
                                     bool unit_norm = false);

}  // namespace steerlab::probe
