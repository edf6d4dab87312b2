#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/model/trace.hpp"
#include "steerlab/numerics/rng.hpp"

namespace steerlab::gate {

struct GateConfig {
  std::size_t feature_count = 256;
  std::size_t hidden = 256;
  double dropout = 0.3;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 8;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Prompt-token rows x selected features.
struct TokenFeatures {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const noexcept {
    return {values.data() + r * cols, cols};
  }
};

// Attention pooling with one learned query, then
// Linear(F, H) -> ReLU -> Dropout -> Linear(H, 1) -> sigmoid.
struct GateModel {
  std::vector<std::size_t> feature_indices;  // flat neuron ids
  std::vector<double> sigma;                 // per feature, 10-sigma rule
  std::vector<double> query;                 // F
  std::size_t hidden = 0;
  std::vector<double> w1;                    // H x F, row-major
  std::vector<double> b1;                    // H
  std::vector<double> w2;                    // H
  double b2 = 0.0;
  double threshold = 0.5;

  std::size_t width() const noexcept { return query.size(); }
  std::size_t n_parameters() const noexcept;
  // Packed as [query, w1, b1, w2, b2].
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);
  void validate() const;

  bool operator==(const GateModel&) const = default;
};

GateModel init_gate(std::vector<std::size_t> feature_indices, std::vector<double> sigma,
                    std::size_t hidden, std::uint64_t seed);

struct FeatureSelection {
  std::vector<std::size_t> indices;  // flat neuron ids, F-statistic order
  std::vector<double> sigma;         // population std over all prompt-token rows
};

// Global F-statistic ranking of per-sample prompt-mean activations.
FeatureSelection select_gate_features(std::span<const model::ActivationTrace> traces,
                                      std::span<const int> labels, std::size_t count);

// Prompt-token rows restricted to `indices`, each divided by 10 sigma (zero
// sigma maps to 0). Empty sigma leaves values raw.
TokenFeatures gate_features(const model::ActivationTrace& t, std::span<const std::size_t> indices,
                            std::span<const double> sigma);

struct GateSample {
  TokenFeatures features;
  int label = 0;  // 1 = base model incorrect (steer), 0 = correct
  std::uint64_t instance_id = 0;
};

struct GateDataset {
  std::vector<GateSample> samples;

  std::size_t count_label(int label) const noexcept;
};

std::vector<double> pooling_weights(const GateModel& m, const TokenFeatures& f);

// Logit before the sigmoid. With training on, dropout masks are drawn from rng.
double gate_logit(const GateModel& m, const TokenFeatures& f, bool training = false,
                  numerics::SeededRng* rng = nullptr, double dropout = 0.3);
double gate_forward(const GateModel& m, const TokenFeatures& f, bool training = false,
                    numerics::SeededRng* rng = nullptr, double dropout = 0.3);

// Stable BCE-with-logits for one sample, gradient over parameters() order.
// keep_mask (length H, entries 0/1) applies inverted dropout with `dropout`;
// null disables dropout.
double gate_loss_and_gradient(const GateModel& m, const TokenFeatures& f, int label,
                              std::span<double> grad, const std::vector<std::uint8_t>* keep_mask,
                              double dropout);
double gate_loss(const GateModel& m, const TokenFeatures& f, int label);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auroc = 0.0;  // NaN when the validation set is single-class
  double val_loss = 0.0;
};

struct GateReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct TrainResult {
  GateModel model;
  GateReport report;
};

// Adam on mean BCE per mini-batch. Early stopping on validation AUROC
// (ties broken by lower validation loss); best-epoch weights returned.
TrainResult train_gate(const GateDataset& train, const GateDataset& val, GateModel init,
                       const GateConfig& cfg);

bool gate_decision(double p, double threshold = 0.5);

inline constexpr char kGateFormat[] = "steerlab.gate";
inline constexpr std::uint32_t kGateVersion = 1;

// {format, version, feature_indices, query, w1, w1_shape, b1, w2, b2,
//  threshold, sigma}
std::string gate_to_json(const GateModel& m);
GateModel gate_from_json(std::string_view text);
void save_gate(const std::filesystem::path& path, const GateModel& m);
GateModel load_gate(const std::filesystem::path& path);

// Header "epoch,train_loss,val_auroc".
std::string gate_report_csv(const GateReport& r);

}  // namespace steerlab::gate
