#include "steerlab/probe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/numerics/ops.hpp"
#include "steerlab/numerics/rng.hpp"

namespace steerlab::probe {

void FeatureMatrix::validate() const {
  if (values.size() != n_samples * n_features) {
    throw InvalidArgument(fmt::format("feature matrix holds {} values, expected {} x {}",
                                      values.size(), n_samples, n_features));
  }
  if (labels.size() != n_samples) {
    throw InvalidArgument(
        fmt::format("feature matrix has {} labels for {} samples", labels.size(), n_samples));
  }
  if (feature_index.size() != n_features) {
    throw InvalidArgument("feature index map does not match the feature count");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidArgument(fmt::format("label {} is not 0 or 1", y));
  }
}

std::size_t FeatureMatrix::count_label(int label) const noexcept {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

namespace {

void require_both_classes(const FeatureMatrix& x, std::string_view who) {
  if (x.count_label(0) == 0 || x.count_label(1) == 0) {
    throw DataError(fmt::format("{}: both classes must be present ({} positive, {} negative)", who,
                                x.count_label(1), x.count_label(0)));
  }
}

}  // namespace

std::vector<double> extract_last_token_features(const model::ActivationTrace& t) {
  if (t.n_tokens() == 0 || t.n_generated() == 0) {
    throw InvalidArgument("extract_last_token_features: trace has no generated token");
  }
  const std::size_t last = t.n_tokens() - 1;
  std::vector<double> out;
  out.reserve(t.n_layers * t.d_mlp);
  for (std::size_t l = 0; l < t.n_layers; ++l) {
    for (float a : t.activation_row(last, l)) out.push_back(a);
  }
  return out;
}

FeatureMatrix build_feature_matrix(std::span<const traces::LabeledTrace> traces) {
  if (traces.empty()) throw InvalidArgument("build_feature_matrix: no traces");
  FeatureMatrix x;
  x.n_samples = traces.size();
  x.n_features = traces.front().trace.n_layers * traces.front().trace.d_mlp;
  x.values.reserve(x.n_samples * x.n_features);
  for (const auto& t : traces) {
    const auto f = extract_last_token_features(t.trace);
    if (f.size() != x.n_features) {
      throw InvalidArgument(fmt::format("trace of instance {} has {} features, expected {}",
                                        t.instance_id, f.size(), x.n_features));
    }
    x.values.insert(x.values.end(), f.begin(), f.end());
    x.labels.push_back(t.correct ? 1 : 0);
  }
  x.feature_index.resize(x.n_features);
  std::iota(x.feature_index.begin(), x.feature_index.end(), std::size_t{0});
  return x;
}

FeatureMatrix select_rows(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  FeatureMatrix out;
  out.n_samples = rows.size();
  out.n_features = x.n_features;
  out.feature_index = x.feature_index;
  out.values.reserve(rows.size() * x.n_features);
  for (std::size_t r : rows) {
    if (r >= x.n_samples) throw InvalidArgument("select_rows: row index out of range");
    const auto row = x.row(r);
    out.values.insert(out.values.end(), row.begin(), row.end());
    out.labels.push_back(x.labels[r]);
  }
  return out;
}

FeatureMatrix select_columns(const FeatureMatrix& x, std::span<const std::size_t> cols) {
  FeatureMatrix out;
  out.n_samples = x.n_samples;
  out.n_features = cols.size();
  out.labels = x.labels;
  for (std::size_t c : cols) {
    if (c >= x.n_features) throw InvalidArgument("select_columns: column index out of range");
    out.feature_index.push_back(x.feature_index[c]);
  }
  out.values.reserve(x.n_samples * cols.size());
  for (std::size_t s = 0; s < x.n_samples; ++s) {
    for (std::size_t c : cols) out.values.push_back(x.at(s, c));
  }
  return out;
}

std::vector<double> f_statistic(const FeatureMatrix& x) {
  x.validate();
  require_both_classes(x, "f_statistic");
  const std::size_t n = x.n_samples;
  if (n <= 2) throw InvalidArgument("f_statistic: need more than 2 samples");
  const double n1 = static_cast<double>(x.count_label(1));
  const double n0 = static_cast<double>(x.count_label(0));

  std::vector<double> f(x.n_features, 0.0);
  for (std::size_t j = 0; j < x.n_features; ++j) {
    bool constant = true;
    double sum0 = 0.0, sum1 = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double v = x.at(s, j);
      if (v != x.at(0, j)) constant = false;
      (x.labels[s] == 1 ? sum1 : sum0) += v;
    }
    if (constant) continue;
    const double m0 = sum0 / n0;
    const double m1 = sum1 / n1;
    const double m = (sum0 + sum1) / static_cast<double>(n);
    const double ssb = n0 * (m0 - m) * (m0 - m) + n1 * (m1 - m) * (m1 - m);
    double ssw = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double d = x.at(s, j) - (x.labels[s] == 1 ? m1 : m0);
      ssw += d * d;
    }
    if (ssw == 0.0) {
      f[j] = ssb > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    } else {
      f[j] = (ssb / 1.0) / (ssw / static_cast<double>(n - 2));
    }
  }
  return f;
}

std::vector<std::size_t> top_f_columns(std::span<const double> f, std::size_t count) {
  std::vector<std::size_t> cols(f.size());
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  std::stable_sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) { return f[a] > f[b]; });
  if (count != 0 && count < cols.size()) cols.resize(count);
  return cols;
}

NormalizerStats fit_normalizer(const FeatureMatrix& train) {
  train.validate();
  if (train.n_samples == 0) throw InvalidArgument("fit_normalizer: no samples");
  NormalizerStats st;
  st.sigma.assign(train.n_features, 0.0);
  const double n = static_cast<double>(train.n_samples);
  for (std::size_t j = 0; j < train.n_features; ++j) {
    double sum = 0.0;
    for (std::size_t s = 0; s < train.n_samples; ++s) sum += train.at(s, j);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t s = 0; s < train.n_samples; ++s) {
      const double d = train.at(s, j) - mean;
      ss += d * d;
    }
    st.sigma[j] = std::sqrt(ss / n);
  }
  return st;
}

double normalize_value(double x, double sigma) noexcept {
  return sigma > 0.0 ? x / (10.0 * sigma) : 0.0;
}

FeatureMatrix normalize(const FeatureMatrix& x, const NormalizerStats& stats) {
  if (stats.sigma.size() != x.n_features) {
    throw InvalidArgument(fmt::format("normalizer has {} features, matrix has {}",
                                      stats.sigma.size(), x.n_features));
  }
  FeatureMatrix out = x;
  for (std::size_t s = 0; s < x.n_samples; ++s) {
    for (std::size_t j = 0; j < x.n_features; ++j) {
      out.values[s * x.n_features + j] = normalize_value(x.at(s, j), stats.sigma[j]);
    }
  }
  return out;
}

double ProbeModel::decision(std::span<const double> full_features) const {
  double z = bias;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const std::size_t f = feature_indices[j];
    if (f >= full_features.size()) {
      throw InvalidArgument(fmt::format("probe feature {} beyond input width {}", f,
                                        full_features.size()));
    }
    z += weights[j] * normalize_value(full_features[f], normalizer.sigma[j]);
  }
  return z;
}

std::size_t ProbeModel::nonzero_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(weights.begin(), weights.end(), [](double w) { return w != 0.0; }));
}

std::vector<double> balanced_sample_weights(std::span<const int> labels) {
  const double n = static_cast<double>(labels.size());
  const double n1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n0 = n - n1;
  if (n1 == 0.0 || n0 == 0.0) throw DataError("balanced weights need both classes");
  std::vector<double> s(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s[i] = n / (2.0 * (labels[i] == 1 ? n1 : n0));
  }
  return s;
}

LogisticLoss::LogisticLoss(const FeatureMatrix& x, std::vector<double> sample_weights)
    : x_(x), s_(std::move(sample_weights)) {
  if (s_.size() != x_.n_samples) throw InvalidArgument("sample weight count != sample count");
}

double LogisticLoss::value(std::span<const double> params) const {
  if (params.size() != n_params()) throw InvalidArgument("logistic loss: parameter size mismatch");
  const double b = params[x_.n_features];
  double total = 0.0;
  for (std::size_t i = 0; i < x_.n_samples; ++i) {
    double z = b;
    const auto row = x_.row(i);
    for (std::size_t j = 0; j < x_.n_features; ++j) z += params[j] * row[j];
    total += s_[i] * (numerics::softplus(z) - x_.labels[i] * z);
  }
  return total / static_cast<double>(x_.n_samples);
}

double LogisticLoss::value_and_gradient(std::span<const double> params,
                                        std::span<double> grad) const {
  if (params.size() != n_params() || grad.size() != n_params()) {
    throw InvalidArgument("logistic loss: parameter size mismatch");
  }
  const std::size_t F = x_.n_features;
  const double n = static_cast<double>(x_.n_samples);
  std::fill(grad.begin(), grad.end(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < x_.n_samples; ++i) {
    double z = params[F];
    const auto row = x_.row(i);
    for (std::size_t j = 0; j < F; ++j) z += params[j] * row[j];
    const double y = x_.labels[i];
    total += s_[i] * (numerics::softplus(z) - y * z);
    const double r = s_[i] * (numerics::sigmoid(z) - y);
    for (std::size_t j = 0; j < F; ++j) grad[j] += r * row[j];
    grad[F] += r;
  }
  for (double& g : grad) g /= n;
  return total / n;
}

namespace {

double l1(std::span<const double> params, std::size_t n_weights) {
  double s = 0.0;
  for (std::size_t j = 0; j < n_weights; ++j) s += std::abs(params[j]);
  return s;
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace

FitResult fit_l1_logistic(const FeatureMatrix& x, const FitOptions& opts) {
  x.validate();
  require_both_classes(x, "fit_l1_logistic");
  if (!(opts.lambda > 0.0) || !std::isfinite(opts.lambda)) {
    throw InvalidArgument(fmt::format("fit_l1_logistic: lambda must be > 0, got {}", opts.lambda));
  }
  const std::size_t F = x.n_features;
  std::vector<double> s = opts.balanced ? balanced_sample_weights(x.labels)
                                        : std::vector<double>(x.n_samples, 1.0);
  const LogisticLoss loss(x, std::move(s));

  std::vector<double> theta(F + 1, 0.0), grad(F + 1), next(F + 1);
  double f = loss.value_and_gradient(theta, grad);
  double obj = f + opts.lambda * l1(theta, F);
  FitResult result;
  result.report.objective.push_back(obj);
  double step = 1.0;
  constexpr double kMaxStep = 1e6;
  constexpr double kMinStep = 1e-14;

  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    step = std::min(step * 2.0, kMaxStep);
    double f_next = 0.0;
    while (true) {
      for (std::size_t j = 0; j < F; ++j) {
        next[j] = soft_threshold(theta[j] - step * grad[j], step * opts.lambda);
      }
      next[F] = theta[F] - step * grad[F];
      f_next = loss.value(next);
      double lin = 0.0, sq = 0.0;
      for (std::size_t j = 0; j <= F; ++j) {
        const double d = next[j] - theta[j];
        lin += grad[j] * d;
        sq += d * d;
      }
      if (f_next <= f + lin + sq / (2.0 * step)) break;
      step *= 0.5;
      if (step < kMinStep) {
        next = theta;
        f_next = f;
        break;
      }
    }
    double max_delta = 0.0;
    for (std::size_t j = 0; j <= F; ++j) max_delta = std::max(max_delta, std::abs(next[j] - theta[j]));
    const double obj_next = f_next + opts.lambda * l1(next, F);
    if (!std::isfinite(obj_next)) throw DataError("fit_l1_logistic: non-finite objective");
    // Guard against round-off in the sufficient-decrease test.
    if (obj_next > obj) {
      result.report.objective.push_back(obj);
      result.report.iterations = it + 1;
      result.report.converged = true;
      break;
    }
    theta.swap(next);
    obj = obj_next;
    result.report.objective.push_back(obj);
    result.report.iterations = it + 1;
    if (max_delta <= opts.tolerance) {
      result.report.converged = true;
      break;
    }
    f = loss.value_and_gradient(theta, grad);
  }

  result.model.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(F));
  result.model.bias = theta[F];
  result.model.lambda = opts.lambda;
  result.model.feature_indices = x.feature_index;
  return result;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("auroc: score/label count mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    // Ranks i+1..j+1 share their average.
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      } else if (labels[order[k]] != 0) {
        throw InvalidArgument("auroc: labels must be 0 or 1");
      }
    }
    i = j + 1;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auroc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed) {
  if (folds < 2) throw InvalidArgument("stratified_folds: need at least 2 folds");
  std::vector<std::size_t> fold(labels.size(), 0);
  const numerics::SeededRng root(seed, numerics::stream_id_of("cv.folds"));
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(i);
    }
    if (idx.size() < folds) {
      throw DataError(fmt::format("class {} has {} samples, fewer than {} folds", cls, idx.size(),
                                  folds));
    }
    auto rng = root.derive(static_cast<std::uint64_t>(cls));
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
      std::swap(idx[i - 1], idx[j]);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = k % folds;
  }
  return fold;
}

namespace {

struct Pipeline {
  std::vector<std::size_t> columns;
  NormalizerStats stats;
  FitResult fit;
};

Pipeline fit_pipeline(const FeatureMatrix& raw, double lambda, std::size_t max_iter,
                      std::size_t feature_count) {
  Pipeline p;
  if (feature_count != 0 && feature_count < raw.n_features) {
    p.columns = top_f_columns(f_statistic(raw), feature_count);
  } else {
    p.columns.resize(raw.n_features);
    std::iota(p.columns.begin(), p.columns.end(), std::size_t{0});
  }
  const auto sel = select_columns(raw, p.columns);
  p.stats = fit_normalizer(sel);
  FitOptions fo;
  fo.lambda = lambda;
  fo.max_iter = max_iter;
  p.fit = fit_l1_logistic(normalize(sel, p.stats), fo);
  p.fit.model.normalizer = p.stats;
  return p;
}

}  // namespace

ProbeModel fit_probe(const FeatureMatrix& raw, double lambda, std::size_t max_iter,
                     std::size_t feature_count) {
  raw.validate();
  return fit_pipeline(raw, lambda, max_iter, feature_count).fit.model;
}

CvResult cross_validate(const FeatureMatrix& raw, const CvConfig& cfg) {
  raw.validate();
  if (cfg.lambdas.empty()) throw InvalidArgument("cross_validate: empty lambda grid");
  const auto fold = stratified_folds(raw.labels, cfg.folds, cfg.seed);
  CvResult out;
  out.report.seed = cfg.seed;
  out.report.lambdas = cfg.lambdas;
  out.report.mean_auroc.assign(cfg.lambdas.size(), 0.0);

  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < raw.n_samples; ++i) (fold[i] == f ? test : train).push_back(i);
    const auto xtr = select_rows(raw, train);
    const auto xte = select_rows(raw, test);
    for (std::size_t li = 0; li < cfg.lambdas.size(); ++li) {
      const auto p = fit_pipeline(xtr, cfg.lambdas[li], cfg.max_iter, cfg.feature_count);
      std::vector<double> scores(xte.n_samples);
      for (std::size_t s = 0; s < xte.n_samples; ++s) {
        double z = p.fit.model.bias;
        for (std::size_t j = 0; j < p.columns.size(); ++j) {
          z += p.fit.model.weights[j] * normalize_value(xte.at(s, p.columns[j]), p.stats.sigma[j]);
        }
        scores[s] = z;
      }
      const double a = auroc(scores, xte.labels);
      out.report.rows.push_back({f, cfg.lambdas[li], a});
      out.report.mean_auroc[li] += a / static_cast<double>(cfg.folds);
    }
  }
  std::size_t best = 0;
  for (std::size_t li = 1; li < cfg.lambdas.size(); ++li) {
    if (out.report.mean_auroc[li] > out.report.mean_auroc[best]) best = li;
  }
  out.report.best_lambda = cfg.lambdas[best];
  out.report.best_mean_auroc = out.report.mean_auroc[best];
  out.model = fit_probe(raw, out.report.best_lambda, cfg.max_iter, cfg.feature_count);
  return out;
}

std::vector<double> probe_projection(const model::ActivationTrace& t, const ProbeModel& probe,
                                     bool unit_norm) {
  if (t.n_generated() == 0) throw InvalidArgument("probe_projection: trace has no generated tokens");
  if (probe.weights.size() != probe.feature_indices.size()) {
    throw InvalidArgument("probe_projection: weight and feature index counts differ");
  }
  const std::size_t width = t.n_layers * t.d_mlp;
  double scale = 1.0;
  if (unit_norm) {
    double sq = 0.0;
    for (double w : probe.weights) sq += w * w;
    if (sq > 0.0) scale = 1.0 / std::sqrt(sq);
  }
  std::vector<double> series(t.n_layers, 0.0);
  for (std::size_t j = 0; j < probe.weights.size(); ++j) {
    if (probe.feature_indices[j] >= width) {
      throw InvalidArgument(fmt::format("probe feature {} outside trace shape {} x {}",
                                        probe.feature_indices[j], t.n_layers, t.d_mlp));
    }
  }
  const double n_gen = static_cast<double>(t.n_generated());
  for (std::size_t j = 0; j < probe.weights.size(); ++j) {
    const std::size_t layer = probe.feature_indices[j] / t.d_mlp;
    const std::size_t neuron = probe.feature_indices[j] % t.d_mlp;
    double acc = 0.0;
    for (std::size_t tok = t.prompt_length; tok < t.n_tokens(); ++tok) {
      acc += t.activation(tok, layer, neuron);
    }
    series[layer] += probe.weights[j] * scale * (acc / n_gen);
  }
  return series;
}

}  // namespace steerlab::probe
