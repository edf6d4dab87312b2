#include "steerlab/gate/gate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/io/binary.hpp"
#include "steerlab/numerics/ops.hpp"
#include "steerlab/numerics/optim.hpp"
#include "steerlab/probe/probe.hpp"

namespace steerlab::gate {

using nlohmann::json;

void GateConfig::validate() const {
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw InvalidArgument(fmt::format("gate dropout must be in [0, 1), got {}", dropout));
  }
  if (patience > max_epochs) throw InvalidArgument("gate patience exceeds max epochs");
  if (feature_count == 0 || hidden == 0 || batch_size == 0 || max_epochs == 0) {
    throw InvalidArgument("gate feature count, hidden width, batch size and epochs must be >= 1");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InvalidArgument(fmt::format("gate threshold must be in [0, 1], got {}", threshold));
  }
}

std::size_t GateModel::n_parameters() const noexcept {
  return query.size() + w1.size() + b1.size() + w2.size() + 1;
}

std::vector<double> GateModel::parameters() const {
  std::vector<double> p;
  p.reserve(n_parameters());
  p.insert(p.end(), query.begin(), query.end());
  p.insert(p.end(), w1.begin(), w1.end());
  p.insert(p.end(), b1.begin(), b1.end());
  p.insert(p.end(), w2.begin(), w2.end());
  p.push_back(b2);
  return p;
}

void GateModel::set_parameters(std::span<const double> p) {
  if (p.size() != n_parameters()) throw InvalidArgument("gate parameter vector has wrong length");
  auto it = p.begin();
  for (auto* v : {&query, &w1, &b1, &w2}) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
    it += static_cast<std::ptrdiff_t>(v->size());
  }
  b2 = *it;
}

void GateModel::validate() const {
  const std::size_t F = query.size();
  if (F == 0 || hidden == 0) throw InvalidArgument("gate model has zero width");
  if (feature_indices.size() != F || sigma.size() != F || w1.size() != hidden * F ||
      b1.size() != hidden || w2.size() != hidden) {
    throw InvalidArgument(fmt::format("gate model shapes inconsistent (F = {}, H = {})", F, hidden));
  }
  for (double v : parameters()) {
    if (!std::isfinite(v)) throw InvalidArgument("gate model has non-finite parameters");
  }
}

GateModel init_gate(std::vector<std::size_t> feature_indices, std::vector<double> sigma,
                    std::size_t hidden, std::uint64_t seed) {
  const std::size_t F = feature_indices.size();
  if (F == 0 || hidden == 0) throw InvalidArgument("init_gate: zero width");
  GateModel m;
  m.feature_indices = std::move(feature_indices);
  m.sigma = std::move(sigma);
  m.hidden = hidden;
  numerics::SeededRng rng(seed, numerics::stream_id_of("gate.init"));
  const auto uniform = [&](double bound) { return (2.0 * rng.uniform() - 1.0) * bound; };
  const double in1 = 1.0 / std::sqrt(static_cast<double>(F));
  const double in2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  m.query.resize(F);
  for (double& q : m.query) q = uniform(in1);
  m.w1.resize(hidden * F);
  for (double& w : m.w1) w = uniform(in1);
  m.b1.resize(hidden);
  for (double& b : m.b1) b = uniform(in1);
  m.w2.resize(hidden);
  for (double& w : m.w2) w = uniform(in2);
  m.b2 = uniform(in2);
  m.validate();
  return m;
}

namespace {

std::vector<double> prompt_means(const model::ActivationTrace& t) {
  if (t.prompt_length == 0) throw InvalidArgument("gate features need a non-empty prompt");
  const std::size_t width = t.n_layers * t.d_mlp;
  std::vector<double> m(width, 0.0);
  for (std::size_t tok = 0; tok < t.prompt_length; ++tok) {
    for (std::size_t l = 0; l < t.n_layers; ++l) {
      const auto row = t.activation_row(tok, l);
      for (std::size_t i = 0; i < t.d_mlp; ++i) m[l * t.d_mlp + i] += row[i];
    }
  }
  for (double& v : m) v /= static_cast<double>(t.prompt_length);
  return m;
}

}  // namespace

FeatureSelection select_gate_features(std::span<const model::ActivationTrace> traces,
                                      std::span<const int> labels, std::size_t count) {
  if (traces.empty() || traces.size() != labels.size()) {
    throw InvalidArgument("select_gate_features: need one label per trace");
  }
  const std::size_t width = traces.front().n_layers * traces.front().d_mlp;
  probe::FeatureMatrix x;
  x.n_samples = traces.size();
  x.n_features = width;
  x.labels.assign(labels.begin(), labels.end());
  x.feature_index.resize(width);
  std::iota(x.feature_index.begin(), x.feature_index.end(), std::size_t{0});
  for (const auto& t : traces) {
    if (t.n_layers * t.d_mlp != width) throw InvalidArgument("select_gate_features: shape mismatch");
    const auto m = prompt_means(t);
    x.values.insert(x.values.end(), m.begin(), m.end());
  }
  FeatureSelection sel;
  sel.indices = probe::top_f_columns(probe::f_statistic(x), std::min(count, width));

  // Sigma over every prompt-token row of the training traces.
  const std::size_t F = sel.indices.size();
  std::vector<double> sum(F, 0.0), sq(F, 0.0);
  std::size_t rows = 0;
  for (const auto& t : traces) {
    const auto raw = gate_features(t, sel.indices, {});
    for (std::size_t r = 0; r < raw.rows; ++r) {
      for (std::size_t j = 0; j < F; ++j) sum[j] += raw.values[r * F + j];
    }
    rows += raw.rows;
  }
  std::vector<double> mean(F);
  for (std::size_t j = 0; j < F; ++j) mean[j] = sum[j] / static_cast<double>(rows);
  for (const auto& t : traces) {
    const auto raw = gate_features(t, sel.indices, {});
    for (std::size_t r = 0; r < raw.rows; ++r) {
      for (std::size_t j = 0; j < F; ++j) {
        const double d = raw.values[r * F + j] - mean[j];
        sq[j] += d * d;
      }
    }
  }
  sel.sigma.resize(F);
  for (std::size_t j = 0; j < F; ++j) sel.sigma[j] = std::sqrt(sq[j] / static_cast<double>(rows));
  return sel;
}

TokenFeatures gate_features(const model::ActivationTrace& t, std::span<const std::size_t> indices,
                            std::span<const double> sigma) {
  if (t.prompt_length == 0) throw InvalidArgument("gate_features: empty prompt");
  if (!sigma.empty() && sigma.size() != indices.size()) {
    throw InvalidArgument("gate_features: sigma length differs from the index count");
  }
  const std::size_t width = t.n_layers * t.d_mlp;
  for (std::size_t f : indices) {
    if (f >= width) {
      throw InvalidArgument(fmt::format("gate feature {} (layer {}) out of range for {} x {}", f,
                                        f / std::max<std::size_t>(t.d_mlp, 1), t.n_layers, t.d_mlp));
    }
  }
  TokenFeatures out;
  out.rows = t.prompt_length;
  out.cols = indices.size();
  out.values.reserve(out.rows * out.cols);
  for (std::size_t tok = 0; tok < t.prompt_length; ++tok) {
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const double a = t.activation(tok, indices[j] / t.d_mlp, indices[j] % t.d_mlp);
      out.values.push_back(sigma.empty() ? a : probe::normalize_value(a, sigma[j]));
    }
  }
  return out;
}

std::size_t GateDataset::count_label(int label) const noexcept {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [&](const GateSample& s) { return s.label == label; }));
}

namespace {

struct Activations {
  std::vector<double> attn;    // T
  std::vector<double> pooled;  // F
  std::vector<double> pre;     // H, before ReLU
  std::vector<double> out;     // H, after ReLU and dropout
  double logit = 0.0;
};

void check_width(const GateModel& m, const TokenFeatures& f) {
  if (f.cols != m.width()) {
    throw InvalidArgument(
        fmt::format("gate input has {} features, model expects {}", f.cols, m.width()));
  }
  if (f.rows == 0) throw InvalidArgument("gate input has no token rows");
}

Activations run(const GateModel& m, const TokenFeatures& f, const std::vector<std::uint8_t>* keep,
                double dropout) {
  check_width(m, f);
  const std::size_t F = m.width();
  Activations a;
  std::vector<double> scores(f.rows);
  for (std::size_t t = 0; t < f.rows; ++t) {
    scores[t] = std::inner_product(m.query.begin(), m.query.end(), f.row(t).begin(), 0.0);
  }
  a.attn = numerics::softmax(scores, 1.0);
  a.pooled.assign(F, 0.0);
  for (std::size_t t = 0; t < f.rows; ++t) {
    const auto row = f.row(t);
    for (std::size_t j = 0; j < F; ++j) a.pooled[j] += a.attn[t] * row[j];
  }
  a.pre.resize(m.hidden);
  a.out.resize(m.hidden);
  const double scale = keep != nullptr ? 1.0 / (1.0 - dropout) : 1.0;
  a.logit = m.b2;
  for (std::size_t h = 0; h < m.hidden; ++h) {
    double u = m.b1[h];
    const double* w = m.w1.data() + h * F;
    for (std::size_t j = 0; j < F; ++j) u += w[j] * a.pooled[j];
    a.pre[h] = u;
    double v = u > 0.0 ? u : 0.0;
    if (keep != nullptr) v = (*keep)[h] ? v * scale : 0.0;
    a.out[h] = v;
    a.logit += m.w2[h] * v;
  }
  return a;
}

std::vector<std::uint8_t> draw_mask(std::size_t n, double dropout, numerics::SeededRng& rng) {
  std::vector<std::uint8_t> keep(n);
  for (auto& k : keep) k = rng.uniform() >= dropout ? 1 : 0;
  return keep;
}

double bce_with_logits(double z, int y) { return numerics::softplus(z) - y * z; }

}  // namespace

std::vector<double> pooling_weights(const GateModel& m, const TokenFeatures& f) {
  return run(m, f, nullptr, 0.0).attn;
}

double gate_logit(const GateModel& m, const TokenFeatures& f, bool training,
                  numerics::SeededRng* rng, double dropout) {
  if (!training) return run(m, f, nullptr, 0.0).logit;
  if (rng == nullptr) throw InvalidArgument("gate_logit: training mode needs an RNG");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must be in [0, 1)");
  const auto keep = draw_mask(m.hidden, dropout, *rng);
  return run(m, f, &keep, dropout).logit;
}

double gate_forward(const GateModel& m, const TokenFeatures& f, bool training,
                    numerics::SeededRng* rng, double dropout) {
  return numerics::sigmoid(gate_logit(m, f, training, rng, dropout));
}

double gate_loss(const GateModel& m, const TokenFeatures& f, int label) {
  return bce_with_logits(run(m, f, nullptr, 0.0).logit, label);
}

double gate_loss_and_gradient(const GateModel& m, const TokenFeatures& f, int label,
                              std::span<double> grad, const std::vector<std::uint8_t>* keep_mask,
                              double dropout) {
  if (grad.size() != m.n_parameters()) throw InvalidArgument("gate gradient buffer has wrong length");
  if (keep_mask != nullptr && keep_mask->size() != m.hidden) {
    throw InvalidArgument("dropout mask length differs from the hidden width");
  }
  const auto a = run(m, f, keep_mask, dropout);
  const std::size_t F = m.width();
  const std::size_t H = m.hidden;
  double* g_query = grad.data();
  double* g_w1 = g_query + F;
  double* g_b1 = g_w1 + H * F;
  double* g_w2 = g_b1 + H;
  double* g_b2 = g_w2 + H;
  std::fill(grad.begin(), grad.end(), 0.0);

  const double dz = numerics::sigmoid(a.logit) - label;
  *g_b2 = dz;
  const double scale = keep_mask != nullptr ? 1.0 / (1.0 - dropout) : 1.0;
  std::vector<double> d_pooled(F, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    g_w2[h] = dz * a.out[h];
    double du = dz * m.w2[h];
    if (keep_mask != nullptr) du = (*keep_mask)[h] ? du * scale : 0.0;
    if (!(a.pre[h] > 0.0)) du = 0.0;
    g_b1[h] = du;
    if (du == 0.0) continue;
    const double* w = m.w1.data() + h * F;
    double* gw = g_w1 + h * F;
    for (std::size_t j = 0; j < F; ++j) {
      gw[j] = du * a.pooled[j];
      d_pooled[j] += du * w[j];
    }
  }
  // Softmax backward through the pooling weights.
  std::vector<double> d_attn(f.rows);
  double weighted = 0.0;
  for (std::size_t t = 0; t < f.rows; ++t) {
    d_attn[t] = std::inner_product(d_pooled.begin(), d_pooled.end(), f.row(t).begin(), 0.0);
    weighted += a.attn[t] * d_attn[t];
  }
  for (std::size_t t = 0; t < f.rows; ++t) {
    const double ds = a.attn[t] * (d_attn[t] - weighted);
    const auto row = f.row(t);
    for (std::size_t j = 0; j < F; ++j) g_query[j] += ds * row[j];
  }
  return bce_with_logits(a.logit, label);
}

namespace {

struct Evaluation {
  double auroc = std::numeric_limits<double>::quiet_NaN();
  double loss = 0.0;
};

Evaluation evaluate(const GateModel& m, const GateDataset& data) {
  Evaluation e;
  if (data.samples.empty()) return e;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : data.samples) {
    const double z = run(m, s.features, nullptr, 0.0).logit;
    scores.push_back(z);
    labels.push_back(s.label);
    e.loss += bce_with_logits(z, s.label);
  }
  e.loss /= static_cast<double>(data.samples.size());
  if (data.count_label(0) > 0 && data.count_label(1) > 0) e.auroc = probe::auroc(scores, labels);
  return e;
}

}  // namespace

TrainResult train_gate(const GateDataset& train, const GateDataset& val, GateModel init,
                       const GateConfig& cfg) {
  cfg.validate();
  init.validate();
  if (train.count_label(0) == 0 || train.count_label(1) == 0) {
    throw DataError(fmt::format("train_gate: training set is single-class ({} steer, {} keep)",
                                train.count_label(1), train.count_label(0)));
  }
  for (const auto* set : {&train, &val}) {
    for (const auto& s : set->samples) check_width(init, s.features);
  }
  GateModel model = std::move(init);
  model.threshold = cfg.threshold;
  std::vector<double> params = model.parameters();
  auto adam = numerics::AdamState::for_size(params.size(), cfg.learning_rate, cfg.weight_decay);
  const numerics::SeededRng root(cfg.seed, numerics::stream_id_of("gate.train"));

  TrainResult result;
  GateModel best = model;
  Evaluation best_eval = evaluate(model, val);
  const bool val_ranked = !std::isnan(best_eval.auroc);
  std::size_t since_best = 0;
  std::vector<double> grad(params.size()), batch_grad(params.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto shuffle_rng = root.derive("shuffle", epoch);
    auto dropout_rng = root.derive("dropout", epoch);
    std::vector<std::size_t> order(train.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(i))]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = train.samples[order[b]];
        const auto keep = draw_mask(model.hidden, cfg.dropout, dropout_rng);
        epoch_loss += gate_loss_and_gradient(model, s.features, s.label, grad,
                                             cfg.dropout > 0.0 ? &keep : nullptr, cfg.dropout);
        for (std::size_t p = 0; p < grad.size(); ++p) batch_grad[p] += grad[p];
      }
      const double n = static_cast<double>(end - start);
      for (double& g : batch_grad) g /= n;
      numerics::adam_step(adam, params, batch_grad);
      model.set_parameters(params);
    }
    const auto ev = evaluate(model, val.samples.empty() ? train : val);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.val_auroc = ev.auroc;
    rec.val_loss = ev.loss;
    result.report.epochs.push_back(rec);

    bool improved = false;
    if (val_ranked && !val.samples.empty()) {
      improved = ev.auroc > best_eval.auroc ||
                 (ev.auroc == best_eval.auroc && ev.loss < best_eval.loss);
    } else {
      improved = ev.loss < best_eval.loss || result.report.best_epoch == 0;
    }
    if (improved) {
      best = model;
      best_eval = ev;
      result.report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.report.stopped_early = true;
      break;
    }
  }
  result.model = std::move(best);
  return result;
}

bool gate_decision(double p, double threshold) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw InvalidArgument(fmt::format("gate probability {} outside [0, 1]", p));
  }
  return p >= threshold;
}

std::string gate_to_json(const GateModel& m) {
  json j;
  j["format"] = kGateFormat;
  j["version"] = kGateVersion;
  j["feature_indices"] = m.feature_indices;
  j["sigma"] = m.sigma;
  j["query"] = m.query;
  j["w1"] = m.w1;
  j["w1_shape"] = {m.hidden, m.width()};
  j["b1"] = m.b1;
  j["w2"] = m.w2;
  j["b2"] = m.b2;
  j["threshold"] = m.threshold;
  return j.dump() + "\n";
}

GateModel gate_from_json(std::string_view text) {
  GateModel m;
  try {
    const json j = json::parse(text);
    io::check_header("gate", j.at("format").get<std::string>(), kGateFormat,
                     j.at("version").get<std::uint32_t>(), kGateVersion);
    m.feature_indices = j.at("feature_indices").get<std::vector<std::size_t>>();
    m.sigma = j.at("sigma").get<std::vector<double>>();
    m.query = j.at("query").get<std::vector<double>>();
    m.w1 = j.at("w1").get<std::vector<double>>();
    const auto shape = j.at("w1_shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[1] != m.query.size()) {
      throw FormatError("gate file: w1_shape does not match the query width");
    }
    m.hidden = shape[0];
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = j.at("w2").get<std::vector<double>>();
    m.b2 = j.at("b2").get<double>();
    m.threshold = j.at("threshold").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed gate file: {}", e.what()));
  }
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(fmt::format("gate file: {}", e.what()));
  }
  return m;
}

void save_gate(const std::filesystem::path& path, const GateModel& m) {
  io::write_text(path, gate_to_json(m));
}

GateModel load_gate(const std::filesystem::path& path) { return gate_from_json(io::read_text(path)); }

std::string gate_report_csv(const GateReport& r) {
  std::string out = "epoch,train_loss,val_auroc\n";
  for (const auto& e : r.epochs) {
    out += fmt::format("{},{},{}\n", e.epoch, e.train_loss, e.val_auroc);
  }
  return out;
}

}  // namespace steerlab::gate
