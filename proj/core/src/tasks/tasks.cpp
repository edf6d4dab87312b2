#include "steerlab/tasks/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/io/binary.hpp"
#include "steerlab/model/planted.hpp"
#include "steerlab/model/transformer.hpp"
#include "steerlab/numerics/rng.hpp"

namespace steerlab::tasks {

using model::NeuronId;
using model::TokenId;
using nlohmann::json;

std::string_view to_string(World w) noexcept {
  switch (w) {
    case World::planted: return "planted";
    case World::mixed_harm: return "mixed_harm";
    case World::arithmetic: return "arithmetic";
  }
  return "planted";
}

World world_from_string(std::string_view s) {
  if (s == "planted") return World::planted;
  if (s == "mixed_harm") return World::mixed_harm;
  if (s == "arithmetic") return World::arithmetic;
  throw InvalidArgument(fmt::format("unknown task world \"{}\"", s));
}

const TaskInstance& TaskSuite::by_id(std::uint64_t id) const {
  for (const auto& inst : instances) {
    if (inst.id == id) return inst;
  }
  throw InvalidArgument(fmt::format("suite \"{}\" has no instance {}", name, id));
}

std::vector<TaskInstance> TaskSuite::select(std::span<const std::uint64_t> ids) const {
  std::vector<TaskInstance> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(by_id(id));
  return out;
}

namespace {

// k distinct values of [0, n), in draw order.
std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, numerics::SeededRng rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

void check_counts(std::size_t n_planted, std::size_t n_instances, double corrupt_rate,
                  std::size_t pool) {
  if (n_planted == 0) throw InvalidArgument("planted count must be >= 1");
  if (n_planted > pool) {
    throw InvalidArgument(
        fmt::format("{} planted neurons requested, model has {} eligible", n_planted, pool));
  }
  if (n_instances == 0) throw InvalidArgument("suite needs at least one instance");
  if (!(corrupt_rate >= 0.0 && corrupt_rate <= 1.0)) {
    throw InvalidArgument(fmt::format("corrupt_rate must be in [0, 1], got {}", corrupt_rate));
  }
}

std::vector<bool> corrupt_mask(std::size_t n, double rate, numerics::SeededRng rng) {
  const auto n_corrupt = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  std::vector<bool> mask(n, false);
  for (auto i : sample_distinct(n, n_corrupt, rng)) mask[i] = true;
  return mask;
}

BuiltSuite finish_planted(model::PlantedModel pm, const std::vector<bool>& corrupt, World world,
                          std::uint64_t seed, double corrupt_rate, std::string name) {
  BuiltSuite out;
  auto& s = out.suite;
  s.name = std::move(name);
  s.model_file = "model.bin";
  for (std::size_t j = 0; j < corrupt.size(); ++j) {
    TaskInstance inst;
    inst.id = j;
    inst.prompt = pm.prompt(j, corrupt[j]);
    inst.answer = {model::PlantedLayout::kCorrect};
    inst.variant = corrupt[j] ? "corrupt" : "clean";
    s.instances.push_back(std::move(inst));
  }
  s.metadata.world = world;
  s.metadata.seed = seed;
  s.metadata.planted = pm.planted;
  s.metadata.decoys = pm.decoys;
  s.metadata.harm = pm.harm;
  s.metadata.alpha_star = pm.alpha_star;
  s.metadata.margin = pm.margin;
  s.metadata.corrupt_rate = corrupt_rate;
  out.weights = std::move(pm.weights);
  return out;
}

}  // namespace

BuiltSuite make_planted_suite(const model::ModelConfig& cfg, std::size_t n_planted,
                              std::size_t n_instances, double corrupt_rate, std::uint64_t seed,
                              const PlantedSuiteOptions& opts) {
  cfg.validate();
  check_counts(n_planted, n_instances, corrupt_rate, cfg.n_neurons());
  const numerics::SeededRng rng(seed, numerics::stream_id_of("tasks.planted"));

  std::vector<NeuronId> planted;
  for (auto f : sample_distinct(cfg.n_neurons(), n_planted, rng.derive("neurons"))) {
    planted.push_back(NeuronId::from_flat(f, cfg.d_mlp));
  }
  const auto corrupt = corrupt_mask(n_instances, corrupt_rate, rng.derive("corrupt"));

  // Slot polarities evenly spread over [0.75, 1.25], shuffled.
  model::PlantedOptions po;
  po.polarity.resize(n_instances);
  const auto order = sample_distinct(n_instances, n_instances, rng.derive("polarity"));
  for (std::size_t i = 0; i < n_instances; ++i) {
    po.polarity[order[i]] = 0.75 + 0.5 * (static_cast<double>(i) + 0.5) / static_cast<double>(n_instances);
  }
  po.sampling_gap = opts.sampling_gap;
  po.answer_gain = opts.answer_gain;
  po.seed = seed;
  auto pm = model::build_planted_model(cfg, planted, opts.margin, po);
  return finish_planted(std::move(pm), corrupt, World::planted, seed, corrupt_rate,
                        fmt::format("planted-p{}-n{}-s{}", n_planted, n_instances, seed));
}

BuiltSuite make_mixed_harm_suite(const model::ModelConfig& cfg, std::size_t n_planted,
                                 std::size_t n_instances, double corrupt_rate, std::uint64_t seed,
                                 const MixedHarmOptions& opts) {
  cfg.validate();
  if (cfg.n_layers < 2) throw InvalidArgument("mixed-harm suites need at least 2 layers");
  // Planted neurons stay out of the last layer so the harm neuron sees them.
  const std::size_t pool = (cfg.n_layers - 1) * cfg.d_mlp;
  check_counts(n_planted, n_instances, corrupt_rate, pool);
  const numerics::SeededRng rng(seed, numerics::stream_id_of("tasks.mixed_harm"));

  std::vector<NeuronId> planted;
  for (auto f : sample_distinct(pool, n_planted, rng.derive("neurons"))) {
    planted.push_back(NeuronId::from_flat(f, cfg.d_mlp));
  }
  const auto corrupt = corrupt_mask(n_instances, corrupt_rate, rng.derive("corrupt"));

  // Polarity density 2(1.5 - p) on [0.5, 1.5]: most prompts are weak, a few
  // strong clean ones sit close to the harm threshold. Clean and corrupt
  // slots each receive the full quantile ladder, shuffled.
  model::PlantedOptions po;
  po.polarity.resize(n_instances);
  for (bool c : {false, true}) {
    std::vector<std::size_t> slots;
    for (std::size_t j = 0; j < n_instances; ++j) {
      if (corrupt[j] == c) slots.push_back(j);
    }
    const auto order = sample_distinct(slots.size(), slots.size(), rng.derive("polarity", c ? 1 : 0));
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(slots.size());
      po.polarity[slots[order[i]]] = 0.5 + (1.0 - std::sqrt(1.0 - u));
    }
  }
  po.sampling_gap = opts.sampling_gap;
  po.answer_gain = opts.answer_gain;
  po.n_decoys = opts.decoys_per_planted * n_planted;
  po.decoy_strength = opts.decoy_strength;
  po.harm = true;
  po.harm_threshold = opts.harm_threshold;
  po.harm_gain = opts.harm_gain;
  po.seed = seed;
  auto pm = model::build_planted_model(cfg, planted, opts.margin, po);
  return finish_planted(std::move(pm), corrupt, World::mixed_harm, seed, corrupt_rate,
                        fmt::format("mixed-harm-p{}-n{}-s{}", n_planted, n_instances, seed));
}

// Arithmetic layout, M = modulus:
//   tokens: A_a = a, B_b = M + b, EQ = 2M, R_r = 2M + 1 + r
//   coordinates: 0 one, 1.. operand a, M+1.. operand b, 2M+1 eq flag,
//                2M+2.. copied a, 3M+2.. copied b, 4M+2.. result class
namespace {

struct ArithLayout {
  std::size_t m;
  TokenId a_tok(std::size_t a) const { return static_cast<TokenId>(a); }
  TokenId b_tok(std::size_t b) const { return static_cast<TokenId>(m + b); }
  TokenId eq_tok() const { return static_cast<TokenId>(2 * m); }
  TokenId r_tok(std::size_t r) const { return static_cast<TokenId>(2 * m + 1 + r); }
  std::size_t a_in(std::size_t a) const { return 1 + a; }
  std::size_t b_in(std::size_t b) const { return 1 + m + b; }
  std::size_t eq() const { return 2 * m + 1; }
  std::size_t a_cp(std::size_t a) const { return 2 * m + 2 + a; }
  std::size_t b_cp(std::size_t b) const { return 3 * m + 2 + b; }
  std::size_t cls(std::size_t r) const { return 4 * m + 2 + r; }
  std::size_t d_model() const { return 5 * m + 2; }
};

constexpr double kAndGate = 10.0;

}  // namespace

model::ModelConfig arithmetic_model_config(const ArithmeticConfig& cfg) {
  if (cfg.modulus < 2) throw InvalidArgument("arithmetic modulus must be >= 2");
  if (cfg.n_layers == 0) throw InvalidArgument("arithmetic model needs at least one layer");
  const ArithLayout L{cfg.modulus};
  model::ModelConfig mc;
  mc.n_layers = cfg.n_layers;
  mc.d_model = L.d_model();
  mc.d_mlp = cfg.modulus * cfg.modulus;
  mc.n_heads = 1;
  mc.vocab_size = 3 * cfg.modulus + 1;
  mc.max_seq = 8;
  return mc;
}

BuiltSuite make_arithmetic_suite(const ArithmeticConfig& cfg) {
  if (cfg.n_instances == 0) throw InvalidArgument("suite needs at least one instance");
  if (!(cfg.noise_level >= 0.0) || !std::isfinite(cfg.noise_level)) {
    throw InvalidArgument("noise_level must be finite and >= 0");
  }
  if (!(cfg.logit_scale > 0.0)) throw InvalidArgument("logit_scale must be > 0");
  const auto mc = arithmetic_model_config(cfg);
  const ArithLayout L{cfg.modulus};
  const std::size_t m = cfg.modulus;
  const double d = static_cast<double>(mc.d_model);
  const numerics::SeededRng rng(cfg.seed, numerics::stream_id_of("tasks.arithmetic"));

  auto w = model::Weights::zeros(mc);
  for (std::size_t t = 0; t < mc.vocab_size; ++t) w.token_embedding(t, 0) = 1.0f;
  for (std::size_t a = 0; a < m; ++a) {
    w.token_embedding(L.a_tok(a), L.a_in(a)) = 1.0f;
    w.token_embedding(L.b_tok(a), L.b_in(a)) = 1.0f;
  }
  w.token_embedding(L.eq_tok(), L.eq()) = 1.0f;

  // Operand tokens normalize to s on their one-hot coordinate; the EQ
  // position averages three tokens, so each copied operand arrives as s / 3.
  const double s = 1.0 / std::sqrt(2.0 / d + model::kNormEps);
  const double eq_w = s;
  const double thr = eq_w + s / 2.0;
  const double eq_rms = std::sqrt((2.0 + 2.0 * (s / 3.0) * (s / 3.0)) / d + model::kNormEps);
  const double k = kAndGate * eq_rms * 6.0 / s;

  auto& l0 = w.layers[0];
  for (std::size_t a = 0; a < m; ++a) {
    l0.wv(L.a_in(a), L.a_cp(a)) = 1.0f;
    l0.wv(L.b_in(a), L.b_cp(a)) = 1.0f;
  }
  l0.wo = model::Matrix::identity(mc.d_model);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      const std::size_t i = a * m + b;
      l0.w_gate(L.a_cp(a), i) = static_cast<float>(k);
      l0.w_gate(L.b_cp(b), i) = static_cast<float>(k);
      l0.w_gate(L.eq(), i) = static_cast<float>(k * eq_w);
      l0.w_gate(0, i) = static_cast<float>(-k * thr);
      l0.w_up(0, i) = static_cast<float>(eq_rms);
      l0.w_down(i, L.cls((a + b) % m)) = 1.0f;
    }
  }
  for (std::size_t r = 0; r < m; ++r) w.unembedding(L.cls(r), L.r_tok(r)) = 1.0f;

  // Calibrate the readout on the noise-free model: correct-class logit minus
  // the largest other logit equals logit_scale.
  {
    const std::vector<TokenId> probe{L.a_tok(0), L.b_tok(0), L.eq_tok()};
    const auto res = model::forward(w, probe);
    const auto last = res.logits.row(res.logits.rows() - 1);
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < mc.vocab_size; ++t) {
      if (t != L.r_tok(0)) other = std::max(other, static_cast<double>(last[t]));
    }
    const double gap = static_cast<double>(last[L.r_tok(0)]) - other;
    if (!(gap > 0.0)) throw std::logic_error("arithmetic construction failed: no readout gap");
    for (std::size_t r = 0; r < m; ++r) {
      w.unembedding(L.cls(r), L.r_tok(r)) = static_cast<float>(cfg.logit_scale / gap);
    }
  }

  if (cfg.noise_level > 0.0) {
    auto nrng = rng.derive("noise");
    for (auto& v : w.token_embedding.data()) {
      v = static_cast<float>(v + cfg.noise_level * nrng.normal());
    }
  }

  BuiltSuite out;
  auto& suite = out.suite;
  suite.name = fmt::format("arith-m{}-noise{}-s{}", m, cfg.noise_level, cfg.seed);
  suite.model_file = "model.bin";
  const std::size_t n_pairs = m * m;
  std::vector<std::size_t> order(n_pairs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto prng = rng.derive("instances");
  for (std::size_t i = 0; i < cfg.n_instances; ++i) {
    if (i % n_pairs == 0) {
      // Fresh shuffle per pass so small suites cover distinct operand pairs.
      for (std::size_t j = n_pairs; j > 1; --j) {
        std::swap(order[j - 1], order[static_cast<std::size_t>(prng.uniform_int(j))]);
      }
    }
    const std::size_t pair = order[i % n_pairs];
    const std::size_t a = pair / m, b = pair % m;
    TaskInstance inst;
    inst.id = i;
    inst.prompt = {L.a_tok(a), L.b_tok(b), L.eq_tok()};
    inst.answer = {L.r_tok((a + b) % m)};
    inst.variant = "arith";
    suite.instances.push_back(std::move(inst));
  }
  suite.metadata.world = World::arithmetic;
  suite.metadata.seed = cfg.seed;
  suite.metadata.modulus = m;
  suite.metadata.noise_level = cfg.noise_level;
  out.weights = std::move(w);
  return out;
}

std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitFractions& f) {
  double sum = 0.0;
  for (double v : f) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument(fmt::format("split fraction {} not in [0, 1]", v));
    sum += v;
  }
  if (sum > 1.0 + 1e-9) throw InvalidArgument(fmt::format("split fractions sum to {} > 1", sum));
  const double nd = static_cast<double>(n);
  std::array<std::size_t, 4> sizes{};
  std::array<double, 4> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double exact = f[i] * nd;
    // Guard against 0.15 * 100 = 14.999...
    const double fl = std::floor(exact + 1e-9);
    sizes[i] = static_cast<std::size_t>(fl);
    rem[i] = exact - fl;
    used += sizes[i];
  }
  const auto target = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(sum * nd)));
  std::array<std::size_t, 4> idx{0, 1, 2, 3};
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < target; k = (k + 1) % 4) {
    if (f[idx[k]] > 0.0) {
      ++sizes[idx[k]];
      ++used;
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (f[i] > 0.0 && sizes[i] == 0) {
      throw InvalidArgument(
          fmt::format("split fraction {} of {} instances leaves split {} empty", f[i], n, i));
    }
  }
  return sizes;
}

SuiteSplit split_suite(const TaskSuite& suite, const SplitFractions& f, std::uint64_t seed) {
  const std::size_t n = suite.instances.size();
  const auto sizes = split_sizes(n, f);
  const numerics::SeededRng rng(seed, numerics::stream_id_of("tasks.split"));

  std::map<std::string, std::vector<std::uint64_t>> strata;
  for (const auto& inst : suite.instances) strata[inst.variant].push_back(inst.id);
  struct Keyed {
    double key;
    std::size_t stratum;
    std::uint64_t id;
  };
  std::vector<Keyed> order;
  std::size_t si = 0;
  for (auto& [variant, ids] : strata) {
    auto srng = rng.derive(variant);
    for (std::size_t j = ids.size(); j > 1; --j) {
      std::swap(ids[j - 1], ids[static_cast<std::size_t>(srng.uniform_int(j))]);
    }
    for (std::size_t r = 0; r < ids.size(); ++r) {
      order.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(ids.size()), si, ids[r]});
    }
    ++si;
  }
  std::stable_sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    return a.key != b.key ? a.key < b.key : a.stratum < b.stratum;
  });

  SuiteSplit out;
  out.seed = seed;
  std::vector<std::uint64_t>* dst[4] = {&out.probe, &out.gate_train, &out.gate_val, &out.test};
  std::size_t pos = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < sizes[i]; ++c) dst[i]->push_back(order[pos++].id);
    std::sort(dst[i]->begin(), dst[i]->end());
  }
  return out;
}

namespace {

json neurons_json(const std::vector<NeuronId>& ids) {
  json a = json::array();
  for (const auto& id : ids) a.push_back({id.layer, id.neuron});
  return a;
}

std::vector<NeuronId> neurons_from(const json& a) {
  std::vector<NeuronId> out;
  for (const auto& e : a) out.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>()});
  return out;
}

}  // namespace

std::string suite_to_json(const TaskSuite& s) {
  json j;
  j["name"] = s.name;
  j["model_file"] = s.model_file;
  json insts = json::array();
  for (const auto& inst : s.instances) {
    insts.push_back({{"id", inst.id},
                     {"prompt_tokens", inst.prompt},
                     {"answer_tokens", inst.answer},
                     {"variant", inst.variant}});
  }
  j["instances"] = std::move(insts);
  const auto& m = s.metadata;
  json meta;
  meta["world"] = std::string(to_string(m.world));
  meta["seed"] = m.seed;
  if (m.world == World::arithmetic) {
    meta["modulus"] = m.modulus;
    meta["noise_level"] = m.noise_level;
  } else {
    meta["planted"] = neurons_json(m.planted);
    meta["decoys"] = neurons_json(m.decoys);
    meta["harm"] = m.harm ? json{m.harm->layer, m.harm->neuron} : json(nullptr);
    meta["alpha_star"] = m.alpha_star;
    meta["margin"] = m.margin;
    meta["corrupt_rate"] = m.corrupt_rate;
  }
  j["metadata"] = std::move(meta);
  return j.dump(2) + "\n";
}

TaskSuite suite_from_json(std::string_view text) {
  TaskSuite s;
  try {
    const json j = json::parse(text);
    s.name = j.at("name").get<std::string>();
    s.model_file = j.at("model_file").get<std::string>();
    for (const auto& e : j.at("instances")) {
      TaskInstance inst;
      inst.id = e.at("id").get<std::uint64_t>();
      inst.prompt = e.at("prompt_tokens").get<std::vector<TokenId>>();
      inst.answer = e.at("answer_tokens").get<std::vector<TokenId>>();
      inst.variant = e.value("variant", std::string{});
      s.instances.push_back(std::move(inst));
    }
    const auto& meta = j.at("metadata");
    auto& m = s.metadata;
    m.world = world_from_string(meta.at("world").get<std::string>());
    m.seed = meta.at("seed").get<std::uint64_t>();
    if (m.world == World::arithmetic) {
      m.modulus = meta.at("modulus").get<std::size_t>();
      m.noise_level = meta.at("noise_level").get<double>();
    } else {
      m.planted = neurons_from(meta.at("planted"));
      m.decoys = neurons_from(meta.at("decoys"));
      if (!meta.at("harm").is_null()) {
        m.harm = NeuronId{meta["harm"].at(0).get<std::uint32_t>(), meta["harm"].at(1).get<std::uint32_t>()};
      }
      m.alpha_star = meta.at("alpha_star").get<double>();
      m.margin = meta.at("margin").get<double>();
      m.corrupt_rate = meta.at("corrupt_rate").get<double>();
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed suite file: {}", e.what()));
  } catch (const InvalidArgument& e) {
    throw FormatError(fmt::format("malformed suite file: {}", e.what()));
  }
  std::vector<std::uint64_t> ids;
  for (const auto& inst : s.instances) {
    if (inst.prompt.empty() || inst.answer.empty()) {
      throw FormatError(fmt::format("suite instance {} has an empty prompt or answer", inst.id));
    }
    ids.push_back(inst.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw FormatError("suite file has duplicate instance ids");
  }
  return s;
}

void save_suite(const std::filesystem::path& path, const TaskSuite& s) {
  io::write_text(path, suite_to_json(s));
}

TaskSuite load_suite(const std::filesystem::path& path) { return suite_from_json(io::read_text(path)); }

std::string split_to_json(const SuiteSplit& s) {
  json j;
  j["probe"] = s.probe;
  j["gate_train"] = s.gate_train;
  j["gate_val"] = s.gate_val;
  j["test"] = s.test;
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

SuiteSplit split_from_json(std::string_view text) {
  SuiteSplit s;
  try {
    const json j = json::parse(text);
    s.probe = j.at("probe").get<std::vector<std::uint64_t>>();
    s.gate_train = j.at("gate_train").get<std::vector<std::uint64_t>>();
    s.gate_val = j.at("gate_val").get<std::vector<std::uint64_t>>();
    s.test = j.at("test").get<std::vector<std::uint64_t>>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed split file: {}", e.what()));
  }
  return s;
}

void save_split(const std::filesystem::path& path, const SuiteSplit& s) {
  io::write_text(path, split_to_json(s));
}

SuiteSplit load_split(const std::filesystem::path& path) { return split_from_json(io::read_text(path)); }

}  // namespace steerlab::tasks
