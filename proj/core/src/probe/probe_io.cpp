#include "steerlab/probe/probe_io.hpp"

#include <cmath>

#include <fmt/format.h>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/io/binary.hpp"

namespace steerlab::probe {

using nlohmann::json;

std::string probe_to_json(const ProbeModel& m) {
  json j;
  j["format"] = kProbeFormat;
  j["version"] = kProbeVersion;
  j["feature_indices"] = m.feature_indices;
  j["weights"] = m.weights;
  j["bias"] = m.bias;
  j["lambda"] = m.lambda;
  j["sigma"] = m.normalizer.sigma;
  j["scale_rule"] = m.normalizer.scale_rule;
  return j.dump(2) + "\n";
}

ProbeModel probe_from_json(std::string_view text) {
  ProbeModel m;
  try {
    const json j = json::parse(text);
    io::check_header("probe", j.at("format").get<std::string>(), kProbeFormat,
                     j.at("version").get<std::uint32_t>(), kProbeVersion);
    m.feature_indices = j.at("feature_indices").get<std::vector<std::size_t>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.lambda = j.at("lambda").get<double>();
    m.normalizer.sigma = j.at("sigma").get<std::vector<double>>();
    m.normalizer.scale_rule = j.at("scale_rule").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed probe file: {}", e.what()));
  }
  if (m.normalizer.scale_rule != "10sigma") {
    throw FormatError(fmt::format("unsupported probe scale rule \"{}\"", m.normalizer.scale_rule));
  }
  if (m.weights.size() != m.feature_indices.size() || m.normalizer.sigma.size() != m.weights.size()) {
    throw FormatError("probe file: feature_indices, weights and sigma lengths differ");
  }
  for (double w : m.weights) {
    if (!std::isfinite(w)) throw FormatError("probe file: non-finite weight");
  }
  return m;
}

void save_probe(const std::filesystem::path& path, const ProbeModel& m) {
  io::write_text(path, probe_to_json(m));
}

ProbeModel load_probe(const std::filesystem::path& path) {
  return probe_from_json(io::read_text(path));
}

std::string cv_report_csv(const CvReport& r) {
  std::string out = "fold,lambda,auroc\n";
  for (const auto& row : r.rows) out += fmt::format("{},{},{}\n", row.fold, row.lambda, row.auroc);
  return out;
}

}  // namespace steerlab::probe
