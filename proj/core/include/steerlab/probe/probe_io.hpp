#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "steerlab/probe/probe.hpp"

namespace steerlab::probe {

inline constexpr char kProbeFormat[] = "steerlab.probe";
inline constexpr std::uint32_t kProbeVersion = 1;

// {format, version, feature_indices, weights, bias, lambda, sigma,
//  scale_rule:"10sigma"}
std::string probe_to_json(const ProbeModel& m);
ProbeModel probe_from_json(std::string_view text);

void save_probe(const std::filesystem::path& path, const ProbeModel& m);
ProbeModel load_probe(const std::filesystem::path& path);

// Header "fold,lambda,auroc", one row per (fold, lambda) in evaluation order.
std::string cv_report_csv(const CvReport& r);

}  // namespace steerlab::probe
