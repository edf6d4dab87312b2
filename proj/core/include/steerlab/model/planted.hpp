#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "steerlab/model/config.hpp"
#include "steerlab/model/steering.hpp"

namespace steerlab::model {

// Token and residual-coordinate layout of planted-circuit models.
//   tokens: 0 start, 1 correct answer, 2 wrong answer, then one
//           (clean, corrupt) prompt-token pair per instance slot
//   coordinates: 0 constant one, 1 prompt polarity, 2 answer sign,
//                3 answer-token flag, 4 answer readout, 5 norm filler
//                (keeps every prompt token at the same norm), 6.. free
struct PlantedLayout {
  static constexpr TokenId kStart = 0;
  static constexpr TokenId kCorrect = 1;
  static constexpr TokenId kWrong = 2;
  static constexpr std::size_t kOne = 0;
  static constexpr std::size_t kPolarity = 1;
  static constexpr std::size_t kAnswer = 2;
  static constexpr std::size_t kIsAnswer = 3;
  static constexpr std::size_t kOut = 4;
  static constexpr std::size_t kFill = 5;
  static constexpr std::size_t kMinDModel = 6;

  static TokenId clean_token(std::size_t slot) noexcept { return static_cast<TokenId>(3 + 2 * slot); }
  static TokenId corrupt_token(std::size_t slot) noexcept { return static_cast<TokenId>(4 + 2 * slot); }
  static std::size_t capacity(std::size_t vocab_size) noexcept {
    return vocab_size < 3 ? 0 : (vocab_size - 3) / 2;
  }
};

struct PlantedOptions {
  // Prompt polarity magnitude per instance slot (> 0). Empty: every slot the
  // vocabulary allows, magnitude 1.
  std::vector<double> polarity;
  // Median logit gap (correct - wrong) on clean prompts; sets how often
  // temperature-1 sampling flips the answer.
  double sampling_gap = 2.0;
  // Answer-token weight of planted neurons relative to the largest polarity.
  // Larger values raise the steering scores and lower alpha_star.
  double answer_gain = 4.0;

  // Decoys pass the sign-flip test with scores decoy_strength times the
  // planted ones but push the readout the wrong way.
  std::size_t n_decoys = 0;
  double decoy_strength = 0.4;

  // Last-layer neuron that cancels and reverses the readout once it exceeds
  // harm_threshold times the largest unsteered clean readout.
  bool harm = false;
  double harm_threshold = 1.25;
  double harm_gain = 4.0;

  std::uint64_t seed = 0;
};

struct PlantedModel {
  Weights weights;
  std::vector<NeuronId> planted;   // sorted
  std::vector<NeuronId> decoys;    // sorted
  std::optional<NeuronId> harm;
  std::vector<double> polarity;    // per slot
  double margin = 0.0;
  // Smallest alpha (up to a 1e-4 relative margin) at which the md steering
  // spec fixes every corrupt prompt.
  double alpha_star = 0.0;
  SteeringSpec reference_steering;  // md spec from the builder's own pair, alpha = alpha_star

  std::size_t n_slots() const noexcept { return polarity.size(); }
  std::vector<TokenId> prompt(std::size_t slot, bool corrupt) const;
  static bool judge(std::span<const TokenId> generated) noexcept {
    return !generated.empty() && generated.front() == PlantedLayout::kCorrect;
  }
};

// Throws InvalidArgument for an empty/duplicate/out-of-range planted set,
// d_model below the layout minimum, or a vocabulary too small for the slots.
PlantedModel build_planted_model(const ModelConfig& cfg, std::span<const NeuronId> planted,
                                 double margin, const PlantedOptions& opts = {});

}  // namespace steerlab::model
