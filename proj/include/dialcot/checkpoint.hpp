#pragma once

#include <string>

#include "dialcot/ppo.hpp"

namespace dialcot {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  PPOConfig config;
  int feature_dim = 0;
  PolicyNetwork<double> net;
  std::string rng_state;
  int update_counter = 0;
};

/// Binary container: "DCOTCKPT", u32 version, u64 header length, JSON header
/// (config, tensor shapes, rng state, update counter), then every tensor as
/// little-endian float64 in column-major order.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

/// Throws ShapeError when the stored tensors disagree with the stored config
/// or, if given, with `expected_k` / `expected_d`.
Checkpoint load_checkpoint(const std::string& path, int expected_k = -1, int expected_d = -1);

std::string ppo_config_to_json(const PPOConfig& config);

}  // namespace dialcot
