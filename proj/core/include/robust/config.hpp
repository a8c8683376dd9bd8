#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "robust/trainer.hpp"

namespace robust {

// Config files are sectioned `key = value` text where every value is a JSON
// literal. `#` starts a comment line.
//
//   [experiment]   name, method, methods, alpha, epochs, batch_size,
//                  learning_rate, hidden, seeds, corruption_levels,
//                  eval_draws, record_wall_ms, output_dir
//   [perturbation] noise_scale, linf_bound, step_size, inner_steps,
//                  init_sigma, probe_xi, pdm_samples, kl_direction,
//                  vat_detach_clean
//   [tat]          divergence, tally_smoothing, tally_momentum
//   [dataset]      generator, n_points, n_features, n_classes, noise, seed,
//                  resample_per_seed, shift_rotation_deg, shift_translation,
//                  shift_noise
//   [method.<m>]   any experiment/perturbation/tat key, applied when the
//                  sweep runs method m
//
// Unknown sections or keys are errors. The parsed config is validated.

/// `source` names the input in error messages.
TrainConfig parse_config(std::string_view text, std::string_view source = "<config>");
/// Throws std::runtime_error naming the path if it cannot be read.
TrainConfig load_config(const std::filesystem::path& path);
/// Every field, in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const TrainConfig& cfg);

/// cfg with `method` selected and its [method.<m>] overrides applied.
TrainConfig for_method(const TrainConfig& cfg, Method method);

}  // namespace robust
