#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "mgvq/trainer.hpp"

namespace mgvq {

// Plain-text configuration: one `key = value` per line, `#` starts a comment.
// Keys: learning_rate weight_decay beta1 beta2 adam_eps batch_size steps seed
// downsample latent_dim hidden_dim depth groups codebook_size mask_probs
// (comma separated) lambda1..lambda6 epsilon image_size eval_every.
void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value);
// "key=value"
void apply_assignment(TrainConfig& cfg, std::string_view assignment);
void apply_config_text(TrainConfig& cfg, std::string_view text);
TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});

}  // namespace mgvq
