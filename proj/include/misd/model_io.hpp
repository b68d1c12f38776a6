#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "misd/trainer.hpp"

namespace misd {

// Model file: a JSON document holding the backbone config (the encoders are
// regenerated from it), the prompt bank and the training config. Doubles are
// written in shortest round-trip form, so save/load is lossless and two
// identical runs produce identical bytes.

nlohmann::ordered_json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

std::string model_to_json(const TrainedModel& model);
/// Rebuilds the backbone; throws FormatError on a malformed document.
TrainedModel model_from_json(std::string_view text);

void write_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel read_model(const std::filesystem::path& path);

/// epoch,lr,ce,neg,orth,total
std::string loss_trace_csv(const std::vector<EpochRecord>& trace);
void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochRecord>& trace);

/// Record of one command invocation. Only wall_time_seconds varies between
/// otherwise identical runs.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_time_seconds = 0.0;
};

std::string manifest_to_json(const RunManifest& manifest);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

std::string_view engine_version() noexcept;

}  // namespace misd
