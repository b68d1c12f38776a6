#include "misd/model_io.hpp"

#include <charconv>

#include "misd/errors.hpp"

#ifndef MISD_VERSION
#define MISD_VERSION "0.0.0"
#endif

namespace misd {
namespace {

using ojson = nlohmann::ordered_json;

constexpr int kModelFormatVersion = 1;

ojson vec_json(const Eigen::VectorXd& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

ojson tokens_json(const std::vector<TokenEmbedding>& tokens) {
  ojson a = ojson::array();
  for (const auto& t : tokens) a.push_back(vec_json(t));
  return a;
}

Eigen::VectorXd vec_from(const nlohmann::json& j, Eigen::Index expected, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != expected) {
    throw FormatError(std::string("model file: ") + what + " must be an array of " +
                      std::to_string(expected) + " numbers");
  }
  Eigen::VectorXd v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

std::vector<TokenEmbedding> tokens_from(const nlohmann::json& j, std::size_t count,
                                        Eigen::Index dim, const char* what) {
  if (!j.is_array() || j.size() != count) {
    throw FormatError(std::string("model file: ") + what + " must hold " + std::to_string(count) +
                      " tokens");
  }
  std::vector<TokenEmbedding> out;
  for (const auto& t : j) out.push_back(vec_from(t, dim, what));
  return out;
}

std::string_view schedule_name(CropSchedule s) {
  return s == CropSchedule::adaptive ? "adaptive" : "static";
}

CropSchedule schedule_from(const std::string& name) {
  if (name == "adaptive") return CropSchedule::adaptive;
  if (name == "static") return CropSchedule::fixed;
  throw FormatError("unknown crop schedule '" + name + "'");
}

std::string num(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

ojson to_json(const BackboneConfig& c) {
  ojson j;
  j["embed_dim"] = c.embed_dim;
  j["token_dim"] = c.token_dim;
  j["context_length"] = c.context_length;
  j["image_size"] = c.vision.image_size;
  j["patch_size"] = c.vision.patch_size;
  j["channels"] = c.vision.channels;
  j["position_mix"] = c.position_mix;
  j["vision_bias"] = c.vision_bias;
  j["seed"] = c.seed;
  j["world_seed"] = c.world_seed;
  j["background_level"] = c.background_level;
  j["grounding_scale"] = c.grounding_scale;
  return j;
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.token_dim = j.at("token_dim").get<int>();
  c.context_length = j.at("context_length").get<int>();
  c.vision.image_size = j.at("image_size").get<int>();
  c.vision.patch_size = j.at("patch_size").get<int>();
  c.vision.channels = j.at("channels").get<int>();
  c.position_mix = j.at("position_mix").get<double>();
  c.vision_bias = j.at("vision_bias").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.world_seed = j.at("world_seed").get<std::uint64_t>();
  c.background_level = j.at("background_level").get<double>();
  c.grounding_scale = j.at("grounding_scale").get<double>();
  return c;
}

ojson to_json(const TrainConfig& c) {
  ojson j;
  j["shots"] = c.shots;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["lr_schedule"] = "cosine";
  j["momentum"] = c.momentum;
  j["lambda_neg"] = c.lambda_neg;
  j["lambda_orth"] = c.lambda_orth;
  j["temperature"] = c.temperature;
  j["context_length"] = c.context_length;
  j["negative_prompts"] = c.negative_prompts;
  j["crops"] = c.crops.k;
  j["crop_area"] = {c.crops.area_min, c.crops.area_max};
  j["crop_aspect"] = {c.crops.aspect_min, c.crops.aspect_max};
  j["crop_schedule"] = schedule_name(c.crops.schedule);
  j["augment"] = to_string(c.augment);
  j["neg_mode"] = to_string(c.negative_mode);
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.shots = j.at("shots").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.lambda_neg = j.at("lambda_neg").get<double>();
  c.lambda_orth = j.at("lambda_orth").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.context_length = j.at("context_length").get<int>();
  c.negative_prompts = j.at("negative_prompts").get<int>();
  c.crops.k = j.at("crops").get<int>();
  c.crops.area_min = j.at("crop_area").at(0).get<double>();
  c.crops.area_max = j.at("crop_area").at(1).get<double>();
  c.crops.aspect_min = j.at("crop_aspect").at(0).get<double>();
  c.crops.aspect_max = j.at("crop_aspect").at(1).get<double>();
  c.crops.schedule = schedule_from(j.at("crop_schedule").get<std::string>());
  c.augment = parse_augment_strategy(j.at("augment").get<std::string>());
  c.negative_mode = parse_negative_mode(j.at("neg_mode").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string model_to_json(const TrainedModel& m) {
  ojson j;
  j["format"] = "misd-model";
  j["version"] = kModelFormatVersion;
  j["backbone"] = to_json(m.backbone->config);
  j["train"] = to_json(m.config);
  j["class_names"] = m.bank.class_names;
  j["class_context"] = tokens_json(m.bank.class_context);
  j["class_tokens"] = tokens_json(m.bank.class_tokens);
  j["null_token"] = vec_json(m.bank.null_token);
  ojson negs = ojson::array();
  for (const auto& ctx : m.bank.negative_contexts) negs.push_back(tokens_json(ctx));
  j["negative_contexts"] = std::move(negs);
  return j.dump(1) + "\n";
}

TrainedModel model_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  TrainedModel m;
  try {
    if (j.value("format", "") != "misd-model") throw FormatError("not a misd model file");
    if (j.at("version").get<int>() != kModelFormatVersion) {
      throw FormatError("unsupported model format version");
    }
    m.backbone = Backbone::create(backbone_config_from_json(j.at("backbone")));
    m.config = train_config_from_json(j.at("train"));
    const Eigen::Index dt = m.backbone->config.token_dim;
    const auto L = static_cast<std::size_t>(m.backbone->config.context_length);
    m.bank.class_names = j.at("class_names").get<std::vector<std::string>>();
    const std::size_t C = m.bank.class_names.size();
    if (C < 2) throw FormatError("model file: fewer than two classes");
    m.bank.class_context = tokens_from(j.at("class_context"), L, dt, "class_context");
    m.bank.class_tokens = tokens_from(j.at("class_tokens"), C, dt, "class_tokens");
    m.bank.null_token = vec_from(j.at("null_token"), dt, "null_token");
    const auto& negs = j.at("negative_contexts");
    if (!negs.is_array() || negs.empty()) {
      throw FormatError("model file: negative_contexts must be a nonempty array");
    }
    for (const auto& ctx : negs) {
      m.bank.negative_contexts.push_back(tokens_from(ctx, L, dt, "negative_contexts"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model file holds an invalid config: ") + e.what());
  }
  m.refresh_features();
  return m;
}

void write_model(const std::filesystem::path& path, const TrainedModel& model) {
  write_text_file(path, model_to_json(model));
}

TrainedModel read_model(const std::filesystem::path& path) {
  return model_from_json(read_text_file(path));
}

std::string loss_trace_csv(const std::vector<EpochRecord>& trace) {
  std::string out = "epoch,lr,ce,neg,orth,total\n";
  for (const auto& r : trace) {
    out += std::to_string(r.epoch) + "," + num(r.lr) + "," + num(r.loss.ce) + "," +
           num(r.loss.neg) + "," + num(r.loss.orth) + "," + num(r.loss.total) + "\n";
  }
  return out;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochRecord>& trace) {
  write_text_file(path, loss_trace_csv(trace));
}

std::string manifest_to_json(const RunManifest& m) {
  ojson j;
  j["command"] = m.command;
  j["engine_version"] = engine_version();
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["wall_time_seconds"] = m.wall_time_seconds;
  return j.dump(2) + "\n";
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  write_text_file(path, manifest_to_json(manifest));
}

std::string_view engine_version() noexcept { return MISD_VERSION; }

}  // namespace misd
