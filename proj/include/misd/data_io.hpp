#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "misd/augment.hpp"
#include "misd/core_model.hpp"
#include "misd/image.hpp"
#include "misd/metrics.hpp"

namespace misd {

struct ImageDataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  // Blob rectangles recorded by gen_synth; not persisted.
  std::vector<CropRect> foreground;

  std::size_t size() const noexcept { return images.size(); }
  int num_classes() const noexcept { return static_cast<int>(class_names.size()); }
};

/// Counts agree, labels in range, all images share one shape, pixels in [0, 1].
void validate(const ImageDataset& dataset);

enum class Provenance { unspecified, toy_encoder, external };

/// count x k view embeddings, sample-major. k == 1 holds full-image features.
struct EmbeddingDataset {
  int k = 1;
  int dim = 0;
  std::vector<Embedding> views;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  Provenance provenance = Provenance::unspecified;

  std::size_t count() const noexcept { return labels.size(); }
  int num_classes() const noexcept { return static_cast<int>(class_names.size()); }
  const Embedding& view(std::size_t sample, int j) const {
    return views.at(sample * static_cast<std::size_t>(k) + static_cast<std::size_t>(j));
  }
  ViewSet view_set(std::size_t sample) const;
};

void validate(const EmbeddingDataset& dataset);

struct SynthConfig {
  int image_size = 32;
  int channels = 3;
  double noise_amplitude = 0.25;
  std::uint64_t world_seed = 7;
};

/// Class names of the synthetic benchmark: concept_00, concept_01, ...
std::vector<std::string> synth_class_names(int num_classes);

/// Each image: uniform [0, noise_amplitude) background plus the class's
/// concept blob (side image_size/2) at a uniformly random position.
/// Samples are ordered class by class.
ImageDataset gen_synth(int num_classes, int per_class, std::uint64_t seed,
                       const SynthConfig& config = {});

/// Embeds one image: k == 1 encodes it uncropped, otherwise k random crops
/// drawn from the stream (seed, "crops", sample_id).
ViewSet embed_views(const Image& image, std::size_t sample_id, int label,
                    const VisionEncoder& encoder, const CropConfig& crops, std::uint64_t seed);

EmbeddingDataset embed_dataset(const ImageDataset& dataset, const VisionEncoder& encoder,
                               const CropConfig& crops, std::uint64_t seed);

// Binary files are little-endian with u16 length-prefixed UTF-8 class names.
//   MISDEMB1: u32 count, k, d, C; f32[count*k*d]; u32 labels[count]; names[C]
//   MISDIMG1: u32 count, H, W, Ch, C; f32[count*H*W*Ch]; u32 labels[count]; names[C]

void write_embeddings(const std::filesystem::path& path, const EmbeddingDataset& dataset);
EmbeddingDataset read_embeddings(const std::filesystem::path& path);

void write_images(const std::filesystem::path& path, const ImageDataset& dataset);
ImageDataset read_images(const std::filesystem::path& path);

/// Parsed scores file. Three-column files fill `predictions`; the two-column
/// `confidence,correct` variant fills `outcomes` only.
struct ScoresFile {
  bool binary = false;
  std::vector<ScoredPrediction> predictions;
  std::vector<Outcome> outcomes;
};

void write_scores(const std::filesystem::path& path, std::span<const ScoredPrediction> preds);
void write_binary_scores(const std::filesystem::path& path, std::span<const Outcome> outcomes);
ScoresFile parse_scores(std::string_view text);
ScoresFile read_scores(const std::filesystem::path& path);

/// Report as an indented JSON document; empty metrics are null.
std::string report_to_json(const MisDReport& report);
MisDReport report_from_json(std::string_view text);
void write_report(const std::filesystem::path& path, const MisDReport& report);
MisDReport read_report(const std::filesystem::path& path);

std::string report_csv_header();
/// acc,fpr95,aurc,e_aurc,auroc,aupr_s,aupr_e with NA for empty fields.
std::string report_csv_row(const MisDReport& report);

// Small file helpers shared by the writers.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace misd
