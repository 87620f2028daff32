#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coco/fields.hpp"
#include "coco/rendering.hpp"

#include "json.hpp"

namespace coco {

struct CodebookConfig {
  enum class Source { kFile, kSynth, kPatch, kLearnable };
  Source source = Source::kSynth;
  std::string path;
  int entries = 16384;
  int dim = 256;
  uint64_t seed = 0;
  bool normalize = false;
};

struct TrainConfig {
  int rays_per_batch = 1024;  // K
  double learning_rate = 5e-4;
  double lambda_eik = 0.1;
  int steps = 20000;
  uint64_t seed = 0;
  bool mask_loss = false;
  double mask_loss_weight = 0.1;
  int checkpoint_every = 1000;
  int threads = 0;  // 0 -> hardware concurrency
  std::string precision = "float32";
};

struct EvalConfig {
  std::string split = "test";
};

// One declarative run document. Defaults are the reference configuration;
// unknown keys are rejected and every violation is reported at once.
struct RunConfig {
  std::string scene_dir;
  std::string out_dir;
  CodebookConfig codebook;
  ModelConfig model;
  SamplingConfig sampling;
  TrainConfig train;
  EvalConfig eval;
  nlohmann::json document;  // merged, validated document (checkpoint snapshot)
};

nlohmann::json default_run_config_json();

// Parses and validates a document merged over the defaults. Throws
// config_error listing every problem.
RunConfig parse_run_config(const nlohmann::json& doc);

// Reads a JSON file and applies dotted-path overrides ("train.steps=500",
// "codebook.synth.E=1024") before parsing.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Applies one dotted-path override to a document; values parse as JSON when
// possible and fall back to strings.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Builds the prior codebook named by the config (loading, synthesizing or
// clustering scene patches).
Codebook make_codebook(const CodebookConfig& cfg, const Scene* scene);

}  // namespace coco
