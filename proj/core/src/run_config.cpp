#include "coco/run_config.hpp"

#include <fstream>

#include "coco/errors.hpp"

namespace coco {

using nlohmann::json;

json default_run_config_json() {
  return json{
      {"scene_dir", ""},
      {"out_dir", ""},
      {"codebook",
       {{"synth", {{"seed", 0}, {"E", 16384}, {"D", 256}}}, {"normalize", false}}},
      {"model",
       {{"widths", {{"model", 128}, {"hidden", 256}, {"ffn", 256}, {"feature", 256}}},
        {"num_queries", 256},
        {"heads", 4},
        {"L", 3},
        {"T_geometry", 1},
        {"T_appearance", 2},
        {"n_freq_pos", 6},
        {"n_freq_dir", 4},
        {"mlp_only", false},
        {"use_codebook_attention", true}}},
      {"sampling",
       {{"n_coarse", 64},
        {"n_fine", 64},
        {"n_background", 32},
        {"near", "auto"},
        {"far", "auto"},
        {"bg_far", 6.0},
        {"chunk_rays", 16}}},
      {"train",
       {{"K", 1024},
        {"lr", 0.0005},
        {"lambda_eik", 0.1},
        {"steps", 20000},
        {"seed", 0},
        {"mask_loss", false},
        {"checkpoint_every", 1000},
        {"threads", 0},
        {"precision", "float32"}}},
      {"eval", {{"split", "test"}}},
  };
}

namespace {

// Flags keys absent from the reference document. The codebook object is
// special-cased because exactly one source key may be present.
void collect_unknown_keys(const json& doc, const json& schema, const std::string& prefix,
                          std::vector<std::string>& errors) {
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) {
      errors.push_back("unknown key '" + path + "'");
      continue;
    }
    if (value.is_object() && schema[key].is_object()) {
      collect_unknown_keys(value, schema[key], path, errors);
    }
  }
}

template <class T>
T get_or(const json& doc, const char* key, T fallback) {
  return doc.contains(key) ? doc.at(key).get<T>() : fallback;
}

}  // namespace

RunConfig parse_run_config(const json& user_doc) {
  std::vector<std::string> errors;
  const json defaults = default_run_config_json();

  json schema = defaults;
  schema["codebook"] = json{{"file", json::object()},
                            {"synth", json::object()},
                            {"patch", json::object()},
                            {"learnable", json::object()},
                            {"normalize", false}};
  if (user_doc.is_object()) {
    json cb_schema = schema["codebook"];
    collect_unknown_keys(user_doc, schema, "", errors);
    if (user_doc.contains("codebook") && user_doc["codebook"].is_object()) {
      for (const auto& [key, value] : user_doc["codebook"].items()) {
        if (key == "normalize") continue;
        if (key == "file") {
          for (const auto& [k2, v2] : value.items()) {
            if (k2 != "path") errors.push_back("unknown key 'codebook.file." + k2 + "'");
          }
        } else if (key == "synth" || key == "patch" || key == "learnable") {
          for (const auto& [k2, v2] : value.items()) {
            if (k2 != "seed" && k2 != "E" && k2 != "D") {
              errors.push_back("unknown key 'codebook." + key + "." + k2 + "'");
            }
          }
        }
      }
    }
  } else {
    errors.push_back("config root must be a JSON object");
  }
  if (!errors.empty()) {
    std::string what = "config validation failed:";
    for (const auto& e : errors) what += "\n  - " + e;
    throw config_error(what);
  }

  // Merge defaults under the user document.
  json doc = defaults;
  doc.merge_patch(user_doc);
  if (user_doc.contains("codebook")) {
    // A user-chosen source replaces the default synth block entirely.
    json cb = user_doc["codebook"];
    int sources = 0;
    for (const char* k : {"file", "synth", "patch", "learnable"}) sources += cb.contains(k);
    if (sources > 1) errors.push_back("codebook: choose exactly one of file/synth/patch/learnable");
    if (sources == 1) {
      doc["codebook"] = cb;
      if (!cb.contains("normalize")) doc["codebook"]["normalize"] = false;
    }
  }

  RunConfig rc;
  rc.document = doc;
  try {
    rc.scene_dir = doc.at("scene_dir").get<std::string>();
    rc.out_dir = doc.at("out_dir").get<std::string>();

    const json& cb = doc.at("codebook");
    rc.codebook.normalize = get_or(cb, "normalize", false);
    if (cb.contains("file")) {
      rc.codebook.source = CodebookConfig::Source::kFile;
      rc.codebook.path = cb.at("file").at("path").get<std::string>();
    } else {
      const char* key = cb.contains("synth") ? "synth" : cb.contains("patch") ? "patch"
                                                                              : "learnable";
      rc.codebook.source = cb.contains("synth")   ? CodebookConfig::Source::kSynth
                           : cb.contains("patch") ? CodebookConfig::Source::kPatch
                                                  : CodebookConfig::Source::kLearnable;
      const json& src = cb.at(key);
      rc.codebook.seed = get_or<uint64_t>(src, "seed", 0);
      rc.codebook.entries = get_or(src, "E", 16384);
      rc.codebook.dim = get_or(src, "D", 256);
    }

    const json& model = doc.at("model");
    const json& widths = model.at("widths");
    rc.model.width = widths.at("model").get<int>();
    rc.model.hidden_width = widths.at("hidden").get<int>();
    rc.model.d_ff = widths.at("ffn").get<int>();
    rc.model.feature_dim = widths.at("feature").get<int>();
    rc.model.num_queries = model.at("num_queries").get<int>();
    rc.model.heads = model.at("heads").get<int>();
    rc.model.self_layers = model.at("L").get<int>();
    rc.model.t_geometry = model.at("T_geometry").get<int>();
    rc.model.t_appearance = model.at("T_appearance").get<int>();
    rc.model.n_freq_pos = model.at("n_freq_pos").get<int>();
    rc.model.n_freq_dir = model.at("n_freq_dir").get<int>();
    rc.model.mlp_only = model.at("mlp_only").get<bool>();
    rc.model.use_codebook_attention = model.at("use_codebook_attention").get<bool>();
    rc.model.learnable_codebook = rc.codebook.source == CodebookConfig::Source::kLearnable;
    rc.model.normalize_codebook = rc.codebook.normalize;

    const json& sampling = doc.at("sampling");
    rc.sampling.n_coarse = sampling.at("n_coarse").get<int>();
    rc.sampling.n_fine = sampling.at("n_fine").get<int>();
    rc.sampling.n_background = sampling.at("n_background").get<int>();
    rc.sampling.bg_far = sampling.at("bg_far").get<double>();
    rc.sampling.chunk_rays = sampling.at("chunk_rays").get<int>();
    const auto near = sampling.at("near");
    const auto far = sampling.at("far");
    const bool near_auto = near.is_string() && near.get<std::string>() == "auto";
    const bool far_auto = far.is_string() && far.get<std::string>() == "auto";
    if (near_auto != far_auto) {
      errors.push_back("sampling: near and far must both be numbers or both \"auto\"");
    } else if (!near_auto) {
      rc.sampling.near = near.get<double>();
      rc.sampling.far = far.get<double>();
      if (!(*rc.sampling.near >= 0.0 && *rc.sampling.near < *rc.sampling.far)) {
        errors.push_back("sampling: need 0 <= near < far");
      }
    }
    if (rc.sampling.n_coarse < 2) errors.push_back("sampling: n_coarse must be >= 2");
    if (rc.sampling.n_fine < 0) errors.push_back("sampling: n_fine must be >= 0");
    if (rc.sampling.chunk_rays < 1) errors.push_back("sampling: chunk_rays must be >= 1");

    const json& train = doc.at("train");
    rc.train.rays_per_batch = train.at("K").get<int>();
    rc.train.learning_rate = train.at("lr").get<double>();
    rc.train.lambda_eik = train.at("lambda_eik").get<double>();
    rc.train.steps = train.at("steps").get<int>();
    rc.train.seed = train.at("seed").get<uint64_t>();
    rc.train.mask_loss = train.at("mask_loss").get<bool>();
    rc.train.checkpoint_every = train.at("checkpoint_every").get<int>();
    rc.train.threads = train.at("threads").get<int>();
    rc.train.precision = train.at("precision").get<std::string>();
    if (rc.train.rays_per_batch < 1) errors.push_back("train: K must be >= 1");
    if (rc.train.learning_rate <= 0.0) errors.push_back("train: lr must be > 0");
    if (rc.train.lambda_eik < 0.0) errors.push_back("train: lambda_eik must be >= 0");
    if (rc.train.steps < 0) errors.push_back("train: steps must be >= 0");
    if (rc.train.precision != "float32" && rc.train.precision != "float64") {
      errors.push_back("train: precision must be float32 or float64");
    }

    rc.eval.split = doc.at("eval").at("split").get<std::string>();
    if (rc.eval.split != "train" && rc.eval.split != "test") {
      errors.push_back("eval: split must be train or test");
    }

    try {
      rc.model.validate();
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
    if (rc.codebook.entries < 1 || rc.codebook.dim < 1) {
      errors.push_back("codebook: E and D must be >= 1");
    }
  } catch (const json::exception& e) {
    errors.push_back(std::string("malformed value: ") + e.what());
  }

  if (!errors.empty()) {
    std::string what = "config validation failed:";
    for (const auto& e : errors) what += "\n  - " + e;
    throw config_error(what);
  }
  return rc;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw config_error("override '" + assignment + "' must look like path.to.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings pass through
  }

  json* at = &doc;
  size_t begin = 0;
  while (true) {
    const size_t dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (key.empty()) throw config_error("override '" + assignment + "': empty key segment");
    if (dot == std::string::npos) {
      (*at)[key] = value;
      break;
    }
    at = &(*at)[key];
    begin = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw io_error("load_run_config: cannot open '" + path + "'");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw config_error("load_run_config: bad JSON: " + std::string(e.what()));
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

Codebook make_codebook(const CodebookConfig& cfg, const Scene* scene) {
  switch (cfg.source) {
    case CodebookConfig::Source::kFile: {
      Codebook cb = load_codebook(cfg.path);
      return cb;
    }
    case CodebookConfig::Source::kSynth:
    case CodebookConfig::Source::kLearnable:
      return synthesize_codebook(cfg.seed, cfg.entries, cfg.dim);
    case CodebookConfig::Source::kPatch:
      if (!scene) throw invalid_argument("make_codebook: patch prior needs a scene");
      return patch_prior_codebook(*scene, cfg.entries, cfg.dim, cfg.seed);
  }
  throw invalid_argument("make_codebook: bad source");
}

}  // namespace coco
