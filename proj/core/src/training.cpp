#include "coco/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "coco/errors.hpp"

namespace coco {

namespace fs = std::filesystem;
using nlohmann::json;

double rgb_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != 3 || gt.cols() != 3) {
    throw invalid_argument("rgb_loss: shapes must match and be K x 3");
  }
  return (pred - gt).cwiseAbs().sum() / double(pred.rows());
}

template <class S>
double eikonal_loss(const FieldModel<S>& model, const Eigen::MatrixXd& points) {
  if (points.rows() < 1) throw invalid_argument("eikonal_loss: empty point set");
  typename FieldModel<S>::Mat grad;
  model.eval_geometry(points.cast<S>(), nullptr, nullptr, &grad);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < grad.rows(); ++i) {
    const double n = grad.row(i).template cast<double>().norm();
    sum += (n - 1.0) * (n - 1.0);
  }
  return sum / double(grad.rows());
}

double total_loss(double rgb, double eik, double lambda) {
  if (lambda < 0.0) throw invalid_argument("total_loss: lambda must be >= 0");
  return rgb + lambda * eik;
}

double mask_loss(const Eigen::VectorXd& opacity, const std::vector<uint8_t>& gt_mask) {
  if (size_t(opacity.size()) != gt_mask.size()) {
    throw invalid_argument("mask_loss: size mismatch");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < opacity.size(); ++i) {
    const double o = std::clamp(opacity[i], 1e-5, 1.0 - 1e-5);
    sum += gt_mask[i] ? -std::log(o) : -std::log(1.0 - o);
  }
  return sum / double(opacity.size());
}

RayBatch sample_ray_batch(const Scene& scene, int rays, uint64_t seed, int64_t step) {
  if (scene.train_split.empty()) throw invalid_argument("sample_ray_batch: no training views");
  if (rays < 1) throw invalid_argument("sample_ray_batch: rays must be >= 1");

  Rng rng(derive_seed({seed, uint64_t(step), 0xBA7CULL}));
  std::set<uint64_t> chosen;
  RayBatch batch;
  batch.gt_colors.resize(rays, 3);
  const bool masked = scene.has_masks();
  if (masked) batch.gt_mask.reserve(rays);

  int64_t pool = 0;
  for (int v : scene.train_split) {
    pool += int64_t(scene.images[v].width) * scene.images[v].height;
  }
  if (pool < rays) throw invalid_argument("sample_ray_batch: batch larger than pixel pool");

  while (int(batch.rays.size()) < rays) {
    const int view = scene.train_split[rng.uniform_index(scene.train_split.size())];
    const ImageU8& img = scene.images[view];
    const int row = int(rng.uniform_index(uint64_t(img.height)));
    const int col = int(rng.uniform_index(uint64_t(img.width)));
    const uint64_t key = (uint64_t(view) << 40) | (uint64_t(row) << 20) | uint64_t(col);
    if (!chosen.insert(key).second) continue;  // without replacement within the step

    const int k = int(batch.rays.size());
    batch.rays.push_back(ray_through_pixel(scene.cameras[view], row, col, 0.0, 1.0));
    batch.ray_seeds.push_back(
        derive_seed({seed, uint64_t(step), uint64_t(view), uint64_t(row), uint64_t(col)}));
    batch.gt_colors.row(k) = img.get(row, col).transpose();
    if (masked) batch.gt_mask.push_back(scene.masks[view]->at(row, col) ? 1 : 0);
  }
  return batch;
}

template <class S>
TrainState<S>::TrainState(FieldModel<S> model, RenderSettings rsettings, TrainConfig tcfg,
                          json config_snapshot)
    : model_(std::move(model)),
      rsettings_(std::move(rsettings)),
      tcfg_(std::move(tcfg)),
      snapshot_(std::move(config_snapshot)) {
  adam_m_.reserve(model_.params.size());
  adam_v_.reserve(model_.params.size());
  for (const auto& p : model_.params.values) {
    adam_m_.push_back(FieldModel<S>::Mat::Zero(p.rows(), p.cols()));
    adam_v_.push_back(FieldModel<S>::Mat::Zero(p.rows(), p.cols()));
  }
}

template <class S>
StepMetrics TrainState<S>::train_step(const RayBatch& batch) {
  using Mat = typename ad::Tape<S>::Mat;
  const int K = int(batch.rays.size());
  if (K < 1) throw invalid_argument("train_step: empty batch");
  const bool use_mask = tcfg_.mask_loss && !batch.gt_mask.empty();

  // Prototypes are functions of learnable state only; compute them once per
  // step and route their adjoints back through this tape afterwards.
  ad::Tape<S> proto_tape;
  TapeBinder<S> proto_bind(proto_tape, model_.params);
  int pg_node = -1, pa_node = -1, pb_node = -1;
  Mat pg_val, pa_val, pb_val;
  if (!model_.config.mlp_only) {
    pg_node = model_.build_prototypes(proto_tape, proto_bind, model_.geometry_br);
    pa_node = model_.build_prototypes(proto_tape, proto_bind, model_.appearance_br);
    pg_val = proto_tape.val(pg_node);
    pa_val = proto_tape.val(pa_node);
    if (rsettings_.background_mode == BackgroundMode::kField && model_.background_br) {
      pb_node = model_.build_prototypes(proto_tape, proto_bind, model_.background_br->geo);
      pb_val = proto_tape.val(pb_node);
    }
  }

  const int chunk_rays = std::max(1, rsettings_.sampling.chunk_rays);
  const int n_chunks = (K + chunk_rays - 1) / chunk_rays;
  const int eik_per_chunk_scale = 1;  // ray samples + equal uniform draws
  (void)eik_per_chunk_scale;
  const double n_eik_total = 2.0 * double(K) * rsettings_.sampling.merged();

  int threads = tcfg_.threads > 0 ? tcfg_.threads
                                  : int(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n_chunks);

  struct WorkerAccum {
    std::vector<Mat> grads;       // parallel to params, lazily sized
    Mat proto_g, proto_a, proto_b;
    double l1_sum = 0.0;
    double eik_sum = 0.0;
    double bce_sum = 0.0;
    double sq_err = 0.0;  // for batch PSNR
    bool failed = false;
    std::string error;
  };
  std::vector<WorkerAccum> acc(threads);

  std::vector<Ray> bounded = batch.rays;
  for (auto& ray : bounded) assign_ray_bounds(ray, rsettings_);

  auto worker = [&](int tid) {
    WorkerAccum& a = acc[tid];
    a.grads.assign(model_.params.size(), Mat());
    try {
      for (int c = tid; c < n_chunks; c += threads) {
        const int begin = c * chunk_rays;
        const int count = std::min(chunk_rays, K - begin);

        ad::Tape<S> tape;
        TapeBinder<S> bind(tape, model_.params);
        int pg = -1, pa = -1, pb = -1;
        if (!model_.config.mlp_only) {
          pg = tape.leaf(pg_val, true);
          pa = tape.leaf(pa_val, true);
          if (pb_val.size() > 0) pb = tape.leaf(pb_val, true);
        }
        auto chunk = detail::build_render_chunk<S>(
            tape, bind, model_, rsettings_, std::span<const Ray>(bounded.data() + begin, count),
            std::span<const uint64_t>(batch.ray_seeds.data() + begin, count), pg, pa, pb, true);

        // L1 color term against the ground truth rows of this chunk.
        int l1 = -1;
        for (int ch = 0; ch < 3; ++ch) {
          Mat gt(count, 1);
          for (int r = 0; r < count; ++r) gt(r, 0) = S(batch.gt_colors(begin + r, ch));
          const int diff = tape.abs_(tape.sub(chunk.color[ch], tape.constant(std::move(gt))));
          const int sum = tape.total_sum(diff);
          l1 = l1 < 0 ? sum : tape.add(l1, sum);
        }

        int loss = tape.scale(l1, S(1.0 / K));
        if (tcfg_.lambda_eik > 0.0) {
          loss = tape.add(loss,
                          tape.scale(chunk.eik_sq_sum, S(tcfg_.lambda_eik / n_eik_total)));
        }
        if (use_mask) {
          Mat m(count, 1), m_inv(count, 1);
          for (int r = 0; r < count; ++r) {
            m(r, 0) = S(batch.gt_mask[begin + r] ? 1 : 0);
            m_inv(r, 0) = S(1) - m(r, 0);
          }
          const int o = tape.clamp(chunk.opacity, S(1e-5), S(1.0 - 1e-5));
          const int bce = tape.neg(
              tape.add(tape.mul(tape.constant(std::move(m)), tape.log_(o)),
                       tape.mul(tape.constant(std::move(m_inv)),
                                tape.log_(tape.add_scalar(tape.neg(o), S(1))))));
          const int bce_sum = tape.total_sum(bce);
          a.bce_sum += double(tape.val(bce_sum)(0, 0));
          loss = tape.add(loss, tape.scale(bce_sum, S(tcfg_.mask_loss_weight / K)));
        }

        a.l1_sum += double(tape.val(l1)(0, 0));
        a.eik_sum += double(tape.val(chunk.eik_sq_sum)(0, 0));
        for (int r = 0; r < count; ++r) {
          for (int ch = 0; ch < 3; ++ch) {
            const double d =
                double(chunk.colors(r, ch)) - batch.gt_colors(begin + r, ch);
            a.sq_err += d * d;
          }
        }

        ad::backward_values<S>(tape, loss, [&](int node, Mat& g) {
          auto it = bind.node_to_param.find(node);
          if (it != bind.node_to_param.end()) {
            Mat& slot = a.grads[it->second];
            if (slot.size() == 0) {
              slot = std::move(g);
            } else {
              slot += g;
            }
            return;
          }
          auto add_proto = [&](Mat& dst) {
            if (dst.size() == 0) {
              dst = std::move(g);
            } else {
              dst += g;
            }
          };
          if (node == pg) add_proto(a.proto_g);
          else if (node == pa) add_proto(a.proto_a);
          else if (node == pb) add_proto(a.proto_b);
          // The points leaf also arrives here; its gradient is not used.
        });
      }
    } catch (const std::exception& e) {
      a.failed = true;
      a.error = e.what();
    }
  };

  if (threads <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& a : acc) {
    if (a.failed) throw divergence_error("train_step: " + a.error);
  }

  // Deterministic reduction in thread order.
  std::vector<Mat> grads(model_.params.size());
  Mat proto_g, proto_a_m, proto_b_m;
  double l1_sum = 0.0, eik_sum = 0.0, bce_sum = 0.0, sq_err = 0.0;
  for (auto& a : acc) {
    for (size_t i = 0; i < grads.size(); ++i) {
      if (a.grads[i].size() == 0) continue;
      if (grads[i].size() == 0) {
        grads[i] = std::move(a.grads[i]);
      } else {
        grads[i] += a.grads[i];
      }
    }
    auto merge = [](Mat& dst, Mat& src) {
      if (src.size() == 0) return;
      if (dst.size() == 0) {
        dst = std::move(src);
      } else {
        dst += src;
      }
    };
    merge(proto_g, a.proto_g);
    merge(proto_a_m, a.proto_a);
    merge(proto_b_m, a.proto_b);
    l1_sum += a.l1_sum;
    eik_sum += a.eik_sum;
    bce_sum += a.bce_sum;
    sq_err += a.sq_err;
  }

  // Chain the accumulated prototype adjoints through the prototype tape.
  if (!model_.config.mlp_only) {
    int pseudo = -1;
    auto add_term = [&](int node, const Mat& adj) {
      if (node < 0 || adj.size() == 0) return;
      const int term = proto_tape.total_sum(proto_tape.mul(node, proto_tape.constant(adj)));
      pseudo = pseudo < 0 ? term : proto_tape.add(pseudo, term);
    };
    add_term(pg_node, proto_g);
    add_term(pa_node, proto_a_m);
    add_term(pb_node, proto_b_m);
    if (pseudo >= 0) {
      ad::backward_values<S>(proto_tape, pseudo, [&](int node, Mat& g) {
        auto it = proto_bind.node_to_param.find(node);
        if (it == proto_bind.node_to_param.end()) return;
        if (grads[it->second].size() == 0) {
          grads[it->second] = std::move(g);
        } else {
          grads[it->second] += g;
        }
      });
    }
  }

  StepMetrics metrics;
  metrics.rgb = l1_sum / K;
  metrics.eik = eik_sum / n_eik_total;
  metrics.mask = use_mask ? bce_sum / K : 0.0;
  metrics.loss = metrics.rgb + tcfg_.lambda_eik * metrics.eik +
                 (use_mask ? tcfg_.mask_loss_weight * metrics.mask : 0.0);
  const double mse = sq_err / (3.0 * K);
  metrics.batch_psnr = mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
  if (!std::isfinite(metrics.loss)) {
    throw divergence_error("train_step: non-finite loss (rgb=" + std::to_string(metrics.rgb) +
                           " eik=" + std::to_string(metrics.eik) +
                           " mask=" + std::to_string(metrics.mask) + ")");
  }

  // Adam with bias correction.
  step_ += 1;
  const double lr = tcfg_.learning_rate;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, double(step_));
  const double bc2 = 1.0 - std::pow(b2, double(step_));
  for (int i = 0; i < model_.params.size(); ++i) {
    if (!model_.params.trainable[i] || grads[i].size() == 0) continue;
    Mat& m = adam_m_[i];
    Mat& v = adam_v_[i];
    const Mat& g = grads[i];
    m = S(b1) * m + S(1.0 - b1) * g;
    v = (S(b2) * v.array() + S(1.0 - b2) * g.array().square()).matrix();
    const auto m_hat = m.array() / S(bc1);
    const auto v_hat = v.array() / S(bc2);
    model_.params.values[i].array() -= S(lr) * m_hat / (v_hat.sqrt() + S(eps));
  }
  return metrics;
}

// ---- checkpoint container ----
// "CKPT1\n", u32 version, u64 header length, JSON header, float32-LE payload.

namespace {

constexpr char kCkptMagic[6] = {'C', 'K', 'P', 'T', '1', '\n'};

}  // namespace

template <class S>
void TrainState<S>::save_checkpoint(const std::string& path) const {
  json header;
  header["version"] = 1;
  header["config"] = snapshot_;
  header["step"] = step_;
  header["rng_state"] = "counter:" + std::to_string(tcfg_.seed) + ":" + std::to_string(step_);
  header["arrays"] = json::array();

  int64_t offset = 0;
  auto describe = [&](const std::string& name, const auto& m) {
    header["arrays"].push_back({{"name", name},
                                {"rows", m.rows()},
                                {"cols", m.cols()},
                                {"offset", offset}});
    offset += int64_t(m.size());
  };
  for (int i = 0; i < model_.params.size(); ++i) {
    describe(model_.params.names[i], model_.params.values[i]);
  }
  for (int i = 0; i < model_.params.size(); ++i) {
    describe("adam.m:" + model_.params.names[i], adam_m_[i]);
  }
  for (int i = 0; i < model_.params.size(); ++i) {
    describe("adam.v:" + model_.params.names[i], adam_v_[i]);
  }

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("save_checkpoint: cannot open '" + path + "'");
  out.write(kCkptMagic, 6);
  const uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(header_str.data(), std::streamsize(header_str.size()));

  std::vector<float> row;
  auto dump_mat = [&](const auto& m) {
    row.resize(m.size());
    int at = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[at++] = float(m(r, c));
    }
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(4 * row.size()));
  };
  for (int i = 0; i < model_.params.size(); ++i) dump_mat(model_.params.values[i]);
  for (const auto& m : adam_m_) dump_mat(m);
  for (const auto& v : adam_v_) dump_mat(v);
  if (!out) throw io_error("save_checkpoint: write failed for '" + path + "'");
}

template <class S>
TrainState<S> TrainState<S>::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("load_checkpoint: cannot open '" + path + "'");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kCkptMagic, 6) != 0) {
    throw format_error("load_checkpoint: bad magic in '" + path + "'");
  }
  uint32_t version = 0;
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || version != 1) throw format_error("load_checkpoint: unsupported version");
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), std::streamsize(hlen));
  if (!in) throw format_error("load_checkpoint: truncated header");
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw format_error("load_checkpoint: bad header: " + std::string(e.what()));
  }

  RunConfig cfg = parse_run_config(header.at("config"));

  // Rebuild the model skeleton with a placeholder codebook of the stored
  // shape, then overwrite every parameter from the payload.
  int cb_E = 1, cb_D = 1;
  bool has_background = false;
  for (const auto& a : header.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    if (name == "codebook") {
      cb_E = a.at("rows").get<int>();
      cb_D = a.at("cols").get<int>();
    }
    if (name.rfind("background.", 0) == 0) has_background = true;
  }
  Codebook placeholder;
  placeholder.entries = Eigen::MatrixXf::Zero(cb_E, cb_D);
  placeholder.source_tag = "checkpoint";
  ModelConfig mc = cfg.model;
  mc.normalize_codebook = false;  // stored entries are already normalized
  mc.background_field = has_background;
  FieldModel<S> model(mc, placeholder, /*seed=*/cfg.train.seed);

  RenderSettings rs;
  rs.sampling = cfg.sampling;
  TrainState<S> state(std::move(model), rs, cfg.train, header.at("config"));
  state.step_ = header.at("step").get<int64_t>();

  std::vector<float> row;
  auto read_mat = [&](auto& m, const json& meta) {
    const int rows = meta.at("rows").get<int>();
    const int cols = meta.at("cols").get<int>();
    if (m.rows() != rows || m.cols() != cols) {
      throw format_error("load_checkpoint: shape mismatch for " +
                         meta.at("name").get<std::string>());
    }
    row.resize(size_t(rows) * cols);
    in.read(reinterpret_cast<char*>(row.data()), std::streamsize(4 * row.size()));
    if (!in) throw format_error("load_checkpoint: truncated payload");
    int at = 0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = S(row[at++]);
    }
  };
  for (const auto& meta : header.at("arrays")) {
    const std::string name = meta.at("name").get<std::string>();
    if (name.rfind("adam.m:", 0) == 0) {
      const int idx = state.model_.params.find(name.substr(7));
      if (idx < 0) throw format_error("load_checkpoint: unknown array " + name);
      read_mat(state.adam_m_[idx], meta);
    } else if (name.rfind("adam.v:", 0) == 0) {
      const int idx = state.model_.params.find(name.substr(7));
      if (idx < 0) throw format_error("load_checkpoint: unknown array " + name);
      read_mat(state.adam_v_[idx], meta);
    } else {
      const int idx = state.model_.params.find(name);
      if (idx < 0) throw format_error("load_checkpoint: unknown array " + name);
      read_mat(state.model_.params.values[idx], meta);
    }
  }
  return state;
}

// ---- fit loop ----

namespace {

struct LockFile {
  std::string path;
  explicit LockFile(const std::string& dir) : path(dir + "/.train.lock") {
    if (fs::exists(path)) {
      throw io_error("fit_scene: lock file exists (" + path +
                     "); another trainer owns this out_dir");
    }
    std::ofstream out(path);
    out << "locked\n";
  }
  ~LockFile() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

}  // namespace

template <class S>
FitResult fit_scene(const Scene& scene, const RunConfig& cfg, bool resume) {
  if (cfg.out_dir.empty()) throw invalid_argument("fit_scene: out_dir is required");
  fs::create_directories(cfg.out_dir);
  LockFile lock(cfg.out_dir);

  const std::string rolling = cfg.out_dir + "/checkpoint.ckpt";

  RenderSettings rs;
  rs.sampling = cfg.sampling;
  rs.background_mode = scene.background_mode;
  rs.background_color = scene.background_color;
  rs.scene_radius = scene.scene_radius;

  std::optional<TrainState<S>> state;
  if (resume && fs::exists(rolling)) {
    state = TrainState<S>::load_checkpoint(rolling);
    state->set_scene_settings(scene);
  } else {
    ModelConfig mc = cfg.model;
    mc.background_field = scene.background_mode == BackgroundMode::kField;
    Codebook prior = make_codebook(cfg.codebook, &scene);
    FieldModel<S> model = geometric_initialize<S>(mc, prior, 0.5 * scene.scene_radius,
                                                  cfg.train.seed);
    state.emplace(std::move(model), rs, cfg.train, cfg.document);
  }

  const bool resumed = resume && state->step() > 0;
  std::ofstream metrics_log(cfg.out_dir + "/metrics.jsonl",
                            resumed ? std::ios::app : std::ios::trunc);
  if (!metrics_log) throw io_error("fit_scene: cannot open metrics.jsonl");

  FitResult result;
  double reference_loss = 0.0;
  int divergent_streak = 0;
  for (int64_t s = state->step(); s < cfg.train.steps; ++s) {
    RayBatch batch = sample_ray_batch(scene, cfg.train.rays_per_batch, cfg.train.seed, s);
    const StepMetrics m = state->train_step(batch);
    result.last = m;
    result.steps_run += 1;

    json line{{"step", state->step()}, {"loss", m.loss},   {"rgb", m.rgb},
              {"eik", m.eik},          {"mask", m.mask},   {"batch_psnr", m.batch_psnr}};
    metrics_log << line.dump() << "\n";
    metrics_log.flush();

    if (state->step() == 10) reference_loss = m.loss;
    if (state->step() > 10 && reference_loss > 0.0 && m.loss > 10.0 * reference_loss) {
      if (++divergent_streak >= 100) {
        throw divergence_error("fit_scene: loss exceeded 10x its step-10 value for 100 steps");
      }
    } else {
      divergent_streak = 0;
    }

    if (cfg.train.checkpoint_every > 0 && state->step() % cfg.train.checkpoint_every == 0) {
      state->save_checkpoint(cfg.out_dir + "/checkpoint_" + std::to_string(state->step()) +
                             ".ckpt");
      state->save_checkpoint(rolling);
    }
  }
  state->save_checkpoint(rolling);
  result.checkpoint_path = rolling;
  return result;
}

FitResult fit_scene_auto(const Scene& scene, const RunConfig& cfg, bool resume) {
  if (cfg.train.precision == "float64") return fit_scene<double>(scene, cfg, resume);
  return fit_scene<float>(scene, cfg, resume);
}

template class TrainState<float>;
template class TrainState<double>;
template double eikonal_loss(const FieldModel<float>&, const Eigen::MatrixXd&);
template double eikonal_loss(const FieldModel<double>&, const Eigen::MatrixXd&);
template FitResult fit_scene<float>(const Scene&, const RunConfig&, bool);
template FitResult fit_scene<double>(const Scene&, const RunConfig&, bool);

}  // namespace coco
