#include "coco/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <vector>

#include "coco/errors.hpp"
#include "coco/rng.hpp"
#include "coco/scene.hpp"

namespace coco {

namespace {

constexpr char kMagic[5] = {'C', 'B', 'K', '1', '\n'};

void check_finite(const Eigen::MatrixXf& m, const std::string& context) {
  if (!m.allFinite()) {
    throw format_error(context + ": non-finite entries");
  }
}

uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void write_u32_le(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Codebook load_codebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw io_error("load_codebook: cannot open '" + path + "'");
  }
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, kMagic, 5) != 0) {
    throw format_error("load_codebook: bad magic in '" + path + "'");
  }
  const uint32_t E = read_u32_le(in);
  const uint32_t D = read_u32_le(in);
  if (!in) {
    throw format_error("load_codebook: truncated header in '" + path + "'");
  }
  if (E == 0 || D == 0) {
    throw format_error("load_codebook: zero dimension in header of '" + path + "'");
  }
  Codebook cb;
  cb.entries.resize(E, D);
  // Payload is row-major (entry-major); float32 little-endian.
  std::vector<float> row(D);
  for (uint32_t i = 0; i < E; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), std::streamsize(4) * D);
    if (in.gcount() != std::streamsize(4) * D) {
      throw format_error("load_codebook: truncated payload in '" + path + "' (entry " +
                         std::to_string(i) + " of " + std::to_string(E) + ")");
    }
    for (uint32_t j = 0; j < D; ++j) cb.entries(i, j) = row[j];
  }
  check_finite(cb.entries, "load_codebook '" + path + "'");
  cb.source_tag = "file:" + path;
  return cb;
}

void save_codebook(const Codebook& cb, const std::string& path) {
  if (cb.size() < 1 || cb.dim() < 1) {
    throw invalid_argument("save_codebook: empty codebook");
  }
  check_finite(cb.entries, "save_codebook");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw io_error("save_codebook: cannot open '" + path + "' for writing");
  }
  out.write(kMagic, 5);
  write_u32_le(out, uint32_t(cb.size()));
  write_u32_le(out, uint32_t(cb.dim()));
  std::vector<float> row(cb.dim());
  for (int i = 0; i < cb.size(); ++i) {
    for (int j = 0; j < cb.dim(); ++j) row[j] = cb.entries(i, j);
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(4) * cb.dim());
  }
  if (!out) {
    throw io_error("save_codebook: write failed for '" + path + "'");
  }
}

Codebook synthesize_codebook(uint64_t seed, int E, int D) {
  if (E < 1 || D < 1) {
    throw invalid_argument("synthesize_codebook: E and D must be >= 1");
  }
  Rng rng(derive_seed({seed, uint64_t(E), uint64_t(D), 0x5b0cULL}));
  Codebook cb;
  cb.entries.resize(E, D);
  const double stddev = 1.0 / std::sqrt(double(D));
  for (int i = 0; i < E; ++i) {
    for (int j = 0; j < D; ++j) {
      cb.entries(i, j) = float(rng.normal(0.0, stddev));
    }
  }
  cb.source_tag = "synth:seed=" + std::to_string(seed);
  return cb;
}

namespace {

// Lloyd's k-means with k-means++ seeding, double accumulators.
Eigen::MatrixXf kmeans(const std::vector<Eigen::VectorXf>& points, int k, Rng& rng) {
  const int n = int(points.size());
  const int dim = int(points[0].size());

  std::vector<Eigen::VectorXd> centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.uniform_index(n)].cast<double>());
  std::vector<double> d2(n, 0.0);
  while (int(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centroids) {
        best = std::min(best, (points[i].cast<double>() - c).squaredNorm());
      }
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      // All remaining points coincide with existing centroids; caller has
      // already verified there are >= k unique points, so this cannot occur.
      throw invalid_argument("kmeans: degenerate point set");
    }
    double r = rng.uniform() * total;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      r -= d2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    centroids.push_back(points[pick].cast<double>());
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int best_j = 0;
      for (int j = 0; j < k; ++j) {
        const double dist = (points[i].cast<double>() - centroids[j]).squaredNorm();
        if (dist < best) {
          best = dist;
          best_j = j;
        }
      }
      if (assign[i] != best_j) {
        assign[i] = best_j;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    std::vector<Eigen::VectorXd> sums(k, Eigen::VectorXd::Zero(dim));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums[assign[i]] += points[i].cast<double>();
      counts[assign[i]] += 1;
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0) centroids[j] = sums[j] / counts[j];
      // Empty clusters keep their previous centroid.
    }
  }

  Eigen::MatrixXf out(k, dim);
  for (int j = 0; j < k; ++j) out.row(j) = centroids[j].cast<float>().transpose();
  return out;
}

}  // namespace

Codebook patch_prior_codebook(const Scene& scene, int E, int D, uint64_t seed) {
  if (E < 1 || D < 1) {
    throw invalid_argument("patch_prior_codebook: E and D must be >= 1");
  }
  if (scene.train_split.empty()) {
    throw invalid_argument("patch_prior_codebook: scene has no training views");
  }
  const int edge = int(std::ceil(std::sqrt(double(D) / 3.0)));
  for (int idx : scene.train_split) {
    const ImageU8& img = scene.images[idx];
    if (img.width < edge || img.height < edge) {
      throw invalid_argument("patch_prior_codebook: image smaller than patch edge " +
                             std::to_string(edge));
    }
  }

  // Sample random patches, flatten channel-fastest, truncate to D dims.
  const int n_patches = std::max(E * 8, 1024);
  Rng rng(derive_seed({seed, uint64_t(E), uint64_t(D), 0x9a7cULL}));
  std::vector<Eigen::VectorXf> patches;
  patches.reserve(n_patches);
  for (int p = 0; p < n_patches; ++p) {
    const int view = scene.train_split[rng.uniform_index(scene.train_split.size())];
    const ImageU8& img = scene.images[view];
    const int row0 = int(rng.uniform_index(uint64_t(img.height - edge + 1)));
    const int col0 = int(rng.uniform_index(uint64_t(img.width - edge + 1)));
    Eigen::VectorXf flat(edge * edge * 3);
    int k = 0;
    for (int r = 0; r < edge; ++r) {
      for (int c = 0; c < edge; ++c) {
        const uint8_t* px = img.at(row0 + r, col0 + c);
        flat[k++] = float(px[0]) / 255.0f;
        flat[k++] = float(px[1]) / 255.0f;
        flat[k++] = float(px[2]) / 255.0f;
      }
    }
    patches.push_back(flat.head(D));
  }

  // k-means needs at least E distinct points.
  std::set<std::vector<float>> unique;
  for (const auto& p : patches) {
    unique.insert(std::vector<float>(p.data(), p.data() + p.size()));
    if (int(unique.size()) >= E) break;
  }
  if (int(unique.size()) < E) {
    throw invalid_argument("patch_prior_codebook: only " + std::to_string(unique.size()) +
                           " unique patches for E=" + std::to_string(E));
  }

  Codebook cb;
  cb.entries = kmeans(patches, E, rng);
  cb.source_tag = "patch:seed=" + std::to_string(seed);
  return cb;
}

void normalize_codebook(Codebook& cb) {
  for (int i = 0; i < cb.size(); ++i) {
    const float norm = cb.entries.row(i).norm();
    if (norm > 0.0f) cb.entries.row(i) /= norm;
  }
}

}  // namespace coco
