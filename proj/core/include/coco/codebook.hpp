#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace coco {

struct Scene;

// Prior codebook: E prototype vectors of dimension D. Entries are stored as
// float32 to mirror the on-disk format, so save/load round-trips bit-exactly.
struct Codebook {
  Eigen::MatrixXf entries;  // E x D
  std::string source_tag;

  int size() const { return int(entries.rows()); }
  int dim() const { return int(entries.cols()); }
};

// CBK1 container: 5-byte ASCII magic "CBK1\n", then uint32-LE E, uint32-LE D,
// then E*D IEEE-754 float32-LE values in row-major (entry-major) order.
// Header is 13 bytes; total file size is 13 + 4*E*D.
Codebook load_codebook(const std::string& path);
void save_codebook(const Codebook& cb, const std::string& path);

// Entries drawn i.i.d. from N(0, 1/D); deterministic per (seed, E, D).
Codebook synthesize_codebook(uint64_t seed, int E, int D);

// k-means (k = E) over D-dimensional flattened random RGB patches from the
// scene's training images. Patch edge is ceil(sqrt(D/3)); the flattened
// patch (edge*edge*3 values, channel-fastest) is truncated to its first D
// components. Deterministic per seed. Throws if the sampled patches contain
// fewer than E unique vectors.
Codebook patch_prior_codebook(const Scene& scene, int E, int D, uint64_t seed);

// L2-normalizes every entry in place (optional preprocessing; the prior is
// otherwise used exactly as stored). Zero rows are left untouched.
void normalize_codebook(Codebook& cb);

}  // namespace coco
