#pragma once

#include <stdexcept>
#include <string>

namespace coco {

// I/O failures: missing files, unwritable paths, short reads.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Structurally invalid file contents: bad magic, truncated payload,
// non-finite entries, schema violations.
struct format_error : std::runtime_error {
  explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

// Inconsistent dimensions or out-of-range arguments to an operation.
struct invalid_argument : std::invalid_argument {
  explicit invalid_argument(const std::string& what) : std::invalid_argument(what) {}
};

// Configuration document failed validation (unknown keys, bad values).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Training diverged or produced a non-finite loss.
struct divergence_error : std::runtime_error {
  explicit divergence_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace coco
