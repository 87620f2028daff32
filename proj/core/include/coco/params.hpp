#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "coco/autodiff.hpp"

namespace coco {

// Named collection of parameter matrices. The trainer, checkpoint writer and
// tape binder all address parameters through their index here.
template <class S>
struct ParamStore {
  using Mat = typename ad::Tape<S>::Mat;

  std::vector<std::string> names;
  std::vector<Mat> values;
  std::vector<char> trainable;

  int add(std::string name, Mat value, bool is_trainable = true) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    trainable.push_back(is_trainable ? 1 : 0);
    return int(names.size()) - 1;
  }

  int find(const std::string& name) const {
    for (int i = 0; i < int(names.size()); ++i) {
      if (names[i] == name) return i;
    }
    return -1;
  }

  int size() const { return int(names.size()); }

  bool all_finite() const {
    for (const auto& v : values) {
      if (!v.allFinite()) return false;
    }
    return true;
  }
};

// Lazily binds parameters onto a tape as leaves (gradient-tracked when
// trainable) and remembers the node -> parameter mapping so a backward sweep
// can route gradients home.
template <class S>
struct TapeBinder {
  ad::Tape<S>& tape;
  const ParamStore<S>& store;
  std::unordered_map<int, int> param_to_node;
  std::unordered_map<int, int> node_to_param;

  TapeBinder(ad::Tape<S>& t, const ParamStore<S>& s) : tape(t), store(s) {}

  int operator()(int param_idx) {
    auto it = param_to_node.find(param_idx);
    if (it != param_to_node.end()) return it->second;
    const int node = tape.leaf(store.values[param_idx], store.trainable[param_idx] != 0);
    param_to_node.emplace(param_idx, node);
    node_to_param.emplace(node, param_idx);
    return node;
  }
};

}  // namespace coco
