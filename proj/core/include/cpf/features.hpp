#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cpf/tensor.hpp"

namespace cpf {

/// Backbone embeddings of one image plus its composition label.
struct FeatureBundle {
  std::string id;
  Tensor deep_class;                  // 1 x D
  Tensor deep_patches;                // T x D
  std::vector<Tensor> shallow_class;  // B x (1 x D); read from disk, unused by the model
  std::vector<Tensor> shallow_patches;  // B x (T x D), raw per-block tokens
  std::size_t attr = 0;
  std::size_t obj = 0;

  std::size_t dim() const noexcept { return deep_class.cols(); }
  std::size_t tokens() const noexcept { return deep_patches.rows(); }
  std::size_t blocks() const noexcept { return shallow_patches.size(); }

  /// Throws DimensionError unless all matrices share T and D and B >= 1.
  void validate() const;
};

/// Word embeddings for the attribute and object vocabularies.
struct TextEmbeddings {
  std::vector<std::string> attr_names;
  std::vector<std::string> obj_names;
  Tensor attr;  // M x d
  Tensor obj;   // N x d
  bool frozen = true;

  std::size_t dim() const noexcept { return attr.cols(); }

  /// Throws DataError on empty or duplicate names, size mismatches or
  /// non-finite rows.
  void validate() const;
};

}  // namespace cpf
