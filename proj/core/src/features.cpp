#include "cpf/features.hpp"

#include <set>

#include "cpf/errors.hpp"

namespace cpf {

void FeatureBundle::validate() const {
  const std::size_t d = deep_class.cols();
  if (deep_class.rows() != 1) {
    throw DimensionError("image '" + id + "': deep class token must be a single row, got " +
                         to_string(deep_class.shape()));
  }
  if (deep_patches.cols() != d) {
    throw DimensionError("image '" + id + "': deep patches " + to_string(deep_patches.shape()) +
                         " disagree with class token width " + std::to_string(d));
  }
  if (shallow_patches.empty()) throw DimensionError("image '" + id + "': no shallow blocks");
  for (const Tensor& block : shallow_patches) {
    if (block.shape() != deep_patches.shape()) {
      throw DimensionError("image '" + id + "': shallow block " + to_string(block.shape()) +
                           " disagrees with deep patches " + to_string(deep_patches.shape()));
    }
  }
  if (!shallow_class.empty() && shallow_class.size() != shallow_patches.size()) {
    throw DimensionError("image '" + id + "': shallow class token count differs from block count");
  }
  for (const Tensor& cls : shallow_class) {
    if (cls.rows() != 1 || cls.cols() != d) {
      throw DimensionError("image '" + id + "': shallow class token " + to_string(cls.shape()));
    }
  }
}

namespace {

void check_vocabulary(const std::vector<std::string>& names, const Tensor& rows,
                      const char* what) {
  if (names.empty()) throw DataError(std::string("empty ") + what + " vocabulary");
  if (rows.rows() != names.size()) {
    throw DataError(std::string(what) + " embedding has " + std::to_string(rows.rows()) +
                    " rows for " + std::to_string(names.size()) + " names");
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw DataError(std::string("duplicate ") + what + " name '" + n + "'");
  }
  if (!rows.all_finite()) throw DataError(std::string(what) + " embedding has non-finite values");
}

}  // namespace

void TextEmbeddings::validate() const {
  check_vocabulary(attr_names, attr, "attribute");
  check_vocabulary(obj_names, obj, "object");
  if (attr.cols() != obj.cols()) {
    throw DataError("attribute and object embeddings differ in width: " +
                    std::to_string(attr.cols()) + " vs " + std::to_string(obj.cols()));
  }
}

}  // namespace cpf
