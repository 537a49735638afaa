#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace cpf {

/// An (attribute, object) composition, by vocabulary index.
struct Pair {
  std::size_t attr = 0;
  std::size_t obj = 0;

  friend auto operator<=>(const Pair&, const Pair&) = default;
};

/// Attribute/object vocabularies and the composition splits.
///
/// Pair lists are kept sorted and duplicate-free after validate().
struct CompositionSpace {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;
  std::vector<Pair> train_seen;
  std::vector<Pair> val_seen;
  std::vector<Pair> val_unseen;
  std::vector<Pair> test_seen;
  std::vector<Pair> test_unseen;

  std::size_t num_attributes() const noexcept { return attributes.size(); }
  std::size_t num_objects() const noexcept { return objects.size(); }

  /// Sorts and deduplicates every pair list, then checks ranges, unique names
  /// and seen/unseen disjointness. Throws DataError naming the offending pair.
  void validate();

  /// Whether the composition labels training images.
  bool is_seen(Pair p) const;

  /// Closed-world candidates: test_seen U test_unseen, sorted.
  std::vector<Pair> closed_world_candidates() const;
  /// Open-world candidates: the full attribute x object product, row-major.
  std::vector<Pair> open_world_candidates() const;

  std::string pair_name(Pair p) const;
};

enum class Setting { kClosedWorld, kOpenWorld };

const char* to_string(Setting s);
std::optional<Setting> parse_setting(const std::string& text);

/// Ordered candidate list with O(log n) lookup of a pair's position.
class CandidateList {
 public:
  CandidateList() = default;
  /// Sorts `pairs`; throws ContractError if empty.
  explicit CandidateList(std::vector<Pair> pairs);

  static CandidateList for_setting(const CompositionSpace& space, Setting setting);

  std::size_t size() const noexcept { return pairs_.size(); }
  const std::vector<Pair>& pairs() const noexcept { return pairs_; }
  const Pair& operator[](std::size_t i) const { return pairs_[i]; }
  std::optional<std::size_t> index_of(Pair p) const;

 private:
  std::vector<Pair> pairs_;
};

}  // namespace cpf
