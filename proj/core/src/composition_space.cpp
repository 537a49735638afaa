#include "cpf/composition_space.hpp"

#include <algorithm>
#include <set>

#include "cpf/errors.hpp"

namespace cpf {

namespace {

void normalize(std::vector<Pair>& pairs) {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
}

void check_names(const std::vector<std::string>& names, const char* what) {
  if (names.empty()) throw DataError(std::string("no ") + what + " defined");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw DataError(std::string("empty ") + what + " name");
    if (!seen.insert(n).second) throw DataError(std::string("duplicate ") + what + " '" + n + "'");
  }
}

bool contains(const std::vector<Pair>& sorted, Pair p) {
  return std::binary_search(sorted.begin(), sorted.end(), p);
}

}  // namespace

void CompositionSpace::validate() {
  check_names(attributes, "attribute");
  check_names(objects, "object");
  for (auto* list : {&train_seen, &val_seen, &val_unseen, &test_seen, &test_unseen}) {
    normalize(*list);
    for (Pair p : *list) {
      if (p.attr >= attributes.size() || p.obj >= objects.size()) {
        throw DataError("pair (" + std::to_string(p.attr) + "," + std::to_string(p.obj) +
                        ") outside the composition space");
      }
    }
  }
  const auto disjoint = [&](const std::vector<Pair>& seen, const std::vector<Pair>& unseen,
                            const char* level) {
    for (Pair p : unseen) {
      if (contains(seen, p)) {
        throw DataError(std::string("composition ") + pair_name(p) +
                        " is both seen and unseen at " + level);
      }
    }
  };
  disjoint(train_seen, val_unseen, "train/val");
  disjoint(train_seen, test_unseen, "train/test");
  disjoint(val_seen, val_unseen, "val");
  disjoint(test_seen, test_unseen, "test");
}

bool CompositionSpace::is_seen(Pair p) const { return contains(train_seen, p); }

std::vector<Pair> CompositionSpace::closed_world_candidates() const {
  std::vector<Pair> out = test_seen;
  out.insert(out.end(), test_unseen.begin(), test_unseen.end());
  normalize(out);
  return out;
}

std::vector<Pair> CompositionSpace::open_world_candidates() const {
  std::vector<Pair> out;
  out.reserve(attributes.size() * objects.size());
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    for (std::size_t o = 0; o < objects.size(); ++o) out.push_back({a, o});
  }
  return out;
}

std::string CompositionSpace::pair_name(Pair p) const {
  const std::string a = p.attr < attributes.size() ? attributes[p.attr] : std::to_string(p.attr);
  const std::string o = p.obj < objects.size() ? objects[p.obj] : std::to_string(p.obj);
  return "(" + a + "," + o + ")";
}

const char* to_string(Setting s) {
  return s == Setting::kClosedWorld ? "CW" : "OW";
}

std::optional<Setting> parse_setting(const std::string& text) {
  if (text == "cw" || text == "CW") return Setting::kClosedWorld;
  if (text == "ow" || text == "OW") return Setting::kOpenWorld;
  return std::nullopt;
}

CandidateList::CandidateList(std::vector<Pair> pairs) : pairs_(std::move(pairs)) {
  if (pairs_.empty()) throw ContractError("candidate list must not be empty");
  normalize(pairs_);
}

CandidateList CandidateList::for_setting(const CompositionSpace& space, Setting setting) {
  return CandidateList(setting == Setting::kClosedWorld ? space.closed_world_candidates()
                                                        : space.open_world_candidates());
}

std::optional<std::size_t> CandidateList::index_of(Pair p) const {
  auto it = std::lower_bound(pairs_.begin(), pairs_.end(), p);
  if (it == pairs_.end() || *it != p) return std::nullopt;
  return static_cast<std::size_t>(it - pairs_.begin());
}

}  // namespace cpf
