#include "cpf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cpf/errors.hpp"
#include "cpf/rng.hpp"

namespace cpf {

namespace {

constexpr double kPairHashWeight = 0.3;

enum Stream : std::uint64_t {
  kPrototypes = 1,
  kTextMap = 2,
  kSplit = 3,
  kSamples = 4,
  kPairHash = 5,
};

using Vec = std::vector<double>;

Vec random_unit(Rng& rng, std::size_t dim) {
  Vec v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

Vec normalized(Vec v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

std::string image_id(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%06zu", n);
  return buf;
}

struct Generator {
  const SynthConfig& cfg;
  std::vector<Vec> attr_proto;
  std::vector<Vec> obj_proto;
  std::vector<Vec> shallow_signal;  // indexed a * N + o
  Rng rng;
  std::size_t next_id = 0;
  std::map<std::string, std::vector<bool>> foreground;

  explicit Generator(const SynthConfig& c)
      : cfg(c), rng(derive_seed(c.seed, kSamples)) {
    Rng proto(derive_seed(c.seed, kPrototypes));
    for (std::size_t a = 0; a < c.num_attributes; ++a) attr_proto.push_back(random_unit(proto, c.dim));
    for (std::size_t o = 0; o < c.num_objects; ++o) obj_proto.push_back(random_unit(proto, c.dim));
    for (std::size_t a = 0; a < c.num_attributes; ++a) {
      for (std::size_t o = 0; o < c.num_objects; ++o) {
        Rng hash(derive_seed(derive_seed(c.seed, kPairHash), a * c.num_objects + o));
        const Vec h = random_unit(hash, c.dim);
        Vec mix(c.dim);
        for (std::size_t k = 0; k < c.dim; ++k) {
          mix[k] = attr_proto[a][k] + obj_proto[o][k] + kPairHashWeight * h[k];
        }
        mix = normalized(std::move(mix));
        Vec signal(c.dim);
        for (std::size_t k = 0; k < c.dim; ++k) {
          signal[k] = (1.0 - c.dependence) * attr_proto[a][k] + c.dependence * mix[k];
        }
        shallow_signal.push_back(std::move(signal));
      }
    }
  }

  FeatureBundle sample(Pair label) {
    const std::size_t T = cfg.tokens;
    const std::size_t D = cfg.dim;
    const double s = cfg.feature_scale;
    const auto fg_count = static_cast<std::size_t>(
        std::clamp<long long>(std::llround(cfg.foreground_fraction * static_cast<double>(T)), 1,
                              static_cast<long long>(T)));

    // Distractor composition differs in both attribute and object when possible.
    Pair distractor = label;
    if (cfg.num_attributes > 1) {
      distractor.attr = (label.attr + 1 + rng.below(cfg.num_attributes - 1)) % cfg.num_attributes;
    }
    if (cfg.num_objects > 1) {
      distractor.obj = (label.obj + 1 + rng.below(cfg.num_objects - 1)) % cfg.num_objects;
    }
    std::vector<std::size_t> positions(T);
    for (std::size_t t = 0; t < T; ++t) positions[t] = t;
    rng.shuffle(std::span<std::size_t>(positions));
    std::vector<bool> is_fg(T, false);
    for (std::size_t i = 0; i < fg_count; ++i) is_fg[positions[i]] = true;

    FeatureBundle b;
    b.id = image_id(next_id++);
    b.attr = label.attr;
    b.obj = label.obj;
    b.deep_patches = Tensor({T, D});
    for (std::size_t t = 0; t < T; ++t) {
      const double mix = is_fg[t] ? 0.0 : cfg.deep_clutter;
      const Vec& own = obj_proto[label.obj];
      const Vec& other = obj_proto[distractor.obj];
      for (std::size_t k = 0; k < D; ++k) {
        b.deep_patches(t, k) =
            s * ((1.0 - mix) * own[k] + mix * other[k] + cfg.noise * rng.normal());
      }
    }
    b.deep_class = Tensor({1, D});
    for (std::size_t k = 0; k < D; ++k) {
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += b.deep_patches(t, k);
      b.deep_class(0, k) = mean / static_cast<double>(T) + s * cfg.noise * rng.normal();
    }
    for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
      Tensor patches({T, D});
      Tensor cls({1, D});
      for (std::size_t t = 0; t < T; ++t) {
        const Pair shown = is_fg[t] ? label : distractor;
        const Vec& signal = shallow_signal[shown.attr * cfg.num_objects + shown.obj];
        const double gain = is_fg[t] ? 1.0 : cfg.clutter_gain;
        for (std::size_t k = 0; k < D; ++k) {
          patches(t, k) = s * (gain * signal[k] + cfg.noise * rng.normal());
        }
      }
      for (std::size_t k = 0; k < D; ++k) {
        double mean = 0.0;
        for (std::size_t t = 0; t < T; ++t) mean += patches(t, k);
        cls(0, k) = mean / static_cast<double>(T) + s * cfg.noise * rng.normal();
      }
      b.shallow_patches.push_back(std::move(patches));
      b.shallow_class.push_back(std::move(cls));
    }
    foreground.emplace(b.id, std::move(is_fg));
    return b;
  }
};

std::vector<std::string> names(const char* prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace

std::size_t SynthConfig::seen_count() const {
  return static_cast<std::size_t>(
      std::llround(seen_fraction * static_cast<double>(num_attributes * num_objects)));
}

void SynthConfig::validate() const {
  if (num_attributes == 0 || num_objects == 0 || dim == 0 || text_dim == 0 || tokens == 0 ||
      blocks == 0) {
    throw ConfigError("synthetic dimensions must all be >= 1");
  }
  if (!(seen_fraction > 0.0 && seen_fraction < 1.0)) {
    throw ConfigError("seen fraction must lie strictly between 0 and 1");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise level must be >= 0");
  if (!(dependence >= 0.0 && dependence <= 1.0)) throw ConfigError("dependence must lie in [0, 1]");
  if (!(foreground_fraction > 0.0 && foreground_fraction <= 1.0)) {
    throw ConfigError("foreground fraction must lie in (0, 1]");
  }
  if (!(feature_scale > 0.0)) throw ConfigError("feature scale must be positive");
  if (!(clutter_gain >= 0.0)) throw ConfigError("clutter gain must be >= 0");
  if (!(deep_clutter >= 0.0 && deep_clutter <= 1.0)) {
    throw ConfigError("deep clutter must lie in [0, 1]");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1]");
  }
  if (!(val_unseen_fraction >= 0.0 && val_unseen_fraction < 1.0)) {
    throw ConfigError("validation share of unseen compositions must lie in [0, 1)");
  }
  if (samples_per_composition == 0) throw ConfigError("samples per composition must be >= 1");
  const std::size_t total = num_attributes * num_objects;
  const std::size_t seen = seen_count();
  if (seen < std::max(num_attributes, num_objects)) {
    throw ConfigError("seen fraction gives " + std::to_string(seen) +
                      " seen compositions, fewer than needed to cover every attribute and object");
  }
  if (seen >= total) throw ConfigError("seen fraction leaves no unseen compositions");
  const std::size_t unseen = total - seen;
  const auto val_unseen = static_cast<std::size_t>(
      std::llround(val_unseen_fraction * static_cast<double>(unseen)));
  if (val_unseen >= unseen) throw ConfigError("no unseen compositions left for testing");
  if (std::llround(train_fraction * static_cast<double>(samples_per_composition)) < 1) {
    throw ConfigError("train fraction leaves no training images per composition");
  }
}

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t M = cfg.num_attributes;
  const std::size_t N = cfg.num_objects;

  SynthData data;
  data.space.attributes = names("attr", M);
  data.space.objects = names("obj", N);

  // Seen set: a covering diagonal over shuffled vocabularies, then random fill.
  Rng split(derive_seed(cfg.seed, kSplit));
  std::vector<std::size_t> attrs(M), objs(N);
  for (std::size_t i = 0; i < M; ++i) attrs[i] = i;
  for (std::size_t i = 0; i < N; ++i) objs[i] = i;
  split.shuffle(std::span<std::size_t>(attrs));
  split.shuffle(std::span<std::size_t>(objs));
  std::vector<bool> is_seen(M * N, false);
  std::vector<Pair> seen;
  for (std::size_t i = 0; i < std::max(M, N); ++i) {
    const Pair p{attrs[i % M], objs[i % N]};
    is_seen[p.attr * N + p.obj] = true;
    seen.push_back(p);
  }
  std::vector<Pair> rest;
  for (std::size_t a = 0; a < M; ++a) {
    for (std::size_t o = 0; o < N; ++o) {
      if (!is_seen[a * N + o]) rest.push_back({a, o});
    }
  }
  split.shuffle(std::span<Pair>(rest));
  const std::size_t extra = cfg.seen_count() - seen.size();
  seen.insert(seen.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(extra));
  std::vector<Pair> unseen(rest.begin() + static_cast<std::ptrdiff_t>(extra), rest.end());
  const auto val_unseen_count = static_cast<std::size_t>(
      std::llround(cfg.val_unseen_fraction * static_cast<double>(unseen.size())));
  std::sort(seen.begin(), seen.end());

  data.space.train_seen = seen;
  data.space.val_seen = seen;
  data.space.test_seen = seen;
  data.space.val_unseen.assign(unseen.begin(),
                               unseen.begin() + static_cast<std::ptrdiff_t>(val_unseen_count));
  data.space.test_unseen.assign(unseen.begin() + static_cast<std::ptrdiff_t>(val_unseen_count),
                                unseen.end());
  data.space.validate();

  Generator gen(cfg);
  const std::size_t per = cfg.samples_per_composition;
  const auto n_train = static_cast<std::size_t>(
      std::llround(cfg.train_fraction * static_cast<double>(per)));
  const std::size_t n_val = (per - n_train) / 2;
  for (Pair p : data.space.train_seen) {
    for (std::size_t i = 0; i < per; ++i) {
      FeatureBundle b = gen.sample(p);
      if (i < n_train) data.train.push_back(std::move(b));
      else if (i < n_train + n_val) data.val.push_back(std::move(b));
      else data.test.push_back(std::move(b));
    }
  }
  for (Pair p : data.space.val_unseen) {
    for (std::size_t i = 0; i < per; ++i) data.val.push_back(gen.sample(p));
  }
  for (Pair p : data.space.test_unseen) {
    for (std::size_t i = 0; i < per; ++i) data.test.push_back(gen.sample(p));
  }

  // Word embeddings: prototypes through one fixed random map D -> d, unit rows.
  Rng text_rng(derive_seed(cfg.seed, kTextMap));
  Tensor map({cfg.dim, cfg.text_dim});
  for (double& v : map.data()) v = text_rng.normal();
  const auto embed = [&](const std::vector<Vec>& protos) {
    Tensor out({protos.size(), cfg.text_dim});
    for (std::size_t i = 0; i < protos.size(); ++i) {
      Vec row(cfg.text_dim, 0.0);
      for (std::size_t j = 0; j < cfg.text_dim; ++j) {
        for (std::size_t k = 0; k < cfg.dim; ++k) row[j] += protos[i][k] * map(k, j);
      }
      row = normalized(std::move(row));
      for (std::size_t j = 0; j < cfg.text_dim; ++j) out(i, j) = row[j];
    }
    return out;
  };
  data.text.attr_names = data.space.attributes;
  data.text.obj_names = data.space.objects;
  data.text.attr = embed(gen.attr_proto);
  data.text.obj = embed(gen.obj_proto);
  data.text.frozen = true;
  data.foreground = std::move(gen.foreground);
  return data;
}

}  // namespace cpf
