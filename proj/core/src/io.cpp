#include "cpf/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "byte_io.hpp"
#include "cpf/errors.hpp"

namespace cpf {

using detail::ByteReader;
using detail::ByteWriter;

namespace {

void write_rows_f32(ByteWriter& w, const Tensor& t) {
  for (double v : t.data()) w.f32(static_cast<float>(v));
}

Tensor read_rows_f32(ByteReader& r, std::size_t rows, std::size_t cols, const char* field) {
  Tensor t({rows, cols});
  for (double& v : t.data()) v = static_cast<double>(r.f32(field));
  return t;
}

void check_bundle(const FeatureBundle& b, const FeatureFileHeader& h) {
  b.validate();
  if (b.dim() != h.dim || b.tokens() != h.tokens || b.blocks() != h.blocks) {
    throw DimensionError("image '" + b.id + "' has D=" + std::to_string(b.dim()) +
                         " T=" + std::to_string(b.tokens()) + " B=" + std::to_string(b.blocks()) +
                         ", header declares D=" + std::to_string(h.dim) +
                         " T=" + std::to_string(h.tokens) + " B=" + std::to_string(h.blocks));
  }
  if (b.attr >= h.num_attributes || b.obj >= h.num_objects) {
    throw DataError("image '" + b.id + "' label (" + std::to_string(b.attr) + "," +
                    std::to_string(b.obj) + ") outside M=" + std::to_string(h.num_attributes) +
                    " N=" + std::to_string(h.num_objects));
  }
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

const std::vector<double>* lookup(const WordTable& table, const std::string& word) {
  if (auto it = table.vectors.find(word); it != table.vectors.end()) return &it->second;
  if (auto it = table.vectors.find(lower(word)); it != table.vectors.end()) return &it->second;
  return nullptr;
}

}  // namespace

std::vector<std::uint8_t> encode_features(std::span<const FeatureBundle> bundles,
                                          FeatureFileHeader header) {
  if (header.dim == 0 || header.tokens == 0 || header.blocks == 0 || header.text_dim == 0 ||
      header.num_attributes == 0 || header.num_objects == 0) {
    throw DimensionError("feature header dimensions must all be >= 1");
  }
  header.version = FeatureFileHeader::kVersion;
  header.reserved = 0;
  header.count = bundles.size();
  ByteWriter w;
  w.magic("CPFF");
  w.u32(header.version);
  w.u32(header.dim);
  w.u32(header.tokens);
  w.u32(header.blocks);
  w.u32(header.text_dim);
  w.u32(header.num_attributes);
  w.u32(header.num_objects);
  w.u32(header.reserved);
  w.u64(header.count);
  for (const FeatureBundle& b : bundles) {
    check_bundle(b, header);
    w.string16(b.id);
    w.u32(static_cast<std::uint32_t>(b.attr));
    w.u32(static_cast<std::uint32_t>(b.obj));
    write_rows_f32(w, b.deep_class);
    write_rows_f32(w, b.deep_patches);
    for (std::size_t k = 0; k < b.blocks(); ++k) {
      if (k < b.shallow_class.size()) {
        write_rows_f32(w, b.shallow_class[k]);
      } else {
        for (std::size_t i = 0; i < header.dim; ++i) w.f32(0.0f);
      }
      write_rows_f32(w, b.shallow_patches[k]);
    }
  }
  return w.take();
}

FeatureFile decode_features(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "feature file");
  FeatureFile file;
  FeatureFileHeader& h = file.header;
  r.expect_magic("CPFF");
  const std::uint64_t version_at = r.offset();
  h.version = r.u32("version");
  if (h.version != FeatureFileHeader::kVersion) {
    r.fail("unsupported version " + std::to_string(h.version), version_at);
  }
  const std::uint64_t dims_at = r.offset();
  h.dim = r.u32("D");
  h.tokens = r.u32("T");
  h.blocks = r.u32("B");
  h.text_dim = r.u32("d");
  h.num_attributes = r.u32("M");
  h.num_objects = r.u32("N");
  if (h.dim == 0 || h.tokens == 0 || h.blocks == 0 || h.text_dim == 0 || h.num_attributes == 0 ||
      h.num_objects == 0) {
    r.fail("header dimensions must all be >= 1", dims_at);
  }
  const std::uint64_t reserved_at = r.offset();
  h.reserved = r.u32("reserved");
  if (h.reserved != 0) r.fail("reserved header field must be zero", reserved_at);
  h.count = r.u64("count");

  const std::uint64_t floats_per_record =
      static_cast<std::uint64_t>(h.dim) * (1 + h.tokens) * (1 + h.blocks);
  // Minimum record: empty id + two labels + payload.
  const std::uint64_t min_record = 2 + 8 + 4 * floats_per_record;
  if (h.count > 0 && r.remaining() / min_record < h.count) {
    r.fail("declares " + std::to_string(h.count) + " images but holds at most " +
               std::to_string(r.remaining() / min_record),
           r.offset());
  }

  file.bundles.reserve(static_cast<std::size_t>(h.count));
  for (std::uint64_t i = 0; i < h.count; ++i) {
    FeatureBundle b;
    b.id = r.string16("image id");
    const std::uint64_t label_at = r.offset();
    b.attr = r.u32("attribute label");
    b.obj = r.u32("object label");
    if (b.attr >= h.num_attributes || b.obj >= h.num_objects) {
      r.fail("label (" + std::to_string(b.attr) + "," + std::to_string(b.obj) + ") of image '" +
                 b.id + "' out of range",
             label_at);
    }
    b.deep_class = read_rows_f32(r, 1, h.dim, "deep class token");
    b.deep_patches = read_rows_f32(r, h.tokens, h.dim, "deep patches");
    for (std::uint32_t k = 0; k < h.blocks; ++k) {
      b.shallow_class.push_back(read_rows_f32(r, 1, h.dim, "shallow class token"));
      b.shallow_patches.push_back(read_rows_f32(r, h.tokens, h.dim, "shallow patches"));
    }
    file.bundles.push_back(std::move(b));
  }
  if (!r.at_end()) r.fail("trailing bytes after the last record", r.offset());
  return file;
}

void write_features(const std::filesystem::path& path, std::span<const FeatureBundle> bundles,
                    const FeatureFileHeader& header) {
  write_file_bytes(path, encode_features(bundles, header));
}

FeatureFile read_features(const std::filesystem::path& path) {
  return decode_features(read_file_bytes(path));
}

std::vector<std::uint8_t> encode_text_embeddings(const TextEmbeddings& text) {
  text.validate();
  ByteWriter w;
  w.magic("CPFT");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(text.dim()));
  w.u32(static_cast<std::uint32_t>(text.attr_names.size()));
  w.u32(static_cast<std::uint32_t>(text.obj_names.size()));
  const auto rows = [&](const std::vector<std::string>& names, const Tensor& m) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      w.string16(names[i]);
      for (double v : m.row_view(i)) w.f32(static_cast<float>(v));
    }
  };
  rows(text.attr_names, text.attr);
  rows(text.obj_names, text.obj);
  return w.take();
}

TextEmbeddings decode_text_embeddings(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "text embedding file");
  r.expect_magic("CPFT");
  const std::uint64_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != 1) {
    r.fail("unsupported version " + std::to_string(v), version_at);
  }
  const std::uint64_t dims_at = r.offset();
  const std::uint32_t d = r.u32("d");
  const std::uint32_t m = r.u32("M");
  const std::uint32_t n = r.u32("N");
  if (d == 0 || m == 0 || n == 0) r.fail("dimensions must all be >= 1", dims_at);

  TextEmbeddings text;
  const auto rows = [&](std::uint32_t count, std::vector<std::string>& names, Tensor& out) {
    out = Tensor({count, d});
    for (std::uint32_t i = 0; i < count; ++i) {
      names.push_back(r.string16("name"));
      for (std::uint32_t k = 0; k < d; ++k) out(i, k) = static_cast<double>(r.f32("embedding"));
    }
  };
  rows(m, text.attr_names, text.attr);
  rows(n, text.obj_names, text.obj);
  if (!r.at_end()) r.fail("trailing bytes after the last row", r.offset());
  text.validate();
  return text;
}

void write_text_embeddings(const std::filesystem::path& path, const TextEmbeddings& text) {
  write_file_bytes(path, encode_text_embeddings(text));
}

TextEmbeddings load_text_embeddings(const std::filesystem::path& path) {
  return decode_text_embeddings(read_file_bytes(path));
}

WordTable parse_word_table(const std::string& text) {
  WordTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<double> vec;
    for (std::string tok; fields >> tok;) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError("word table line " + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
    }
    if (vec.empty()) throw DataError("word table line " + std::to_string(line_no) + ": no values");
    if (table.dim == 0) table.dim = vec.size();
    if (vec.size() != table.dim) {
      throw DataError("word table line " + std::to_string(line_no) + ": " +
                      std::to_string(vec.size()) + " values, expected " + std::to_string(table.dim));
    }
    if (!table.vectors.emplace(word, std::move(vec)).second) {
      throw DataError("word table: duplicate word '" + word + "'");
    }
  }
  return table;
}

WordTable read_word_table(const std::filesystem::path& path) {
  return parse_word_table(read_text_file(path));
}

Tensor embed_names(const WordTable& table, std::span<const std::string> names) {
  if (table.dim == 0) throw DataError("word table is empty");
  if (names.empty()) throw DataError("no names to embed");
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) throw DataError("duplicate class names");
  Tensor out({names.size(), table.dim});
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (const auto* v = lookup(table, names[i])) {
      std::copy(v->begin(), v->end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * table.dim));
      continue;
    }
    std::vector<std::string> words;
    std::string cur;
    for (char c : names[i]) {
      if (c == '.' || c == '_' || c == ' ') {
        if (!cur.empty()) words.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) words.push_back(cur);
    if (words.empty()) throw DataError("cannot embed empty name");
    for (const std::string& w : words) {
      const auto* v = lookup(table, w);
      if (v == nullptr) throw DataError("word '" + w + "' of name '" + names[i] + "' not in table");
      for (std::size_t k = 0; k < table.dim; ++k) out(i, k) += (*v)[k];
    }
    for (std::size_t k = 0; k < table.dim; ++k) out(i, k) /= static_cast<double>(words.size());
  }
  return out;
}

TextEmbeddings text_embeddings_from_words(const WordTable& table, const CompositionSpace& space) {
  TextEmbeddings text;
  text.attr_names = space.attributes;
  text.obj_names = space.objects;
  text.attr = embed_names(table, text.attr_names);
  text.obj = embed_names(table, text.obj_names);
  text.validate();
  return text;
}

CompositionSpace parse_splits(const std::string& text) {
  CompositionSpace space;
  std::vector<Pair>* pairs = nullptr;
  std::vector<std::string>* names = nullptr;
  std::vector<std::pair<std::size_t, std::pair<std::string, std::string>>> raw;
  std::vector<std::vector<Pair>*> targets;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> sections_seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      const std::string section = line.substr(1, line.size() - 2);
      if (!sections_seen.insert(section).second) {
        throw DataError("split file line " + std::to_string(line_no) + ": repeated section [" +
                        section + "]");
      }
      names = nullptr;
      pairs = nullptr;
      if (section == "attributes") names = &space.attributes;
      else if (section == "objects") names = &space.objects;
      else if (section == "train_seen") pairs = &space.train_seen;
      else if (section == "val_seen") pairs = &space.val_seen;
      else if (section == "val_unseen") pairs = &space.val_unseen;
      else if (section == "test_seen") pairs = &space.test_seen;
      else if (section == "test_unseen") pairs = &space.test_unseen;
      else throw DataError("split file line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      continue;
    }
    if (names != nullptr) {
      names->push_back(line);
    } else if (pairs != nullptr) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) {
        throw DataError("split file line " + std::to_string(line_no) + ": expected attr,obj");
      }
      raw.push_back({line_no, {trim(line.substr(0, comma)), trim(line.substr(comma + 1))}});
      targets.push_back(pairs);
    } else {
      throw DataError("split file line " + std::to_string(line_no) + ": content outside a section");
    }
  }
  std::map<std::string, std::size_t> attr_index, obj_index;
  for (std::size_t i = 0; i < space.attributes.size(); ++i) attr_index.emplace(space.attributes[i], i);
  for (std::size_t i = 0; i < space.objects.size(); ++i) obj_index.emplace(space.objects[i], i);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& [ln, names_pair] = raw[i];
    const auto a = attr_index.find(names_pair.first);
    const auto o = obj_index.find(names_pair.second);
    if (a == attr_index.end() || o == obj_index.end()) {
      throw DataError("split file line " + std::to_string(ln) + ": unknown composition (" +
                      names_pair.first + "," + names_pair.second + ")");
    }
    targets[i]->push_back({a->second, o->second});
  }
  space.validate();
  return space;
}

CompositionSpace load_splits(const std::filesystem::path& path) {
  return parse_splits(read_text_file(path));
}

std::string format_splits(const CompositionSpace& space) {
  std::string out;
  out += "[attributes]\n";
  for (const auto& a : space.attributes) out += a + "\n";
  out += "[objects]\n";
  for (const auto& o : space.objects) out += o + "\n";
  const auto pairs = [&](const char* name, const std::vector<Pair>& list) {
    out += std::string("[") + name + "]\n";
    for (Pair p : list) out += space.attributes[p.attr] + "," + space.objects[p.obj] + "\n";
  };
  pairs("train_seen", space.train_seen);
  pairs("val_seen", space.val_seen);
  pairs("val_unseen", space.val_unseen);
  pairs("test_seen", space.test_seen);
  pairs("test_unseen", space.test_unseen);
  return out;
}

void write_splits(const std::filesystem::path& path, const CompositionSpace& space) {
  write_text_file(path, format_splits(space));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace cpf
