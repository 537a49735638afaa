#include "cpf/checkpoint.hpp"

#include "byte_io.hpp"
#include "cpf/errors.hpp"
#include "cpf/io.hpp"

namespace cpf {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr std::uint32_t kMaxRank = 8;

void put_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

Tensor get_tensor(ByteReader& r) {
  const std::uint64_t at = r.offset();
  const std::uint32_t rank = r.u32("tensor rank");
  if (rank == 0 || rank > kMaxRank) r.fail("bad tensor rank " + std::to_string(rank), at);
  Shape shape;
  std::uint64_t size = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t dim_at = r.offset();
    const std::uint64_t d = r.u64("tensor dim");
    if (d == 0) r.fail("zero tensor dimension", dim_at);
    if (size > r.remaining() / 8 / d + 1) r.fail("tensor larger than the file", dim_at);
    size *= d;
    shape.push_back(static_cast<std::size_t>(d));
  }
  if (size > r.remaining() / 8) r.fail("tensor data truncated", r.offset());
  std::vector<double> data(size);
  for (double& v : data) v = r.f64("tensor value");
  return Tensor(std::move(shape), std::move(data));
}

void put_names(ByteWriter& w, const std::vector<std::string>& names) {
  w.u32(static_cast<std::uint32_t>(names.size()));
  for (const auto& n : names) w.string16(n);
}

std::vector<std::string> get_names(ByteReader& r) {
  const std::uint32_t n = r.u32("name count");
  if (n > r.remaining() / 2) r.fail("name count exceeds file size", r.offset());
  std::vector<std::string> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.string16("name"));
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.magic("CPFK");
  w.u32(Checkpoint::kVersion);
  w.string32(ckpt.config);
  w.u64(ckpt.seed);

  const CpfParams& p = ckpt.params;
  w.f64(p.temperature);
  w.f64(p.alpha_attr);
  w.f64(p.alpha_obj);
  w.u32(static_cast<std::uint32_t>(p.ablation));
  const auto tensors = p.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) put_tensor(w, *t);

  const AdamState& a = ckpt.adam;
  w.u64(a.step);
  w.f64(a.beta1);
  w.f64(a.beta2);
  w.f64(a.epsilon);
  w.u32(static_cast<std::uint32_t>(a.first_moment.size()));
  for (std::size_t i = 0; i < a.first_moment.size(); ++i) {
    put_tensor(w, a.first_moment[i]);
    put_tensor(w, a.second_moment[i]);
  }

  put_names(w, ckpt.text.attr_names);
  put_names(w, ckpt.text.obj_names);
  put_tensor(w, ckpt.text.attr);
  put_tensor(w, ckpt.text.obj);
  w.u32(ckpt.text.frozen ? 1 : 0);

  w.u32(static_cast<std::uint32_t>(ckpt.shallow_blocks.size()));
  for (std::size_t b : ckpt.shallow_blocks) w.u32(static_cast<std::uint32_t>(b));
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("CPFK");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    r.fail("unsupported version " + std::to_string(version), version_at);
  }
  Checkpoint c;
  c.config = r.string32("config");
  c.seed = r.u64("seed");

  CpfParams& p = c.params;
  p.temperature = r.f64("temperature");
  p.alpha_attr = r.f64("alpha_attr");
  p.alpha_obj = r.f64("alpha_obj");
  const std::uint64_t abl_at = r.offset();
  const std::uint32_t abl = r.u32("ablation");
  if (abl > static_cast<std::uint32_t>(Ablation::kNoTeoNoOga)) r.fail("unknown ablation", abl_at);
  p.ablation = static_cast<Ablation>(abl);
  const auto tensors = p.tensors();
  const std::uint64_t count_at = r.offset();
  if (r.u32("tensor count") != tensors.size()) r.fail("wrong parameter tensor count", count_at);
  for (Tensor* t : tensors) *t = get_tensor(r);

  AdamState& a = c.adam;
  a.step = r.u64("adam step");
  a.beta1 = r.f64("beta1");
  a.beta2 = r.f64("beta2");
  a.epsilon = r.f64("epsilon");
  const std::uint64_t moments_at = r.offset();
  const std::uint32_t moments = r.u32("moment count");
  if (moments != 0 && moments != tensors.size() && moments != tensors.size() + 2) {
    r.fail("wrong moment count", moments_at);
  }
  for (std::uint32_t i = 0; i < moments; ++i) {
    a.first_moment.push_back(get_tensor(r));
    a.second_moment.push_back(get_tensor(r));
  }

  c.text.attr_names = get_names(r);
  c.text.obj_names = get_names(r);
  c.text.attr = get_tensor(r);
  c.text.obj = get_tensor(r);
  c.text.frozen = r.u32("frozen") != 0;

  const std::uint32_t nblocks = r.u32("block count");
  if (nblocks > r.remaining() / 4) r.fail("block count exceeds file size", r.offset());
  for (std::uint32_t i = 0; i < nblocks; ++i) c.shallow_blocks.push_back(r.u32("block"));
  if (!r.at_end()) r.fail("trailing bytes", r.offset());

  const std::uint64_t end = r.offset();
  try {
    p.validate();
    c.text.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), end);
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace cpf
