#include "rsvp/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "rsvp/error.hpp"

namespace rsvp::model {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'V', 'P', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void str64(std::string_view s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::vector<std::uint8_t> bytes(std::uint64_t n) {
    need(n);
    std::vector<std::uint8_t> b(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }
  std::string str(std::uint64_t n) {
    auto b = bytes(n);
    return {b.begin(), b.end()};
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw IntegrityError("checkpoint is truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
std::vector<std::uint8_t> to_bytes(std::span<const T> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(T));
  for (T v : values) {
    const auto bits = std::bit_cast<Bits<T>>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

template <typename T>
void from_bytes(const std::vector<std::uint8_t>& in, std::span<T> out) {
  for (std::size_t k = 0; k < out.size(); ++k) {
    Bits<T> bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<Bits<T>>(in[k * sizeof(T) + i]) << (8 * i);
    out[k] = std::bit_cast<T>(bits);
  }
}

}  // namespace

std::string_view to_string(StageTag s) {
  switch (s) {
    case StageTag::retrieval: return "retrieval";
    case StageTag::generation: return "generation";
    case StageTag::finetuned: return "finetuned";
  }
  return "?";
}

StageTag parse_stage_tag(std::string_view name) {
  if (name == "retrieval") return StageTag::retrieval;
  if (name == "generation") return StageTag::generation;
  if (name == "finetuned") return StageTag::finetuned;
  throw std::invalid_argument("unknown stage tag '" + std::string(name) + "'");
}

std::optional<std::string> stage_warning(StageTag file_stage, StageTag target) {
  if (static_cast<int>(file_stage) <= static_cast<int>(target)) return std::nullopt;
  return "loading a " + std::string(to_string(file_stage)) + " checkpoint into the " +
         std::string(to_string(target)) + " stage";
}

const CheckpointBlob* Checkpoint::find(std::string_view name) const {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

template <typename T>
CheckpointBlob make_blob(const num::Parameter<T>& p) {
  CheckpointBlob b;
  b.name = p.name();
  b.shape = p.shape();
  b.step = p.step();
  b.value = to_bytes<T>(p.tensor().data());
  b.first_moment = to_bytes<T>(std::span<const T>(p.first_moment()));
  b.second_moment = to_bytes<T>(std::span<const T>(p.second_moment()));
  return b;
}

std::vector<std::uint8_t> serialize_checkpoint_bytes(const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  header["stage"] = std::string(to_string(ckpt.stage));
  header["precision"] = ckpt.precision;

  Writer w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kMagic), 8));
  w.u32(kCheckpointVersion);
  w.str64(header.dump());
  w.u64(ckpt.blobs.size());
  for (const auto& b : ckpt.blobs) {
    w.str32(b.name);
    w.u32(static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) w.u64(d);
    w.u64(b.step);
    w.u64(b.value.size());
    w.bytes(b.value);
    w.u64(b.first_moment.size());
    w.bytes(b.first_moment);
    w.u64(b.second_moment.size());
    w.bytes(b.second_moment);
  }
  const auto sum = fnv1a(w.buffer());
  w.u64(sum);
  return std::move(w.buffer());
}

Checkpoint parse_checkpoint_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    if (bytes.size() < 8) throw IntegrityError("checkpoint is truncated");
    throw IntegrityError("not an RSVP checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.bytes(8);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  const auto header_len = r.u64();
  try {
    ckpt.header = nlohmann::json::parse(r.str(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointBlob b;
    b.name = r.str(r.u32());
    const auto ndim = r.u32();
    for (std::uint32_t d = 0; d < ndim; ++d) b.shape.push_back(static_cast<std::size_t>(r.u64()));
    b.step = r.u64();
    b.value = r.bytes(r.u64());
    b.first_moment = r.bytes(r.u64());
    b.second_moment = r.bytes(r.u64());
    ckpt.blobs.push_back(std::move(b));
  }
  const std::size_t body = r.pos();
  const auto stored = r.u64();
  if (r.pos() != bytes.size()) throw IntegrityError("trailing bytes after checkpoint checksum");
  if (stored != fnv1a(bytes.first(body))) throw IntegrityError("checkpoint checksum mismatch");

  try {
    ckpt.stage = parse_stage_tag(ckpt.header.at("stage").get<std::string>());
    ckpt.precision = ckpt.header.at("precision").get<std::string>();
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("checkpoint header lacks stage/precision: ") + e.what());
  }
  return ckpt;
}

template <typename T>
void write_checkpoint(const std::filesystem::path& path, StageTag stage,
                      const nlohmann::json& header,
                      std::span<const num::Parameter<T>* const> params) {
  Checkpoint ckpt;
  ckpt.stage = stage;
  ckpt.precision = std::string(precision_name<T>());
  ckpt.header = header;
  for (const auto* p : params) ckpt.blobs.push_back(make_blob(*p));
  const auto bytes = serialize_checkpoint_bytes(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint_bytes(bytes);
}

template <typename T>
void restore_parameters(const Checkpoint& ckpt, std::span<num::Parameter<T>* const> targets) {
  if (ckpt.precision != precision_name<T>())
    throw std::invalid_argument("checkpoint precision " + ckpt.precision + " does not match " +
                                std::string(precision_name<T>()));
  for (auto* p : targets) {
    const auto* b = ckpt.find(p->name());
    if (!b) throw IntegrityError("checkpoint has no parameter '" + p->name() + "'");
    if (b->shape != p->shape())
      throw DimensionError("parameter '" + p->name() + "' has shape " + num::shape_str(b->shape) +
                           " in checkpoint but " + num::shape_str(p->shape()) + " in the model");
    const std::size_t n = p->size();
    if (b->value.size() != n * sizeof(T)) throw IntegrityError("payload size mismatch for '" + p->name() + "'");
    from_bytes<T>(b->value, p->tensor().mutable_data());
    p->set_step(b->step);
    auto restore_moment = [&](const std::vector<std::uint8_t>& src, std::vector<T>& dst) {
      dst.assign(n, T(0));
      if (src.empty()) return;
      if (src.size() != n * sizeof(T)) throw IntegrityError("moment size mismatch for '" + p->name() + "'");
      from_bytes<T>(src, std::span<T>(dst));
    };
    restore_moment(b->first_moment, p->first_moment());
    restore_moment(b->second_moment, p->second_moment());
  }
}

#define RSVP_INSTANTIATE(T)                                                                  \
  template CheckpointBlob make_blob(const num::Parameter<T>&);                              \
  template void write_checkpoint<T>(const std::filesystem::path&, StageTag,                 \
                                    const nlohmann::json&,                                  \
                                    std::span<const num::Parameter<T>* const>);             \
  template void restore_parameters<T>(const Checkpoint&, std::span<num::Parameter<T>* const>);

RSVP_INSTANTIATE(float)
RSVP_INSTANTIATE(double)

}  // namespace rsvp::model
