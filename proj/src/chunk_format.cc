#include "tracelens/chunk_format.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <unordered_map>

#include "tracelens/error.h"

namespace tracelens {
namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::size_t size() const { return out_.size(); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect(const char* p, std::size_t n, const char* what) {
    need(n);
    if (std::memcmp(bytes_.data() + pos_, p, n) != 0) {
      throw Error(ErrorCode::kCorrupt, std::string("chunk: bad ") + what);
    }
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kCorrupt,
                  "chunk: truncated at byte " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_stats(ByteWriter& w, const TensorStats& s) {
  w.u64(s.count);
  w.f64(s.mean);
  w.f64(s.std);
  w.f64(s.abs_mean);
  w.f64(s.min);
  w.f64(s.max);
  w.f64(s.l2_norm);
  w.f64(s.frac_zero);
  w.u64(s.count_nan);
  w.u64(s.count_inf);
}

TensorStats read_stats(ByteReader& r) {
  TensorStats s;
  s.count = r.u64();
  s.mean = r.f64();
  s.std = r.f64();
  s.abs_mean = r.f64();
  s.min = r.f64();
  s.max = r.f64();
  s.l2_norm = r.f64();
  s.frac_zero = r.f64();
  s.count_nan = r.u64();
  s.count_inf = r.u64();
  return s;
}

class StringTable {
 public:
  std::uint32_t ref(const std::string& s) {
    auto [it, inserted] =
        index_.emplace(s, static_cast<std::uint32_t>(strings_.size()));
    if (inserted) strings_.push_back(s);
    return it->second;
  }
  const std::vector<std::string>& strings() const { return strings_; }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> strings_;
};

const std::string& lookup(const ChunkHeader& h, std::uint32_t ref) {
  if (ref >= h.strings.size()) {
    throw Error(ErrorCode::kCorrupt,
                "chunk: string ref " + std::to_string(ref) + " out of range");
  }
  return h.strings[ref];
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded pieces.
  constexpr std::size_t kPiece = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kPiece) {
    std::size_t n = std::min(kPiece, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

EncodedChunk encode_chunk(const StepRecord& step) {
  StringTable table;
  for (const auto& rec : step.records) {
    table.ref(rec.node_id);
    table.ref(rec.variant_key);
    if (!rec.mode.is_forward()) table.ref(rec.mode.loss_id());
    if (rec.sample_indices.size() > 255) {
      throw Error(ErrorCode::kShape,
                  "chunk: at most 255 sample rows per record are supported");
    }
  }
  for (const auto& [key, value] : step.metadata) {
    table.ref(key);
    if (const auto* s = std::get_if<std::string>(&value)) table.ref(*s);
  }

  ByteWriter w;
  w.raw(kChunkMagic, sizeof(kChunkMagic));
  w.u32(kFormatVersion);
  w.str(step.trial_id);
  w.str(step.category);
  w.u64(step.step);
  w.u32(static_cast<std::uint32_t>(table.strings().size()));
  for (const auto& s : table.strings()) w.str(s);
  w.u32(static_cast<std::uint32_t>(step.metadata.size()));
  for (const auto& [key, value] : step.metadata) {
    w.u32(table.ref(key));
    if (const auto* i = std::get_if<std::int64_t>(&value)) {
      w.u8(0);
      w.u64(static_cast<std::uint64_t>(*i));
    } else if (const auto* d = std::get_if<double>(&value)) {
      w.u8(1);
      w.f64(*d);
    } else {
      w.u8(2);
      w.u32(table.ref(std::get<std::string>(value)));
    }
  }
  w.u32(static_cast<std::uint32_t>(step.records.size()));

  EncodedChunk out;
  for (const auto& rec : step.records) {
    const std::size_t start = w.size();
    w.u32(table.ref(rec.node_id));
    w.u32(table.ref(rec.variant_key));
    if (rec.mode.is_forward()) {
      w.u8(0);
    } else {
      w.u8(1);
      w.u32(table.ref(rec.mode.loss_id()));
    }
    w.u32(rec.batch);
    w.u32(rec.features);
    write_stats(w, rec.aggregate);
    for (const auto& s : rec.per_neuron) write_stats(w, s);
    w.u8(static_cast<std::uint8_t>(rec.sample_indices.size()));
    for (std::uint32_t i : rec.sample_indices) w.u32(i);
    for (float v : rec.samples) w.f32(v);
    out.records.push_back({start, w.size() - start});
  }
  out.crc = crc32(w.bytes());
  w.u32(out.crc);
  out.bytes = std::move(w.bytes());
  return out;
}

ChunkHeader decode_chunk_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect(kChunkMagic, sizeof(kChunkMagic), "magic");
  ChunkHeader h;
  h.format_version = r.u32();
  if (h.format_version != kFormatVersion) {
    throw Error(ErrorCode::kVersion,
                "chunk: unsupported format_version " +
                    std::to_string(h.format_version));
  }
  h.trial_id = r.str();
  h.category = r.str();
  h.step = r.u64();
  std::uint32_t n_strings = r.u32();
  if (n_strings > r.remaining() / 4) {
    throw Error(ErrorCode::kCorrupt, "chunk: string table size out of range");
  }
  h.strings.reserve(n_strings);
  for (std::uint32_t i = 0; i < n_strings; ++i) h.strings.push_back(r.str());
  std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = lookup(h, r.u32());
    std::uint8_t tag = r.u8();
    MetaValue value;
    switch (tag) {
      case 0:
        value = static_cast<std::int64_t>(r.u64());
        break;
      case 1:
        value = r.f64();
        break;
      case 2:
        value = lookup(h, r.u32());
        break;
      default:
        throw Error(ErrorCode::kCorrupt,
                    "chunk: unknown metadata tag " + std::to_string(tag));
    }
    h.metadata.emplace(std::move(key), std::move(value));
  }
  h.record_count = r.u32();
  h.records_offset = r.pos();
  return h;
}

TensorRecord decode_record(std::span<const std::uint8_t> bytes,
                           const ChunkHeader& header, std::uint64_t* consumed) {
  ByteReader r(bytes);
  TensorRecord rec;
  rec.node_id = lookup(header, r.u32());
  rec.variant_key = lookup(header, r.u32());
  std::uint8_t mode = r.u8();
  if (mode == 0) {
    rec.mode = Mode::forward();
  } else if (mode == 1) {
    std::string loss = lookup(header, r.u32());
    if (loss.empty()) throw Error(ErrorCode::kCorrupt, "chunk: empty loss id");
    rec.mode = Mode::gradient(std::move(loss));
  } else {
    throw Error(ErrorCode::kCorrupt,
                "chunk: unknown mode tag " + std::to_string(mode));
  }
  rec.batch = r.u32();
  rec.features = r.u32();
  rec.aggregate = read_stats(r);
  if (rec.features > r.remaining() / kStatsBlockBytes) {
    throw Error(ErrorCode::kCorrupt, "chunk: feature count exceeds payload");
  }
  rec.per_neuron.reserve(rec.features);
  for (std::uint32_t j = 0; j < rec.features; ++j) {
    rec.per_neuron.push_back(read_stats(r));
  }
  std::uint8_t rows = r.u8();
  rec.sample_indices.reserve(rows);
  for (std::uint8_t i = 0; i < rows; ++i) rec.sample_indices.push_back(r.u32());
  const std::size_t n = std::size_t{rows} * rec.features;
  if (n > r.remaining() / 4) {
    throw Error(ErrorCode::kCorrupt, "chunk: sample payload exceeds chunk");
  }
  rec.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rec.samples.push_back(r.f32());
  if (consumed) *consumed = r.pos();
  return rec;
}

DecodedChunk decode_chunk(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kChunkMagic) + 4 + 4) {
    throw Error(ErrorCode::kCorrupt, "chunk: too short");
  }
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32(body);
  if (stored != actual) {
    throw Error(ErrorCode::kCorrupt, "chunk: checksum mismatch");
  }
  ChunkHeader h = decode_chunk_header(body);
  DecodedChunk out;
  out.crc = actual;
  out.step.trial_id = h.trial_id;
  out.step.category = h.category;
  out.step.step = h.step;
  out.step.metadata = h.metadata;
  std::uint64_t pos = h.records_offset;
  for (std::uint32_t i = 0; i < h.record_count; ++i) {
    std::uint64_t used = 0;
    out.step.records.push_back(decode_record(body.subspan(pos), h, &used));
    out.records.push_back({pos, used});
    pos += used;
  }
  if (pos != body.size()) {
    throw Error(ErrorCode::kCorrupt, "chunk: trailing bytes after last record");
  }
  return out;
}

}  // namespace tracelens
