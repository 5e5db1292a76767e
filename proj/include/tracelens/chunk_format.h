#ifndef TRACELENS_CHUNK_FORMAT_H_
#define TRACELENS_CHUNK_FORMAT_H_

// Binary layout of one recorded step ("chunk"). All integers little-endian.
//
//   magic            "CGT1"
//   format_version   u32
//   trial_id         u32 length + UTF-8 bytes
//   category         u32 length + UTF-8 bytes
//   step             u64
//   string table     u32 count, then count x (u32 length + UTF-8 bytes)
//   metadata         u32 count, then count x (u32 key ref, u8 tag, value)
//                    tag 0: i64, tag 1: f64, tag 2: u32 string ref
//   record count     u32
//   records          see below
//   crc32            u32 over every preceding byte
//
// Each record:
//   node ref u32, variant ref u32, mode u8 (0 forward, 1 gradient)
//   [loss ref u32 when gradient], batch u32, features u32,
//   aggregate stats block, `features` per-neuron stats blocks,
//   sample row count u8, sample indices u32 each, rows x features f32.
//
// A stats block is 80 bytes: count u64; mean, std, abs_mean, min, max,
// l2_norm, frac_zero as f64; count_nan u64; count_inf u64.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tracelens/trace_model.h"

namespace tracelens {

inline constexpr char kChunkMagic[4] = {'C', 'G', 'T', '1'};
inline constexpr std::size_t kStatsBlockBytes = 80;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

struct RecordSpan {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct EncodedChunk {
  std::vector<std::uint8_t> bytes;
  // Byte range of each record, parallel to StepRecord::records.
  std::vector<RecordSpan> records;
  std::uint32_t crc = 0;
};

// Throws kShape if a record holds more than 255 sample rows.
EncodedChunk encode_chunk(const StepRecord& step);

// Everything before the first record.
struct ChunkHeader {
  std::uint32_t format_version = 0;
  std::string trial_id;
  std::string category;
  std::uint64_t step = 0;
  std::vector<std::string> strings;
  std::map<std::string, MetaValue> metadata;
  std::uint32_t record_count = 0;
  std::uint64_t records_offset = 0;  // byte offset of the first record
};

// Parses the header. Throws kCorrupt on bad magic or truncation and
// kVersion on an unknown format version. Does not check the CRC.
ChunkHeader decode_chunk_header(std::span<const std::uint8_t> bytes);

// Decodes a single record that starts at `bytes[0]`, resolving string refs
// through `header`. Sets *consumed to the record length when non-null.
TensorRecord decode_record(std::span<const std::uint8_t> bytes,
                           const ChunkHeader& header,
                           std::uint64_t* consumed = nullptr);

struct DecodedChunk {
  StepRecord step;
  std::vector<RecordSpan> records;
  std::uint32_t crc = 0;
};

// Full decode. Verifies the trailing CRC first (kCorrupt on mismatch), then
// parses every record and requires the payload to end exactly at the CRC.
DecodedChunk decode_chunk(std::span<const std::uint8_t> bytes);

}  // namespace tracelens

#endif  // TRACELENS_CHUNK_FORMAT_H_
