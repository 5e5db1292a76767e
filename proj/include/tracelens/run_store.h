#ifndef TRACELENS_RUN_STORE_H_
#define TRACELENS_RUN_STORE_H_

// On-disk run directory:
//
//   manifest.json    RunManifest (rewritten complete at finalize)
//   graph.json       DependencyGraph
//   network.json     parameter-count module tree (optional)
//   layout.json      {"node_order": [...]} manual ordering override (optional)
//   notes.jsonl      one Note per line
//   scalars.jsonl    one ScalarPoint per line
//   index.json       IndexDocument, written at finalize
//   chunks/NNNNNN.cgt  one binary chunk per recorded step (chunk_format.h)
//
// Chunks are written to a temporary name and renamed into place, so a reader
// of a live run only ever sees complete chunks.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "tracelens/chunk_format.h"
#include "tracelens/trace_model.h"

namespace tracelens {

struct RecordLocation {
  std::string node_id;
  std::string variant_key;
  Mode mode;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const RecordLocation&, const RecordLocation&) = default;
};

// Index entry of one chunk; also what write_step returns.
struct ChunkEntry {
  std::string trial_id;
  std::string category;
  std::uint64_t step = 0;
  std::string file;  // relative to the run directory
  std::uint64_t bytes = 0;
  std::uint32_t crc = 0;
  std::map<std::string, MetaValue> metadata;
  std::vector<RecordLocation> records;

  friend bool operator==(const ChunkEntry&, const ChunkEntry&) = default;
};

// Entries sorted by (trial, category, step).
struct IndexDocument {
  std::uint32_t format_version = kFormatVersion;
  std::vector<ChunkEntry> entries;

  friend bool operator==(const IndexDocument&, const IndexDocument&) = default;
};

struct RunOptions {
  std::string run_id;
  std::uint32_t max_samples = 8;
  double schedule_growth = 1.5;
  // Declared up front; finalize adds everything observed in written steps.
  std::vector<std::string> trial_ids;
  std::vector<std::string> categories;
  std::vector<std::string> losses;
};

namespace run_files {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kGraph = "graph.json";
inline constexpr const char* kNetwork = "network.json";
inline constexpr const char* kLayout = "layout.json";
inline constexpr const char* kNotes = "notes.jsonl";
inline constexpr const char* kScalars = "scalars.jsonl";
inline constexpr const char* kIndex = "index.json";
inline constexpr const char* kChunkDir = "chunks";
}  // namespace run_files

// Single writer of one run directory.
class RunWriter {
 public:
  // Creates `dir` (and parents). Throws kIo if it cannot be created or
  // already holds a manifest.
  static RunWriter create(const std::filesystem::path& dir, RunOptions options);

  RunWriter(RunWriter&&) noexcept;
  RunWriter& operator=(RunWriter&&) noexcept;
  ~RunWriter();

  void write_graph(const DependencyGraph& graph);
  void write_network(const ModuleTreeNode& root);
  void write_layout_override(const std::vector<std::string>& node_order);

  // Validates and writes one chunk. Throws kDuplicateStep if the trial
  // already has this step, kInvalidArgument on invariant violations,
  // kAlreadyFinalized after finalize, kIo on write failure.
  ChunkEntry write_step(const StepRecord& step);

  void add_note(const Note& note);
  void add_scalar(const ScalarPoint& point);

  // Writes index.json and the completed manifest. Throws kAlreadyFinalized
  // when called twice.
  IndexDocument finalize();

  const std::filesystem::path& dir() const { return dir_; }
  const RunManifest& manifest() const { return manifest_; }

 private:
  RunWriter() = default;
  void ensure_open() const;
  void write_manifest() const;

  std::filesystem::path dir_;
  RunManifest manifest_;
  std::vector<ChunkEntry> entries_;
  std::set<std::pair<std::string, std::uint64_t>> written_;
  std::set<std::string> seen_trials_, seen_categories_, seen_losses_;
  std::unique_ptr<std::ofstream> notes_;
  std::unique_ptr<std::ofstream> scalars_;
  bool finalized_ = false;
};

// Reads a run directory. Finalized runs are served from index.json; live runs
// are indexed by scanning the chunk directory, skipping incomplete chunks.
// Thread-safe for concurrent reads.
class RunReader {
 public:
  // Throws kNotFound if there is no manifest, kVersion for an unknown
  // format_version, kCorrupt for unparseable documents.
  static std::shared_ptr<RunReader> open(const std::filesystem::path& dir,
                                         std::size_t header_cache_capacity = 256);

  const std::filesystem::path& dir() const { return dir_; }
  const RunManifest& manifest() const { return manifest_; }
  const DependencyGraph& graph() const { return graph_; }
  bool finalized() const { return manifest_.finalized; }
  const std::vector<ChunkEntry>& chunks() const { return entries_; }
  const std::vector<std::string>& layout_override() const { return layout_; }

  // Full decode with checksum verification.
  StepRecord read_step(const ChunkEntry& chunk) const;
  // Reads one record by its index location, without reading the whole chunk.
  TensorRecord read_record(const ChunkEntry& chunk,
                           const RecordLocation& where) const;

  std::optional<ModuleTreeNode> network() const;
  std::vector<Note> notes() const;
  std::vector<ScalarPoint> scalars() const;

  // Total size of all files in the run directory.
  std::uint64_t storage_bytes() const;

 private:
  RunReader() = default;
  std::shared_ptr<const ChunkHeader> header(const ChunkEntry& chunk) const;

  std::filesystem::path dir_;
  RunManifest manifest_;
  DependencyGraph graph_;
  std::vector<ChunkEntry> entries_;
  std::vector<std::string> layout_;

  // LRU of parsed chunk headers keyed by chunk file.
  mutable std::mutex cache_mu_;
  std::size_t cache_capacity_ = 256;
  mutable std::list<std::string> lru_;
  mutable std::unordered_map<
      std::string, std::pair<std::shared_ptr<const ChunkHeader>,
                             std::list<std::string>::iterator>>
      cache_;
};

// Reads and fully decodes one chunk file.
DecodedChunk read_chunk_file(const std::filesystem::path& file);

struct Diagnostic {
  enum class Severity { kError, kWarning };
  Severity severity = Severity::kError;
  std::string code;
  std::string file;  // relative to the run directory; empty for run-level
  std::string message;
};

// Checks magic, versions, checksums, index completeness, manifest closure,
// and trace_model invariants on every record. Empty result = valid.
std::vector<Diagnostic> validate_run(const std::filesystem::path& dir);

// Reads a whole file; throws kIo.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& file);

}  // namespace tracelens

#endif  // TRACELENS_RUN_STORE_H_
