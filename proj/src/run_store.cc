#include "tracelens/run_store.h"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <tuple>

#include "tracelens/error.h"
#include "tracelens/json_codec.h"

namespace tracelens {
namespace fs = std::filesystem;

namespace {

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    throw Error(ErrorCode::kIo,
                "cannot rename " + tmp.string() + ": " + ec.message());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                    text.size()));
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorrupt,
                "cannot parse " + path.filename().string() + ": " + e.what());
  }
}

template <typename T>
T parse_doc(const json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorrupt, "malformed " + what + ": " + e.what());
  }
}

template <typename T>
std::vector<T> read_jsonl(const fs::path& path) {
  std::vector<T> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kCorrupt, path.filename().string() + " line " +
                                           std::to_string(line_no) + ": " +
                                           e.what());
    }
  }
  return out;
}

std::string chunk_file_name(std::size_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.cgt", seq);
  return std::string(run_files::kChunkDir) + "/" + buf;
}

void sort_entries(std::vector<ChunkEntry>& entries) {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const ChunkEntry& a, const ChunkEntry& b) {
                     return std::tie(a.trial_id, a.category, a.step) <
                            std::tie(b.trial_id, b.category, b.step);
                   });
}

ChunkEntry entry_from_decoded(const DecodedChunk& d, std::string file,
                              std::uint64_t bytes) {
  ChunkEntry e;
  e.trial_id = d.step.trial_id;
  e.category = d.step.category;
  e.step = d.step.step;
  e.file = std::move(file);
  e.bytes = bytes;
  e.crc = d.crc;
  e.metadata = d.step.metadata;
  for (std::size_t i = 0; i < d.step.records.size(); ++i) {
    const auto& r = d.step.records[i];
    e.records.push_back(RecordLocation{r.node_id, r.variant_key, r.mode,
                                       d.records[i].offset, d.records[i].length});
  }
  return e;
}

void merge_names(std::vector<std::string>& declared,
                 const std::set<std::string>& observed) {
  for (const auto& name : observed) {
    if (std::find(declared.begin(), declared.end(), name) == declared.end()) {
      declared.push_back(name);
    }
  }
}

std::vector<std::uint8_t> read_range(const fs::path& file, std::uint64_t offset,
                                     std::uint64_t length) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + file.string());
  std::vector<std::uint8_t> buf(length);
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(length));
  if (static_cast<std::uint64_t>(in.gcount()) != length) {
    throw Error(ErrorCode::kCorrupt, "short read from " + file.string());
  }
  return buf;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + file.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

DecodedChunk read_chunk_file(const fs::path& file) {
  auto bytes = read_file_bytes(file);
  return decode_chunk(bytes);
}

// ---------------------------------------------------------------- RunWriter

RunWriter RunWriter::create(const fs::path& dir, RunOptions options) {
  std::error_code ec;
  fs::create_directories(dir / run_files::kChunkDir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo,
                "cannot create run directory " + dir.string() + ": " + ec.message());
  }
  if (fs::exists(dir / run_files::kManifest)) {
    throw Error(ErrorCode::kIo, dir.string() + " already holds a run");
  }
  RunWriter w;
  w.dir_ = dir;
  w.manifest_.run_id = options.run_id.empty() ? dir.filename().string()
                                              : options.run_id;
  w.manifest_.trial_ids = std::move(options.trial_ids);
  w.manifest_.categories = std::move(options.categories);
  w.manifest_.losses = std::move(options.losses);
  w.manifest_.max_samples = options.max_samples;
  w.manifest_.schedule_growth = options.schedule_growth;
  require_valid(w.manifest_);
  w.write_manifest();
  w.notes_ = std::make_unique<std::ofstream>(dir / run_files::kNotes, std::ios::app);
  w.scalars_ = std::make_unique<std::ofstream>(dir / run_files::kScalars, std::ios::app);
  if (!*w.notes_ || !*w.scalars_) {
    throw Error(ErrorCode::kIo, "cannot open log files in " + dir.string());
  }
  return w;
}

RunWriter::RunWriter(RunWriter&&) noexcept = default;
RunWriter& RunWriter::operator=(RunWriter&&) noexcept = default;
RunWriter::~RunWriter() = default;

void RunWriter::ensure_open() const {
  if (finalized_) {
    throw Error(ErrorCode::kAlreadyFinalized,
                "run " + manifest_.run_id + " is already finalized");
  }
}

void RunWriter::write_manifest() const {
  write_text_atomic(dir_ / run_files::kManifest, canonical_dump(json(manifest_)));
}

void RunWriter::write_graph(const DependencyGraph& graph) {
  ensure_open();
  require_valid(graph);
  write_text_atomic(dir_ / run_files::kGraph, canonical_dump(json(graph)));
}

void RunWriter::write_network(const ModuleTreeNode& root) {
  ensure_open();
  write_text_atomic(dir_ / run_files::kNetwork, canonical_dump(json(root)));
}

void RunWriter::write_layout_override(const std::vector<std::string>& node_order) {
  ensure_open();
  write_text_atomic(dir_ / run_files::kLayout,
                    canonical_dump(json{{"node_order", node_order}}));
}

ChunkEntry RunWriter::write_step(const StepRecord& step) {
  ensure_open();
  require_valid(step, manifest_.max_samples);
  if (!written_.emplace(step.trial_id, step.step).second) {
    throw Error(ErrorCode::kDuplicateStep,
                "step " + std::to_string(step.step) + " of trial '" +
                    step.trial_id + "' was already written");
  }
  EncodedChunk chunk;
  try {
    chunk = encode_chunk(step);
  } catch (...) {
    written_.erase({step.trial_id, step.step});
    throw;
  }
  ChunkEntry e;
  e.trial_id = step.trial_id;
  e.category = step.category;
  e.step = step.step;
  e.file = chunk_file_name(entries_.size());
  e.bytes = chunk.bytes.size();
  e.crc = chunk.crc;
  e.metadata = step.metadata;
  for (std::size_t i = 0; i < step.records.size(); ++i) {
    const auto& r = step.records[i];
    e.records.push_back(RecordLocation{r.node_id, r.variant_key, r.mode,
                                       chunk.records[i].offset,
                                       chunk.records[i].length});
    if (!r.mode.is_forward()) seen_losses_.insert(r.mode.loss_id());
  }
  write_file_atomic(dir_ / e.file, chunk.bytes);
  seen_trials_.insert(step.trial_id);
  seen_categories_.insert(step.category);
  entries_.push_back(e);
  return e;
}

void RunWriter::add_note(const Note& note) {
  ensure_open();
  *notes_ << json(note).dump() << '\n' << std::flush;
  if (!*notes_) throw Error(ErrorCode::kIo, "cannot append to notes log");
}

void RunWriter::add_scalar(const ScalarPoint& point) {
  ensure_open();
  if (point.series.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "scalar: series name must be nonempty");
  }
  *scalars_ << json(point).dump() << '\n' << std::flush;
  if (!*scalars_) throw Error(ErrorCode::kIo, "cannot append to scalar log");
}

IndexDocument RunWriter::finalize() {
  ensure_open();
  IndexDocument index;
  index.entries = entries_;
  sort_entries(index.entries);
  write_text_atomic(dir_ / run_files::kIndex, canonical_dump(json(index)));
  merge_names(manifest_.trial_ids, seen_trials_);
  merge_names(manifest_.categories, seen_categories_);
  merge_names(manifest_.losses, seen_losses_);
  manifest_.finalized = true;
  write_manifest();
  notes_.reset();
  scalars_.reset();
  finalized_ = true;
  return index;
}

// ---------------------------------------------------------------- RunReader

std::shared_ptr<RunReader> RunReader::open(const fs::path& dir,
                                           std::size_t header_cache_capacity) {
  if (!fs::exists(dir / run_files::kManifest)) {
    throw Error(ErrorCode::kNotFound, "no run at " + dir.string());
  }
  std::shared_ptr<RunReader> r(new RunReader());
  r->dir_ = dir;
  r->cache_capacity_ = std::max<std::size_t>(1, header_cache_capacity);
  json mj = read_json(dir / run_files::kManifest);
  const auto version = mj.value("format_version", 0u);
  if (version != kFormatVersion) {
    throw Error(ErrorCode::kVersion,
                "unsupported format_version " + std::to_string(version));
  }
  r->manifest_ = parse_doc<RunManifest>(mj, "manifest");
  if (fs::exists(dir / run_files::kGraph)) {
    r->graph_ = parse_doc<DependencyGraph>(read_json(dir / run_files::kGraph), "graph");
  }
  if (fs::exists(dir / run_files::kLayout)) {
    r->layout_ = parse_doc<std::vector<std::string>>(
        read_json(dir / run_files::kLayout).value("node_order", json::array()),
        "layout");
  }
  if (r->manifest_.finalized && fs::exists(dir / run_files::kIndex)) {
    json ij = read_json(dir / run_files::kIndex);
    if (ij.value("format_version", 0u) != kFormatVersion) {
      throw Error(ErrorCode::kVersion, "unsupported index format_version");
    }
    r->entries_ = parse_doc<IndexDocument>(ij, "index").entries;
  } else {
    // Live run: index whatever complete chunks exist.
    std::vector<fs::path> files;
    std::error_code ec;
    for (const auto& f : fs::directory_iterator(dir / run_files::kChunkDir, ec)) {
      if (f.path().extension() == ".cgt") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        auto bytes = read_file_bytes(f);
        auto decoded = decode_chunk(bytes);
        r->entries_.push_back(entry_from_decoded(
            decoded,
            std::string(run_files::kChunkDir) + "/" + f.filename().string(),
            bytes.size()));
      } catch (const Error&) {
        // incomplete tail chunk
      }
    }
    sort_entries(r->entries_);
  }
  return r;
}

std::shared_ptr<const ChunkHeader> RunReader::header(const ChunkEntry& chunk) const {
  {
    std::lock_guard lock(cache_mu_);
    auto it = cache_.find(chunk.file);
    if (it != cache_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.second);
      return it->second.first;
    }
  }
  std::uint64_t prefix = chunk.bytes;
  for (const auto& r : chunk.records) prefix = std::min(prefix, r.offset);
  auto bytes = read_range(dir_ / chunk.file, 0, prefix);
  auto parsed = std::make_shared<const ChunkHeader>(decode_chunk_header(bytes));
  std::lock_guard lock(cache_mu_);
  if (cache_.count(chunk.file) == 0) {
    lru_.push_front(chunk.file);
    cache_.emplace(chunk.file, std::make_pair(parsed, lru_.begin()));
    while (cache_.size() > cache_capacity_) {
      cache_.erase(lru_.back());
      lru_.pop_back();
    }
  }
  return parsed;
}

StepRecord RunReader::read_step(const ChunkEntry& chunk) const {
  return read_chunk_file(dir_ / chunk.file).step;
}

TensorRecord RunReader::read_record(const ChunkEntry& chunk,
                                    const RecordLocation& where) const {
  auto h = header(chunk);
  auto bytes = read_range(dir_ / chunk.file, where.offset, where.length);
  std::uint64_t used = 0;
  TensorRecord rec = decode_record(bytes, *h, &used);
  if (used != where.length || rec.node_id != where.node_id ||
      rec.variant_key != where.variant_key || rec.mode != where.mode) {
    throw Error(ErrorCode::kCorrupt,
                "index entry does not match record at offset " +
                    std::to_string(where.offset) + " of " + chunk.file);
  }
  return rec;
}

std::optional<ModuleTreeNode> RunReader::network() const {
  if (!fs::exists(dir_ / run_files::kNetwork)) return std::nullopt;
  return parse_doc<ModuleTreeNode>(read_json(dir_ / run_files::kNetwork), "network");
}

std::vector<Note> RunReader::notes() const {
  return read_jsonl<Note>(dir_ / run_files::kNotes);
}

std::vector<ScalarPoint> RunReader::scalars() const {
  return read_jsonl<ScalarPoint>(dir_ / run_files::kScalars);
}

std::uint64_t RunReader::storage_bytes() const {
  std::uint64_t total = 0;
  std::error_code ec;
  for (const auto& f : fs::recursive_directory_iterator(dir_, ec)) {
    if (f.is_regular_file()) total += f.file_size();
  }
  return total;
}

// ---------------------------------------------------------------- validation

namespace {

class DiagnosticSink {
 public:
  void error(std::string code, std::string file, std::string message) {
    out_.push_back({Diagnostic::Severity::kError, std::move(code),
                    std::move(file), std::move(message)});
  }
  void warning(std::string code, std::string file, std::string message) {
    out_.push_back({Diagnostic::Severity::kWarning, std::move(code),
                    std::move(file), std::move(message)});
  }
  std::vector<Diagnostic> take() { return std::move(out_); }

 private:
  std::vector<Diagnostic> out_;
};

std::string chunk_error_code(const Error& e) {
  if (e.code() == ErrorCode::kVersion) return "version";
  if (std::string_view(e.what()).find("checksum") != std::string_view::npos) {
    return "checksum";
  }
  return "corrupt_chunk";
}

bool contains(const std::vector<std::string>& list, const std::string& s) {
  return std::find(list.begin(), list.end(), s) != list.end();
}

}  // namespace

std::vector<Diagnostic> validate_run(const fs::path& dir) {
  DiagnosticSink sink;
  const std::string kManifest = run_files::kManifest;

  RunManifest m;
  try {
    json mj = read_json(dir / run_files::kManifest);
    const auto version = mj.value("format_version", 0u);
    if (version != kFormatVersion) {
      sink.error("version", kManifest,
                 "unsupported format_version " + std::to_string(version));
      return sink.take();
    }
    m = parse_doc<RunManifest>(mj, "manifest");
  } catch (const Error& e) {
    sink.error("manifest", kManifest, e.what());
    return sink.take();
  }
  for (const auto& v : violations(m)) sink.error("manifest_invariant", kManifest, v);
  if (!m.finalized) sink.error("not_finalized", kManifest, "run was never finalized");

  DependencyGraph graph;
  bool have_graph = false;
  try {
    graph = parse_doc<DependencyGraph>(read_json(dir / run_files::kGraph), "graph");
    have_graph = true;
    for (const auto& v : violations(graph)) {
      sink.error("graph_invariant", run_files::kGraph, v);
    }
  } catch (const Error& e) {
    sink.error("graph", run_files::kGraph, e.what());
  }

  IndexDocument index;
  bool have_index = false;
  try {
    json ij = read_json(dir / run_files::kIndex);
    if (ij.value("format_version", 0u) != kFormatVersion) {
      sink.error("version", run_files::kIndex, "unsupported index format_version");
    } else {
      index = parse_doc<IndexDocument>(ij, "index");
      have_index = true;
    }
  } catch (const Error& e) {
    sink.error("index", run_files::kIndex, e.what());
  }

  std::set<std::string> on_disk;
  {
    std::error_code ec;
    for (const auto& f : fs::directory_iterator(dir / run_files::kChunkDir, ec)) {
      const auto name = std::string(run_files::kChunkDir) + "/" + f.path().filename().string();
      if (f.path().extension() == ".cgt") {
        on_disk.insert(name);
      } else {
        sink.warning("stray_file", name, "unexpected file in chunk directory");
      }
    }
  }

  std::set<std::string> used_trials, used_categories, used_losses;
  std::map<std::pair<std::string, std::string>, std::uint32_t> features_of;
  std::set<std::pair<std::string, std::uint64_t>> steps_seen;

  auto check_step = [&](const std::string& file, const StepRecord& step) {
    used_trials.insert(step.trial_id);
    used_categories.insert(step.category);
    if (!steps_seen.emplace(step.trial_id, step.step).second) {
      sink.error("duplicate_step", file,
                 "step " + std::to_string(step.step) + " of trial '" +
                     step.trial_id + "' appears in more than one chunk");
    }
    for (const auto& v : violations(step, m.max_samples)) {
      sink.error("record_invariant", file, v);
    }
    if (!contains(m.trial_ids, step.trial_id)) {
      sink.error("manifest_closure", file,
                 "trial '" + step.trial_id + "' missing from manifest");
    }
    if (!contains(m.categories, step.category)) {
      sink.error("manifest_closure", file,
                 "category '" + step.category + "' missing from manifest");
    }
    for (const auto& r : step.records) {
      const std::string where = "[" + r.node_id + "/" + r.variant_key + "/" +
                                r.mode.key() + "] ";
      if (!r.mode.is_forward()) {
        used_losses.insert(r.mode.loss_id());
        if (!contains(m.losses, r.mode.loss_id())) {
          sink.error("manifest_closure", file,
                     where + "loss '" + r.mode.loss_id() + "' missing from manifest");
        }
      }
      if (have_graph) {
        const NodeSpec* spec = graph.find(r.node_id);
        if (spec == nullptr) {
          sink.error("unknown_node", file, where + "node not in graph");
        } else {
          if (!contains(spec->variant_keys, r.variant_key)) {
            sink.error("unknown_variant", file, where + "variant not declared on node");
          }
          if (spec->role == Role::kParameter &&
              (r.batch != 1 || !r.sample_indices.empty())) {
            sink.error("record_invariant", file,
                       where + "parameter records must have batch 1 and no samples");
          }
        }
      }
      auto [it, fresh] = features_of.emplace(std::make_pair(r.node_id, r.variant_key),
                                             r.features);
      if (!fresh && it->second != r.features) {
        sink.error("shape_mismatch", file,
                   where + "features " + std::to_string(r.features) +
                       " differ from " + std::to_string(it->second) +
                       " recorded elsewhere");
      }
    }
  };

  std::set<std::string> indexed;
  if (have_index) {
    for (std::size_t i = 0; i < index.entries.size(); ++i) {
      const ChunkEntry& e = index.entries[i];
      indexed.insert(e.file);
      if (i > 0) {
        const ChunkEntry& p = index.entries[i - 1];
        if (std::tie(p.trial_id, p.category, p.step) >=
            std::tie(e.trial_id, e.category, e.step)) {
          sink.error("index_order", run_files::kIndex,
                     "entries must be strictly ascending by (trial, category, step) at " +
                         e.file);
        }
      }
      if (!on_disk.count(e.file)) {
        sink.error("missing_chunk", e.file, "indexed chunk file does not exist");
        continue;
      }
      std::vector<std::uint8_t> bytes;
      try {
        bytes = read_file_bytes(dir / e.file);
      } catch (const Error& err) {
        sink.error("io", e.file, err.what());
        continue;
      }
      if (bytes.size() != e.bytes) {
        sink.error("size_mismatch", e.file,
                   "chunk has " + std::to_string(bytes.size()) +
                       " bytes, index says " + std::to_string(e.bytes));
      }
      DecodedChunk d;
      try {
        d = decode_chunk(bytes);
      } catch (const Error& err) {
        sink.error(chunk_error_code(err), e.file, err.what());
        continue;
      }
      if (d.crc != e.crc) {
        sink.error("checksum", e.file, "chunk checksum differs from index");
      }
      if (d.step.trial_id != e.trial_id || d.step.category != e.category ||
          d.step.step != e.step || d.step.metadata != e.metadata) {
        sink.error("index_mismatch", e.file,
                   "chunk header does not match its index entry");
      }
      ChunkEntry actual = entry_from_decoded(d, e.file, bytes.size());
      if (actual.records != e.records) {
        sink.error("index_mismatch", e.file,
                   "record offsets in the index do not match the chunk");
      }
      check_step(e.file, d.step);
    }
  }
  for (const auto& file : on_disk) {
    if (indexed.count(file)) continue;
    if (have_index) sink.error("unindexed_chunk", file, "chunk is not listed in the index");
    try {
      check_step(file, read_chunk_file(dir / file).step);
    } catch (const Error& err) {
      sink.error(chunk_error_code(err), file, err.what());
    }
  }

  for (const auto& t : m.trial_ids) {
    if (!used_trials.count(t)) {
      sink.warning("unused_trial", kManifest, "trial '" + t + "' has no recorded steps");
    }
  }
  for (const auto& c : m.categories) {
    if (!used_categories.count(c)) {
      sink.warning("unused_category", kManifest,
                   "category '" + c + "' has no recorded steps");
    }
  }
  for (const auto& l : m.losses) {
    if (!used_losses.count(l)) {
      sink.warning("unused_loss", kManifest, "loss '" + l + "' is never recorded");
    }
  }

  for (const char* log : {run_files::kNotes, run_files::kScalars}) {
    try {
      if (std::string(log) == run_files::kNotes) {
        read_jsonl<Note>(dir / log);
      } else {
        read_jsonl<ScalarPoint>(dir / log);
      }
    } catch (const Error& e) {
      sink.error("log", log, e.what());
    }
  }
  if (fs::exists(dir / run_files::kNetwork)) {
    try {
      parse_doc<ModuleTreeNode>(read_json(dir / run_files::kNetwork), "network");
    } catch (const Error& e) {
      sink.error("network", run_files::kNetwork, e.what());
    }
  }
  return sink.take();
}

}  // namespace tracelens
