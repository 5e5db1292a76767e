#include "tracelens/query.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "tracelens/error.h"
#include "tracelens/graph.h"
#include "tracelens/json_codec.h"

namespace tracelens {
namespace fs = std::filesystem;

namespace {

fs::file_time_type dir_stamp(const fs::path& dir) {
  std::error_code ec;
  auto stamp = fs::last_write_time(dir / run_files::kManifest, ec);
  auto chunks = fs::last_write_time(dir / run_files::kChunkDir, ec);
  if (!ec) stamp = std::max(stamp, chunks);
  return stamp;
}

bool matches_filters(const ChunkEntry& c, const std::optional<std::string>& category,
                     const std::optional<std::pair<std::string, std::string>>& meta) {
  if (category && c.category != *category) return false;
  if (meta) {
    auto it = c.metadata.find(meta->first);
    if (it == c.metadata.end() || meta_value_text(it->second) != meta->second) {
      return false;
    }
  }
  return true;
}

std::string retained_detail(const std::vector<std::uint32_t>& retained) {
  return json{{"retained", retained}}.dump();
}

}  // namespace

LoadedRun::LoadedRun(std::shared_ptr<RunReader> reader) : reader_(std::move(reader)) {
  const auto& chunks = reader_->chunks();
  by_record_.resize(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    by_step_.emplace(std::make_pair(chunks[i].trial_id, chunks[i].step), i);
    const auto& locs = chunks[i].records;
    for (std::size_t j = 0; j < locs.size(); ++j) {
      by_record_[i].emplace(RecordKey{locs[j].node_id, locs[j].variant_key, locs[j].mode}, j);
    }
  }
}

const ChunkEntry* LoadedRun::chunk(const std::string& trial, std::uint64_t step) const {
  auto it = by_step_.find({trial, step});
  return it == by_step_.end() ? nullptr : &reader_->chunks()[it->second];
}

const RecordLocation* LoadedRun::location(const ChunkEntry& chunk,
                                          const std::string& node,
                                          const std::string& variant,
                                          const Mode& mode) const {
  const std::size_t i = static_cast<std::size_t>(&chunk - reader_->chunks().data());
  const auto& m = by_record_.at(i);
  auto it = m.find(RecordKey{node, variant, mode});
  return it == m.end() ? nullptr : &chunk.records[it->second];
}

bool LoadedRun::has_trial(const std::string& trial) const {
  const auto& ids = manifest().trial_ids;
  if (std::find(ids.begin(), ids.end(), trial) != ids.end()) return true;
  auto it = by_step_.lower_bound({trial, 0});
  return it != by_step_.end() && it->first.first == trial;
}

QueryService::QueryService(fs::path data_root, std::size_t header_cache_capacity)
    : root_(std::move(data_root)), cache_capacity_(header_cache_capacity) {}

fs::path QueryService::run_dir(const std::string& run_id) const {
  if (run_id.empty() || run_id == "." || run_id == ".." ||
      run_id.find_first_of("/\\") != std::string::npos) {
    throw Error(ErrorCode::kNotFound, "unknown run '" + run_id + "'");
  }
  return root_ / run_id;
}

std::vector<RunSummary> QueryService::list_runs() {
  std::vector<std::string> ids;
  std::error_code ec;
  for (const auto& d : fs::directory_iterator(root_, ec)) {
    if (d.is_directory() && fs::exists(d.path() / run_files::kManifest)) {
      ids.push_back(d.path().filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  std::vector<RunSummary> out;
  for (const auto& id : ids) {
    std::shared_ptr<const LoadedRun> r;
    try {
      r = run(id);
    } catch (const Error&) {
      continue;  // unreadable runs are reported by validate, not listed
    }
    const RunManifest& m = r->manifest();
    RunSummary s;
    s.run_id = id;
    s.finalized = m.finalized;
    s.trial_ids = m.trial_ids;
    s.categories = m.categories;
    s.losses = m.losses;
    s.recorded_steps = r->reader().chunks().size();
    s.node_count = r->graph().nodes.size();
    out.push_back(std::move(s));
  }
  return out;
}

std::shared_ptr<const LoadedRun> QueryService::run(const std::string& run_id) {
  const fs::path dir = run_dir(run_id);
  std::lock_guard lock(mu_);
  auto it = runs_.find(run_id);
  if (it != runs_.end() && it->second.run->manifest().finalized) {
    return it->second.run;
  }
  if (!fs::exists(dir / run_files::kManifest)) {
    throw Error(ErrorCode::kNotFound, "unknown run '" + run_id + "'");
  }
  const auto stamp = dir_stamp(dir);
  if (it != runs_.end() && it->second.stamp == stamp) return it->second.run;
  auto loaded = std::make_shared<const LoadedRun>(RunReader::open(dir, cache_capacity_));
  runs_[run_id] = Slot{loaded, stamp};
  return loaded;
}

RunManifest QueryService::get_manifest(const std::string& run_id) {
  return run(run_id)->manifest();
}

DependencyGraph QueryService::get_graph(const std::string& run_id) {
  return run(run_id)->graph();
}

std::vector<std::vector<std::string>> QueryService::get_layout(const std::string& run_id) {
  auto r = run(run_id);
  return layered_order(r->graph(), r->reader().layout_override());
}

StepListing QueryService::list_steps(
    const std::string& run_id, const std::string& trial,
    const std::optional<std::string>& category,
    const std::optional<std::pair<std::string, std::string>>& metadata) {
  auto r = run(run_id);
  if (!r->has_trial(trial)) {
    throw Error(ErrorCode::kNotFound, "unknown trial '" + trial + "'");
  }
  StepListing out;
  std::map<std::string, std::set<std::string>> values;
  std::set<std::string> categories;
  for (const auto& c : r->reader().chunks()) {
    if (c.trial_id != trial) continue;
    categories.insert(c.category);
    for (const auto& [k, v] : c.metadata) values[k].insert(meta_value_text(v));
    if (matches_filters(c, category, metadata)) out.steps.push_back(c.step);
  }
  std::sort(out.steps.begin(), out.steps.end());
  for (auto& [k, v] : values) out.metadata_values[k].assign(v.begin(), v.end());
  out.categories.assign(categories.begin(), categories.end());
  return out;
}

RecordPayload QueryService::get_record(const std::string& run_id,
                                       const SelectorTuple& sel) {
  auto r = run(run_id);
  if (!r->has_trial(sel.trial_id)) {
    throw Error(ErrorCode::kNotFound, "unknown trial '" + sel.trial_id + "'");
  }
  const NodeSpec* spec = r->graph().find(sel.node_id);
  if (spec == nullptr) {
    throw Error(ErrorCode::kNotFound, "unknown node '" + sel.node_id + "'");
  }
  if (std::find(spec->variant_keys.begin(), spec->variant_keys.end(),
                sel.variant_key) == spec->variant_keys.end()) {
    throw Error(ErrorCode::kNotFound, "node '" + sel.node_id + "' has no variant '" +
                                          sel.variant_key + "'");
  }
  if (!sel.mode.is_forward()) {
    const auto& losses = r->manifest().losses;
    if (std::find(losses.begin(), losses.end(), sel.mode.loss_id()) == losses.end()) {
      throw Error(ErrorCode::kNotFound, "unknown loss '" + sel.mode.loss_id() + "'");
    }
  }
  const ChunkEntry* chunk = r->chunk(sel.trial_id, sel.step);
  if (chunk == nullptr) {
    throw Error(ErrorCode::kNotFound, "step " + std::to_string(sel.step) +
                                          " is not recorded for trial '" +
                                          sel.trial_id + "'");
  }
  if (!matches_filters(*chunk, sel.category_filter, sel.metadata_filter)) {
    throw Error(ErrorCode::kNotFound,
                "step " + std::to_string(sel.step) + " does not match the step filter");
  }
  const RecordLocation* where =
      r->location(*chunk, sel.node_id, sel.variant_key, sel.mode);
  if (where == nullptr) {
    throw Error(ErrorCode::kNotRecorded, sel.node_id + "/" + sel.variant_key + " " +
                                             sel.mode.key() + " not recorded at step " +
                                             std::to_string(sel.step));
  }
  TensorRecord rec = r->reader().read_record(*chunk, *where);

  RecordPayload p;
  p.trial_id = chunk->trial_id;
  p.step = chunk->step;
  p.category = chunk->category;
  p.node_id = rec.node_id;
  p.variant_key = rec.variant_key;
  p.mode = rec.mode;
  p.batch = rec.batch;
  p.features = rec.features;
  p.view = sel.view;
  p.retained_samples = rec.sample_indices;
  switch (sel.view.kind) {
    case ViewKind::kAggregate:
      p.aggregate = rec.aggregate;
      break;
    case ViewKind::kPerNeuron:
      p.per_neuron = std::move(rec.per_neuron);
      break;
    case ViewKind::kSample: {
      auto row = rec.find_sample(sel.view.sample_index);
      if (!row) {
        throw Error(ErrorCode::kSampleNotRetained,
                    "sample " + std::to_string(sel.view.sample_index) +
                        " is not retained",
                    retained_detail(rec.sample_indices));
      }
      SampleView s;
      s.index = sel.view.sample_index;
      auto values = rec.sample_row(*row);
      s.values.assign(values.begin(), values.end());
      s.z = zscore(values, rec.per_neuron);
      p.sample = std::move(s);
      break;
    }
  }
  return p;
}

std::vector<OutlierHit> QueryService::outlier_trace(const std::string& run_id,
                                                    const std::string& trial,
                                                    std::uint64_t step,
                                                    std::uint32_t sample_index,
                                                    double threshold) {
  auto r = run(run_id);
  if (!r->has_trial(trial)) {
    throw Error(ErrorCode::kNotFound, "unknown trial '" + trial + "'");
  }
  const ChunkEntry* chunk = r->chunk(trial, step);
  if (chunk == nullptr) {
    throw Error(ErrorCode::kNotFound, "step " + std::to_string(step) + " is not recorded");
  }
  const auto& layers = r->graph().layer;
  std::vector<OutlierHit> hits;
  std::set<std::uint32_t> retained;
  bool found = false;
  for (const auto& loc : chunk->records) {
    if (!loc.mode.is_forward()) continue;
    TensorRecord rec = r->reader().read_record(*chunk, loc);
    retained.insert(rec.sample_indices.begin(), rec.sample_indices.end());
    auto row = rec.find_sample(sample_index);
    if (!row) continue;
    found = true;
    ZScores zs = zscore(rec.sample_row(*row), rec.per_neuron);
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < zs.z.size(); ++j) {
      const double score = std::isnan(zs.z[j])
                               ? std::numeric_limits<double>::infinity()
                               : std::abs(zs.z[j]);
      if (score > best) {
        best = score;
        best_j = j;
      }
    }
    if (zs.z.empty() || best < threshold) continue;
    auto layer = layers.find(rec.node_id);
    hits.push_back({rec.node_id, rec.variant_key,
                    layer == layers.end() ? 0u : layer->second,
                    static_cast<std::uint32_t>(best_j), zs.z[best_j],
                    static_cast<bool>(zs.degenerate[best_j])});
  }
  if (!found) {
    throw Error(ErrorCode::kSampleNotRetained,
                "sample " + std::to_string(sample_index) +
                    " is not retained by any forward record at step " +
                    std::to_string(step),
                retained_detail({retained.begin(), retained.end()}));
  }
  std::sort(hits.begin(), hits.end(), [](const OutlierHit& a, const OutlierHit& b) {
    return std::tie(a.layer, a.node_id, a.variant_key) <
           std::tie(b.layer, b.node_id, b.variant_key);
  });
  return hits;
}

GradientBalance QueryService::gradient_balance(const std::string& run_id,
                                               const std::string& trial,
                                               std::uint64_t step,
                                               const std::string& node,
                                               const std::optional<std::string>& loss) {
  auto r = run(run_id);
  if (!r->has_trial(trial)) {
    throw Error(ErrorCode::kNotFound, "unknown trial '" + trial + "'");
  }
  const auto& losses = r->manifest().losses;
  std::string loss_id;
  if (loss) {
    if (std::find(losses.begin(), losses.end(), *loss) == losses.end()) {
      throw Error(ErrorCode::kNotFound, "unknown loss '" + *loss + "'");
    }
    loss_id = *loss;
  } else if (std::find(losses.begin(), losses.end(), kCombinedLoss) != losses.end()) {
    loss_id = std::string(kCombinedLoss);
  } else if (losses.size() == 1) {
    loss_id = losses.front();
  } else {
    throw Error(ErrorCode::kInvalidArgument,
                "run has several losses and no combined loss; name one");
  }
  const ChunkEntry* chunk = r->chunk(trial, step);
  if (chunk == nullptr) {
    throw Error(ErrorCode::kNotFound, "step " + std::to_string(step) + " is not recorded");
  }
  const DependencyGraph& g = r->graph();
  const Neighbors nb = neighbors(g, node);
  const Mode mode = Mode::gradient(loss_id);

  GradientBalance out;
  out.node_id = node;
  out.loss_id = loss_id;
  for (const auto& succ : nb.successors) {
    const NodeSpec* spec = g.find(succ);
    SuccessorGradient sg;
    sg.node_id = succ;
    sg.layer = g.layer.at(succ);
    std::optional<TensorStats> merged;
    for (const auto& variant : spec->variant_keys) {
      const RecordLocation* loc = r->location(*chunk, succ, variant, mode);
      if (loc == nullptr) continue;
      TensorStats s = r->reader().read_record(*chunk, *loc).aggregate;
      merged = merged ? merge(*merged, s) : s;
      ++sg.variants;
    }
    if (!merged) continue;
    sg.abs_mean = merged->abs_mean;
    out.successors.push_back(sg);
  }
  if (out.successors.size() < 2) {
    throw Error(ErrorCode::kInsufficientData,
                "node '" + node + "' has " + std::to_string(out.successors.size()) +
                    " successor(s) with " + mode.key() + " records at step " +
                    std::to_string(step) + "; need 2");
  }
  auto [lo, hi] = std::minmax_element(
      out.successors.begin(), out.successors.end(),
      [](const auto& a, const auto& b) { return a.abs_mean < b.abs_mean; });
  out.ratio = lo->abs_mean == 0.0 ? (hi->abs_mean == 0.0
                                         ? 1.0
                                         : std::numeric_limits<double>::infinity())
                                  : hi->abs_mean / lo->abs_mean;
  return out;
}

ModuleTreeNode QueryService::get_network_tree(const std::string& run_id) {
  auto tree = run(run_id)->reader().network();
  if (!tree) throw Error(ErrorCode::kNotFound, "run has no network tree");
  return *tree;
}

std::vector<Note> QueryService::get_notes(const std::string& run_id,
                                          std::uint64_t from, std::uint64_t to) {
  std::vector<Note> out;
  for (auto& n : run(run_id)->reader().notes()) {
    if (n.step >= from && n.step <= to) out.push_back(std::move(n));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Note& a, const Note& b) { return a.step < b.step; });
  return out;
}

std::vector<std::string> QueryService::list_series(const std::string& run_id) {
  std::set<std::string> names;
  for (const auto& p : run(run_id)->reader().scalars()) names.insert(p.series);
  return {names.begin(), names.end()};
}

std::vector<ScalarPoint> QueryService::get_scalars(const std::string& run_id,
                                                   const std::string& series,
                                                   std::uint64_t from, std::uint64_t to) {
  bool known = false;
  std::vector<ScalarPoint> out;
  for (auto& p : run(run_id)->reader().scalars()) {
    if (p.series != series) continue;
    known = true;
    if (p.step >= from && p.step <= to) out.push_back(std::move(p));
  }
  if (!known) throw Error(ErrorCode::kNotFound, "unknown scalar series '" + series + "'");
  std::stable_sort(out.begin(), out.end(), [](const ScalarPoint& a, const ScalarPoint& b) {
    return a.step < b.step;
  });
  return out;
}

}  // namespace tracelens
