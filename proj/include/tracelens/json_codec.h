#ifndef TRACELENS_JSON_CODEC_H_
#define TRACELENS_JSON_CODEC_H_

// JSON mappings for the human-readable run documents and API payloads.
// Non-finite doubles serialize as null.

#include <json.hpp>

#include "tracelens/run_store.h"
#include "tracelens/trace_model.h"

namespace tracelens {

using json = nlohmann::json;

json number_or_null(double v);

void to_json(json& j, const TensorStats& s);
// null reads back as NaN.
void from_json(const json& j, TensorStats& s);
void to_json(json& j, const NodeSpec& n);
void from_json(const json& j, NodeSpec& n);
void to_json(json& j, const DependencyGraph& g);
void from_json(const json& j, DependencyGraph& g);
void to_json(json& j, const RunManifest& m);
void from_json(const json& j, RunManifest& m);
void to_json(json& j, const ModuleTreeNode& n);
void from_json(const json& j, ModuleTreeNode& n);
void to_json(json& j, const Note& n);
void from_json(const json& j, Note& n);
void to_json(json& j, const ScalarPoint& p);
void from_json(const json& j, ScalarPoint& p);
void to_json(json& j, const ChunkEntry& e);
void from_json(const json& j, ChunkEntry& e);
void to_json(json& j, const IndexDocument& d);
void from_json(const json& j, IndexDocument& d);
void to_json(json& j, const Diagnostic& d);

json meta_to_json(const MetaValue& v);
MetaValue meta_from_json(const json& j);

// Stable text form used for every document on disk: sorted keys, two-space
// indent, trailing newline.
std::string canonical_dump(const json& j);

}  // namespace tracelens

#endif  // TRACELENS_JSON_CODEC_H_
