#ifndef CHARDIFF_CHECKPOINT_HPP
#define CHARDIFF_CHECKPOINT_HPP

#include <map>
#include <string>

#include "json.hpp"

#include "chardiff/tape.hpp"

namespace chardiff {

using ordered_json = nlohmann::ordered_json;

// Checkpoint directory layout:
//   manifest.json  — format tag, caller metadata, tensor table (name -> shape/file)
//   tensors/*.bin  — one raw little-endian f64 blob per named tensor
//
// Param values and any extra tensors (optimizer moments, ...) share one table.

void save_checkpoint(const std::string& dir, const ParamStore& ps, const ordered_json& meta,
                     const std::map<std::string, const Tensor*>& extra = {});

ordered_json load_checkpoint_manifest(const std::string& dir);

// Loads every param registered in `ps` from the checkpoint; throws naming
// the tensor when one is absent or its blob file is missing.
void load_checkpoint_params(const std::string& dir, const ordered_json& manifest, ParamStore& ps);

bool checkpoint_has_tensor(const ordered_json& manifest, const std::string& name);
Tensor load_checkpoint_tensor(const std::string& dir, const ordered_json& manifest,
                              const std::string& name);

// Content hash over the manifest and all tensor blobs (table order).
std::string checkpoint_hash(const std::string& dir);

}  // namespace chardiff

#endif
