#pragma once

// Checkpoint file layout:
//
//   TFBEST-CHECKPOINT
//   format_version=1
//   precision=float32
//   <config and output-scaling keys>
//   meta.<key>=<value>            (free-form provenance: seeds, optimizer settings)
//   param=<name> <d0xd1...> <byte offset> <element count>
//   blob_bytes=<n>
//   end_manifest
//   <n bytes: parameters as little-endian IEEE-754 float32, manifest order>
//
// Loading is bit-exact: a saved and reloaded model predicts identically.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tfbest/model.hpp"

namespace tfbest {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointEntry {
  std::string name;
  ad::Shape shape;
  std::size_t offset = 0;  // bytes from the start of the blob
  std::size_t count = 0;
};

struct CheckpointManifest {
  int format_version = kCheckpointFormatVersion;
  ModelConfig config;
  OutputScaling scaling;
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointEntry> entries;
  std::size_t blob_bytes = 0;
};

// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const TfbestModel<float>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata = {});

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path);

TfbestModel<float> load_checkpoint(const std::filesystem::path& path, CheckpointManifest* manifest = nullptr);

// Loads parameters into an existing model. Throws ConfigMismatchError when
// the checkpoint was written for a different configuration.
void load_checkpoint_into(TfbestModel<float>& model, const std::filesystem::path& path);

}  // namespace tfbest
