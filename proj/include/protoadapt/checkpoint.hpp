#pragma once

#include <filesystem>
#include <string>

#include "protoadapt/model.hpp"

namespace protoadapt::model {

struct Checkpoint {
  int format_version = 1;
  std::string config_hash;
  EncoderParams encoder;
  PcnParams pcn;
};

/// Versioned JSON with every number written at 17 significant digits, so the
/// round trip is bitwise lossless.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws an error naming the offending component when the file does not fit
/// the dimensions the current run expects.
void check_compatible(const Checkpoint& ckpt, std::size_t input_dim,
                      std::size_t embed_dim, std::size_t pcn_k_in);

/// In-memory serialization used by both the file IO and determinism checks.
std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text,
                                const std::string& origin);

}  // namespace protoadapt::model
