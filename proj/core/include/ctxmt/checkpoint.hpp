#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ctxmt/contextizer.hpp"
#include "ctxmt/model.hpp"

namespace ctxmt {

// Checkpoint wire format, version 1:
//   magic "CTXMTCP1"
//   u32 header length, JSON header (format_version, model config, vocab hash,
//   training context config)
//   u32 array count, then per array: u32 name length, name bytes,
//   u32 rows, u32 cols, row-major float32 payload.
// All integers and floats little-endian. Values are stored in float32; the
// on-disk representation round-trips byte-exactly through load/save.
struct Checkpoint {
  Parameters params;
  std::uint64_t vocab_hash = 0;
  ContextConfig context;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace ctxmt
