#include "ctxmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctxmt/error.hpp"

namespace ctxmt {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'C', 'T', 'X', 'M', 'T', 'C', 'P', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF),
               static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ValidationError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  for (int shift = 60; shift >= 0; shift -= 4) out << ((v >> shift) & 0xF);
  return out.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

ordered_json model_config_json(const ModelConfig& cfg) {
  ordered_json j;
  j["layers_enc"] = cfg.layers_enc;
  j["layers_dec"] = cfg.layers_dec;
  j["heads"] = cfg.heads;
  j["d_model"] = cfg.d_model;
  j["d_ff"] = cfg.d_ff;
  j["dropout"] = cfg.dropout;
  j["max_positions"] = cfg.max_positions;
  j["vocab_size"] = cfg.vocab_size;
  j["positional_encoding"] = "sinusoidal";
  return j;
}

ModelConfig model_config_from_json(const ordered_json& j) {
  ModelConfig cfg;
  cfg.layers_enc = j.at("layers_enc").get<int>();
  cfg.layers_dec = j.at("layers_dec").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.max_positions = j.at("max_positions").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  return cfg;
}

ordered_json context_config_json(const ContextConfig& cfg) {
  ordered_json j;
  j["k_src"] = cfg.k_src;
  j["k_tgt"] = cfg.k_tgt;
  j["speaker_tags"] = cfg.speaker_tags;
  j["scene_tag"] = cfg.scene_tag;
  j["dynamic"] = cfg.dynamic;
  j["max_src_len"] = cfg.max_src_len;
  j["max_tgt_len"] = cfg.max_tgt_len;
  return j;
}

ContextConfig context_config_from_json(const ordered_json& j) {
  ContextConfig cfg;
  cfg.k_src = j.at("k_src").get<int>();
  cfg.k_tgt = j.at("k_tgt").get<int>();
  cfg.speaker_tags = j.at("speaker_tags").get<bool>();
  cfg.scene_tag = j.at("scene_tag").get<bool>();
  cfg.dynamic = j.at("dynamic").get<bool>();
  cfg.max_src_len = j.at("max_src_len").get<int>();
  cfg.max_tgt_len = j.at("max_tgt_len").get<int>();
  return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + file.string());
  out.write(kMagic, sizeof(kMagic));

  ordered_json header;
  header["format_version"] = 1;
  header["model"] = model_config_json(ckpt.params.config);
  header["vocab_hash"] = hex64(ckpt.vocab_hash);
  header["context"] = context_config_json(ckpt.context);
  const std::string header_str = header.dump();
  put_u32(out, static_cast<std::uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  const auto arrays = ckpt.params.arrays();
  put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(m->rows));
    put_u32(out, static_cast<std::uint32_t>(m->cols));
    for (double v : m->data) put_f32(out, static_cast<float>(v));
  }
  if (!out) throw IoError("write failed: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + file.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ValidationError("not a checkpoint file: " + file.string());

  const auto header_len = get_u32(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw ValidationError("checkpoint truncated");

  ordered_json header;
  try {
    header = ordered_json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint header: ") + e.what());
  }
  if (header.at("format_version").get<int>() != 1)
    throw ValidationError("unsupported checkpoint format version");

  Checkpoint ckpt;
  ckpt.params = Parameters(model_config_from_json(header.at("model")));
  ckpt.vocab_hash = parse_hex64(header.at("vocab_hash").get<std::string>());
  ckpt.context = context_config_from_json(header.at("context"));

  const auto array_count = get_u32(in);
  auto arrays = ckpt.params.arrays();
  if (array_count != arrays.size())
    throw ValidationError("checkpoint holds " + std::to_string(array_count) +
                          " arrays, expected " + std::to_string(arrays.size()));
  for (auto& [name, m] : arrays) {
    const auto name_len = get_u32(in);
    std::string got(name_len, '\0');
    in.read(got.data(), name_len);
    if (got != name)
      throw ValidationError("checkpoint array order mismatch: got '" + got +
                            "', expected '" + name + "'");
    const int rows = static_cast<int>(get_u32(in));
    const int cols = static_cast<int>(get_u32(in));
    if (rows != m->rows || cols != m->cols)
      throw ValidationError("checkpoint array '" + name + "' has shape " +
                            std::to_string(rows) + "x" + std::to_string(cols) +
                            ", expected " + std::to_string(m->rows) + "x" +
                            std::to_string(m->cols));
    for (double& v : m->data) v = static_cast<double>(get_f32(in));
  }
  return ckpt;
}

}  // namespace ctxmt
