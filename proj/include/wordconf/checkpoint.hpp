#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "wordconf/error.hpp"
#include "wordconf/io.hpp"
#include "wordconf/model.hpp"

namespace wordconf {

// Checkpoint layout:
//   "CWL1" | u64 LE manifest length | manifest JSON | tensor payloads
// The manifest carries the ModelConfig and, per tensor, its name, shape,
// byte offset into the payload section and frozen flag. Payloads are
// little-endian doubles.

inline constexpr char kCheckpointMagic[4] = {'C', 'W', 'L', '1'};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"feat_dim", c.feat_dim},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_encoder_layers", c.n_encoder_layers},
          {"n_decoder_layers", c.n_decoder_layers},
          {"ffn_dim", c.ffn_dim},
          {"max_seq_len", c.max_seq_len},
          {"dropout_rate", c.dropout_rate},
          {"head_kind", to_string(c.head_kind)},
          {"decoder_mask", to_string(c.decoder_mask)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.feat_dim = j.at("feat_dim").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_encoder_layers = j.at("n_encoder_layers").get<std::size_t>();
  c.n_decoder_layers = j.at("n_decoder_layers").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.head_kind = parse_head_kind(j.at("head_kind").get<std::string>());
  c.decoder_mask = parse_decoder_mask(j.at("decoder_mask").get<std::string>());
  return c;
}

inline std::string checkpoint_to_bytes(const ModelParams& model) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for (const auto& p : model.params()) {
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", payload.size()}, {"frozen", p.frozen}});
    for (double v : p.value.data()) io::put_f64_le(payload, v);
  }
  const nlohmann::json manifest = {
      {"format_version", 1}, {"config", to_json(model.config())}, {"tensors", tensors}, {"payload_bytes", payload.size()}};
  const std::string header = manifest.dump();
  std::string out(kCheckpointMagic, 4);
  io::put_u64_le(out, header.size());
  out += header;
  out += payload;
  return out;
}

inline ModelParams checkpoint_from_bytes(const std::string& bytes, const std::string& source = "checkpoint") {
  auto fail = [&](const std::string& what) { return ParseError(source + ": " + what); };
  if (bytes.size() < 12 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) throw fail("missing CWL1 magic");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = io::get_u64_le(raw + 4);
  if (header_len > bytes.size() - 12) throw fail("manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  }
  const std::size_t payload_start = 12 + header_len;
  try {
    if (manifest.at("format_version").get<int>() != 1) throw fail("unsupported checkpoint version");
    const ModelConfig config = model_config_from_json(manifest.at("config"));
    const auto payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - payload_start != payload_bytes) {
      throw fail("payload is " + std::to_string(bytes.size() - payload_start) + " bytes, manifest declares " + std::to_string(payload_bytes));
    }
    const auto layout = parameter_layout(config);
    const auto& entries = manifest.at("tensors");
    if (entries.size() != layout.size()) {
      throw fail("config implies " + std::to_string(layout.size()) + " tensors, file holds " + std::to_string(entries.size()));
    }
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto name = entries[i].at("name").get<std::string>();
      const auto shape = entries[i].at("shape").get<Shape>();
      if (name != layout[i].first || shape != layout[i].second) {
        throw fail("tensor '" + name + "' " + shape_str(shape) + " does not match config layout '" + layout[i].first + "' " +
                   shape_str(layout[i].second));
      }
      const auto offset = entries[i].at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset + 8 * n > payload_bytes) throw fail("tensor '" + name + "' runs past the payload");
      std::vector<double> values(n);
      for (std::size_t k = 0; k < n; ++k) values[k] = io::get_f64_le(raw + payload_start + offset + 8 * k);
      const bool frozen = entries[i].at("frozen").get<bool>();
      params.emplace_back(name, Tensor(shape, std::move(values), !frozen), frozen);
    }
    return ModelParams(config, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw fail(e.what());
  }
}

inline void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, checkpoint_to_bytes(model));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bytes(io::read_file(path), path.string());
}

}  // namespace wordconf
