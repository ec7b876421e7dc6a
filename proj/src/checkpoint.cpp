// SPDX-License-Identifier: Apache-2.0
#include "specnovo/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "specnovo/errors.hpp"
#include "specnovo/spectra.hpp"

namespace specnovo {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'N', 'V', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

std::uint32_t read_u32(std::istream& in) {
  char buf[4];
  in.read(buf, 4);
  if (!in) throw CheckpointError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i]))
         << (8 * i);
  }
  return v;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  if (!in) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i]))
         << (8 * i);
  }
  return v;
}

void write_tensor_map(std::ostream& out, const ParamMap& tensors) {
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(m.rows()));
    write_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j) {
        std::uint64_t bits;
        const double v = m(i, j);
        std::memcpy(&bits, &v, 8);
        write_u64(out, bits);
      }
    }
  }
}

ParamMap read_tensor_map(std::istream& in) {
  ParamMap tensors;
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = read_u32(in);
    if (name_len > 4096) throw CheckpointError("corrupt tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CheckpointError("checkpoint truncated");
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    Mat m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) {
        const std::uint64_t bits = read_u64(in);
        double v;
        std::memcpy(&v, &bits, 8);
        m(i, j) = v;
      }
    }
    tensors.emplace(std::move(name), std::move(m));
  }
  return tensors;
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["d_model"] = c.d_model;
  j["num_heads"] = c.num_heads;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["ffn_dim"] = c.ffn_dim;
  j["input_vocab"] = c.input_vocab;
  j["output_vocab"] = c.output_vocab;
  j["fingerprint_width"] = c.fingerprint_width;
  j["dropout"] = c.dropout;
  j["max_len"] = c.max_len;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.input_vocab = j.at("input_vocab").get<int>();
  c.output_vocab = j.at("output_vocab").get<int>();
  c.fingerprint_width = j.at("fingerprint_width").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_len = j.at("max_len").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const TrainState& state, const OutputVocab& vocab,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);

  json header;
  header["config"] = config_to_json(state.params.config);
  header["step"] = state.step;
  header["epoch"] = state.epoch;
  header["phase"] = phase_to_string(state.phase);
  header["rng_seed"] = state.rng_seed;
  header["output_vocab"] = vocab.texts();
  header["input_vocab"] = InputVocab().tokens();
  header["optimizer"] = {{"beta1", state.optimizer.beta1},
                         {"beta2", state.optimizer.beta2},
                         {"eps", state.optimizer.eps},
                         {"weight_decay", state.optimizer.weight_decay}};
  // lr is serialized as raw bits so reload is bit-exact.
  std::uint64_t lr_bits;
  std::memcpy(&lr_bits, &state.lr, 8);
  header["lr_bits"] = lr_bits;
  const std::string header_text = header.dump();
  write_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.write(header_text.data(),
            static_cast<std::streamsize>(header_text.size()));

  write_tensor_map(out, state.params.tensors);
  write_tensor_map(out, state.moment1);
  write_tensor_map(out, state.moment2);
  if (!out) throw IoError("short write to checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("bad checkpoint magic in " + path);
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  const std::uint32_t header_len = read_u32(in);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), header_len);
  if (!in) throw CheckpointError("checkpoint truncated");
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    throw CheckpointError("corrupt checkpoint header: " + std::string(e.what()));
  }

  LoadedCheckpoint loaded;
  TrainState& state = loaded.state;
  state.params.config = config_from_json(header.at("config"));
  state.step = header.at("step").get<long>();
  state.epoch = header.at("epoch").get<int>();
  state.phase = phase_from_string(header.at("phase").get<std::string>());
  state.rng_seed = header.at("rng_seed").get<std::uint64_t>();
  const std::uint64_t lr_bits = header.at("lr_bits").get<std::uint64_t>();
  std::memcpy(&state.lr, &lr_bits, 8);
  if (header.contains("optimizer")) {
    const json& o = header["optimizer"];
    state.optimizer.beta1 = o.at("beta1").get<double>();
    state.optimizer.beta2 = o.at("beta2").get<double>();
    state.optimizer.eps = o.at("eps").get<double>();
    state.optimizer.weight_decay = o.at("weight_decay").get<double>();
  }

  loaded.vocab = OutputVocab::from_tokens([&header] {
    std::vector<std::string> texts =
        header.at("output_vocab").get<std::vector<std::string>>();
    // Specials are re-synthesized by from_tokens; drop them from the list.
    std::vector<std::string> out;
    for (const std::string& t : texts) {
      if (t != "<pad>" && t != "<bos>" && t != "<eos>" && t != "<unk>") {
        out.push_back(t);
      }
    }
    return out;
  }());

  state.params.tensors = read_tensor_map(in);
  state.moment1 = read_tensor_map(in);
  state.moment2 = read_tensor_map(in);

  // Cross-checks: header config must match tensor shapes and vocabulary.
  if (loaded.vocab.size() != state.params.config.output_vocab) {
    throw CheckpointError("checkpoint vocabulary size disagrees with config");
  }
  const std::vector<std::string> expected_inputs = InputVocab().tokens();
  if (header.at("input_vocab").get<std::vector<std::string>>() !=
      expected_inputs) {
    throw CheckpointError("checkpoint input vocabulary mismatch");
  }
  auto fp_it = state.params.tensors.find("fphead.w2");
  if (fp_it == state.params.tensors.end() ||
      fp_it->second.cols() != state.params.config.fingerprint_width) {
    throw CheckpointError("checkpoint fingerprint width mismatch");
  }
  auto emb_it = state.params.tensors.find("embed.out");
  if (emb_it == state.params.tensors.end() ||
      emb_it->second.rows() != state.params.config.output_vocab) {
    throw CheckpointError("checkpoint output vocabulary tensor mismatch");
  }
  return loaded;
}

}  // namespace specnovo
