#include "vpfc/model/checkpoint.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace vpfc::model {

namespace {

constexpr std::array<char, 8> kMagic = {'V', 'P', 'F', 'C', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffU);
  }
  out.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) {
    throw FormatError("checkpoint truncated");
  }
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  return static_cast<T>(value);
}

void put_f64(std::ostream& out, double value) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(value)); }

double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads}, {"model_dim", c.model_dim},
          {"grid_side", c.grid_side},   {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"ffn_dim", c.ffn_dim},       {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.grid_side = j.at("grid_side").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelWeights& weights) {
  weights.validate();
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  nlohmann::json header = {{"config", config_to_json(weights.config)},
                           {"version", weights.version},
                           {"tensor_count", 0}};
  std::uint32_t count = 0;
  weights.for_each_tensor([&](const std::string&, const Mat&) { ++count; });
  header["tensor_count"] = count;
  const std::string header_text = header.dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  put_le<std::uint32_t>(out, count);
  weights.for_each_tensor([&](const std::string& name, const Mat& m) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      put_f64(out, m.data()[i]);
    }
  });
  if (!out) {
    throw FormatError("failed writing checkpoint");
  }
}

ModelWeights read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) {
    throw FormatError("not a vpfc checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_size = get_le<std::uint32_t>(in);
  std::string header_text(header_size, '\0');
  in.read(header_text.data(), header_size);
  if (!in) {
    throw FormatError("checkpoint header truncated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  ModelWeights weights = ModelWeights::zeros(config_from_json(header.at("config")));
  weights.version = header.at("version").get<std::string>();

  std::map<std::string, Mat> tensors;
  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_size = get_le<std::uint32_t>(in);
    std::string name(name_size, '\0');
    in.read(name.data(), name_size);
    const auto rank = get_le<std::uint32_t>(in);
    if (rank != 2) {
      throw FormatError("tensor " + name + " has unsupported rank " + std::to_string(rank));
    }
    const auto rows = get_le<std::uint64_t>(in);
    const auto cols = get_le<std::uint64_t>(in);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = get_f64(in);
    }
    tensors.emplace(std::move(name), std::move(m));
  }
  weights.for_each_tensor([&](const std::string& name, Mat& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw FormatError("checkpoint is missing tensor " + name);
    }
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw FormatError("checkpoint tensor " + name + " has the wrong shape");
    }
    m = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty()) {
    throw FormatError("checkpoint has unexpected tensor " + tensors.begin()->first);
  }
  weights.validate();
  return weights;
}

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights) {
  std::ostringstream buffer(std::ios::binary);
  write_checkpoint(buffer, weights);
  write_file_atomic(path, buffer.str());
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open checkpoint " + path.string());
  }
  return read_checkpoint(in);
}

}  // namespace vpfc::model
