#include "posespace/checkpoint.h"

#include "posespace/error.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace posespace {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_u64(std::string& out, uint64_t value) {
  char bytes[8];
  std::memcpy(bytes, &value, 8);
  out.append(bytes, 8);
}

uint64_t read_u64(const std::string& in, size_t pos) {
  uint64_t value = 0;
  std::memcpy(&value, in.data() + pos, 8);
  return value;
}

Json tensor_layout(DenoiserParams& params) {
  Json layout = Json::array();
  uint64_t offset = 0;
  for (const TensorView& t : params.tensors()) {
    layout.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", offset}});
    offset += static_cast<uint64_t>(t.size()) * sizeof(double);
  }
  return layout;
}

}  // namespace

Json config_to_json(const DenoiserConfig& cfg) {
  return Json{{"d_model", cfg.d_model}, {"n_heads", cfg.n_heads}, {"n_layers", cfg.n_layers},
              {"d_ff", cfg.d_ff},       {"n_f", cfg.n_f},         {"max_graph_dist", cfg.max_graph_dist}};
}

DenoiserConfig config_from_json(const Json& doc) {
  DenoiserConfig cfg;
  try {
    cfg.d_model = doc.at("d_model").get<int>();
    cfg.n_heads = doc.at("n_heads").get<int>();
    cfg.n_layers = doc.at("n_layers").get<int>();
    cfg.d_ff = doc.at("d_ff").get<int>();
    cfg.n_f = doc.at("n_f").get<int>();
    cfg.max_graph_dist = doc.at("max_graph_dist").get<int>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("bad denoiser config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("bad denoiser config: ") + e.what());
  }
  return cfg;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  DenoiserParams params = ckpt.model.params;
  const Json header{{"format", "posespace-checkpoint"},
                    {"version", 1},
                    {"config", config_to_json(ckpt.model.config)},
                    {"stats", {{"sigma_p", ckpt.model.stats.sigma_p}}},
                    {"tensors", tensor_layout(params)},
                    {"meta", ckpt.meta}};
  const std::string header_text = dump_json(header, -1);
  std::string out(kMagic, sizeof(kMagic));
  append_u64(out, header_text.size());
  out += header_text;
  for (const TensorView& t : params.tensors()) {
    const Eigen::Map<const Eigen::MatrixXd> m(t.data, t.rows, t.cols);
    for (Eigen::Index r = 0; r < t.rows; ++r) {
      for (Eigen::Index c = 0; c < t.cols; ++c) {
        const double value = m(r, c);
        out.append(reinterpret_cast<const char*>(&value), sizeof(double));
      }
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  POSESPACE_CHECK(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 8) == 0, DataError,
                  "not a posespace checkpoint");
  const uint64_t header_len = read_u64(bytes, 8);
  POSESPACE_CHECK(header_len <= bytes.size() - 16, DataError, "truncated checkpoint header");
  Json header;
  try {
    header = Json::parse(bytes.substr(16, header_len));
  } catch (const Json::parse_error& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  POSESPACE_CHECK(header.value("format", "") == "posespace-checkpoint" && header.value("version", 0) == 1, DataError,
                  "unsupported checkpoint format");

  Checkpoint ckpt;
  ckpt.model = init_params(config_from_json(header.at("config")), 0);
  ckpt.model.stats.sigma_p = header.at("stats").at("sigma_p").get<double>();
  POSESPACE_CHECK(ckpt.model.stats.sigma_p > 0.0, DataError, "checkpoint sigma_p must be positive");
  if (header.contains("meta")) {
    ckpt.meta = header.at("meta");
  }

  // The stored layout must match the one implied by the config exactly.
  POSESPACE_CHECK(header.at("tensors") == tensor_layout(ckpt.model.params), DataError,
                  "checkpoint tensor layout does not match its config");

  const size_t payload_start = 16 + header_len;
  const auto expected = static_cast<size_t>(ckpt.model.params.parameter_count()) * sizeof(double);
  POSESPACE_CHECK(bytes.size() - payload_start == expected, DataError,
                  "checkpoint payload size does not match the header");
  size_t pos = payload_start;
  for (const TensorView& t : ckpt.model.params.tensors()) {
    Eigen::Map<Eigen::MatrixXd> m(t.data, t.rows, t.cols);
    for (Eigen::Index r = 0; r < t.rows; ++r) {
      for (Eigen::Index c = 0; c < t.cols; ++c) {
        std::memcpy(&m(r, c), bytes.data() + pos, sizeof(double));
        pos += sizeof(double);
      }
    }
  }
  POSESPACE_CHECK(ckpt.model.params.all_finite(), DataError, "checkpoint contains non-finite parameters");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  POSESPACE_CHECK(in.good(), DataError, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace posespace
