#include "memflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace memflow {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'M', 'F', 'L', 'O', 'W', '\0'};
const std::string kFirstMoment = "adam.m/";
const std::string kSecondMoment = "adam.v/";

template <typename U>
void put_le(std::string& out, U value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get_le(const std::string& in, std::size_t pos) {
  U value;
  std::memcpy(&value, in.data() + pos, sizeof(U));
  return value;
}

}  // namespace

nlohmann::json config_to_json(const Config& c) {
  return {{"feature_dim", c.feature_dim},     {"key_dim", c.key_dim},
          {"value_dim", c.value_dim},         {"iters_train", c.iters_train},
          {"iters_infer", c.iters_infer},     {"l_max", c.l_max},
          {"gamma", c.gamma},                 {"pyramid_levels", c.pyramid_levels},
          {"lookup_radius", c.lookup_radius}, {"n_avg", c.n_avg},
          {"seed", c.seed},                   {"encoder_widths", c.encoder_widths},
          {"rescale", c.rescale},             {"warm_start", c.warm_start},
          {"detach_memory", c.detach_memory}};
}

Config config_from_json(const nlohmann::json& j, Config c) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "feature_dim") c.feature_dim = value;
      else if (key == "key_dim") c.key_dim = value;
      else if (key == "value_dim") c.value_dim = value;
      else if (key == "iters_train") c.iters_train = value;
      else if (key == "iters_infer") c.iters_infer = value;
      else if (key == "l_max") c.l_max = value;
      else if (key == "gamma") c.gamma = value;
      else if (key == "pyramid_levels") c.pyramid_levels = value;
      else if (key == "lookup_radius") c.lookup_radius = value;
      else if (key == "n_avg") c.n_avg = value;
      else if (key == "seed") c.seed = value;
      else if (key == "encoder_widths") c.encoder_widths = value.get<std::vector<int>>();
      else if (key == "rescale") c.rescale = value;
      else if (key == "warm_start") c.warm_start = value;
      else if (key == "detach_memory") c.detach_memory = value;
      else throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& meta,
                     const AdamW* optimizer) {
  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  for (const auto& [name, m] : model.params) tensors.emplace_back(name, &m);
  if (optimizer) {
    for (const auto& [name, m] : optimizer->first_moment()) tensors.emplace_back(kFirstMoment + name, &m);
    for (const auto& [name, m] : optimizer->second_moment()) tensors.emplace_back(kSecondMoment + name, &m);
  }

  nlohmann::json list = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, m] : tensors) {
    list.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"dtype", "float32"},
                    {"offset", payload.size()}});
    for (Eigen::Index i = 0; i < m->size(); ++i) put_le<float>(payload, m->data()[i]);
  }
  nlohmann::json header{{"format_version", kCheckpointVersion},
                        {"config", config_to_json(model.config)},
                        {"meta", meta.is_null() ? nlohmann::json::object() : meta},
                        {"tensors", list}};
  if (optimizer) header["optimizer_steps"] = optimizer->steps();
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw Error(ErrorCode::IoFailure, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  const std::string in((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (in.size() < sizeof(kMagic)) throw Error(ErrorCode::TruncatedFile, "checkpoint shorter than its magic");
  if (std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) throw Error(ErrorCode::BadMagic, "not a checkpoint");
  const std::size_t fixed = sizeof(kMagic) + 4 + 8;
  if (in.size() < fixed) throw Error(ErrorCode::TruncatedFile, "checkpoint header is truncated");
  const auto version = get_le<std::uint32_t>(in, sizeof(kMagic));
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::IoFailure, "unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(in, sizeof(kMagic) + 4);
  if (in.size() - fixed < header_len) throw Error(ErrorCode::TruncatedFile, "checkpoint manifest is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(fixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, std::string("malformed checkpoint manifest: ") + e.what());
  }
  const std::size_t base = fixed + header_len;

  Checkpoint ck;
  ck.model.config = config_from_json(header.at("config"));
  ck.meta = header.value("meta", nlohmann::json::object());
  AdamW opt;
  bool has_opt = false;
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name");
    const Eigen::Index rows = t.at("shape")[0], cols = t.at("shape")[1];
    const std::size_t offset = t.at("offset");
    if (t.at("dtype") != "float32") throw Error(ErrorCode::IoFailure, "unsupported dtype for " + name);
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
    if (base + offset + bytes > in.size()) throw Error(ErrorCode::TruncatedFile, "payload of " + name + " is truncated");
    Mat<float> m(rows, cols);
    std::memcpy(m.data(), in.data() + base + offset, bytes);
    if (name.rfind(kFirstMoment, 0) == 0) {
      opt.first_moment().add(name.substr(kFirstMoment.size()), std::move(m));
      has_opt = true;
    } else if (name.rfind(kSecondMoment, 0) == 0) {
      opt.second_moment().add(name.substr(kSecondMoment.size()), std::move(m));
      has_opt = true;
    } else {
      ck.model.params.add(name, std::move(m));
    }
  }
  if (header.contains("optimizer_steps")) {
    opt.set_steps(header.at("optimizer_steps"));
    has_opt = true;
  }
  if (has_opt) ck.optimizer = std::move(opt);
  return ck;
}

}  // namespace memflow
