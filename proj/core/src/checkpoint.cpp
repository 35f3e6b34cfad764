#include "steersig/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "steersig/error.hpp"

namespace steersig {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::string encode_container(std::string_view magic, const nlohmann::json& header,
                             std::span<const std::byte> payload) {
  std::string out(magic);
  out += header.dump();
  out += '\n';
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size());
  return out;
}

std::pair<nlohmann::json, std::string_view> decode_container(std::string_view magic,
                                                             std::string_view bytes) {
  if (!bytes.starts_with(magic)) throw FormatError("bad magic string");
  const auto rest = bytes.substr(magic.size());
  const auto eol = rest.find('\n');
  if (eol == std::string_view::npos) throw FormatError("missing header terminator");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(rest.substr(0, eol));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("header is not a JSON object");
  return {std::move(header), rest.substr(eol + 1)};
}

std::string save_checkpoint(const Model& model) {
  model.validate();
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  const auto refs = named_tensors(model);
  for (const auto& t : refs) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size() * sizeof(float);
  }
  std::string payload;
  payload.reserve(offset);
  for (const auto& t : refs) {
    payload.append(reinterpret_cast<const char*>(t.values.data()), t.values.size_bytes());
  }
  const nlohmann::json header{
      {"config", model.config}, {"tensors", tensors}, {"payload_bytes", offset}};
  return encode_container(kCheckpointMagic, header,
                          std::as_bytes(std::span(payload.data(), payload.size())));
}

namespace {

Model load_checkpoint_impl(std::string_view bytes) {
  auto [header, payload] = decode_container(kCheckpointMagic, bytes);
  Model model;
  try {
    model = make_zero_model(header.at("config").get<ModelConfig>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  const auto refs = named_tensors(model);
  const auto& listed = header.at("tensors");
  if (!listed.is_array() || listed.size() != refs.size()) {
    throw FormatError("checkpoint lists " + std::to_string(listed.size()) + " tensors, config implies " +
                      std::to_string(refs.size()));
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& entry = listed[i];
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (name != refs[i].name) throw FormatError("tensor " + std::to_string(i) + " is '" + name +
                                                "', expected '" + refs[i].name + "'");
    if (shape != refs[i].shape) throw FormatError("shape mismatch for tensor " + name);
    if (offset != expected_offset) throw FormatError("unexpected offset for tensor " + name);
    const std::size_t nbytes = refs[i].values.size_bytes();
    if (offset + nbytes > payload.size()) throw FormatError("truncated payload in tensor " + name);
    std::memcpy(refs[i].values.data(), payload.data() + offset, nbytes);
    expected_offset += nbytes;
  }
  if (header.value("payload_bytes", expected_offset) != expected_offset) {
    throw FormatError("payload_bytes disagrees with tensor list");
  }
  if (payload.size() != expected_offset) {
    throw FormatError(payload.size() < expected_offset ? "truncated payload" : "trailing bytes after payload");
  }
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return model;
}

}  // namespace

Model load_checkpoint(std::string_view bytes) {
  try {
    return load_checkpoint_impl(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint_file(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, save_checkpoint(model));
}

Model load_checkpoint_file(const std::filesystem::path& path) { return load_checkpoint(read_file(path)); }

}  // namespace steersig
