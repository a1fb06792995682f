#include "tdl/serialize.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tdl {

namespace {

// Explicit little-endian byte packing, independent of host layout.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Cursor over a byte buffer; every read checks bounds so truncation is
// reported as such instead of as garbage values.
struct Reader {
  const std::string& bytes;
  size_t pos = 0;
  const char* what;

  void need(size_t n) const {
    if (pos + n > bytes.size())
      throw IoError(strcat_msg("truncated ", what, ": need ", n, " bytes at offset ",
                               pos, ", file has ", bytes.size()));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

void encode_tdl1(std::string& out, const Shape& shape, const float* data) {
  out += "TDL1";
  put_u32(out, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) put_u32(out, static_cast<uint32_t>(d));
  const int64_t n = numel_of(shape);
  for (int64_t i = 0; i < n; ++i) put_f32(out, data[i]);
}

Tdl1Data decode_tdl1(Reader& r) {
  if (r.str(4) != "TDL1")
    throw IoError(strcat_msg("corrupt ", r.what, ": bad TDL1 magic at offset ",
                             r.pos - 4));
  Tdl1Data t;
  const uint32_t rank = r.u32();
  if (rank > 16)
    throw IoError(strcat_msg("corrupt ", r.what, ": implausible rank ", rank));
  t.shape.resize(rank);
  for (uint32_t i = 0; i < rank; ++i) t.shape[i] = static_cast<int64_t>(r.u32());
  const int64_t n = numel_of(t.shape);
  t.data.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = r.f32();
  return t;
}

}  // namespace

void write_tdl1(std::ostream& os, const Shape& shape, const float* data) {
  std::string buf;
  encode_tdl1(buf, shape, data);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Tdl1Data read_tdl1(std::istream& is) {
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();
  Reader r{bytes, 0, "tensor"};
  return decode_tdl1(r);
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(strcat_msg("cannot open '", tmp, "' for writing"));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(strcat_msg("write failed for '", tmp, "'"));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError(strcat_msg("cannot rename '", tmp, "' to '", path, "': ",
                             ec.message()));
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(strcat_msg("cannot open '", path, "'"));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_tdl1_file(const std::string& path, const Shape& shape, const float* data) {
  std::string buf;
  encode_tdl1(buf, shape, data);
  atomic_write_file(path, buf);
}

Tdl1Data load_tdl1_file(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  Reader r{bytes, 0, "tensor"};
  Tdl1Data t = decode_tdl1(r);
  if (r.pos != bytes.size())
    throw IoError(strcat_msg("corrupt tensor: ", bytes.size() - r.pos,
                             " trailing bytes in '", path, "'"));
  return t;
}

std::string encode_checkpoint(const CheckpointRaw& raw) {
  std::string out;
  out += "TDLC";
  put_u32(out, 1u);  // version
  put_u32(out, static_cast<uint32_t>(raw.config_text.size()));
  out += raw.config_text;
  auto put_section = [&out](const std::vector<std::pair<std::string, Tdl1Data>>& sec) {
    put_u32(out, static_cast<uint32_t>(sec.size()));
    for (const auto& [name, t] : sec) {
      put_u32(out, static_cast<uint32_t>(name.size()));
      out += name;
      encode_tdl1(out, t.shape, t.data.data());
    }
  };
  put_section(raw.params);
  put_section(raw.opt_state);
  put_u32(out, raw.step);
  put_u64(out, raw.rng_state);
  return out;
}

CheckpointRaw decode_checkpoint(const std::string& bytes) {
  Reader r{bytes, 0, "checkpoint"};
  if (r.str(4) != "TDLC")
    throw IoError("corrupt checkpoint: bad TDLC magic");
  const uint32_t version = r.u32();
  if (version != 1)
    throw IoError(strcat_msg("corrupt checkpoint: unsupported version ", version));
  CheckpointRaw raw;
  raw.config_text = r.str(r.u32());
  auto get_section = [&r]() {
    std::vector<std::pair<std::string, Tdl1Data>> sec;
    const uint32_t n = r.u32();
    sec.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
      std::string name = r.str(r.u32());
      sec.emplace_back(std::move(name), decode_tdl1(r));
    }
    return sec;
  };
  raw.params = get_section();
  raw.opt_state = get_section();
  raw.step = r.u32();
  raw.rng_state = r.u64();
  if (r.pos != bytes.size())
    throw IoError(strcat_msg("corrupt checkpoint: ", bytes.size() - r.pos,
                             " trailing bytes"));
  return raw;
}

void save_checkpoint_raw(const std::string& path, const CheckpointRaw& raw) {
  atomic_write_file(path, encode_checkpoint(raw));
}

CheckpointRaw load_checkpoint_raw(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace tdl
