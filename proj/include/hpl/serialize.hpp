#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpl/errors.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// SHA-256 (for content hashes in run manifests)
// ---------------------------------------------------------------------------

class Sha256 {
 public:
  Sha256() { reset(); }

  void reset() {
    state_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
              0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
    total_ = 0;
    buf_len_ = 0;
  }

  void update(const void* data, size_t len) {
    const auto* p = static_cast<const uint8_t*>(data);
    total_ += len;
    while (len > 0) {
      const size_t take = std::min(len, size_t(64) - buf_len_);
      std::memcpy(buf_.data() + buf_len_, p, take);
      buf_len_ += take;
      p += take;
      len -= take;
      if (buf_len_ == 64) {
        compress(buf_.data());
        buf_len_ = 0;
      }
    }
  }

  std::string hex_digest() {
    Sha256 copy = *this;
    uint8_t pad[72] = {0x80};
    const uint64_t bits = copy.total_ * 8;
    const size_t pad_len = (copy.buf_len_ < 56) ? 56 - copy.buf_len_ : 120 - copy.buf_len_;
    copy.update_raw(pad, pad_len);
    uint8_t len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<uint8_t>(bits >> (56 - 8 * i));
    copy.update_raw(len_be, 8);
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (uint32_t w : copy.state_) os << std::setw(8) << w;
    return os.str();
  }

  static std::string hex(const std::string& data) {
    Sha256 h;
    h.update(data.data(), data.size());
    return h.hex_digest();
  }

  static std::string file_hex(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for hashing: " + path.string());
    Sha256 h;
    std::vector<char> chunk(1 << 16);
    while (in) {
      in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
      h.update(chunk.data(), static_cast<size_t>(in.gcount()));
    }
    return h.hex_digest();
  }

 private:
  void update_raw(const uint8_t* p, size_t len) {
    while (len > 0) {
      const size_t take = std::min(len, size_t(64) - buf_len_);
      std::memcpy(buf_.data() + buf_len_, p, take);
      buf_len_ += take;
      p += take;
      len -= take;
      if (buf_len_ == 64) {
        compress(buf_.data());
        buf_len_ = 0;
      }
    }
  }

  void compress(const uint8_t* block) {
    static constexpr uint32_t K[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2};
    auto rotr = [](uint32_t x, int n) { return (x >> n) | (x << (32 - n)); };
    uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (uint32_t(block[4 * i]) << 24) | (uint32_t(block[4 * i + 1]) << 16) |
             (uint32_t(block[4 * i + 2]) << 8) | uint32_t(block[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    uint32_t a = state_[0], b = state_[1], c = state_[2], d = state_[3];
    uint32_t e = state_[4], f = state_[5], g = state_[6], h = state_[7];
    for (int i = 0; i < 64; ++i) {
      const uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const uint32_t ch = (e & f) ^ (~e & g);
      const uint32_t t1 = h + S1 + ch + K[i] + w[i];
      const uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const uint32_t t2 = S0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    state_[0] += a;
    state_[1] += b;
    state_[2] += c;
    state_[3] += d;
    state_[4] += e;
    state_[5] += f;
    state_[6] += g;
    state_[7] += h;
  }

  std::array<uint32_t, 8> state_;
  std::array<uint8_t, 64> buf_;
  uint64_t total_ = 0;
  size_t buf_len_ = 0;
};

// ---------------------------------------------------------------------------
// Raw tensor blobs: little-endian float32, shape carried by the caller.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "tensor blobs assume a little-endian host");

inline void write_tensor_blob(const fs::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.ptr()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out) throw IoError("short write on " + path.string());
}

inline Tensor read_tensor_blob(const fs::path& path, const std::vector<long>& shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.ptr()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(t.numel() * sizeof(float)))
    throw IoError("blob size mismatch: " + path.string());
  char extra;
  if (in.read(&extra, 1)) throw IoError("blob larger than expected: " + path.string());
  return t;
}

// ---------------------------------------------------------------------------
// JSON file helpers
// ---------------------------------------------------------------------------

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const fs::path& path, const json& j, int indent = 2) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(indent) << "\n";
  if (!out) throw IoError("short write on " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write on " + path.string());
}

// Deterministic float formatting for logs: shortest round-trip via
// max_digits10, locale-independent.
inline std::string fmt_float(double v, int precision = 9) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(precision) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Named-parameter checkpoints: directory with header.json + one .bin per
// tensor. Order in the header is the canonical parameter order.
// ---------------------------------------------------------------------------

struct ParamEntry {
  std::string name;
  Tensor* tensor;  // borrowed
};

class Checkpoint {
 public:
  // `extra` lands in header.json under "meta" (model config, step, schedules).
  static void save(const fs::path& dir, const std::vector<ParamEntry>& params,
                   const json& extra = json::object()) {
    fs::create_directories(dir);
    json header;
    header["format"] = "hpl-checkpoint-v1";
    header["dtype"] = "float32";
    header["meta"] = extra;
    json plist = json::array();
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      const std::string file = blob_name(i, p.name);
      write_tensor_blob(dir / file, *p.tensor);
      plist.push_back({{"name", p.name},
                       {"shape", p.tensor->shape()},
                       {"file", file},
                       {"hash", Sha256::file_hex(dir / file)}});
    }
    header["params"] = plist;
    write_json_file(dir / "header.json", header);
  }

  // Loads into pre-registered tensors; shapes must match exactly.
  static json load(const fs::path& dir, const std::vector<ParamEntry>& params) {
    const json header = read_json_file(dir / "header.json");
    if (header.value("format", "") != "hpl-checkpoint-v1")
      throw DataError("unrecognized checkpoint format in " + dir.string());
    std::map<std::string, const json*> by_name;
    for (const auto& e : header.at("params")) by_name[e.at("name")] = &e;
    for (const auto& p : params) {
      auto it = by_name.find(p.name);
      if (it == by_name.end())
        throw DataError("checkpoint missing parameter '" + p.name + "' in " + dir.string());
      const json& e = *it->second;
      const std::vector<long> shape = e.at("shape").get<std::vector<long>>();
      if (shape != p.tensor->shape())
        throw DataError("shape mismatch for '" + p.name + "': checkpoint " +
                        json(shape).dump() + " vs model " + p.tensor->shape_str());
      *p.tensor = read_tensor_blob(dir / e.at("file").get<std::string>(), shape);
    }
    return header.value("meta", json::object());
  }

  static json peek_meta(const fs::path& dir) {
    return read_json_file(dir / "header.json").value("meta", json::object());
  }

 private:
  static std::string blob_name(size_t idx, const std::string& name) {
    std::string safe = name;
    for (char& c : safe)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
    std::ostringstream os;
    os << std::setw(4) << std::setfill('0') << idx << "_" << safe << ".bin";
    return os.str();
  }
};

}  // namespace hpl
