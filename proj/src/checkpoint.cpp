#include "dymesh/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace dymesh {

namespace {

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<uint64_t>(v)); }

struct Reader {
  std::string data;
  size_t pos = 0;
  std::string path;

  void need(size_t n, const char* what) const {
    if (pos + n > data.size()) {
      throw std::runtime_error(path + ": truncated " + what + " at byte offset " +
                               std::to_string(pos));
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) {
    throw std::runtime_error("checkpoint: missing config key " + key);
  }
  return it->second;
}

int64_t Checkpoint::get_int(const std::string& key) const {
  return std::stoll(get(key));
}

double Checkpoint::get_double(const std::string& key) const {
  return std::stod(get(key));
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf += "DMVW";
  put_u32(buf, 1);
  std::string cfg;
  for (const auto& [k, v] : ckpt.config) cfg += k + "=" + v + "\n";
  put_u32(buf, static_cast<uint32_t>(cfg.size()));
  buf += cfg;
  put_u32(buf, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) put_u64(buf, static_cast<uint64_t>(d));
    for (double v : t.data()) put_f64(buf, v);
  }
  write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r{read_file(path), 0, path};
  if (r.bytes(4, "magic") != "DMVW") {
    throw std::runtime_error(path + ": bad magic, expected DMVW");
  }
  uint32_t version = r.u32("version");
  if (version != 1) {
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  }
  Checkpoint ckpt;
  uint32_t cfg_len = r.u32("config length");
  std::istringstream cfg(r.bytes(cfg_len, "config block"));
  std::string line;
  while (std::getline(cfg, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ": malformed config line '" + line + "'");
    }
    ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  uint32_t count = r.u32("tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = r.u32("name length");
    std::string name = r.bytes(name_len, "tensor name");
    uint32_t rank = r.u32("rank");
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int64_t>(r.u64("dimension"));
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    for (int64_t j = 0; j < numel; ++j) data[j] = r.f64("tensor payload");
    ckpt.tensors[name] = Tensor::from_data(std::move(shape), std::move(data));
  }
  return ckpt;
}

void load_named_parameters(std::map<std::string, Tensor>& params,
                           const Checkpoint& ckpt) {
  for (auto& [name, p] : params) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw std::runtime_error("checkpoint: missing parameter " + name);
    }
    if (it->second.shape() != p.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    p.mutable_data() = it->second.data();
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (!params.count(name)) {
      throw std::runtime_error("checkpoint: unexpected parameter " + name);
    }
  }
}

void write_text_embedding(const std::string& path, const Tensor& tokens) {
  if (tokens.shape().size() != 2) {
    throw std::invalid_argument("text embedding: expected [count x dim]");
  }
  std::string buf;
  buf += "TEMB";
  put_u32(buf, static_cast<uint32_t>(tokens.rows()));
  put_u32(buf, static_cast<uint32_t>(tokens.cols()));
  for (double v : tokens.data()) put_f64(buf, v);
  write_file(path, buf);
}

Tensor read_text_embedding(const std::string& path) {
  Reader r{read_file(path), 0, path};
  if (r.bytes(4, "magic") != "TEMB") {
    throw std::runtime_error(path + ": bad magic, expected TEMB");
  }
  int64_t count = r.u32("count");
  int64_t dim = r.u32("dim");
  std::vector<double> data(count * dim);
  for (auto& v : data) v = r.f64("embedding payload");
  return Tensor::from_data({count, dim}, std::move(data));
}

}  // namespace dymesh
