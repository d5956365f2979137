#pragma once

#include <map>
#include <string>

#include "dymesh/tensor.hpp"

namespace dymesh {

// Model snapshot: a flat key=value config block plus named parameter
// tensors. On disk: magic "DMVW", u32 version, u32 config byte length and
// UTF-8 "key=value" lines, u32 tensor count, then per tensor a u32 name
// length, the name, u32 rank, u64 dims, and f64 payload. Little-endian
// throughout.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::map<std::string, Tensor> tensors;

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
};

std::string format_double(double v);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into an existing parameter map, validating that
// names and shapes line up exactly.
void load_named_parameters(std::map<std::string, Tensor>& params,
                           const Checkpoint& ckpt);

// Text-embedding container: magic "TEMB", u32 count, u32 dim, f64 values,
// little-endian. Holds `count` embedding tokens of width `dim`.
void write_text_embedding(const std::string& path, const Tensor& tokens);
Tensor read_text_embedding(const std::string& path);

}  // namespace dymesh
