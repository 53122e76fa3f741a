#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "chemimg/nn.hpp"
#include "chemimg/tensor_io.hpp"
#include "json.hpp"

// CMDL layout, integers little-endian:
//   0..7   magic "CMDL", version 1, dtype 1 (float32), layout 0, reserved 0
//   u32    byte length L of the JSON header, then L bytes of UTF-8 JSON
//          {"network": <config>, "tensors": [names...]}
//   u32    tensor count T
//   T x    u32 rank, rank x u32 dims, prod(dims) float32 values
// Tensors are the network parameters in construction order followed by
// input.mean and input.std.

namespace chemimg {

inline void write_checkpoint_stream(std::ostream& out, const nn::Network<float>& net) {
  std::vector<std::string> names = net.param_names();
  names.push_back("input.mean");
  names.push_back("input.std");
  nlohmann::json header = {{"network", nn::to_json(net.config())}, {"tensors", names}};
  const std::string text = header.dump();

  io::put_preamble(out, "CMDL", 0);
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  io::put_u32(out, static_cast<std::uint32_t>(names.size()));
  auto put_tensor = [&](const std::vector<std::size_t>& dims, const std::vector<float>& data) {
    io::put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) io::put_u32(out, static_cast<std::uint32_t>(d));
    io::put_f32s(out, data);
  };
  for (const auto& p : net.params()) put_tensor(p.dims, p.data);
  put_tensor({net.input_mean().size()}, net.input_mean());
  put_tensor({net.input_std().size()}, net.input_std());
  if (!out) throw IoError("write failed");
}

inline nn::Network<float> read_checkpoint_stream(std::istream& in) {
  io::check_preamble(in, "CMDL", 0);
  const std::uint32_t len = io::get_u32(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("truncated CMDL header");
  nn::NetworkConfig cfg;
  std::vector<std::string> names;
  try {
    const auto header = nlohmann::json::parse(text);
    cfg = nn::network_config_from_json(header.at("network"));
    names = header.at("tensors").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad CMDL header: ") + e.what());
  }
  nn::Network<float> net(cfg);
  const std::size_t n_params = net.params().size();
  if (names.size() != n_params + 2 || io::get_u32(in) != names.size())
    throw FormatError("CMDL tensor count does not match the network");
  for (std::size_t i = 0; i < n_params; ++i)
    if (names[i] != net.param_names()[i]) throw FormatError("CMDL tensor " + names[i] + " out of order");

  auto get_tensor = [&](const std::vector<std::size_t>& expect, float* dst) {
    const std::uint32_t rank = io::get_u32(in);
    if (rank != expect.size()) throw FormatError("CMDL tensor rank mismatch");
    std::size_t count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      if (io::get_u32(in) != expect[d]) throw FormatError("CMDL tensor shape mismatch");
      count *= expect[d];
    }
    io::get_f32s(in, dst, count);
  };
  for (auto& p : net.params()) get_tensor(p.dims, p.data.data());
  std::vector<float> mean(cfg.input_channels), stddev(cfg.input_channels);
  get_tensor({mean.size()}, mean.data());
  get_tensor({stddev.size()}, stddev.data());
  net.set_standardization(mean, stddev);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after CMDL payload");
  return net;
}

inline void write_checkpoint(const nn::Network<float>& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_checkpoint_stream(out, net);
}

inline nn::Network<float> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_checkpoint_stream(in);
}

}  // namespace chemimg
