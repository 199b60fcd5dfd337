#pragma once

// Checkpoint file:
//   "ACKP" | u64 LE header length | JSON header | TNSR blocks
// Blocks are the parameters in header order, then Adam m, then Adam v.

#include <array>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <utility>
#include <string>
#include <vector>

#include "acacr/tensor/serialize.hpp"
#include "acacr/trainer/config.hpp"
#include "acacr/trainer/train.hpp"

namespace acacr {

inline constexpr std::array<char, 4> kCheckpointMagic{'A', 'C', 'K', 'P'};
inline constexpr int kCheckpointVersion = 1;

template <Real T>
struct Checkpoint {
  NetworkConfig network;
  TrainConfig train;
  TrainState<T> state;
};

template <Real T>
void write_checkpoint(std::ostream& os, const Checkpoint<T>& ck) {
  const auto names = parameter_names(ck.state.params);
  const nlohmann::json header{{"format", "acacr-checkpoint"},
                              {"version", kCheckpointVersion},
                              {"dtype", dtype_of<T>() == DType::f32 ? "f32" : "f64"},
                              {"network", to_json(ck.network)},
                              {"train", to_json(ck.train)},
                              {"step", ck.state.step},
                              {"rng_state", ck.state.rng.state()},
                              {"optimizer",
                               {{"t", ck.state.optim.t},
                                {"lr", ck.state.optim.lr},
                                {"beta1", ck.state.optim.beta1},
                                {"beta2", ck.state.optim.beta2},
                                {"eps", ck.state.optim.eps}}},
                              {"tensors", names}};
  const std::string text = header.dump();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor<T>* p : parameter_list(ck.state.params)) write_tnsr(os, *p);
  for (const auto& m : ck.state.optim.m) write_tnsr(os, m);
  for (const auto& v : ck.state.optim.v) write_tnsr(os, v);
}

template <Real T>
Checkpoint<T> read_checkpoint(std::istream& is) {
  detail::ByteReader in(is);
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size(), "checkpoint magic");
  if (magic != kCheckpointMagic) throw FormatError("checkpoint: bad magic bytes at offset 0");
  const auto len = in.get_le<std::uint64_t>("checkpoint header length");
  if (len > (1u << 26)) throw FormatError("checkpoint: implausible header length at offset 4");
  std::string text(len, '\0');
  in.read(text.data(), text.size(), "checkpoint header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  Checkpoint<T> ck;
  std::vector<std::string> names;
  try {
    if (h.at("format").get<std::string>() != "acacr-checkpoint") throw FormatError("checkpoint: unknown format tag");
    const int version = h.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw IncompatibleError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    ck.network = network_config_from_json(h.at("network"));
    ck.train = train_config_from_json(h.at("train"));
    ck.state.step = h.at("step").get<std::uint64_t>();
    ck.state.rng.restore(h.at("rng_state").get<std::string>());
    const auto& o = h.at("optimizer");
    ck.state.optim.t = o.at("t").get<std::uint64_t>();
    ck.state.optim.lr = o.at("lr").get<double>();
    ck.state.optim.beta1 = o.at("beta1").get<double>();
    ck.state.optim.beta2 = o.at("beta2").get<double>();
    ck.state.optim.eps = o.at("eps").get<double>();
    names = h.at("tensors").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  ck.state.params = build_network<T>(ck.network, RngStream(0));
  if (names != parameter_names(ck.state.params)) {
    throw IncompatibleError("checkpoint tensors do not match its network configuration");
  }
  for (Tensor<T>* p : parameter_list(ck.state.params)) {
    const Shape want = p->shape();
    *p = read_tnsr<T>(is);
    if (p->shape() != want) throw FormatError("checkpoint: tensor shape disagrees with the network configuration");
  }
  for (auto* moments : {&ck.state.optim.m, &ck.state.optim.v}) {
    for (const Tensor<T>* p : parameter_list(std::as_const(ck.state.params))) {
      moments->push_back(read_tnsr<T>(is));
      if (moments->back().shape() != p->shape()) throw FormatError("checkpoint: optimizer moment shape mismatch");
    }
  }
  return ck;
}

template <Real T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(os, ck);
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

template <Real T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint<T>(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Loads and checks the stored network configuration against `expected`.
template <Real T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
  Checkpoint<T> ck = load_checkpoint<T>(path);
  if (!(ck.network == expected)) {
    throw IncompatibleError("checkpoint network " + to_json(ck.network).dump() + " does not match " +
                            to_json(expected).dump());
  }
  return ck;
}

}  // namespace acacr
