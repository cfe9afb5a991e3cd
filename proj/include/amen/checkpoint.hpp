#pragma once

// Branch checkpoint files.
//
// checkpoint.bin (all integers little-endian):
//   bytes 0..7   magic "AMENCKPT"
//   uint32       format version (currently 1)
//   uint32       tensor count
//   per tensor:  uint32 rank, rank x uint32 extents, then prod(extents)
//                IEEE-754 binary32 values, little-endian, row-major
//
// checkpoint.json (sidecar, same stem) holds the backbone spec the tensors
// were generated from, the format version and the tensor shapes. Loading
// rebuilds the expected layout from the spec and rejects any mismatch.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amen/backbone.hpp"
#include "amen/error.hpp"

namespace amen {

inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'M', 'E', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = {{"kind", layer_kind_name(l.kind)}};
  switch (l.kind) {
    case LayerKind::conv:
      j["in"] = l.in;
      j["out"] = l.out;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::maxpool:
      j["window"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::linear:
      j["in"] = l.in;
      j["out"] = l.out;
      break;
    default:
      break;
  }
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "conv") {
    l = LayerSpec::conv(j.at("in"), j.at("out"), j.at("kernel"), j.value("stride", std::size_t{1}),
                        j.value("padding", std::size_t{0}));
  } else if (kind == "maxpool") {
    const auto window = j.at("window").get<std::size_t>();
    l = LayerSpec::maxpool(window, j.value("stride", window));
  } else if (kind == "relu") {
    l = LayerSpec::relu();
  } else if (kind == "linear") {
    l = LayerSpec::linear(j.at("in"), j.at("out"));
  } else if (kind == "gap") {
    l = LayerSpec::gap();
  } else {
    throw ParseError("unknown layer kind '" + kind + "'");
  }
}

inline void to_json(nlohmann::json& j, const BackboneSpec& s) {
  j = {{"input_channels", s.input_channels},
       {"input_height", s.input_height},
       {"input_width", s.input_width},
       {"features", s.features},
       {"hidden", s.hidden},
       {"classes", s.classes},
       {"init", s.init}};
}

inline void from_json(const nlohmann::json& j, BackboneSpec& s) {
  s.input_channels = j.at("input_channels");
  s.input_height = j.at("input_height");
  s.input_width = j.at("input_width");
  s.features = j.at("features").get<std::vector<LayerSpec>>();
  s.hidden = j.value("hidden", std::vector<std::size_t>{});
  s.classes = j.at("classes");
  s.init = j.value("init", std::string("he_normal"));
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos, const std::string& path) {
  if (pos + 4 > in.size()) throw DecodeError("truncated checkpoint " + path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

inline std::string sidecar_path(const std::filesystem::path& bin) {
  auto p = bin;
  p.replace_extension(".json");
  return p.string();
}

}  // namespace detail

template <class T>
std::string encode_checkpoint(const BranchParams<T>& params) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (auto v : t.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline nlohmann::json checkpoint_sidecar(const BackboneSpec& spec,
                                         const std::vector<Shape>& shapes) {
  return {{"format", "amen-checkpoint"},
          {"version", kCheckpointVersion},
          {"dtype", "float32-le"},
          {"spec", spec},
          {"tensors", shapes}};
}

template <class T>
void save_checkpoint(const std::filesystem::path& bin_path, const BranchParams<T>& params) {
  std::filesystem::create_directories(bin_path.parent_path().empty() ? "." : bin_path.parent_path());
  {
    std::ofstream f(bin_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + bin_path.string());
    const auto bytes = encode_checkpoint(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::vector<Shape> shapes;
  for (const auto& t : params.tensors) shapes.push_back(t.shape());
  std::ofstream j(detail::sidecar_path(bin_path));
  if (!j) throw IoError("cannot write " + detail::sidecar_path(bin_path));
  j << checkpoint_sidecar(params.spec, shapes).dump(2) << '\n';
}

template <class T>
BranchParams<T> load_checkpoint(const std::filesystem::path& bin_path) {
  const std::string side = detail::sidecar_path(bin_path);
  std::ifstream js(side);
  if (!js) throw IoError("missing checkpoint sidecar " + side);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(side + ": " + e.what());
  }
  if (meta.value("version", 0u) != kCheckpointVersion) {
    throw DecodeError(side + ": unsupported checkpoint version");
  }
  // Template layout from the spec; values come from the binary file.
  BranchParams<T> params = init_backbone<T>(meta.at("spec").get<BackboneSpec>(), 0);

  std::ifstream f(bin_path, std::ios::binary);
  if (!f) throw IoError("missing checkpoint " + bin_path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string path = bin_path.string();
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 8) != 0) {
    throw DecodeError("bad checkpoint magic in " + path);
  }
  std::size_t pos = 8;
  if (detail::get_u32(bytes, pos, path) != kCheckpointVersion) {
    throw DecodeError("unsupported checkpoint version in " + path);
  }
  const auto count = detail::get_u32(bytes, pos, path);
  if (count != params.tensors.size()) {
    throw DecodeError(path + ": " + std::to_string(count) + " tensors, spec expects " +
                      std::to_string(params.tensors.size()));
  }
  for (auto& t : params.tensors) {
    const auto rank = detail::get_u32(bytes, pos, path);
    Shape s;
    for (std::uint32_t r = 0; r < rank; ++r) s.push_back(detail::get_u32(bytes, pos, path));
    if (s != t.shape()) {
      throw DecodeError(path + ": tensor shape " + shape_str(s) + " does not match spec " +
                        shape_str(t.shape()));
    }
    for (auto& v : t.values()) v = static_cast<T>(std::bit_cast<float>(detail::get_u32(bytes, pos, path)));
  }
  if (pos != bytes.size()) throw DecodeError("trailing bytes in checkpoint " + path);
  return params;
}

}  // namespace amen
