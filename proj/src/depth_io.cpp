#include "ihf/geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

namespace ihf {

std::filesystem::path depth_sidecar_path(const std::filesystem::path& raw_path) {
  auto p = raw_path;
  p.replace_extension(".json");
  return p;
}

void save_depth(const DepthImage& image, const std::filesystem::path& raw_path, double depth_scale) {
  if (!(depth_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "depth_scale must be positive");
  std::vector<unsigned char> bytes;
  bytes.reserve(image.depth().size() * 2);
  for (double z : image.depth()) {
    const double units = std::round(z / depth_scale);
    if (units > std::numeric_limits<std::uint16_t>::max())
      throw Error(ErrorCode::InvalidArgument, "depth exceeds the 16-bit range at this depth_scale");
    const auto q = static_cast<std::uint16_t>(units);
    bytes.push_back(static_cast<unsigned char>(q & 0xff));
    bytes.push_back(static_cast<unsigned char>(q >> 8));
  }
  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw) throw Error(ErrorCode::IoError, "cannot write " + raw_path.string());
  raw.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));

  const auto& k = image.intrinsics();
  nlohmann::ordered_json header = {{"width", image.width()}, {"height", image.height()}, {"fx", k.fx},
                                   {"fy", k.fy},             {"cx", k.cx},                 {"cy", k.cy},
                                   {"depth_scale", depth_scale}};
  std::ofstream side(depth_sidecar_path(raw_path));
  if (!side) throw Error(ErrorCode::IoError, "cannot write sidecar for " + raw_path.string());
  side << header.dump(2) << '\n';
}

DepthImage load_depth(const std::filesystem::path& raw_path) {
  std::ifstream side(depth_sidecar_path(raw_path));
  if (!side) throw Error(ErrorCode::IoError, "missing sidecar header for " + raw_path.string());
  nlohmann::json header;
  try {
    side >> header;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("malformed depth header: ") + e.what());
  }
  const int w = header.at("width").get<int>();
  const int h = header.at("height").get<int>();
  const double scale = header.at("depth_scale").get<double>();
  const Intrinsics k{header.at("fx").get<double>(), header.at("fy").get<double>(), header.at("cx").get<double>(),
                     header.at("cy").get<double>()};

  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw Error(ErrorCode::IoError, "cannot read " + raw_path.string());
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<unsigned char> bytes(n * 2);
  raw.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(raw.gcount()) != bytes.size())
    throw Error(ErrorCode::IoError, "depth file shorter than header dimensions: " + raw_path.string());

  std::vector<double> depth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto q = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    depth[i] = q * scale;
  }
  return DepthImage(w, h, k, std::move(depth));
}

}  // namespace ihf
