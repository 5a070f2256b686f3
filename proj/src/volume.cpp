#include "fodnet/volume.hpp"

#include "fodnet/shmath.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fodnet {

static_assert(std::endian::native == std::endian::little, "volume IO assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'F', 'O', 'D', 'V', 'O', 'L', '0', '1'};
}

std::string to_string(const Dims& d) {
  return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

Volume::Volume(Dims dims, int channels, float fill)
    : dims_(dims), channels_(channels), data_(dims.voxels() * std::size_t(channels), fill) {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0 || channels <= 0)
    throw std::invalid_argument("Volume: non-positive size " + to_string(dims) + "x" + std::to_string(channels));
}

Volume Volume::select_channels(std::span<const int> channels) const {
  Volume out(dims_, int(channels.size()));
  out.voxel_size_mm = voxel_size_mm;
  for (int c : channels)
    if (c < 0 || c >= channels_) throw std::out_of_range("select_channels: channel " + std::to_string(c));
  for (std::size_t i = 0; i < voxels(); ++i)
    for (std::size_t k = 0; k < channels.size(); ++k) out.at(i, int(k)) = at(i, channels[k]);
  return out;
}

std::size_t Mask::count() const { return std::size_t(std::count(bits_.begin(), bits_.end(), 1)); }

std::vector<std::size_t> Mask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) out.push_back(i);
  return out;
}

bool Mask::subset_of(const Mask& other) const {
  if (!(dims_ == other.dims_)) return false;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i] && !other.bits_[i]) return false;
  return true;
}

int LabelVolume::max_label() const {
  return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end());
}

int TissueLayout::wm_count() const { return n_coeffs(wm_lmax); }

std::string TissueLayout::describe() const {
  std::string s = "wm:" + std::to_string(wm_count());
  if (gm) s += ",gm:1";
  if (csf) s += ",csf:1";
  return s;
}

TissueLayout TissueLayout::parse(const std::string& text) {
  TissueLayout t;
  t.gm = false;
  t.csf = false;
  bool have_wm = false;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw FormatError("tissue layout: malformed item '" + item + "'");
    const std::string name = item.substr(0, colon);
    const int count = std::stoi(item.substr(colon + 1));
    if (name == "wm") {
      t.wm_lmax = lmax_for_count(count);
      have_wm = true;
    } else if (name == "gm" && count == 1) {
      t.gm = true;
    } else if (name == "csf" && count == 1) {
      t.csf = true;
    } else {
      throw FormatError("tissue layout: unknown item '" + item + "'");
    }
  }
  if (!have_wm) throw FormatError("tissue layout: missing wm entry in '" + text + "'");
  return t;
}

CoeffVolume CoeffVolume::wm_only() const {
  TissueLayout l{layout_.wm_lmax, false, false};
  CoeffVolume out(dims(), l);
  out.voxel_size_mm = voxel_size_mm;
  out.scale = scale;
  out.provenance = provenance;
  const int n = l.wm_count();
  for (std::size_t i = 0; i < voxels(); ++i)
    std::copy_n(voxel(i).data(), n, out.voxel(i).data());
  return out;
}

void write_volume(const std::filesystem::path& path, const Volume& v, const std::string& kind,
                  const std::string& layout, int lmax, double scale, const std::string& provenance) {
  nlohmann::ordered_json h;
  h["version"] = kVolumeFormatVersion;
  h["kind"] = kind;
  h["dims"] = {v.dims().x, v.dims().y, v.dims().z};
  h["voxel_size_mm"] = v.voxel_size_mm;
  h["channels"] = v.channels();
  h["layout"] = layout;
  h["lmax"] = lmax;
  h["scale"] = scale;
  nlohmann::json prov = nlohmann::json::parse(provenance.empty() ? "{}" : provenance, nullptr, false);
  h["provenance"] = prov.is_discarded() ? nlohmann::json(provenance) : prov;
  const std::string text = h.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), std::streamsize(text.size()));
  out.write(reinterpret_cast<const char*>(v.data().data()), std::streamsize(v.data().size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Volume read_volume(const std::filesystem::path& path, VolumeHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string name = path.string();
  char magic[8];
  if (!in.read(magic, sizeof magic)) throw FormatError(name + ": truncated magic at byte offset 0");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(name + ": bad magic at byte offset 0");
  std::uint32_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw FormatError(name + ": truncated header length at byte offset 8");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError(name + ": truncated header at byte offset 12");

  VolumeHeader h;
  try {
    const auto j = nlohmann::json::parse(text);
    h.version = j.at("version").get<int>();
    if (h.version != kVolumeFormatVersion)
      throw FormatError(name + ": unsupported version " + std::to_string(h.version) + " at byte offset 12");
    h.kind = j.at("kind").get<std::string>();
    const auto d = j.at("dims");
    h.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    h.voxel_size_mm = j.value("voxel_size_mm", 2.0);
    h.channels = j.at("channels").get<int>();
    h.layout = j.value("layout", std::string());
    h.lmax = j.value("lmax", -1);
    h.scale = j.value("scale", 1.0);
    h.provenance = j.contains("provenance") ? j["provenance"].dump() : "{}";
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(name + ": malformed header at byte offset 12: " + e.what());
  }
  if (h.dims.x <= 0 || h.dims.y <= 0 || h.dims.z <= 0 || h.channels <= 0)
    throw FormatError(name + ": non-positive dims in header at byte offset 12");

  Volume v(h.dims, h.channels);
  v.voxel_size_mm = h.voxel_size_mm;
  const std::size_t payload = v.data().size() * sizeof(float);
  const std::size_t offset = 12 + len;
  in.read(reinterpret_cast<char*>(v.data().data()), std::streamsize(payload));
  if (std::size_t(in.gcount()) != payload)
    throw FormatError(name + ": payload truncated at byte offset " + std::to_string(offset + std::size_t(in.gcount())) +
                      " (expected " + std::to_string(payload) + " bytes)");
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError(name + ": trailing bytes after payload at byte offset " + std::to_string(offset + payload));
  if (header) *header = h;
  return v;
}

void write_coeff_volume(const std::filesystem::path& path, const CoeffVolume& v) {
  write_volume(path, v, "coeff", v.layout().describe(), v.lmax(), v.scale, v.provenance);
}

CoeffVolume read_coeff_volume(const std::filesystem::path& path) {
  VolumeHeader h;
  Volume raw = read_volume(path, &h);
  if (h.kind != "coeff") throw FormatError(path.string() + ": expected kind 'coeff', found '" + h.kind + "'");
  const TissueLayout layout = TissueLayout::parse(h.layout);
  if (layout.channels() != h.channels)
    throw FormatError(path.string() + ": layout '" + h.layout + "' does not match channel count");
  CoeffVolume out(h.dims, layout);
  out.voxel_size_mm = h.voxel_size_mm;
  out.data() = std::move(raw.data());
  out.scale = h.scale;
  out.provenance = h.provenance;
  return out;
}

void write_mask(const std::filesystem::path& path, const Mask& m, const std::string& provenance) {
  Volume v(m.dims(), 1);
  for (std::size_t i = 0; i < v.voxels(); ++i) v.at(i, 0) = m[i] ? 1.0f : 0.0f;
  write_volume(path, v, "mask", "", -1, 1.0, provenance);
}

Mask read_mask(const std::filesystem::path& path) {
  VolumeHeader h;
  const Volume v = read_volume(path, &h);
  if (h.channels != 1) throw FormatError(path.string() + ": mask must have one channel");
  Mask m(h.dims);
  for (std::size_t i = 0; i < v.voxels(); ++i) m.set(i, v.at(i, 0) > 0.5f);
  return m;
}

void write_labels(const std::filesystem::path& path, const LabelVolume& l, const std::string& provenance) {
  Volume v(l.dims(), 1);
  for (std::size_t i = 0; i < v.voxels(); ++i) v.at(i, 0) = float(l[i]);
  write_volume(path, v, "labels", "", -1, 1.0, provenance);
}

LabelVolume read_labels(const std::filesystem::path& path) {
  VolumeHeader h;
  const Volume v = read_volume(path, &h);
  if (h.channels != 1) throw FormatError(path.string() + ": label volume must have one channel");
  LabelVolume l(h.dims);
  for (std::size_t i = 0; i < v.voxels(); ++i) l.set(i, int(std::lround(v.at(i, 0))));
  return l;
}

}  // namespace fodnet
