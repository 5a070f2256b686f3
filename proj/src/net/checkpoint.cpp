#include "fodnet/net/checkpoint.hpp"

#include "fodnet/volume.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fodnet::net {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'O', 'D', 'N', 'E', 'T', 'C', 'K'};

Blob to_blob(const std::string& name, const Eigen::Array<float, Eigen::Dynamic, 1>& a) {
  return Blob{name, std::vector<float>(a.data(), a.data() + a.size())};
}

void from_blob(const Blob& b, const std::string& expected, Eigen::Array<float, Eigen::Dynamic, 1>& a) {
  if (b.name != expected || b.values.size() != std::size_t(a.size()))
    throw std::invalid_argument("checkpoint entry '" + b.name + "' (" + std::to_string(b.values.size()) +
                                " values) does not match network entry '" + expected + "' (" +
                                std::to_string(a.size()) + " values)");
  a = Eigen::Map<const Eigen::Array<float, Eigen::Dynamic, 1>>(b.values.data(), a.size());
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json blob_list(const std::vector<Blob>& blobs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& b : blobs) a.push_back({{"name", b.name}, {"size", b.values.size()}});
  return a;
}

}  // namespace

Checkpoint snapshot(Network<float>& net, const RmsProp<float>* opt) {
  Checkpoint ck;
  ck.arch = net.spec().arch;
  ck.channels = net.in_channels();
  for (auto& [name, p] : net.named_params()) ck.params.push_back(to_blob(name, p->value));
  for (auto& [name, b] : net.named_buffers()) ck.buffers.push_back(to_blob(name, *b));
  if (opt) {
    ck.optimizer = opt->config();
    const auto names = net.named_params();
    for (std::size_t i = 0; i < opt->accumulators().size(); ++i)
      ck.accumulators.push_back(to_blob(names[i].first, opt->accumulators()[i]));
  }
  return ck;
}

void restore(const Checkpoint& ck, Network<float>& net, RmsProp<float>* opt) {
  auto params = net.named_params();
  auto buffers = net.named_buffers();
  if (ck.params.size() != params.size() || ck.buffers.size() != buffers.size())
    throw std::invalid_argument("checkpoint holds " + std::to_string(ck.params.size()) + " parameters, network has " +
                                std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) from_blob(ck.params[i], params[i].first, params[i].second->value);
  for (std::size_t i = 0; i < buffers.size(); ++i) from_blob(ck.buffers[i], buffers[i].first, *buffers[i].second);
  if (opt) {
    opt->config() = ck.optimizer;
    if (!ck.accumulators.empty()) {
      if (ck.accumulators.size() != opt->accumulators().size())
        throw std::invalid_argument("checkpoint optimizer state does not match the network");
      for (std::size_t i = 0; i < params.size(); ++i)
        from_blob(ck.accumulators[i], params[i].first, opt->accumulators()[i]);
    }
  }
}

std::unique_ptr<Network<float>> load_network(const Checkpoint& ck, int threads) {
  auto net = std::make_unique<Network<float>>(architecture(ck.arch, ck.channels), threads);
  restore(ck, *net);
  return net;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::ordered_json h;
  h["arch"] = ck.arch;
  h["channels"] = ck.channels;
  h["epoch"] = ck.epoch;
  h["train_loss"] = number_or_null(ck.train_loss);
  h["val_loss"] = number_or_null(ck.val_loss);
  h["optimizer"] = {{"lr", ck.optimizer.lr},
                    {"rho", ck.optimizer.rho},
                    {"eps", ck.optimizer.eps},
                    {"weight_decay", ck.optimizer.weight_decay}};
  h["rng"] = ck.rng;
  const nlohmann::json extra = nlohmann::json::parse(ck.extra.empty() ? "{}" : ck.extra, nullptr, false);
  h["extra"] = extra.is_discarded() ? nlohmann::json(ck.extra) : extra;
  h["params"] = blob_list(ck.params);
  h["buffers"] = blob_list(ck.buffers);
  h["accumulators"] = blob_list(ck.accumulators);
  const std::string text = h.dump();

  std::string out(kMagic, sizeof kMagic);
  auto put_u32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put_u32(kCheckpointVersion);
  put_u32(std::uint32_t(text.size()));
  out += text;
  for (const auto* list : {&ck.params, &ck.buffers, &ck.accumulators})
    for (const auto& b : *list)
      out.append(reinterpret_cast<const char*>(b.values.data()), b.values.size() * sizeof(float));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  auto fail = [&](const std::string& what, std::size_t offset) {
    throw FormatError(source + ": " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) fail("bad magic", 0);
  if (bytes.size() < 16) fail("truncated header", 8);
  std::uint32_t version = 0, len = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&len, bytes.data() + 12, 4);
  if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version), 8);
  if (bytes.size() < 16 + std::size_t(len)) fail("truncated header", 16);
  Checkpoint ck;
  std::size_t offset = 16 + std::size_t(len);
  try {
    const auto h = nlohmann::json::parse(bytes.substr(16, len));
    ck.arch = h.at("arch").get<std::string>();
    ck.channels = h.at("channels").get<int>();
    ck.epoch = h.at("epoch").get<int>();
    ck.train_loss = number_from(h.at("train_loss"));
    ck.val_loss = number_from(h.at("val_loss"));
    const auto& o = h.at("optimizer");
    ck.optimizer = RmsPropConfig{o.at("lr").get<double>(), o.at("rho").get<double>(), o.at("eps").get<double>(),
                                 o.at("weight_decay").get<double>()};
    ck.rng = h.at("rng").get<std::string>();
    ck.extra = h.at("extra").dump();
    auto read_list = [&](const char* key, std::vector<Blob>& list) {
      for (const auto& e : h.at(key)) {
        Blob b;
        b.name = e.at("name").get<std::string>();
        const auto n = e.at("size").get<std::size_t>();
        if (bytes.size() < offset + n * sizeof(float)) fail("payload truncated in '" + b.name + "'", bytes.size());
        b.values.resize(n);
        std::memcpy(b.values.data(), bytes.data() + offset, n * sizeof(float));
        offset += n * sizeof(float);
        list.push_back(std::move(b));
      }
    };
    read_list("params", ck.params);
    read_list("buffers", ck.buffers);
    read_list("accumulators", ck.accumulators);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed header: ") + e.what(), 16);
  }
  if (offset != bytes.size()) fail("trailing bytes after payload", offset);
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

}  // namespace fodnet::net
