#include "stssl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stssl/error.hpp"

namespace stssl::ckpt {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "stssl-checkpoint";
constexpr int kVersion = 1;

struct Tensor {
  std::string name;
  Eigen::VectorXd* data;
  const std::vector<int>* widths;  // network layer widths, null for buffers
};

std::vector<Tensor> tensors(train::TrainState& s) {
  auto& n = s.net;
  return {{"online_encoder", &n.online_encoder.params(), &n.online_encoder.widths()},
          {"online_projector", &n.online_projector.params(), &n.online_projector.widths()},
          {"predictor", &n.predictor.params(), &n.predictor.widths()},
          {"target_encoder", &n.target_encoder.params(), &n.target_encoder.widths()},
          {"target_projector", &n.target_projector.params(), &n.target_projector.widths()},
          {"velocity_encoder", &s.velocity.encoder, nullptr},
          {"velocity_projector", &s.velocity.projector, nullptr},
          {"velocity_predictor", &s.velocity.predictor, nullptr}};
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

void put_f64(std::string& out, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
}

double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t u = 0;
  for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return std::bit_cast<double>(u);
}

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

}  // namespace

void save(const fs::path& stem, const train::TrainState& state, const Config& cfg) {
  auto& s = const_cast<train::TrainState&>(state);  // tensors() only reads here
  std::string blob;
  json entries = json::array();
  for (const auto& t : tensors(s)) {
    json e = {{"name", t.name}, {"offset", blob.size()}, {"count", t.data->size()}};
    if (t.widths) e["widths"] = *t.widths;
    entries.push_back(e);
    for (Eigen::Index i = 0; i < t.data->size(); ++i) put_f64(blob, (*t.data)(i));
  }
  json manifest = {{"format", kFormat},
                   {"version", kVersion},
                   {"step", state.step},
                   {"stage", train::to_string(state.stage)},
                   {"head_reinits", state.head_reinits},
                   {"tracked_epoch", state.tracked_epoch ? json(*state.tracked_epoch) : json(nullptr)},
                   {"ema_momentum", state.net.momentum},
                   {"seeds",
                    {{"init", cfg.seeds.init},
                     {"aug", cfg.seeds.aug},
                     {"ransac", cfg.seeds.ransac},
                     {"sample", cfg.seeds.sample}}},
                   {"config", to_json(cfg)},
                   {"tensors", entries},
                   {"blob_bytes", blob.size()},
                   {"blob_fnv1a64", hex(fnv1a(blob))},
                   {"trajectories", track::trajectories_to_json(state.trajectories)}};

  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  js << manifest.dump(2) << '\n';
  if (!bin || !js) throw IoError("cannot write checkpoint " + stem.string());
}

Loaded load(const fs::path& stem) {
  const auto jpath = with_ext(stem, ".json");
  const auto bpath = with_ext(stem, ".bin");
  std::ifstream js(jpath);
  if (!js) throw IoError("cannot open checkpoint manifest " + jpath.string());
  std::ifstream bin(bpath, std::ios::binary);
  if (!bin) throw IoError("cannot open checkpoint blob " + bpath.string());
  const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  Loaded out;
  try {
    const json m = json::parse(js);
    if (m.at("format") != kFormat || m.at("version") != kVersion) {
      throw FormatError(jpath.string() + ": not a version " + std::to_string(kVersion) + " checkpoint");
    }
    if (m.at("blob_bytes").get<std::size_t>() != blob.size() ||
        m.at("blob_fnv1a64").get<std::string>() != hex(fnv1a(blob))) {
      throw IntegrityError("checkpoint blob " + bpath.string() + " does not match its manifest");
    }
    apply_json(out.config, m.at("config"));
    auto& st = out.state;
    st.step = m.at("step").get<std::size_t>();
    st.stage = train::stage_from_string(m.at("stage").get<std::string>());
    st.head_reinits = m.at("head_reinits").get<std::size_t>();
    if (!m.at("tracked_epoch").is_null()) st.tracked_epoch = m.at("tracked_epoch").get<std::size_t>();
    st.net.momentum = m.at("ema_momentum").get<double>();
    st.trajectories = track::trajectories_from_json(m.at("trajectories"));

    const auto& entries = m.at("tensors");
    auto slots = tensors(st);
    if (entries.size() != slots.size()) throw FormatError("unexpected tensor count in checkpoint");
    nn::Mlp* nets[] = {&st.net.online_encoder, &st.net.online_projector, &st.net.predictor,
                       &st.net.target_encoder, &st.net.target_projector};
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& e = entries[i];
      if (e.at("name").get<std::string>() != slots[i].name) {
        throw FormatError("checkpoint tensor " + std::to_string(i) + " is not " + slots[i].name);
      }
      if (i < 5) *nets[i] = nn::Mlp(e.at("widths").get<std::vector<int>>());
      auto& data = *tensors(st)[i].data;
      const auto count = e.at("count").get<std::size_t>();
      const auto offset = e.at("offset").get<std::size_t>();
      if (offset + 8 * count > blob.size()) throw IntegrityError("checkpoint tensor exceeds blob");
      const std::size_t expected = nets[i < 5 ? i : i - 5]->num_params();
      if (count != expected) {
        throw IntegrityError("tensor " + slots[i].name + " size disagrees with its network");
      }
      data.resize(static_cast<Eigen::Index>(count));
      for (std::size_t k = 0; k < count; ++k) data(static_cast<Eigen::Index>(k)) = get_f64(blob, offset + 8 * k);
    }
  } catch (const json::exception& e) {
    throw FormatError(jpath.string() + ": " + e.what());
  }
  return out;
}

}  // namespace stssl::ckpt
