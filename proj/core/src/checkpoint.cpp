#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "vrt/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace vrt {

namespace {

using json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;
constexpr const char* kMagic = "vla-redteam-checkpoint";

json shape_to_json(const Shape& s) {
  json a = json::array();
  for (auto d : s) a.push_back(d);
  return a;
}

Shape shape_from_json(const json& a) {
  Shape s;
  for (const auto& d : a) s.push_back(d.get<std::size_t>());
  return s;
}

struct BlobWriter {
  std::vector<std::pair<std::string, std::span<const double>>> blobs;
  std::uint64_t offset = 0;

  json add(const std::string& name, const Shape& shape,
           std::span<const double> data) {
    json entry;
    entry["name"] = name;
    entry["shape"] = shape_to_json(shape);
    entry["offset"] = offset;
    entry["bytes"] = data.size() * sizeof(double);
    blobs.emplace_back(name, data);
    offset += data.size() * sizeof(double);
    return entry;
  }
};

}  // namespace

void save_checkpoint(const VLAModel& model, const std::string& path,
                     const TrainState* train_state) {
  json header;
  header["format"] = kMagic;
  header["version"] = kFormatVersion;

  const ModelConfig& c = model.config;
  header["config"] = {{"vocab_size", c.vocab_size},
                      {"action_token_count", c.action_token_count},
                      {"dof", c.dof},
                      {"d_model", c.d_model},
                      {"n_layers", c.n_layers},
                      {"n_heads", c.n_heads},
                      {"max_text_tokens", c.max_text_tokens},
                      {"image_token_count", c.image_token_count},
                      {"image_size", c.image_size}};
  header["vocab"] = {{"tokens", model.vocab.tokens()},
                     {"reserved_ids", model.vocab.reserved_ids()},
                     {"action_token_count", model.vocab.action_token_count()}};
  header["stats"] = {{"q01", model.stats.q01}, {"q99", model.stats.q99}};

  BlobWriter writer;
  json manifest = json::array();
  for (const auto& [name, t] : model.named_parameters())
    manifest.push_back(writer.add(name, t->shape(), t->data()));
  if (train_state != nullptr) {
    header["train_state"] = {{"epochs_done", train_state->epochs_done},
                             {"adam_steps", train_state->adam_steps},
                             {"rng_state", train_state->rng_state}};
    for (const auto& [name, buf] : train_state->adam_m)
      manifest.push_back(writer.add("adam_m/" + name, {buf.size()}, buf));
    for (const auto& [name, buf] : train_state->adam_v)
      manifest.push_back(writer.add("adam_v/" + name, {buf.size()}, buf));
  }
  header["tensors"] = std::move(manifest);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << header.dump() << '\n';
  for (const auto& [name, data] : writer.blobs)
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw std::runtime_error("load_checkpoint: missing header: " + path);

  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw std::runtime_error("load_checkpoint: malformed header: " +
                             std::string(e.what()));
  }
  if (header.value("format", "") != kMagic)
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
  if (header.value("version", -1) != kFormatVersion)
    throw std::runtime_error(
        "load_checkpoint: unsupported version " +
        std::to_string(header.value("version", -1)));

  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  const auto& jc = header.at("config");
  ModelConfig cfg;
  cfg.vocab_size = jc.at("vocab_size");
  cfg.action_token_count = jc.at("action_token_count");
  cfg.dof = jc.at("dof");
  cfg.d_model = jc.at("d_model");
  cfg.n_layers = jc.at("n_layers");
  cfg.n_heads = jc.at("n_heads");
  cfg.max_text_tokens = jc.at("max_text_tokens");
  cfg.image_token_count = jc.at("image_token_count");
  cfg.image_size = jc.at("image_size");

  const auto& jv = header.at("vocab");
  Vocabulary vocab = Vocabulary::from_parts(
      jv.at("tokens").get<std::vector<std::string>>(),
      jv.at("reserved_ids").get<std::vector<int>>(),
      jv.at("action_token_count").get<int>());

  NormalizationStats stats;
  stats.q01 = header.at("stats").at("q01").get<std::vector<double>>();
  stats.q99 = header.at("stats").at("q99").get<std::vector<double>>();

  VLAModel model = VLAModel::init(cfg, std::move(vocab), std::move(stats), 0);

  auto read_blob = [&blob, &path](const json& entry, Shape* shape_out)
      -> std::vector<double> {
    Shape shape = shape_from_json(entry.at("shape"));
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    std::uint64_t offset = entry.at("offset");
    std::uint64_t bytes = entry.at("bytes");
    if (bytes != count * sizeof(double) || offset + bytes > blob.size())
      throw std::runtime_error("load_checkpoint: tensor size mismatch for '" +
                               entry.at("name").get<std::string>() + "' in " +
                               path);
    std::vector<double> data(count);
    std::memcpy(data.data(), blob.data() + offset, bytes);
    if (shape_out) *shape_out = std::move(shape);
    return data;
  };

  auto params = model.named_parameters();
  std::size_t next_param = 0;
  Checkpoint ck;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name");
    if (name.rfind("adam_m/", 0) == 0 || name.rfind("adam_v/", 0) == 0) {
      if (!ck.train_state) ck.train_state.emplace();
      auto data = read_blob(entry, nullptr);
      auto& side = name.rfind("adam_m/", 0) == 0 ? ck.train_state->adam_m
                                                 : ck.train_state->adam_v;
      side.emplace_back(name.substr(7), std::move(data));
      continue;
    }
    if (next_param >= params.size() || params[next_param].first != name)
      throw std::runtime_error("load_checkpoint: unexpected tensor '" + name +
                               "' in manifest");
    Shape shape;
    auto data = read_blob(entry, &shape);
    Tensor* dst = params[next_param].second;
    if (shape != dst->shape())
      throw std::runtime_error("load_checkpoint: tensor shape mismatch for '" +
                               name + "'");
    dst->mutable_data() = std::move(data);
    ++next_param;
  }
  if (next_param != params.size())
    throw std::runtime_error("load_checkpoint: manifest is missing tensors");

  if (header.contains("train_state")) {
    if (!ck.train_state) ck.train_state.emplace();
    const auto& ts = header.at("train_state");
    ck.train_state->epochs_done = ts.at("epochs_done");
    ck.train_state->adam_steps = ts.at("adam_steps");
    ck.train_state->rng_state = ts.at("rng_state");
  }

  ck.model = std::move(model);
  return ck;
}

}  // namespace vrt
