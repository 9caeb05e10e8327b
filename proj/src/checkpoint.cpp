#include "vtfuse/checkpoint.hpp"

#include <algorithm>
#include <unordered_map>

#include "vtfuse/binary_io.hpp"
#include "vtfuse/errors.hpp"

namespace vtfuse {

namespace {

constexpr std::string_view kMagic = "XMF1";
constexpr std::string_view kFusionKind = "fusion";

void put_backbone(Checkpoint& c, const std::string& prefix, const BackboneConfig& b) {
  c.config.emplace_back(prefix + ".in_channels", static_cast<std::int64_t>(b.in_channels));
  c.config.emplace_back(prefix + ".reduce_dim", static_cast<std::int64_t>(b.reduce_dim));
  c.config.emplace_back(prefix + ".stages", static_cast<std::int64_t>(b.stages.size()));
  for (std::size_t i = 0; i < b.stages.size(); ++i) {
    const std::string s = prefix + ".stage" + std::to_string(i);
    c.config.emplace_back(s + ".out", static_cast<std::int64_t>(b.stages[i].out_channels));
    c.config.emplace_back(s + ".kernel", static_cast<std::int64_t>(b.stages[i].kernel));
    c.config.emplace_back(s + ".stride", static_cast<std::int64_t>(b.stages[i].stride));
  }
}

std::size_t positive(const Checkpoint& c, const std::string& key) {
  const std::int64_t v = c.get(key);
  if (v < 0 || v > (1LL << 31)) throw FormatError("bad file format: config '" + key + "' out of range");
  return static_cast<std::size_t>(v);
}

BackboneConfig get_backbone(const Checkpoint& c, const std::string& prefix) {
  BackboneConfig b;
  b.in_channels = positive(c, prefix + ".in_channels");
  b.reduce_dim = positive(c, prefix + ".reduce_dim");
  b.stages.clear();
  const std::size_t n = positive(c, prefix + ".stages");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string s = prefix + ".stage" + std::to_string(i);
    b.stages.push_back({positive(c, s + ".out"), positive(c, s + ".kernel"), positive(c, s + ".stride")});
  }
  return b;
}

}  // namespace

std::int64_t Checkpoint::get(std::string_view key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw FormatError("bad file format: checkpoint lacks config entry '" + std::string(key) + "'");
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::Writer w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.str(ckpt.kind);
  w.u32(static_cast<std::uint32_t>(ckpt.config.size()));
  for (const auto& [k, v] : ckpt.config) {
    w.str(k);
    w.i64(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.tensor.values()) w.f32(static_cast<float>(v));
  }
  w.save(path);
}

Checkpoint read_checkpoint(const std::string& path) {
  io::Reader r = io::Reader::open(path);
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("bad file format: unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.kind = r.str();
  const std::uint32_t n_config = r.u32();
  for (std::uint32_t i = 0; i < n_config; ++i) {
    std::string key = r.str();
    c.config.emplace_back(std::move(key), r.i64());
  }
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("bad file format: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (std::size_t& d : shape) d = r.u32();
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f32();
    c.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  r.expect_end();
  return c;
}

void round_to_float(const std::vector<NamedTensor>& params) {
  for (const NamedTensor& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.values_mut()) v = static_cast<double>(static_cast<float>(v));
  }
}

void assign_parameters(const std::vector<NamedTensor>& params, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const Tensor*> stored;
  for (const NamedTensor& t : ckpt.tensors) stored[t.name] = &t.tensor;
  if (stored.size() != params.size()) {
    throw FormatError("bad file format: checkpoint has " + std::to_string(stored.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  for (const NamedTensor& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw FormatError("bad file format: checkpoint lacks tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw FormatError("bad file format: tensor '" + p.name + "' is " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    const auto src = it->second->values();
    std::copy(src.begin(), src.end(), dst.values_mut().begin());
  }
}

void save_model(const std::string& path, const FusionModel& model) {
  const FusionConfig& cfg = model.cfg;
  Checkpoint c;
  c.kind = kFusionKind;
  c.config = {{"variant", static_cast<std::int64_t>(cfg.variant)},
              {"image_size", static_cast<std::int64_t>(cfg.image_size)},
              {"heads", static_cast<std::int64_t>(cfg.heads)},
              {"layers", static_cast<std::int64_t>(cfg.layers)},
              {"ffn_dim", static_cast<std::int64_t>(cfg.ffn_dim)},
              {"head_hidden", static_cast<std::int64_t>(cfg.head_hidden)},
              {"positional", cfg.positional ? 1 : 0}};
  put_backbone(c, "visual", cfg.visual);
  put_backbone(c, "tactile", cfg.tactile);
  c.tensors = model.parameters();
  write_checkpoint(path, c);
}

FusionModel load_model(const std::string& path) {
  const Checkpoint c = read_checkpoint(path);
  if (c.kind != kFusionKind) {
    throw FormatError("bad file format: '" + path + "' holds a '" + c.kind + "' checkpoint, not a fusion model");
  }
  FusionConfig cfg;
  const std::size_t variant = positive(c, "variant");
  if (variant > static_cast<std::size_t>(Variant::Full)) throw FormatError("bad file format: unknown variant");
  cfg.variant = static_cast<Variant>(variant);
  cfg.image_size = positive(c, "image_size");
  cfg.heads = positive(c, "heads");
  cfg.layers = positive(c, "layers");
  cfg.ffn_dim = positive(c, "ffn_dim");
  cfg.head_hidden = positive(c, "head_hidden");
  cfg.positional = c.get("positional") != 0;
  cfg.visual = get_backbone(c, "visual");
  cfg.tactile = get_backbone(c, "tactile");
  FusionModel model;
  try {
    model = FusionModel::init(cfg, 0);
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("bad file format: inconsistent model config: ") + e.what());
  }
  assign_parameters(model.parameters(), c);
  return model;
}

}  // namespace vtfuse
