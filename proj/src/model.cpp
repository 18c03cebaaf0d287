#include "ghn/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace ghn {

using nlohmann::json;

ModelKind parse_model_kind(const std::string& s) {
  if (s == "graphhetnet" || s == "ghn") return ModelKind::graphhetnet;
  if (s == "ds-only") return ModelKind::ds_only;
  if (s == "supervised-gru") return ModelKind::supervised_gru;
  if (s == "zero-velocity") return ModelKind::zero_velocity;
  throw std::invalid_argument("unknown model '" + s +
                              "' (expected graphhetnet, ds-only, supervised-gru or zero-velocity)");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::graphhetnet: return "graphhetnet";
    case ModelKind::ds_only: return "ds-only";
    case ModelKind::supervised_gru: return "supervised-gru";
    case ModelKind::zero_velocity: return "zero-velocity";
  }
  return "unknown";
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& field) {
    if (!ok) throw std::invalid_argument("model config: " + field + " must be >= 1");
  };
  need(hidden >= 1, "hidden");
  need(horizon >= 1, "horizon");
  need(ds_inner_depth >= 1, "ds_inner_depth");
  need(ds_outer_depth >= 1, "ds_outer_depth");
  need(gcn_layers >= 1, "gcn_layers");
  need(gru_depth >= 1, "gru_depth");
  need(pad_width >= 1, "pad_width");
}

Tensor3 target_rows(const Tensor3& y) {
  const Dims d = y.dims();
  Tensor3 out(d.n * d.c, 1, d.t);
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t h = 0; h < d.t; ++h)
      for (std::size_t c = 0; c < d.c; ++c) out(i * d.c + c, 0, h) = y(i, h, c);
  return out;
}

Var mse_loss(Var pred, const Tensor3& target) {
  if (pred.dims() != target.dims()) throw ShapeError("mse_loss", pred.dims(), target.dims());
  const Var diff = ops::sub(pred, pred.tape()->constant(target));
  return ops::mean(ops::mul(diff, diff));
}

namespace {

Var last_frame_tiled(Tape& tape, Var rows, std::size_t horizon) {
  // (N, T, 1) -> (N, 1, H) holding the last observed value in every slot.
  const Var last = ops::slice_time(rows, rows.dims().t - 1, 1);
  return ops::matmul(last, tape.constant(Tensor3(1, 1, horizon, 1.0)));
}

void check_episode_inputs(const MotionGraph& graph, const Tensor3& x, const char* what) {
  if (x.dims().c != graph.size()) {
    throw ShapeError(what, "input has " + std::to_string(x.dims().c) + " channels, graph has " +
                               std::to_string(graph.size()) + " vertices");
  }
}

}  // namespace

GraphHetNet::GraphHetNet(ModelConfig cfg) : TrainableModel(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.kind != ModelKind::graphhetnet && cfg_.kind != ModelKind::ds_only) {
    throw std::invalid_argument("GraphHetNet: kind must be graphhetnet or ds-only");
  }
  Rng rng(cfg_.seed);
  const std::size_t k = cfg_.hidden;
  ds_support_ = make_ds_block(store_, "inf.ds1", 1, k, cfg_.ds_inner_depth, cfg_.ds_outer_depth, rng);
  if (uses_graph()) gcn_support_ = make_gcn_block(store_, "inf.gcn", 1 + k, k, cfg_.gcn_layers, rng);
  ds_task_ = make_ds_block(store_, "inf.ds2", uses_graph() ? k : 1 + k, k, cfg_.ds_inner_depth,
                           cfg_.ds_outer_depth, rng);
  projection_ = make_linear(store_, "inf.proj", k, k, rng);
  if (uses_graph()) gcn_query_ = make_gcn_block(store_, "pred.gcn", 1 + k, k, cfg_.gcn_layers, rng);
  head_ = make_gru_block(store_, "pred.gru", uses_graph() ? k : 1 + k, k, cfg_.gru_depth, cfg_.horizon, rng);
}

Var GraphHetNet::infer_task(const Binding& b, const MotionGraph& graph, const Tensor3& xs,
                            const Tensor3& ys) const {
  check_episode_inputs(graph, xs, "infer_task");
  check_episode_inputs(graph, ys, "infer_task");
  const std::size_t instances = xs.dims().n;
  if (instances == 0 || ys.dims().n != instances) throw ShapeError("infer_task", xs.dims(), ys.dims());
  if (ys.dims().t != cfg_.horizon) throw ShapeError("infer_task", "support targets must have H steps");
  Tape& tape = b.tape();
  // Targets continue the observed series along time.
  const Var series = tape.constant(to_rows(concat_time(xs, ys)));
  const DsOutput first = ds_block(b, ds_support_, series, instances);
  const Var context = ops::broadcast_instances(first.aggregated, instances);
  const Var joined[] = {series, context};
  Var features = ops::concat_features(joined);
  if (uses_graph()) features = gcn_block(b, gcn_support_, features, graph);
  const DsOutput second = ds_block(b, ds_task_, features, instances);
  const Var summary = ops::slice_time(second.aggregated, second.aggregated.dims().t - 1, 1);
  return linear(b, projection_, summary);
}

Var GraphHetNet::forecast(const Binding& b, const MotionGraph& graph, const Tensor3& xq, Var embedding) const {
  check_episode_inputs(graph, xq, "forecast");
  if (embedding.dims() != Dims{graph.size(), 1, cfg_.hidden}) {
    throw ShapeError("forecast", "embedding " + embedding.dims().str() + " does not match a graph of " +
                                     std::to_string(graph.size()) + " vertices");
  }
  Tape& tape = b.tape();
  const std::size_t instances = xq.dims().n;
  const std::size_t steps = xq.dims().t;
  const Var query = tape.constant(to_rows(xq));
  const Var cond = ops::broadcast_time(ops::broadcast_instances(embedding, instances), steps);
  const Var joined[] = {query, cond};
  Var features = ops::concat_features(joined);
  if (uses_graph()) features = gcn_block(b, gcn_query_, features, graph);
  Var out = gru_block_last(b, head_, features);
  if (cfg_.residual) out = ops::add(out, last_frame_tiled(tape, query, cfg_.horizon));
  return out;
}

Tensor3 GraphHetNet::infer_task(const MotionGraph& graph, const Tensor3& xs, const Tensor3& ys) const {
  Tape tape;
  const Binding b(tape, store_);
  return infer_task(b, graph, xs, ys).value();
}

Tensor3 GraphHetNet::forecast(const MotionGraph& graph, const Tensor3& xq, const Tensor3& embedding) const {
  Tape tape;
  const Binding b(tape, store_);
  return from_rows(forecast(b, graph, xq, tape.constant(embedding)).value(), xq.dims().n);
}

Tensor3 GraphHetNet::predict(const Episode& ep) const {
  Tape tape;
  const Binding b(tape, store_);
  const Var emb = infer_task(b, ep.graph, ep.xs, ep.ys);
  return from_rows(forecast(b, ep.graph, ep.xq, emb).value(), ep.xq.dims().n);
}

Var GraphHetNet::episode_loss(const Binding& b, const Episode& ep) const {
  const Var emb = infer_task(b, ep.graph, ep.xs, ep.ys);
  return mse_loss(forecast(b, ep.graph, ep.xq, emb), target_rows(ep.yq));
}

SupervisedGru::SupervisedGru(ModelConfig cfg) : TrainableModel(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.kind != ModelKind::supervised_gru) throw std::invalid_argument("SupervisedGru: wrong kind");
  Rng rng(cfg_.seed);
  encoder_ = make_gru_stack(store_, "sup.gru", cfg_.pad_width, cfg_.hidden, cfg_.gru_depth, rng);
  head_ = make_linear(store_, "sup.head", cfg_.hidden, cfg_.horizon * cfg_.pad_width, rng);
}

Tensor3 SupervisedGru::pad(const Tensor3& x) const {
  const Dims d = x.dims();
  if (d.c > cfg_.pad_width) {
    throw ShapeError("supervised_gru", "task has " + std::to_string(d.c) + " sensors, pad width is " +
                                           std::to_string(cfg_.pad_width));
  }
  Tensor3 out(d.n, d.t, cfg_.pad_width);
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t t = 0; t < d.t; ++t)
      for (std::size_t c = 0; c < d.c; ++c) out(i, t, c) = x(i, t, c);
  return out;
}

Var SupervisedGru::forward(const Binding& b, const Tensor3& x) const {
  Tape& tape = b.tape();
  const Var in = tape.constant(pad(x));
  const Var states = gru_stack_forward(b, encoder_, in);
  Var out = linear(b, head_, ops::slice_time(states, states.dims().t - 1, 1));
  if (cfg_.residual) {
    const std::size_t p = cfg_.pad_width;
    Tensor3 tile(1, p, cfg_.horizon * p);
    for (std::size_t h = 0; h < cfg_.horizon; ++h)
      for (std::size_t c = 0; c < p; ++c) tile(0, c, h * p + c) = 1.0;
    out = ops::add(out, ops::matmul(ops::slice_time(in, x.dims().t - 1, 1), tape.constant(std::move(tile))));
  }
  return out;
}

Var SupervisedGru::masked_loss(Var pred, const Tensor3& y) const {
  const Dims d = y.dims();
  const std::size_t p = cfg_.pad_width;
  if (d.c > p || d.t != cfg_.horizon || pred.dims() != Dims{d.n, 1, cfg_.horizon * p}) {
    throw ShapeError("masked_loss", pred.dims(), d);
  }
  Tensor3 target(d.n, 1, cfg_.horizon * p);
  Tensor3 mask(d.n, 1, cfg_.horizon * p);
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t h = 0; h < d.t; ++h)
      for (std::size_t c = 0; c < d.c; ++c) {
        target(i, 0, h * p + c) = y(i, h, c);
        mask(i, 0, h * p + c) = 1.0;
      }
  Tape& tape = *pred.tape();
  const Var diff = ops::mul(ops::sub(pred, tape.constant(target)), tape.constant(mask));
  const double real = static_cast<double>(d.n * d.t * d.c);
  return ops::scale(ops::sum(ops::mul(diff, diff)), 1.0 / real);
}

Tensor3 SupervisedGru::predict(const Episode& ep) const {
  Tape tape;
  const Binding b(tape, store_);
  const Tensor3 flat = forward(b, ep.xq).value();
  const std::size_t n = ep.xq.dims().n, c_count = ep.xq.dims().c, p = cfg_.pad_width;
  Tensor3 out(n, cfg_.horizon, c_count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < cfg_.horizon; ++h)
      for (std::size_t c = 0; c < c_count; ++c) out(i, h, c) = flat(i, 0, h * p + c);
  return out;
}

Var SupervisedGru::episode_loss(const Binding& b, const Episode& ep) const {
  const Tensor3 x = concat_instances(ep.xs, ep.xq);
  const Tensor3 y = concat_instances(ep.ys, ep.yq);
  return masked_loss(forward(b, x), y);
}

Tensor3 zero_velocity(const Tensor3& x, std::size_t horizon) {
  const Dims d = x.dims();
  if (d.t == 0 || d.n == 0 || d.c == 0) throw ShapeError("zero_velocity", "empty input");
  if (horizon == 0) throw ShapeError("zero_velocity", "horizon must be >= 1");
  Tensor3 out(d.n, horizon, d.c);
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t h = 0; h < horizon; ++h)
      for (std::size_t c = 0; c < d.c; ++c) out(i, h, c) = x(i, d.t - 1, c);
  return out;
}

std::unique_ptr<TrainableModel> make_model(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::graphhetnet:
    case ModelKind::ds_only: return std::make_unique<GraphHetNet>(cfg);
    case ModelKind::supervised_gru: return std::make_unique<SupervisedGru>(cfg);
    case ModelKind::zero_velocity: break;
  }
  throw std::invalid_argument("model '" + to_string(cfg.kind) + "' has no trainable parameters");
}

std::unique_ptr<Forecaster> make_forecaster(const ModelConfig& cfg) {
  if (cfg.kind == ModelKind::zero_velocity) return std::make_unique<ZeroVelocity>(cfg.horizon);
  return make_model(cfg);
}

std::string config_to_json(const ModelConfig& cfg) {
  return json{{"kind", to_string(cfg.kind)},
              {"hidden", cfg.hidden},
              {"horizon", cfg.horizon},
              {"ds_inner_depth", cfg.ds_inner_depth},
              {"ds_outer_depth", cfg.ds_outer_depth},
              {"gcn_layers", cfg.gcn_layers},
              {"gru_depth", cfg.gru_depth},
              {"residual", cfg.residual},
              {"pad_width", cfg.pad_width},
              {"seed", cfg.seed}}
      .dump();
}

ModelConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig cfg;
  cfg.kind = parse_model_kind(j.at("kind").get<std::string>());
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.horizon = j.at("horizon").get<std::size_t>();
  cfg.ds_inner_depth = j.at("ds_inner_depth").get<std::size_t>();
  cfg.ds_outer_depth = j.at("ds_outer_depth").get<std::size_t>();
  cfg.gcn_layers = j.at("gcn_layers").get<std::size_t>();
  cfg.gru_depth = j.at("gru_depth").get<std::size_t>();
  cfg.residual = j.at("residual").get<bool>();
  cfg.pad_width = j.at("pad_width").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

namespace {

constexpr char kMagic[8] = {'G', 'H', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct RawCheckpoint {
  json header;
  std::vector<double> payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  if (version != kVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (header_len > (1u << 26)) throw CheckpointError(path.string() + ": corrupt header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    raw.header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  if (with_payload) {
    const std::uint64_t count = raw.header.at("scalars").get<std::uint64_t>();
    raw.payload.resize(count);
    in.read(reinterpret_cast<char*>(raw.payload.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw CheckpointError(path.string() + ": truncated parameter data");
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  }
  return raw;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainableModel& model, const std::string& extra_json) {
  const ParameterStore& store = model.params();
  json params = json::array();
  for (std::size_t k = 0; k < store.size(); ++k) {
    const Dims d = store.values()[k].dims();
    params.push_back({{"name", store.name(k)}, {"dims", {d.n, d.t, d.c}}});
  }
  const json header{{"model", json::parse(config_to_json(model.config()))},
                    {"seed", model.config().seed},
                    {"extra", json::parse(extra_json)},
                    {"params", params},
                    {"scalars", store.scalar_count()}};
  const std::string text = header.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const auto& v : store.values())
      out.write(reinterpret_cast<const char*>(v.storage().data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<TrainableModel> load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path, true);
  std::unique_ptr<TrainableModel> model;
  try {
    model = make_model(config_from_json(raw.header.at("model").dump()));
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  ParameterStore& store = model->params();
  const json& params = raw.header.at("params");
  if (params.size() != store.size()) throw CheckpointError(path.string() + ": parameter list does not match model");
  std::size_t offset = 0;
  for (std::size_t k = 0; k < store.size(); ++k) {
    const auto dims = params[k].at("dims").get<std::vector<std::size_t>>();
    Tensor3& dst = store.values()[k];
    if (params[k].at("name").get<std::string>() != store.name(k) || dims.size() != 3 ||
        Dims{dims[0], dims[1], dims[2]} != dst.dims()) {
      throw CheckpointError(path.string() + ": parameter '" + store.name(k) + "' does not match model");
    }
    if (offset + dst.size() > raw.payload.size()) throw CheckpointError(path.string() + ": truncated parameters");
    std::copy_n(raw.payload.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.storage().begin());
    offset += dst.size();
  }
  if (offset != raw.payload.size()) throw CheckpointError(path.string() + ": parameter count mismatch");
  for (const auto& v : store.values())
    if (!v.all_finite()) throw CheckpointError(path.string() + ": non-finite parameter values");
  return model;
}

std::string read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path, false).header.dump(); }

}  // namespace ghn
