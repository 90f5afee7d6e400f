#include "feddah/hypernet.hpp"

#include <cmath>
#include <random>

#include "feddah/error.hpp"
#include "feddah/ops.hpp"

namespace feddah {

// ---------------------------------------------------------------------------
// IdentityRegistry

IdentityRegistry::IdentityRegistry(IdentityOptions options) : options_(options) {
  if (options_.n_z == 0) throw ConfigError("identity size n_z must be positive");
  if (!(options_.sigma > 0.0)) throw ConfigError("identity sigma must be positive");
}

const TaskIdentity& IdentityRegistry::register_task(const std::string& task_id) {
  if (by_id_.contains(task_id)) throw RegistrationError("task '" + task_id + "' is already registered");
  TaskIdentity identity;
  identity.task_id = task_id;
  identity.index = identities_.size();
  identity.mu = options_.mu_spacing * static_cast<double>(identity.index);
  identity.sigma = options_.sigma;
  Rng rng = make_rng(options_.seed, {hash_key("identity"), identity.index});
  std::normal_distribution<double> normal(identity.mu, identity.sigma);
  identity.z = Tensor(Shape{options_.n_z});
  for (double& v : identity.z.data()) v = normal(rng);
  return restore(std::move(identity));
}

const TaskIdentity& IdentityRegistry::restore(TaskIdentity identity) {
  if (by_id_.contains(identity.task_id)) {
    throw RegistrationError("task '" + identity.task_id + "' is already registered");
  }
  if (identity.z.size() != options_.n_z) {
    throw ConfigError("identity '" + identity.task_id + "' has " + std::to_string(identity.z.size()) +
                      " entries, expected " + std::to_string(options_.n_z));
  }
  by_id_.emplace(identity.task_id, identities_.size());
  identities_.push_back(std::move(identity));
  return identities_.back();
}

const TaskIdentity& IdentityRegistry::at(const std::string& task_id) const {
  const auto it = by_id_.find(task_id);
  if (it == by_id_.end()) throw ProtocolError("task '" + task_id + "' is not registered");
  return identities_[it->second];
}

// ---------------------------------------------------------------------------
// HyperParams

namespace {

std::vector<Shape> layer_shapes(const ModelSpec& spec, std::size_t n_z, std::size_t d, std::size_t j) {
  const auto& l = spec.layer(j);
  const std::size_t chunks = l.n_in + 1;
  const std::size_t ctx = n_z * (j + 1);
  return {Shape{chunks, d, ctx}, Shape{chunks, d}, Shape{l.n_out, d},
          Shape{l.n_out},        Shape{n_z, l.n_out * chunks}, Shape{n_z}};
}

void require_dims(std::size_t n_z, std::size_t d) {
  if (n_z == 0) throw ConfigError("hypernetwork identity size n_z must be positive");
  if (d == 0) throw ConfigError("hypernetwork hidden size d must be positive");
}

}  // namespace

HyperParams HyperParams::zeros(const ModelSpec& spec, std::size_t n_z, std::size_t d) {
  require_dims(n_z, d);
  HyperParams hp;
  hp.spec_ = spec;
  hp.n_z_ = n_z;
  hp.d_ = d;
  for (std::size_t j = 0; j < spec.num_layers(); ++j) {
    for (auto& shape : layer_shapes(spec, n_z, d, j)) hp.tensors_.emplace_back(std::move(shape));
  }
  return hp;
}

HyperParams HyperParams::initialized(const ModelSpec& spec, std::size_t n_z, std::size_t d, Rng& rng) {
  HyperParams hp = zeros(spec, n_z, d);
  for (std::size_t j = 0; j < spec.num_layers(); ++j) {
    std::normal_distribution<double> head(0.0, std::sqrt(1.0 / static_cast<double>(hp.context_size(j))));
    for (double& v : hp.tensor(j, HyperSlot::kHeadWeight).data()) v = head(rng);
    std::normal_distribution<double> out(0.0, std::sqrt(1.0 / static_cast<double>(d)));
    for (double& v : hp.tensor(j, HyperSlot::kOutWeight).data()) v = out(rng);
  }
  return hp;
}

HyperParams HyperParams::from_tensors(const ModelSpec& spec, std::size_t n_z, std::size_t d,
                                      std::vector<Tensor> tensors) {
  HyperParams hp = zeros(spec, n_z, d);
  if (tensors.size() != hp.tensors_.size()) {
    throw ConfigError("expected " + std::to_string(hp.tensors_.size()) + " hypernetwork tensors, got " +
                      std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape() != hp.tensors_[i].shape()) {
      throw ConfigError("hypernetwork tensor " + std::to_string(i) + " has shape " +
                        shape_string(tensors[i].shape()) + ", expected " + shape_string(hp.tensors_[i].shape()));
    }
  }
  hp.tensors_ = std::move(tensors);
  return hp;
}

std::vector<std::string> HyperParams::tensor_names() const {
  static constexpr const char* kSlotNames[kSlotsPerLayer] = {"head_w", "head_b", "out_w",
                                                             "out_b",  "enc_w",  "enc_b"};
  std::vector<std::string> names;
  for (std::size_t j = 0; j < num_layers(); ++j) {
    for (const char* slot : kSlotNames) names.push_back("layer" + std::to_string(j) + "." + slot);
  }
  return names;
}

std::size_t HyperParams::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

HyperParams HyperParams::zeros_like() const { return zeros(spec_, n_z_, d_); }

bool HyperParams::same_layout(const HyperParams& other) const noexcept {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
  }
  return true;
}

bool HyperParams::all_finite() const noexcept {
  for (const auto& t : tensors_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

HyperParams& HyperParams::add_scaled(const HyperParams& other, double s) {
  if (!same_layout(other)) throw UsageError("hypernetwork parameter sets have different layouts");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto dst = tensors_[i].data();
    const auto src = other.tensors_[i].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += s * src[k];
  }
  return *this;
}

HyperParams& HyperParams::operator+=(const HyperParams& other) { return add_scaled(other, 1.0); }
HyperParams& HyperParams::operator-=(const HyperParams& other) { return add_scaled(other, -1.0); }

double HyperParams::norm() const noexcept {
  double acc = 0.0;
  for (const auto& t : tensors_) acc += sum_of_squares(t.data());
  return std::sqrt(acc);
}

HyperParams operator+(HyperParams a, const HyperParams& b) { return a += b; }
HyperParams operator-(HyperParams a, const HyperParams& b) { return a -= b; }

std::size_t hypernet_param_count(const ModelSpec& spec, std::size_t n_z, std::size_t d) {
  require_dims(n_z, d);
  std::size_t count = 0;
  for (std::size_t j = 0; j < spec.num_layers(); ++j) {
    const auto& l = spec.layer(j);
    const std::size_t chunks = l.n_in + 1;
    const std::size_t ctx = n_z * (j + 1);
    count += chunks * (d * ctx + d);
    count += l.n_out * d + l.n_out;
    count += n_z * (l.n_in * l.n_out + l.n_out) + n_z;
  }
  return count;
}

// ---------------------------------------------------------------------------
// Generation

std::vector<Var> bind(Tape& tape, const HyperParams& hp, bool tracked) {
  std::vector<Var> vars;
  vars.reserve(hp.tensors().size());
  for (const Tensor& t : hp.tensors()) vars.push_back(tracked ? tape.param_view(t) : tape.constant_view(t));
  return vars;
}

namespace {

Var slot(std::span<const Var> bound, std::size_t j, HyperSlot s) {
  return bound[j * kSlotsPerLayer + static_cast<std::size_t>(s)];
}

}  // namespace

Var generate_layer(const HyperParams& hp, std::span<const Var> bound, std::size_t j, Var context) {
  if (context.value().size() != hp.context_size(j)) {
    throw InvariantError("layer " + std::to_string(j) + " context has " + std::to_string(context.value().size()) +
                         " entries, expected " + std::to_string(hp.context_size(j)));
  }
  const std::size_t chunks = hp.chunks(j);
  Var a = ad::add(ad::matvec(slot(bound, j, HyperSlot::kHeadWeight), context), slot(bound, j, HyperSlot::kHeadBias));
  Var heads = ad::reshape(a, Shape{chunks, hp.hidden()});
  return ad::add_rows(ad::matmul_nt(heads, slot(bound, j, HyperSlot::kOutWeight)),
                      slot(bound, j, HyperSlot::kOutBias));
}

Var encode_layer(const HyperParams& /*hp*/, std::span<const Var> bound, std::size_t j, Var chunks) {
  Var flat = ad::reshape(chunks, Shape{chunks.value().size()});
  return ad::add(ad::matvec(slot(bound, j, HyperSlot::kEncWeight), flat), slot(bound, j, HyperSlot::kEncBias));
}

GeneratedModel generate_model(const HyperParams& hp, std::span<const Var> bound, Var z) {
  GeneratedModel model;
  model.chunks.reserve(hp.num_layers());
  Var context = z;
  for (std::size_t j = 0; j < hp.num_layers(); ++j) {
    Var chunks = generate_layer(hp, bound, j, context);
    model.chunks.push_back(chunks);
    if (j + 1 < hp.num_layers()) {
      const Var parts[] = {context, encode_layer(hp, bound, j, chunks)};
      context = ad::concat(parts);
    }
  }
  return model;
}

GeneratedBatch generate_batch(const HyperParams& hp, std::span<const Var> bound, Var identities) {
  const Tensor& z = identities.value();
  if (z.rank() != 2 || z.dim(1) != hp.n_z()) {
    throw UsageError("generate_batch needs identities of shape [count, " + std::to_string(hp.n_z()) + "], got " +
                     shape_string(z.shape()));
  }
  GeneratedBatch batch;
  batch.count = z.dim(0);
  Var context = identities;
  for (std::size_t j = 0; j < hp.num_layers(); ++j) {
    const std::size_t chunks = hp.chunks(j);
    const std::size_t n_out = hp.spec().layer(j).n_out;
    Var a = ad::add_rows(ad::matmul_nt(context, slot(bound, j, HyperSlot::kHeadWeight)),
                         slot(bound, j, HyperSlot::kHeadBias));
    Var heads = ad::reshape(a, Shape{batch.count * chunks, hp.hidden()});
    Var layer = ad::add_rows(ad::matmul_nt(heads, slot(bound, j, HyperSlot::kOutWeight)),
                             slot(bound, j, HyperSlot::kOutBias));
    batch.layers.push_back(layer);
    if (j + 1 < hp.num_layers()) {
      Var flat = ad::reshape(layer, Shape{batch.count, chunks * n_out});
      Var encoded = ad::add_rows(ad::matmul_nt(flat, slot(bound, j, HyperSlot::kEncWeight)),
                                 slot(bound, j, HyperSlot::kEncBias));
      context = ad::concat_cols(context, encoded);
    }
  }
  return batch;
}

LayerWeights generate_layer(const HyperParams& hp, std::size_t j, const Tensor& context) {
  Tape tape;
  const auto bound = bind(tape, hp, false);
  return from_chunk_form(generate_layer(hp, bound, j, tape.constant_view(context)).value());
}

Tensor encode_layer(const HyperParams& hp, std::size_t j, const LayerWeights& layer) {
  const auto& l = hp.spec().layer(j);
  if (layer.kernel.shape() != Shape{l.n_out, l.n_in} || layer.bias.shape() != Shape{l.n_out}) {
    throw UsageError("encode_layer: layer " + std::to_string(j) + " weights do not match spec " +
                     hp.spec().describe());
  }
  Tape tape;
  const auto bound = bind(tape, hp, false);
  return encode_layer(hp, bound, j, tape.constant(chunk_form(layer))).value();
}

std::vector<Tensor> generate_chunks(const HyperParams& hp, const Tensor& z) {
  if (z.size() != hp.n_z()) {
    throw ConfigError("identity of size " + std::to_string(z.size()) + " for a hypernetwork with n_z = " +
                      std::to_string(hp.n_z()));
  }
  Tape tape;
  const auto bound = bind(tape, hp, false);
  const GeneratedModel model = generate_model(hp, bound, tape.constant_view(z));
  std::vector<Tensor> chunks;
  chunks.reserve(model.chunks.size());
  for (const Var& c : model.chunks) {
    require_finite(c.value(), "generate_model");
    chunks.push_back(c.value());
  }
  return chunks;
}

ModelWeights generate_model(const HyperParams& hp, const TaskIdentity& identity) {
  ModelWeights weights;
  for (const Tensor& chunks : generate_chunks(hp, identity.z)) weights.layers.push_back(from_chunk_form(chunks));
  return weights;
}

ModelWeights generate_model(const HyperParams& hp, const TaskIdentity& identity, const ModelSpec& spec) {
  if (!(hp.spec() == spec)) {
    throw ConfigError("hypernetwork built for " + hp.spec().describe() + " cannot generate " + spec.describe());
  }
  return generate_model(hp, identity);
}

std::vector<Tensor> model_chunks(const ModelWeights& weights) {
  std::vector<Tensor> chunks;
  chunks.reserve(weights.layers.size());
  for (const auto& layer : weights.layers) chunks.push_back(chunk_form(layer));
  return chunks;
}

}  // namespace feddah
