#include "uwbseq/ad/optim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "uwbseq/rng.hpp"

namespace uwbseq::ad {

Var ParameterSet::add(const std::string& name, Tensor value) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("ParameterSet: duplicate parameter " + name);
  Var v(std::move(value), true);
  params_.push_back({name, v});
  return v;
}

Var ParameterSet::zeros(const std::string& name, Shape shape) { return add(name, Tensor(std::move(shape), 0)); }

Var ParameterSet::constant(const std::string& name, Shape shape, Real value) {
  return add(name, Tensor(std::move(shape), value));
}

Var ParameterSet::uniform(const std::string& name, Shape shape, Real bound) {
  auto g = named_stream(seed_, name);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(uwbseq::uniform(g, -bound, bound));
  return add(name, std::move(t));
}

Var ParameterSet::normal(const std::string& name, Shape shape, Real stddev) {
  auto g = named_stream(seed_, name);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(stddev * gaussian(g));
  return add(name, std::move(t));
}

Var ParameterSet::from_tensor(const std::string& name, Tensor value) { return add(name, std::move(value)); }

const Var& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.var;
  throw std::out_of_range("ParameterSet: no parameter " + name);
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void adam_step(ParameterSet& params, AdamState& state, double lr, const AdamConfig& config) {
  auto& items = params.items();
  if (state.m.empty()) {
    for (const auto& p : items) {
      state.m.emplace_back(p.var.shape(), 0);
      state.v.emplace_back(p.var.shape(), 0);
    }
  }
  if (state.m.size() != items.size()) throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Node& node = *items[i].var.node();
    if (state.m[i].shape() != node.value.shape()) throw std::invalid_argument("adam_step: state shape mismatch for " + items[i].name);
    if (node.grad.numel() != node.value.numel()) continue;  // no gradient reached it
    Real* theta = node.value.data();
    const Real* g = node.grad.data();
    Real* m = state.m[i].data();
    Real* v = state.v[i].data();
    for (std::size_t k = 0; k < node.value.numel(); ++k) {
      m[k] = static_cast<Real>(config.beta1 * m[k] + (1.0 - config.beta1) * g[k]);
      v[k] = static_cast<Real>(config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k]);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

double lr_schedule(int epoch, double lr0, int step, double factor) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  return lr0 * std::pow(factor, epoch / step);
}

namespace {

constexpr char kMagic[8] = {'U', 'W', 'B', 'S', 'E', 'Q', 'C', 'K'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const ParameterSet& params, std::uint64_t config_hash, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, 1);
  put<std::uint64_t>(out, config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& p : params.items()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.var.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(out, d);
    for (Real v : p.var.value().values()) put<double>(out, static_cast<double>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

void load_checkpoint(ParameterSet& params, std::uint64_t config_hash, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(path.string() + ": not a checkpoint");
  if (get<std::uint32_t>(in) != 1) throw std::runtime_error(path.string() + ": unsupported checkpoint version");
  if (get<std::uint64_t>(in) != config_hash) throw std::runtime_error(path.string() + ": config hash mismatch");
  const auto count = get<std::uint32_t>(in);
  if (count != params.items().size())
    throw std::runtime_error(path.string() + ": holds " + std::to_string(count) + " tensors, model has " +
                             std::to_string(params.items().size()));
  // Read everything first so a mismatch leaves the parameters untouched.
  std::vector<Tensor> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto& expected = params.items()[i];
    if (name != expected.name) throw std::runtime_error(path.string() + ": expected tensor " + expected.name + ", found " + name);
    Shape shape(get<std::uint32_t>(in));
    for (auto& d : shape) d = get<std::uint64_t>(in);
    if (shape != expected.var.shape())
      throw std::runtime_error(path.string() + ": shape " + shape_str(shape) + " for " + name + " does not match " +
                               shape_str(expected.var.shape()));
    Tensor t(shape);
    for (auto& v : t.values()) v = static_cast<Real>(get<double>(in));
    loaded.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < loaded.size(); ++i) params.items()[i].var.mutable_value() = std::move(loaded[i]);
}

}  // namespace uwbseq::ad
