#include "kanforget/networks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <string>

#include "kanforget/errors.hpp"
#include "kanforget/random.hpp"

namespace kanforget {

namespace {

constexpr int kMaxLocal = 17;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Offsets of one layer's parameter blocks inside the flat vector.
struct LayerOffsets {
  std::size_t base;
  std::size_t coeffs;
  std::size_t scalers;
  std::size_t end;
};

std::vector<LayerOffsets> kan_offsets(const KanNetwork& net) {
  std::vector<LayerOffsets> out;
  std::size_t at = 0;
  for (const auto& layer : net.layers) {
    LayerOffsets o{};
    o.base = at;
    o.coeffs = o.base + layer.base_weights.size();
    o.scalers = o.coeffs + layer.spline_coeffs.size();
    o.end = o.scalers + layer.spline_scalers.size();
    at = o.end;
    out.push_back(o);
  }
  return out;
}

// Spline value of branch (q,p) from a sparse basis slice.
double sparse_dot(std::span<const double> coeffs, long first, const double* local, int k) {
  double acc = 0.0;
  const long n = static_cast<long>(coeffs.size());
  for (int r = 0; r <= k; ++r) {
    const long idx = first + r;
    if (idx >= 0 && idx < n) acc += coeffs[static_cast<std::size_t>(idx)] * local[r];
  }
  return acc;
}

}  // namespace

double silu(double z) noexcept { return z / (1.0 + std::exp(-z)); }

double silu_derivative(double z) noexcept {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

// ---------------------------------------------------------------------------
// KanLayer / KanNetwork

KanLayer KanLayer::zeros(std::size_t in_dim, std::size_t out_dim, const KnotGrid& grid) {
  if (in_dim == 0 || out_dim == 0) throw UsageError("KanLayer: dimensions must be positive");
  KanLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.grid = grid;
  layer.base_weights = Matrix(out_dim, in_dim);
  layer.spline_coeffs.assign(out_dim * in_dim * grid.basis_count(), 0.0);
  layer.spline_scalers = Matrix(out_dim, in_dim);
  return layer;
}

std::span<double> KanLayer::coeffs(std::size_t q, std::size_t p) {
  const std::size_t nb = grid.basis_count();
  return {spline_coeffs.data() + (q * in_dim + p) * nb, nb};
}

std::span<const double> KanLayer::coeffs(std::size_t q, std::size_t p) const {
  const std::size_t nb = grid.basis_count();
  return {spline_coeffs.data() + (q * in_dim + p) * nb, nb};
}

void KanLayer::validate() const {
  if (in_dim == 0 || out_dim == 0) throw UsageError("KanLayer: dimensions must be positive");
  if (base_weights.rows() != out_dim || base_weights.cols() != in_dim ||
      spline_scalers.rows() != out_dim || spline_scalers.cols() != in_dim ||
      spline_coeffs.size() != out_dim * in_dim * grid.basis_count()) {
    throw UsageError("KanLayer: parameter shapes inconsistent with dims/grid");
  }
  if (!all_finite(base_weights.values()) || !all_finite(spline_coeffs) ||
      !all_finite(spline_scalers.values())) {
    throw UsageError("KanLayer: non-finite parameter");
  }
}

std::vector<std::size_t> KanNetwork::dims() const {
  std::vector<std::size_t> d;
  if (layers.empty()) return d;
  d.push_back(layers.front().in_dim);
  for (const auto& layer : layers) d.push_back(layer.out_dim);
  return d;
}

std::size_t KanNetwork::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.parameter_count();
  return n;
}

std::vector<double> KanNetwork::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers) {
    const auto bw = layer.base_weights.values();
    const auto sc = layer.spline_scalers.values();
    flat.insert(flat.end(), bw.begin(), bw.end());
    flat.insert(flat.end(), layer.spline_coeffs.begin(), layer.spline_coeffs.end());
    flat.insert(flat.end(), sc.begin(), sc.end());
  }
  return flat;
}

void KanNetwork::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw UsageError("KanNetwork: flat parameter count");
  auto it = flat.begin();
  for (auto& layer : layers) {
    auto bw = layer.base_weights.values();
    auto sc = layer.spline_scalers.values();
    std::copy_n(it, bw.size(), bw.begin());
    it += static_cast<std::ptrdiff_t>(bw.size());
    std::copy_n(it, layer.spline_coeffs.size(), layer.spline_coeffs.begin());
    it += static_cast<std::ptrdiff_t>(layer.spline_coeffs.size());
    std::copy_n(it, sc.size(), sc.begin());
    it += static_cast<std::ptrdiff_t>(sc.size());
  }
}

void KanNetwork::validate() const {
  if (layers.empty()) throw UsageError("KanNetwork: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l > 0 && layers[l - 1].out_dim != layers[l].in_dim) {
      throw UsageError("KanNetwork: layer " + std::to_string(l) + " input does not chain");
    }
  }
}

double branch_spline(const KanLayer& layer, std::size_t p, std::size_t q, double z) {
  if (p >= layer.in_dim || q >= layer.out_dim) throw UsageError("branch_eval: index out of range");
  return eval_spline(layer.grid, layer.coeffs(q, p), z);
}

double branch_eval(const KanLayer& layer, std::size_t p, std::size_t q, double z) {
  const double spline = branch_spline(layer, p, q, z);
  return layer.base_weights(q, p) * silu(z) + layer.spline_scalers(q, p) * spline;
}

ForwardTrace forward(const KanNetwork& net, const Matrix& batch) {
  if (net.layers.empty()) throw UsageError("forward: empty network");
  if (batch.cols() != net.layers.front().in_dim) {
    throw UsageError("forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(net.layers.front().in_dim));
  }
  ForwardTrace trace;
  trace.pre_activations.reserve(net.layers.size());
  Matrix current = batch;
  std::array<double, kMaxLocal> local{};
  for (const auto& layer : net.layers) {
    if (current.cols() != layer.in_dim) throw UsageError("forward: layer dims do not chain");
    const int k = layer.grid.order();
    Matrix out(current.rows(), layer.out_dim);
    for (std::size_t b = 0; b < current.rows(); ++b) {
      for (std::size_t p = 0; p < layer.in_dim; ++p) {
        const double z = current(b, p);
        const double s = silu(z);
        const long first = eval_basis_local(layer.grid, z, local);
        for (std::size_t q = 0; q < layer.out_dim; ++q) {
          const double spline = sparse_dot(layer.coeffs(q, p), first, local.data(), k);
          out(b, q) += layer.base_weights(q, p) * s + layer.spline_scalers(q, p) * spline;
        }
      }
    }
    trace.pre_activations.push_back(std::move(current));
    current = std::move(out);
  }
  trace.output = std::move(current);
  return trace;
}

GradientSet backward(const KanNetwork& net, const ForwardTrace& trace, const Matrix& output_grad) {
  if (trace.pre_activations.size() != net.layers.size()) {
    throw UsageError("backward: trace depth does not match network");
  }
  const std::size_t batch = output_grad.rows();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& pre = trace.pre_activations[l];
    if (pre.rows() != batch || pre.cols() != net.layers[l].in_dim) {
      throw UsageError("backward: stale trace (layer " + std::to_string(l) + " shape mismatch)");
    }
  }
  if (output_grad.cols() != net.layers.back().out_dim || !trace.output.same_shape(output_grad)) {
    throw UsageError("backward: output gradient shape mismatch");
  }

  const auto offsets = kan_offsets(net);
  GradientSet grads;
  grads.parameters.assign(net.parameter_count(), 0.0);
  Matrix upstream = output_grad;
  std::array<double, kMaxLocal> basis{};
  std::array<double, kMaxLocal> dbasis{};
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    const auto& pre = trace.pre_activations[l];
    const auto& off = offsets[l];
    const int k = layer.grid.order();
    const std::size_t nb = layer.grid.basis_count();
    Matrix input_grad(batch, layer.in_dim);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t p = 0; p < layer.in_dim; ++p) {
        const double z = pre(b, p);
        const double s = silu(z);
        const double ds = silu_derivative(z);
        const long first = eval_basis_local(layer.grid, z, basis);
        eval_basis_derivative_local(layer.grid, z, dbasis);
        double acc = 0.0;
        for (std::size_t q = 0; q < layer.out_dim; ++q) {
          const double g = upstream(b, q);
          if (g == 0.0) continue;
          const auto c = layer.coeffs(q, p);
          const double bw = layer.base_weights(q, p);
          const double sc = layer.spline_scalers(q, p);
          const double spline = sparse_dot(c, first, basis.data(), k);
          const double dspline = sparse_dot(c, first, dbasis.data(), k);
          grads.parameters[off.base + q * layer.in_dim + p] += g * s;
          grads.parameters[off.scalers + q * layer.in_dim + p] += g * spline;
          const std::size_t cbase = off.coeffs + (q * layer.in_dim + p) * nb;
          for (int r = 0; r <= k; ++r) {
            const long idx = first + r;
            if (idx >= 0 && idx < static_cast<long>(nb)) {
              grads.parameters[cbase + static_cast<std::size_t>(idx)] += g * sc * basis[r];
            }
          }
          acc += g * (bw * ds + sc * dspline);
        }
        input_grad(b, p) = acc;
      }
    }
    upstream = std::move(input_grad);
  }
  grads.input = std::move(upstream);
  return grads;
}

KanNetwork init_kan(std::span<const std::size_t> dims, const KanInitOptions& options,
                    std::uint64_t seed) {
  if (dims.size() < 2) throw UsageError("init_kan: need at least input and output dims");
  if (std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; })) {
    throw UsageError("init_kan: dims must be positive");
  }
  const KnotGrid grid(options.range_lo, options.range_hi, options.grid_size, options.order);
  const std::vector<double> points = grid.interior_knots();
  FitOptions fit;
  fit.allow_rank_deficient = true;

  CounterRng base_rng(seed, streams::kInitBaseWeights);
  CounterRng noise_rng(seed, streams::kInitSplineNoise);
  KanNetwork net;
  net.seed = seed;
  std::vector<double> noise(points.size());
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    KanLayer layer = KanLayer::zeros(dims[l], dims[l + 1], grid);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (double& w : layer.base_weights.values()) {
      w = base_rng.uniform(-bound, bound) * options.base_weight_scale;
    }
    for (std::size_t q = 0; q < layer.out_dim; ++q) {
      for (std::size_t p = 0; p < layer.in_dim; ++p) {
        for (double& v : noise) v = (noise_rng.uniform() - 0.5) * options.spline_noise_scale;
        const auto c = fit_coefficients(grid, points, noise, fit);
        std::copy(c.begin(), c.end(), layer.coeffs(q, p).begin());
      }
    }
    for (double& s : layer.spline_scalers.values()) s = options.spline_weight_scale;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// ---------------------------------------------------------------------------
// MLP baseline

std::vector<std::size_t> MlpNetwork::dims() const {
  std::vector<std::size_t> d;
  if (layers.empty()) return d;
  d.push_back(layers.front().weights.cols());
  for (const auto& layer : layers) d.push_back(layer.weights.rows());
  return d;
}

std::size_t MlpNetwork::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::vector<double> MlpNetwork::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers) {
    const auto w = layer.weights.values();
    flat.insert(flat.end(), w.begin(), w.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void MlpNetwork::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw UsageError("MlpNetwork: flat parameter count");
  auto it = flat.begin();
  for (auto& layer : layers) {
    auto w = layer.weights.values();
    std::copy_n(it, w.size(), w.begin());
    it += static_cast<std::ptrdiff_t>(w.size());
    std::copy_n(it, layer.bias.size(), layer.bias.begin());
    it += static_cast<std::ptrdiff_t>(layer.bias.size());
  }
}

void MlpNetwork::validate() const {
  if (layers.empty()) throw UsageError("MlpNetwork: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weights.rows() == 0 || layer.weights.cols() == 0 ||
        layer.bias.size() != layer.weights.rows()) {
      throw UsageError("MlpNetwork: layer " + std::to_string(l) + " shapes inconsistent");
    }
    if (l > 0 && layers[l - 1].weights.rows() != layer.weights.cols()) {
      throw UsageError("MlpNetwork: layer " + std::to_string(l) + " input does not chain");
    }
    if (!all_finite(layer.weights.values()) || !all_finite(layer.bias)) {
      throw UsageError("MlpNetwork: non-finite parameter");
    }
  }
}

MlpNetwork init_mlp(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw UsageError("init_mlp: need at least input and output dims");
  if (std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; })) {
    throw UsageError("init_mlp: dims must be positive");
  }
  CounterRng rng(seed, streams::kInitMlp);
  MlpNetwork net;
  net.seed = seed;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    MlpLayer layer{Matrix(dims[l + 1], dims[l]), std::vector<double>(dims[l + 1])};
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (double& w : layer.weights.values()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

MlpTrace mlp_forward(const MlpNetwork& net, const Matrix& batch) {
  if (net.layers.empty()) throw UsageError("mlp_forward: empty network");
  if (batch.cols() != net.layers.front().weights.cols()) {
    throw UsageError("mlp_forward: batch column count does not match input dim");
  }
  MlpTrace trace;
  Matrix current = batch;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    if (current.cols() != layer.weights.cols()) throw UsageError("mlp_forward: dims do not chain");
    Matrix z(current.rows(), layer.weights.rows());
    for (std::size_t b = 0; b < current.rows(); ++b) {
      for (std::size_t o = 0; o < layer.weights.rows(); ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.weights.cols(); ++i) acc += layer.weights(o, i) * current(b, i);
        z(b, o) = acc;
      }
    }
    Matrix next = z;
    if (l + 1 < net.layers.size()) {
      for (double& v : next.values()) v = silu(v);
    }
    trace.pre_activations.push_back(std::move(current));
    trace.affine.push_back(std::move(z));
    current = std::move(next);
  }
  trace.output = std::move(current);
  return trace;
}

GradientSet mlp_backward(const MlpNetwork& net, const MlpTrace& trace, const Matrix& output_grad) {
  if (trace.pre_activations.size() != net.layers.size() || trace.affine.size() != net.layers.size()) {
    throw UsageError("mlp_backward: trace depth does not match network");
  }
  if (!trace.output.same_shape(output_grad)) {
    throw UsageError("mlp_backward: output gradient shape mismatch");
  }
  const std::size_t batch = output_grad.rows();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (trace.pre_activations[l].rows() != batch ||
        trace.pre_activations[l].cols() != net.layers[l].weights.cols() ||
        trace.affine[l].cols() != net.layers[l].weights.rows()) {
      throw UsageError("mlp_backward: stale trace (layer " + std::to_string(l) + ")");
    }
  }
  std::vector<std::size_t> starts;
  std::size_t at = 0;
  for (const auto& layer : net.layers) {
    starts.push_back(at);
    at += layer.weights.size() + layer.bias.size();
  }
  GradientSet grads;
  grads.parameters.assign(at, 0.0);
  Matrix upstream = output_grad;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    const auto& pre = trace.pre_activations[l];
    Matrix gz = upstream;
    if (l + 1 < net.layers.size()) {
      for (std::size_t i = 0; i < gz.size(); ++i) {
        gz.values()[i] *= silu_derivative(trace.affine[l].values()[i]);
      }
    }
    const std::size_t out = layer.weights.rows();
    const std::size_t in = layer.weights.cols();
    const std::size_t wbase = starts[l];
    const std::size_t bbase = wbase + layer.weights.size();
    Matrix input_grad(batch, in);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < out; ++o) {
        const double g = gz(b, o);
        if (g == 0.0) continue;
        grads.parameters[bbase + o] += g;
        for (std::size_t i = 0; i < in; ++i) {
          grads.parameters[wbase + o * in + i] += g * pre(b, i);
          input_grad(b, i) += g * layer.weights(o, i);
        }
      }
    }
    upstream = std::move(input_grad);
  }
  grads.input = std::move(upstream);
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "kanforget-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_block(std::ostream& out, std::size_t layer, const char* name, std::span<const double> v) {
  out << "layer " << layer << ' ' << name << ' ' << v.size() << '\n';
  for (std::size_t i = 0; i < v.size(); ++i) {
    out << v[i] << ((i + 1) % 8 == 0 || i + 1 == v.size() ? '\n' : ' ');
  }
}

void expect_token(std::istream& in, const std::string& want) {
  std::string got;
  if (!(in >> got) || got != want) {
    throw FormatError("checkpoint: expected '" + want + "', found '" + got + "'", want);
  }
}

template <class T>
T read_value(std::istream& in, const std::string& field) {
  T v{};
  if (!(in >> v)) throw FormatError("checkpoint: bad or missing value for " + field, field);
  return v;
}

void read_block(std::istream& in, std::size_t layer, const std::string& name, std::span<double> dst) {
  expect_token(in, "layer");
  if (read_value<std::size_t>(in, "layer") != layer) throw FormatError("checkpoint: layer order", "layer");
  expect_token(in, name);
  if (read_value<std::size_t>(in, name) != dst.size()) {
    throw FormatError("checkpoint: block " + name + " has wrong length", name);
  }
  for (double& v : dst) v = read_value<double>(in, name);
}

std::vector<std::size_t> read_dims(std::istream& in) {
  expect_token(in, "dims");
  const auto n = read_value<std::size_t>(in, "dims");
  if (n < 2 || n > 4096) throw FormatError("checkpoint: implausible dims count", "dims");
  std::vector<std::size_t> dims(n);
  for (auto& d : dims) d = read_value<std::size_t>(in, "dims");
  return dims;
}

void read_header(std::istream& in, const std::string& model) {
  expect_token(in, kCheckpointMagic);
  if (read_value<int>(in, "version") != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version", "version");
  }
  expect_token(in, "model");
  expect_token(in, model);
}

}  // namespace

void write_checkpoint(std::ostream& out, const KanNetwork& net) {
  net.validate();
  const auto& grid = net.layers.front().grid;
  out << std::setprecision(17);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << "model kan\n";
  const auto dims = net.dims();
  out << "dims " << dims.size();
  for (auto d : dims) out << ' ' << d;
  out << '\n'
      << "grid_size " << grid.grid_size() << '\n'
      << "order " << grid.order() << '\n'
      << "range " << grid.range_lo() << ' ' << grid.range_hi() << '\n'
      << "seed " << net.seed << '\n';
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    if (!(layer.grid == grid)) throw UsageError("write_checkpoint: layers must share one grid");
    write_block(out, l, "base_weights", layer.base_weights.values());
    write_block(out, l, "spline_coeffs", layer.spline_coeffs);
    write_block(out, l, "spline_scalers", layer.spline_scalers.values());
  }
  out << "end\n";
  if (!out) throw IoError("write_checkpoint: stream failure");
}

KanNetwork read_kan_checkpoint(std::istream& in) {
  read_header(in, "kan");
  const auto dims = read_dims(in);
  expect_token(in, "grid_size");
  const int grid_size = read_value<int>(in, "grid_size");
  expect_token(in, "order");
  const int order = read_value<int>(in, "order");
  expect_token(in, "range");
  const double lo = read_value<double>(in, "range");
  const double hi = read_value<double>(in, "range");
  expect_token(in, "seed");
  const auto seed = read_value<std::uint64_t>(in, "seed");
  KnotGrid grid;
  try {
    grid = KnotGrid(lo, hi, grid_size, order);
  } catch (const UsageError& e) {
    throw FormatError(std::string("checkpoint: invalid grid: ") + e.what(), "grid_size");
  }
  KanNetwork net;
  net.seed = seed;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    KanLayer layer = KanLayer::zeros(dims[l], dims[l + 1], grid);
    read_block(in, l, "base_weights", layer.base_weights.values());
    read_block(in, l, "spline_coeffs", layer.spline_coeffs);
    read_block(in, l, "spline_scalers", layer.spline_scalers.values());
    net.layers.push_back(std::move(layer));
  }
  expect_token(in, "end");
  return net;
}

void write_checkpoint(std::ostream& out, const MlpNetwork& net) {
  net.validate();
  out << std::setprecision(17);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << "model mlp\n";
  const auto dims = net.dims();
  out << "dims " << dims.size();
  for (auto d : dims) out << ' ' << d;
  out << '\n' << "seed " << net.seed << '\n';
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    write_block(out, l, "weights", net.layers[l].weights.values());
    write_block(out, l, "bias", net.layers[l].bias);
  }
  out << "end\n";
  if (!out) throw IoError("write_checkpoint: stream failure");
}

MlpNetwork read_mlp_checkpoint(std::istream& in) {
  read_header(in, "mlp");
  const auto dims = read_dims(in);
  expect_token(in, "seed");
  MlpNetwork net;
  net.seed = read_value<std::uint64_t>(in, "seed");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    MlpLayer layer{Matrix(dims[l + 1], dims[l]), std::vector<double>(dims[l + 1])};
    read_block(in, l, "weights", layer.weights.values());
    read_block(in, l, "bias", layer.bias);
    net.layers.push_back(std::move(layer));
  }
  expect_token(in, "end");
  return net;
}

}  // namespace kanforget
