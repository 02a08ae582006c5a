#include "kanforget/runner/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace kanforget::runner {

using nlohmann::json;

namespace {

const std::vector<std::pair<ExperimentKind, std::string>>& kind_table() {
  static const std::vector<std::pair<ExperimentKind, std::string>> table{
      {ExperimentKind::BinaryAdd, "binary-add"},         {ExperimentKind::DecimalAdd, "decimal-add"},
      {ExperimentKind::MnistCl, "mnist-cl"},             {ExperimentKind::Theorem1, "theorem1"},
      {ExperimentKind::Theorem2, "theorem2"},            {ExperimentKind::Theorem3, "theorem3"},
      {ExperimentKind::Corollary1Mc, "corollary1-mc"},   {ExperimentKind::SaturationMc, "saturation-mc"},
      {ExperimentKind::DimensionMc, "dimension-mc"},     {ExperimentKind::FragmentationMc, "fragmentation-mc"},
  };
  return table;
}

bool is_mc(ExperimentKind k) {
  return k == ExperimentKind::Corollary1Mc || k == ExperimentKind::SaturationMc ||
         k == ExperimentKind::DimensionMc || k == ExperimentKind::FragmentationMc;
}

// Walks one JSON object, recording type errors and unknown keys.
class Section {
 public:
  Section(const json& node, std::string path, std::vector<Diagnostic>& diags)
      : node_(node), path_(std::move(path)), diags_(diags) {
    if (!node_.is_object()) error("", "expected an object");
  }

  [[nodiscard]] bool has(const std::string& key) {
    seen_.insert(key);
    return node_.is_object() && node_.contains(key) && !node_.at(key).is_null();
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void error(const std::string& key, const std::string& msg) {
    diags_.push_back({key.empty() ? path_ : field(key), msg, true});
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception&) {
      error(key, "wrong type (found " + std::string(node_.at(key).type_name()) + ")");
    }
  }

  void read_number(const std::string& key, double& out) {
    if (!has(key)) return;
    if (!node_.at(key).is_number()) {
      error(key, "expected a number (found " + std::string(node_.at(key).type_name()) + ")");
      return;
    }
    out = node_.at(key).get<double>();
  }

  void read_count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      error(key, "expected a non-negative integer");
      return;
    }
    out = v.get<std::size_t>();
  }

  const json& at(const std::string& key) const { return node_.at(key); }

  void check_unknown() {
    if (!node_.is_object()) return;
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) error(key, "unknown field");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::vector<Diagnostic>& diags_;
  std::set<std::string> seen_;
};

void require(std::vector<Diagnostic>& d, bool ok, const std::string& field, const std::string& msg) {
  if (!ok) d.push_back({field, msg, true});
}

std::string loss_name(LossKind k) { return k == LossKind::CrossEntropy ? "cross-entropy" : "mse"; }

std::vector<ImagePreprocessSpec> table3_mnist() {
  return {{2, 8, 8}, {2, 16, 16}, {2, 28, 28}, {4, 28, 28}, {8, 28, 28}, {16, 28, 28}, {32, 28, 28}};
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kind_table()) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<ExperimentKind> parse_kind(const std::string& name) {
  for (const auto& [k, n] : kind_table()) {
    if (n == name) return k;
  }
  return std::nullopt;
}

const std::vector<std::string>& kind_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : kind_table()) out.push_back(entry.second);
    return out;
  }();
  return names;
}

bool ParseResult::ok() const {
  return config.has_value() &&
         std::none_of(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& d) { return d.is_error; });
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.name = to_string(kind);
  c.training.batch_size = 1;
  switch (kind) {
    case ExperimentKind::BinaryAdd:
      c.network.dims = {3, 2, 2};
      c.network.grid_sizes = {5};
      c.training.epochs_per_task = 50;
      break;
    case ExperimentKind::DecimalAdd:
      c.network.dims = {2, 3, 2};
      c.network.grid_sizes = {5, 10, 15, 20};
      c.training.epochs_per_task = 100;
      break;
    case ExperimentKind::Theorem1:
    case ExperimentKind::Theorem2:
      c.network.dims = {2, 3, 2};
      c.network.grid_sizes = {10, 15, 20};
      c.training.epochs_per_task = 100;
      break;
    case ExperimentKind::MnistCl:
    case ExperimentKind::Theorem3:
      c.network.dims = {784, 16, 10};
      c.network.grid_sizes = {10};
      c.training.epochs_per_task = 10;
      c.training.batch_size = 20;
      c.training.loss_kind = LossKind::CrossEntropy;
      c.training.record_curves = kind == ExperimentKind::MnistCl;
      c.images.configs = kind == ExperimentKind::Theorem3 ? table3_mnist()
                                                          : std::vector<ImagePreprocessSpec>{{256, 28, 28}};
      break;
    default:
      break;
  }
  return c;
}

json ExperimentConfig::echo() const {
  json j;
  j["experiment"] = to_string(kind);
  j["name"] = name;
  j["seeds"] = seeds;
  j["network"] = {{"model", network.model == ModelKind::Kan ? "kan" : "mlp"},
                  {"dims", network.dims},
                  {"grid_sizes", network.grid_sizes},
                  {"spline_order", network.spline_order},
                  {"grid_range", {network.grid_lo, network.grid_hi}},
                  {"grid_epsilon", network.grid_epsilon},
                  {"base_weight_scale", network.base_weight_scale},
                  {"spline_weight_scale", network.spline_weight_scale},
                  {"spline_noise_scale", network.spline_noise_scale}};
  json t = {{"learning_rate", training.learning_rate},
            {"weight_decay", training.weight_decay},
            {"epochs_per_task", training.epochs_per_task},
            {"batch_size_rows", training.batch_size},
            {"loss", loss_name(training.loss_kind)},
            {"adam_beta1", training.beta1},
            {"adam_beta2", training.beta2},
            {"adam_epsilon", training.epsilon},
            {"record_curves", training.record_curves},
            {"reset_optimizer_per_task", training.reset_optimizer_per_task}};
  if (training.ewc) {
    t["ewc"] = {{"lambda", training.ewc->lambda}, {"memory_tasks", training.ewc->memory_depth}};
  } else {
    t["ewc"] = nullptr;
  }
  j["training"] = t;
  j["analysis"] = {{"activation_threshold", analysis.activation_threshold},
                   {"support_bins", analysis.support_bins}};
  json imgs = json::array();
  for (const auto& s : images.configs) {
    imgs.push_back({{"quantize_levels", s.quantize_levels}, {"height_px", s.height}, {"width_px", s.width}});
  }
  j["images"] = {{"images_idx", images.images.generic_string()},
                 {"labels_idx", images.labels.generic_string()},
                 {"samples_per_class", images.samples_per_class},
                 {"preprocess", imgs}};
  json pairs = json::array();
  for (const auto& [a, b] : monte_carlo.dim_pairs) pairs.push_back({a, b});
  j["monte_carlo"] = {{"trials", monte_carlo.mc.trials},
                      {"seed", monte_carlo.mc.seed},
                      {"r_sweep", monte_carlo.mc.r_sweep},
                      {"k_sweep", monte_carlo.mc.k_sweep},
                      {"s_values", monte_carlo.s_values},
                      {"s_i", monte_carlo.s_i},
                      {"s_j", monte_carlo.s_j},
                      {"later_tasks", monte_carlo.later_tasks},
                      {"placement", monte_carlo.placement},
                      {"dim_pairs", pairs},
                      {"fragment_radius", monte_carlo.fragment_radius}};
  j["output"] = {{"directory", output_directory.generic_string()}};
  return j;
}

ParseResult parse_config(const json& doc, const std::filesystem::path& source) {
  ParseResult result;
  auto& diags = result.diagnostics;
  if (!doc.is_object()) {
    diags.push_back({"", "config must be a JSON object", true});
    return result;
  }
  if (!doc.contains("experiment") || !doc.at("experiment").is_string()) {
    diags.push_back({"experiment", "missing experiment kind; one of " + [] {
                       std::string s;
                       for (const auto& n : kind_names()) s += (s.empty() ? "" : ", ") + n;
                       return s;
                     }(),
                     true});
    return result;
  }
  const auto kind = parse_kind(doc.at("experiment").get<std::string>());
  if (!kind) {
    diags.push_back({"experiment", "unknown experiment kind '" + doc.at("experiment").get<std::string>() + "'", true});
    return result;
  }
  ExperimentConfig c = default_config(*kind);
  c.source = source;
  const auto base = source.empty() ? std::filesystem::path{} : source.parent_path();

  Section top(doc, "", diags);
  (void)top.has("experiment");
  top.read("name", c.name);
  if (top.has("seeds")) {
    top.read("seeds", c.seeds);
    require(diags, !c.seeds.empty(), "seeds", "seed list is empty");
  } else if (!is_mc(*kind)) {
    diags.push_back({"seeds", "missing seeds list; add \"seeds\": [0, 1, 2] (the default used by the presets)", true});
  }

  if (top.has("network")) {
    Section s(top.at("network"), "network", diags);
    if (s.has("model")) {
      std::string m;
      s.read("model", m);
      if (m == "kan") {
        c.network.model = ModelKind::Kan;
      } else if (m == "mlp") {
        c.network.model = ModelKind::Mlp;
      } else {
        s.error("model", "expected 'kan' or 'mlp'");
      }
    }
    s.read("dims", c.network.dims);
    s.read("grid_sizes", c.network.grid_sizes);
    s.read("spline_order", c.network.spline_order);
    if (s.has("grid_range")) {
      std::vector<double> r;
      s.read("grid_range", r);
      if (r.size() == 2) {
        c.network.grid_lo = r[0];
        c.network.grid_hi = r[1];
      } else {
        s.error("grid_range", "expected [lo, hi]");
      }
    }
    s.read_number("grid_epsilon", c.network.grid_epsilon);
    s.read_number("base_weight_scale", c.network.base_weight_scale);
    s.read_number("spline_weight_scale", c.network.spline_weight_scale);
    s.read_number("spline_noise_scale", c.network.spline_noise_scale);
    s.check_unknown();
  }

  if (top.has("training")) {
    Section s(top.at("training"), "training", diags);
    auto& t = c.training;
    s.read_number("learning_rate", t.learning_rate);
    s.read_number("weight_decay", t.weight_decay);
    s.read_count("epochs_per_task", t.epochs_per_task);
    s.read_count("batch_size_rows", t.batch_size);
    if (s.has("loss")) {
      std::string l;
      s.read("loss", l);
      if (l == "mse") {
        t.loss_kind = LossKind::MeanSquaredError;
      } else if (l == "cross-entropy") {
        t.loss_kind = LossKind::CrossEntropy;
      } else {
        s.error("loss", "expected 'mse' or 'cross-entropy'");
      }
    }
    s.read_number("adam_beta1", t.beta1);
    s.read_number("adam_beta2", t.beta2);
    s.read_number("adam_epsilon", t.epsilon);
    s.read("record_curves", t.record_curves);
    s.read("reset_optimizer_per_task", t.reset_optimizer_per_task);
    if (s.has("ewc")) {
      Section e(s.at("ewc"), "training.ewc", diags);
      EwcConfig ewc;
      e.read_number("lambda", ewc.lambda);
      e.read_count("memory_tasks", ewc.memory_depth);
      e.check_unknown();
      require(diags, ewc.lambda >= 0.0, "training.ewc.lambda", "must be >= 0");
      t.ewc = ewc;
    } else {
      t.ewc.reset();
    }
    s.check_unknown();
  }

  if (top.has("analysis")) {
    Section s(top.at("analysis"), "analysis", diags);
    s.read_number("activation_threshold", c.analysis.activation_threshold);
    s.read_count("support_bins", c.analysis.support_bins);
    s.check_unknown();
  }

  if (top.has("images")) {
    Section s(top.at("images"), "images", diags);
    std::string p;
    if (s.has("images_idx")) {
      s.read("images_idx", p);
      c.images.images = base / p;
    }
    if (s.has("labels_idx")) {
      s.read("labels_idx", p);
      c.images.labels = base / p;
    }
    s.read_count("samples_per_class", c.images.samples_per_class);
    if (s.has("preprocess")) {
      c.images.configs.clear();
      const json& arr = s.at("preprocess");
      if (!arr.is_array()) {
        s.error("preprocess", "expected an array");
      } else {
        for (std::size_t i = 0; i < arr.size(); ++i) {
          Section e(arr[i], "images.preprocess[" + std::to_string(i) + "]", diags);
          ImagePreprocessSpec spec;
          e.read("quantize_levels", spec.quantize_levels);
          e.read_count("height_px", spec.height);
          e.read_count("width_px", spec.width);
          e.check_unknown();
          require(diags, spec.quantize_levels >= 2, e.field("quantize_levels"), "must be >= 2");
          require(diags, spec.height > 0 && spec.width > 0, e.field("height_px"), "shape must be positive");
          c.images.configs.push_back(spec);
        }
      }
    }
    s.check_unknown();
  }

  if (top.has("monte_carlo")) {
    Section s(top.at("monte_carlo"), "monte_carlo", diags);
    auto& m = c.monte_carlo;
    s.read_count("trials", m.mc.trials);
    s.read("seed", m.mc.seed);
    s.read("r_sweep", m.mc.r_sweep);
    s.read("k_sweep", m.mc.k_sweep);
    s.read("s_values", m.s_values);
    s.read_number("s_i", m.s_i);
    s.read_number("s_j", m.s_j);
    s.read_count("later_tasks", m.later_tasks);
    s.read("placement", m.placement);
    if (s.has("dim_pairs")) {
      std::vector<std::vector<double>> pairs;
      s.read("dim_pairs", pairs);
      m.dim_pairs.clear();
      for (const auto& pr : pairs) {
        if (pr.size() != 2) {
          s.error("dim_pairs", "each entry must be [d_i, d_j]");
        } else {
          m.dim_pairs.emplace_back(pr[0], pr[1]);
        }
      }
    }
    s.read_number("fragment_radius", m.fragment_radius);
    s.check_unknown();
  }

  if (top.has("output")) {
    Section s(top.at("output"), "output", diags);
    std::string dir;
    s.read("directory", dir);
    if (!dir.empty()) c.output_directory = base / dir;
    s.check_unknown();
  }
  top.check_unknown();

  // Semantic checks.
  const auto& t = c.training;
  require(diags, std::isfinite(t.learning_rate) && t.learning_rate > 0.0, "training.learning_rate",
          "must be > 0 (got " + std::to_string(t.learning_rate) + ")");
  require(diags, std::isfinite(t.weight_decay) && t.weight_decay >= 0.0, "training.weight_decay", "must be >= 0");
  require(diags, t.epochs_per_task >= 1, "training.epochs_per_task", "must be >= 1");
  require(diags, t.beta1 >= 0.0 && t.beta1 < 1.0, "training.adam_beta1", "must lie in [0, 1)");
  require(diags, t.beta2 >= 0.0 && t.beta2 < 1.0, "training.adam_beta2", "must lie in [0, 1)");
  require(diags, t.epsilon > 0.0, "training.adam_epsilon", "must be > 0");
  require(diags, c.network.dims.size() >= 2, "network.dims", "need at least input and output widths");
  require(diags, std::all_of(c.network.dims.begin(), c.network.dims.end(), [](std::size_t d) { return d > 0; }),
          "network.dims", "widths must be positive");
  require(diags, !c.network.grid_sizes.empty(), "network.grid_sizes", "need at least one grid size");
  require(diags, std::all_of(c.network.grid_sizes.begin(), c.network.grid_sizes.end(), [](int g) { return g >= 1; }),
          "network.grid_sizes", "grid sizes must be >= 1");
  require(diags, c.network.spline_order >= 1 && c.network.spline_order <= 16, "network.spline_order",
          "must lie in [1, 16]");
  require(diags, c.network.grid_hi > c.network.grid_lo, "network.grid_range", "need lo < hi");
  require(diags, c.analysis.activation_threshold > 0.0, "analysis.activation_threshold", "must be > 0");
  require(diags, c.analysis.support_bins >= 10, "analysis.support_bins", "must be >= 10");

  const std::size_t out_dim = c.network.dims.empty() ? 0 : c.network.dims.back();
  switch (*kind) {
    case ExperimentKind::BinaryAdd:
      require(diags, !c.network.dims.empty() && c.network.dims.front() == 3 && out_dim == 2, "network.dims",
              "binary addition needs 3 inputs and 2 outputs");
      require(diags, t.loss_kind == LossKind::MeanSquaredError, "training.loss", "addition tasks use mse");
      break;
    case ExperimentKind::DecimalAdd:
    case ExperimentKind::Theorem1:
    case ExperimentKind::Theorem2:
      require(diags, !c.network.dims.empty() && c.network.dims.front() == 2 && out_dim == 2, "network.dims",
              "decimal addition needs 2 inputs and 2 outputs");
      require(diags, t.loss_kind == LossKind::MeanSquaredError, "training.loss", "addition tasks use mse");
      break;
    case ExperimentKind::MnistCl:
    case ExperimentKind::Theorem3:
      require(diags, out_dim == 10, "network.dims", "image tasks use a 10-way head");
      require(diags, !c.images.images.empty(), "images.images_idx", "path to an IDX image file is required");
      require(diags, !c.images.labels.empty(), "images.labels_idx", "path to an IDX label file is required");
      require(diags, c.images.samples_per_class >= 1, "images.samples_per_class", "must be >= 1");
      require(diags, !c.images.configs.empty(), "images.preprocess", "need at least one preprocessing spec");
      break;
    default:
      break;
  }
  if ((*kind == ExperimentKind::Theorem1 || *kind == ExperimentKind::Theorem2 || *kind == ExperimentKind::Theorem3) &&
      c.network.model != ModelKind::Kan) {
    diags.push_back({"network.model", "support analysis needs a kan model", true});
  }
  if (is_mc(*kind)) {
    const auto& m = c.monte_carlo;
    require(diags, m.mc.trials >= 1, "monte_carlo.trials", "must be >= 1");
    for (double s : m.s_values) require(diags, s >= 0.0 && s <= 1.0, "monte_carlo.s_values", "entries must lie in [0, 1]");
    require(diags, m.s_i >= 0.0 && m.s_i <= 1.0, "monte_carlo.s_i", "must lie in [0, 1]");
    require(diags, m.s_j >= 0.0 && m.s_j <= 1.0, "monte_carlo.s_j", "must lie in [0, 1]");
    require(diags, m.later_tasks >= 1, "monte_carlo.later_tasks", "must be >= 1");
    require(diags, m.placement == "independent" || m.placement == "same" || m.placement == "disjoint",
            "monte_carlo.placement", "expected independent, same or disjoint");
    if (m.placement == "disjoint") {
      require(diags, m.s_i + m.s_j <= 1.0, "monte_carlo.placement", "disjoint placement needs s_i + s_j <= 1");
    }
    if (*kind == ExperimentKind::DimensionMc) {
      require(diags, m.mc.r_sweep.size() >= 4, "monte_carlo.r_sweep", "need at least 4 sweep points");
      for (double r : m.mc.r_sweep) require(diags, r > 0.0 && r < 1.0, "monte_carlo.r_sweep", "entries must lie in (0, 1)");
      for (const auto& [a, b] : m.dim_pairs) require(diags, a >= 1.0 && b >= 1.0, "monte_carlo.dim_pairs", "dimensions must be >= 1");
    }
    if (*kind == ExperimentKind::FragmentationMc) {
      require(diags, m.mc.k_sweep.size() >= 4, "monte_carlo.k_sweep", "need at least 4 sweep points");
      for (int k : m.mc.k_sweep) require(diags, k >= 1, "monte_carlo.k_sweep", "entries must be >= 1");
      require(diags, m.fragment_radius > 0.0 && m.fragment_radius < 1.0, "monte_carlo.fragment_radius",
              "must lie in (0, 1)");
    }
  }
  result.config = std::move(c);
  return result;
}

ParseResult parse_config_text(const std::string& text, const std::filesystem::path& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    ParseResult r;
    r.diagnostics.push_back({"line " + std::to_string(line) + ", column " + std::to_string(col),
                             std::string("parse error: ") + e.what(), true});
    return r;
  }
  return parse_config(doc, source);
}

ParseResult load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ParseResult r;
    r.diagnostics.push_back({path.string(), "cannot open config file", true});
    return r;
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), path);
}

std::string format_diagnostics(const std::vector<Diagnostic>& diagnostics) {
  std::ostringstream out;
  for (const auto& d : diagnostics) {
    out << (d.is_error ? "error" : "warning") << ": " << (d.field.empty() ? "<root>" : d.field) << ": " << d.message
        << '\n';
  }
  return out.str();
}

}  // namespace kanforget::runner
