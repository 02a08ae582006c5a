#include "kanforget/task_corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "kanforget/errors.hpp"

namespace kanforget {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::BinaryAdd:
      return "binary-add";
    case TaskKind::DecimalAdd:
      return "decimal-add";
    case TaskKind::Image:
      return "image";
  }
  return "unknown";
}

void TaskDataset::validate() const {
  if (task_index < 1) throw UsageError("TaskDataset: task_index must be >= 1");
  if (inputs.rows() == 0) throw UsageError("TaskDataset: empty task");
  if (is_classification()) {
    if (labels.size() != inputs.rows()) throw UsageError("TaskDataset: label count != rows");
  } else if (targets.rows() != inputs.rows()) {
    throw UsageError("TaskDataset: target rows != input rows");
  }
}

double encode_bit(int bit) { return bit ? 1.0 : 0.0; }
int decode_bit(double value) { return value > kBinaryThreshold ? 1 : 0; }

double DecimalEncoding::encode_digit(int digit) const {
  if (digit < 0 || digit > 9) throw UsageError("encode_digit: digit outside 0..9");
  return digit * scale + offset;
}

int DecimalEncoding::decode_digit(double value) const {
  const double d = std::round((value - offset) / scale);
  return static_cast<int>(std::clamp(d, 0.0, 9.0));
}

double DecimalEncoding::encode_carry(int carry) { return carry ? 1.0 : -1.0; }
int DecimalEncoding::decode_carry(double value) { return value > 0.0 ? 1 : 0; }

std::vector<std::pair<int, int>> addition_operands(int task) {
  if (task < 1 || task > 9) throw UsageError("addition_operands: task must be in 1..9");
  std::vector<std::pair<int, int>> pairs;
  for (int d = 1; d <= 9; ++d) pairs.emplace_back(task, d);
  for (int d = 1; d <= 9; ++d) pairs.emplace_back(d, task);
  return pairs;
}

std::vector<TaskDataset> gen_binary_tasks() {
  constexpr int kBits = 4;
  std::vector<TaskDataset> tasks;
  for (int n = 1; n <= 5; ++n) {
    TaskDataset task;
    task.task_index = n;
    task.meta.kind = TaskKind::BinaryAdd;
    task.meta.operands = addition_operands(n);
    task.meta.steps_per_sample = kBits;
    const std::size_t rows = task.meta.operands.size() * kBits;
    task.inputs = Matrix(rows, 3);
    task.targets = Matrix(rows, 2);
    std::size_t r = 0;
    for (const auto& [a, b] : task.meta.operands) {
      int carry = 0;
      for (int bit = 0; bit < kBits; ++bit, ++r) {
        const int x = (a >> bit) & 1;
        const int y = (b >> bit) & 1;
        const int total = x + y + carry;
        task.inputs(r, 0) = encode_bit(x);
        task.inputs(r, 1) = encode_bit(y);
        task.inputs(r, 2) = encode_bit(carry);
        task.targets(r, 0) = encode_bit(total & 1);
        task.targets(r, 1) = encode_bit(total >> 1);
        carry = total >> 1;
      }
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<TaskDataset> gen_decimal_tasks(const DecimalEncoding& encoding) {
  std::vector<TaskDataset> tasks;
  for (int n = 1; n <= 5; ++n) {
    TaskDataset task;
    task.task_index = n;
    task.meta.kind = TaskKind::DecimalAdd;
    task.meta.operands = addition_operands(n);
    task.inputs = Matrix(task.meta.operands.size(), 2);
    task.targets = Matrix(task.meta.operands.size(), 2);
    for (std::size_t r = 0; r < task.meta.operands.size(); ++r) {
      const auto [a, b] = task.meta.operands[r];
      task.inputs(r, 0) = encoding.encode_digit(a);
      task.inputs(r, 1) = encoding.encode_digit(b);
      task.targets(r, 0) = encoding.encode_digit((a + b) % 10);
      task.targets(r, 1) = DecimalEncoding::encode_carry((a + b) / 10);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

int reassemble_binary(std::span<const int> sum_bits, int final_carry) {
  int value = 0;
  for (std::size_t i = 0; i < sum_bits.size(); ++i) value |= (sum_bits[i] & 1) << i;
  return value | ((final_carry & 1) << sum_bits.size());
}

double task_accuracy(const TaskDataset& task, const Matrix& predictions,
                     const DecimalEncoding& encoding) {
  if (predictions.rows() != task.rows()) throw UsageError("task_accuracy: row count mismatch");
  if (predictions.rows() == 0) return 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  switch (task.meta.kind) {
    case TaskKind::BinaryAdd:
      if (!predictions.same_shape(task.targets)) throw UsageError("task_accuracy: shape mismatch");
      for (std::size_t i = 0; i < predictions.size(); ++i, ++total) {
        correct += decode_bit(predictions.values()[i]) == decode_bit(task.targets.values()[i]);
      }
      break;
    case TaskKind::DecimalAdd:
      if (!predictions.same_shape(task.targets) || predictions.cols() != 2) {
        throw UsageError("task_accuracy: decimal tasks need (digit, carry) columns");
      }
      for (std::size_t r = 0; r < predictions.rows(); ++r, ++total) {
        correct += encoding.decode_digit(predictions(r, 0)) == encoding.decode_digit(task.targets(r, 0)) &&
                   DecimalEncoding::decode_carry(predictions(r, 1)) ==
                       DecimalEncoding::decode_carry(task.targets(r, 1));
      }
      break;
    case TaskKind::Image:
      for (std::size_t r = 0; r < predictions.rows(); ++r, ++total) {
        const auto row = predictions.row(r);
        const auto best = std::max_element(row.begin(), row.end()) - row.begin();
        correct += static_cast<int>(best) == task.labels[r];
      }
      break;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double binary_recurrent_accuracy(const TaskDataset& task,
                                 const std::function<Matrix(const Matrix&)>& predict) {
  if (task.meta.kind != TaskKind::BinaryAdd) throw UsageError("binary_recurrent_accuracy: not binary");
  const std::size_t steps = task.meta.steps_per_sample;
  std::size_t correct = 0;
  for (const auto& [a, b] : task.meta.operands) {
    int carry = 0;
    std::vector<int> bits;
    for (std::size_t s = 0; s < steps; ++s) {
      Matrix x(1, 3);
      x(0, 0) = encode_bit((a >> s) & 1);
      x(0, 1) = encode_bit((b >> s) & 1);
      x(0, 2) = encode_bit(carry);
      const Matrix y = predict(x);
      bits.push_back(decode_bit(y(0, 0)));
      carry = decode_bit(y(0, 1));
    }
    correct += reassemble_binary(bits, carry) == a + b;
  }
  return task.meta.operands.empty()
             ? 0.0
             : static_cast<double>(correct) / static_cast<double>(task.meta.operands.size());
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t at) {
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

// Validates magic and dimension header; returns the dimension sizes.
std::vector<std::size_t> parse_idx_header(std::span<const std::uint8_t> bytes, std::uint32_t magic,
                                          std::size_t ndims) {
  if (bytes.size() < 4) throw FormatError("IDX: file shorter than its magic number", "magic");
  const std::uint32_t got = read_be32(bytes, 0);
  if (got != magic) {
    throw FormatError("IDX: magic " + std::to_string(got) + ", expected " + std::to_string(magic),
                      "magic");
  }
  if (bytes.size() < 4 + 4 * ndims) throw FormatError("IDX: truncated dimension header", "dimensions");
  std::vector<std::size_t> dims(ndims);
  for (std::size_t d = 0; d < ndims; ++d) dims[d] = read_be32(bytes, 4 + 4 * d);
  return dims;
}

}  // namespace

RawImageSet parse_idx_images(std::span<const std::uint8_t> bytes) {
  const auto dims = parse_idx_header(bytes, kIdxImageMagic, 3);
  if (dims[1] == 0 || dims[2] == 0) throw FormatError("IDX: zero image dimension", "dimensions");
  RawImageSet set;
  set.count = dims[0];
  set.height = dims[1];
  set.width = dims[2];
  const std::size_t header = 16;
  const std::size_t payload = set.count * set.height * set.width;
  if (bytes.size() - header < payload) {
    throw FormatError("IDX: truncated image payload (" + std::to_string(bytes.size() - header) +
                          " of " + std::to_string(payload) + " bytes)",
                      "payload");
  }
  set.pixels.assign(bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + payload));
  return set;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const auto dims = parse_idx_header(bytes, kIdxLabelMagic, 1);
  const std::size_t header = 8;
  if (bytes.size() - header < dims[0]) {
    throw FormatError("IDX: truncated label payload", "payload");
  }
  return {bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + dims[0])};
}

std::vector<std::uint8_t> read_idx_file(const std::filesystem::path& path) {
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::uint8_t buffer[1 << 16];
  for (;;) {
    const int n = gzread(file, buffer, sizeof buffer);
    if (n < 0) {
      gzclose(file);
      throw IoError("read error in " + path.string());
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), buffer, buffer + n);
  }
  gzclose(file);
  return bytes;
}

RawImageSet load_mnist_idx(const std::filesystem::path& images_path,
                           const std::filesystem::path& labels_path) {
  RawImageSet set = parse_idx_images(read_idx_file(images_path));
  set.labels = parse_idx_labels(read_idx_file(labels_path));
  if (set.labels.size() != set.count) {
    throw FormatError("IDX: " + std::to_string(set.count) + " images but " +
                          std::to_string(set.labels.size()) + " labels",
                      "count");
  }
  return set;
}

std::vector<std::uint8_t> encode_idx_images(const RawImageSet& set) {
  std::vector<std::uint8_t> out;
  append_be32(out, kIdxImageMagic);
  append_be32(out, static_cast<std::uint32_t>(set.count));
  append_be32(out, static_cast<std::uint32_t>(set.height));
  append_be32(out, static_cast<std::uint32_t>(set.width));
  out.insert(out.end(), set.pixels.begin(), set.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  append_be32(out, kIdxLabelMagic);
  append_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

// ---------------------------------------------------------------------------
// preprocessing

void ImagePreprocessSpec::validate() const {
  if (quantize_levels < 2) throw UsageError("ImagePreprocessSpec: quantize_levels must be >= 2");
  if (height == 0 || width == 0) throw UsageError("ImagePreprocessSpec: degenerate shape");
}

Matrix preprocess_images(const RawImageSet& raw, const ImagePreprocessSpec& spec) {
  spec.validate();
  if (raw.height == 0 || raw.width == 0) throw UsageError("preprocess_images: degenerate source");
  const std::size_t out_h = spec.height;
  const std::size_t out_w = spec.width;
  const double sy = static_cast<double>(raw.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(raw.width) / static_cast<double>(out_w);
  const int q = spec.quantize_levels;

  // Precompute source taps per output coordinate.
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t out_n, std::size_t in_n, double scale) {
    std::vector<Tap> t(out_n);
    for (std::size_t o = 0; o < out_n; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in_n - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, raw.height, sy);
  const auto tx = taps(out_w, raw.width, sx);

  Matrix out(raw.count, out_h * out_w);
  for (std::size_t n = 0; n < raw.count; ++n) {
    const auto img = raw.image(n);
    auto px = [&](std::size_t y, std::size_t x) { return static_cast<double>(img[y * raw.width + x]) / 255.0; };
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& a = ty[oy];
        const Tap& b = tx[ox];
        const double top = px(a.i0, b.i0) * (1.0 - b.w1) + px(a.i0, b.i1) * b.w1;
        const double bottom = px(a.i1, b.i0) * (1.0 - b.w1) + px(a.i1, b.i1) * b.w1;
        const double v = top * (1.0 - a.w1) + bottom * a.w1;
        const int level = std::min(static_cast<int>(std::floor(v * q)), q - 1);
        out(n, oy * out_w + ox) = 2.0 * level / static_cast<double>(q - 1) - 1.0;
      }
    }
  }
  return out;
}

ClassPlan mnist_class_plan() { return {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 0}}; }

std::vector<TaskDataset> build_image_tasks(const Matrix& preprocessed,
                                           std::span<const std::uint8_t> labels,
                                           const ClassPlan& plan, std::size_t per_class,
                                           std::optional<double> intrinsic_dim) {
  if (labels.size() != preprocessed.rows()) throw UsageError("build_image_tasks: label count mismatch");
  if (per_class == 0) throw UsageError("build_image_tasks: per_class must be positive");
  std::vector<int> seen;
  for (const auto& classes : plan) {
    if (classes.empty()) throw UsageError("build_image_tasks: task with no classes");
    for (int c : classes) {
      if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
        throw UsageError("build_image_tasks: class " + std::to_string(c) + " appears in two tasks");
      }
      seen.push_back(c);
    }
  }
  std::vector<TaskDataset> tasks;
  int head = 0;
  for (std::size_t t = 0; t < plan.size(); ++t) {
    TaskDataset task;
    task.task_index = static_cast<int>(t + 1);
    task.meta.kind = TaskKind::Image;
    task.meta.intrinsic_dim = intrinsic_dim;
    task.meta.classes = plan[t];
    std::vector<std::size_t> picked;
    for (int c : plan[t]) {
      std::size_t found = 0;
      for (std::size_t i = 0; i < labels.size() && found < per_class; ++i) {
        if (labels[i] == c) {
          picked.push_back(i);
          task.labels.push_back(head);
          ++found;
        }
      }
      if (found < per_class) {
        throw DataError("build_image_tasks: class " + std::to_string(c) + " has only " +
                        std::to_string(found) + " samples, need " + std::to_string(per_class));
      }
      ++head;
    }
    task.inputs = preprocessed.select_rows(picked);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

double intrinsic_dimension(const ImagePreprocessSpec& spec) {
  spec.validate();
  return std::log2(static_cast<double>(spec.quantize_levels) * static_cast<double>(spec.pixels()));
}

void export_task_csv(std::ostream& out, const TaskDataset& task) {
  out << "task_index,row";
  for (std::size_t c = 0; c < task.inputs.cols(); ++c) out << ",x" << c;
  if (task.is_classification()) {
    out << ",label";
  } else {
    for (std::size_t c = 0; c < task.targets.cols(); ++c) out << ",y" << c;
  }
  out << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < task.rows(); ++r) {
    out << task.task_index << ',' << r;
    for (double v : task.inputs.row(r)) out << ',' << v;
    if (task.is_classification()) {
      out << ',' << task.labels[r];
    } else {
      for (double v : task.targets.row(r)) out << ',' << v;
    }
    out << '\n';
  }
}

}  // namespace kanforget
