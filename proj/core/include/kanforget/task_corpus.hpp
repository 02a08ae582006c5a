#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kanforget/matrix.hpp"

namespace kanforget {

enum class TaskKind { BinaryAdd, DecimalAdd, Image };

[[nodiscard]] std::string to_string(TaskKind kind);

struct TaskMeta {
  TaskKind kind = TaskKind::DecimalAdd;
  std::optional<double> intrinsic_dim;
  /// Operand pairs (addition tasks), one per logical sample.
  std::vector<std::pair<int, int>> operands;
  /// Rows per logical sample (4 for unrolled binary addition, else 1).
  std::size_t steps_per_sample = 1;
  /// Original class ids held by an image task, in head order.
  std::vector<int> classes;
};

/// One continual-learning task D_i. Regression tasks fill `targets`;
/// classification tasks fill `labels` (head indices) and leave targets empty.
struct TaskDataset {
  int task_index = 1;  // 1-based
  Matrix inputs;
  Matrix targets;
  std::vector<int> labels;
  TaskMeta meta;

  [[nodiscard]] std::size_t rows() const noexcept { return inputs.rows(); }
  [[nodiscard]] bool is_classification() const noexcept { return !labels.empty(); }
  void validate() const;
};

// --- addition tasks --------------------------------------------------------

/// Bits are fed raw: 0 -> 0.0, 1 -> 1.0; predictions decode with threshold 0.5.
inline constexpr double kBinaryThreshold = 0.5;
[[nodiscard]] double encode_bit(int bit);
[[nodiscard]] int decode_bit(double value);

/// Digit d -> d * scale + offset; default maps 0..9 onto [-1, 1].
/// Carry bits map to {-1, +1}.
struct DecimalEncoding {
  double scale = 1.0 / 4.5;
  double offset = -1.0;

  [[nodiscard]] double encode_digit(int digit) const;
  [[nodiscard]] int decode_digit(double value) const;  // nearest digit, clamped to 0..9
  [[nodiscard]] static double encode_carry(int carry);
  [[nodiscard]] static int decode_carry(double value);
};

/// Operand pairs of addition task n (1..5): (n, d) then (d, n) for d = 1..9.
[[nodiscard]] std::vector<std::pair<int, int>> addition_operands(int task);

/// Five binary-addition tasks. Each operand pair is unrolled LSB-first into
/// four rows (bit_a, bit_b, carry_in) -> (sum_bit, carry_out), initial carry 0.
[[nodiscard]] std::vector<TaskDataset> gen_binary_tasks();

/// Five decimal-addition tasks with rows (a, b) -> (sum mod 10, carry).
[[nodiscard]] std::vector<TaskDataset> gen_decimal_tasks(const DecimalEncoding& encoding = {});

/// Re-assembles per-step sum bits (LSB first) and the final carry into an integer.
[[nodiscard]] int reassemble_binary(std::span<const int> sum_bits, int final_carry);

/// Fraction correct: thresholded bits (binary), exact digit and carry
/// (decimal), or argmax (image).
[[nodiscard]] double task_accuracy(const TaskDataset& task, const Matrix& predictions,
                                   const DecimalEncoding& encoding = {});

/// Runs the 4-step binary addition recurrently, feeding the model's own
/// thresholded carry back in; returns the fraction of operand pairs whose
/// full sum is reproduced.
[[nodiscard]] double binary_recurrent_accuracy(
    const TaskDataset& task, const std::function<Matrix(const Matrix&)>& predict);

// --- images ----------------------------------------------------------------

struct RawImageSet {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // count × height × width, row-major
  std::vector<std::uint8_t> labels;

  [[nodiscard]] std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * height * width, height * width};
  }
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

/// IDX parsers over in-memory bytes. Throw FormatError naming the field
/// ("magic", "dimensions", "payload", "count").
[[nodiscard]] RawImageSet parse_idx_images(std::span<const std::uint8_t> bytes);
[[nodiscard]] std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

/// Reads an IDX file (plain or gzip-compressed) fully into memory.
[[nodiscard]] std::vector<std::uint8_t> read_idx_file(const std::filesystem::path& path);

/// Loads and pairs an images/labels file pair.
[[nodiscard]] RawImageSet load_mnist_idx(const std::filesystem::path& images_path,
                                         const std::filesystem::path& labels_path);

/// Serializes back to IDX (used by tests and dataset tooling).
[[nodiscard]] std::vector<std::uint8_t> encode_idx_images(const RawImageSet& set);
[[nodiscard]] std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

struct ImagePreprocessSpec {
  int quantize_levels = 256;  // Q
  std::size_t height = 28;
  std::size_t width = 28;

  [[nodiscard]] std::size_t pixels() const noexcept { return height * width; }  // S
  void validate() const;
};

/// Bilinear resize (pixel-centre aligned), quantize to Q uniform levels,
/// rescale to [-1, 1], flatten row-major: one output row per image.
[[nodiscard]] Matrix preprocess_images(const RawImageSet& raw, const ImagePreprocessSpec& spec);

/// Classes per task, in order. Default is the MNIST split
/// {1,2}, {3,4}, {5,6}, {7,8}, {9,0}.
using ClassPlan = std::vector<std::vector<int>>;
[[nodiscard]] ClassPlan mnist_class_plan();

/// Picks the first `per_class` samples of each class (dataset order) for every
/// task. Labels are head indices: classes numbered in plan order.
/// Throws DataError when a class has fewer than `per_class` samples.
[[nodiscard]] std::vector<TaskDataset> build_image_tasks(const Matrix& preprocessed,
                                                         std::span<const std::uint8_t> labels,
                                                         const ClassPlan& plan,
                                                         std::size_t per_class,
                                                         std::optional<double> intrinsic_dim = {});

/// log2(Q * S).
[[nodiscard]] double intrinsic_dimension(const ImagePreprocessSpec& spec);

/// One CSV row per dataset row: task_index,row,x0..,y0.. (or label).
void export_task_csv(std::ostream& out, const TaskDataset& task);

}  // namespace kanforget
