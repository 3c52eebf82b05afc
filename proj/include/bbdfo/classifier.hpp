#pragma once

// Feed-forward classifiers exposed only through a query-counted black box.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbdfo/errors.hpp"

namespace bbdfo {

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  [[nodiscard]] std::size_t size() const noexcept { return height * width * channels; }
  /// Flat index of (row, col, channel) in row-major HWC layout.
  [[nodiscard]] std::size_t index(std::size_t row, std::size_t col, std::size_t ch) const noexcept {
    return (row * width + col) * channels + ch;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

/// An image-like array with entries restricted to [lower, upper].
struct InputTensor {
  Shape shape;
  std::vector<double> data;
  double lower = -0.5;
  double upper = 0.5;

  [[nodiscard]] std::size_t size() const noexcept { return data.size(); }

  void validate() const {
    if (shape.size() == 0) throw DimensionError("tensor has zero entries");
    if (data.size() != shape.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
    if (!(lower <= upper)) throw ConfigError("tensor bounds require lower <= upper");
    for (double v : data) {
      if (!std::isfinite(v) || v < lower || v > upper)
        throw ConfigError("tensor entry " + std::to_string(v) + " outside [" +
                          std::to_string(lower) + ", " + std::to_string(upper) + "]");
    }
  }
};

enum class Activation { relu, softmax, identity };

inline Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "softmax") return Activation::softmax;
  if (name == "identity") return Activation::identity;
  throw ParseError("unknown activation '" + std::string(name) + "'");
}

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    case Activation::identity: return "identity";
  }
  return "identity";
}

/// Dense layer y = act(W x + b) with W stored row-major (rows x cols).
struct DenseLayer {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  Activation activation = Activation::identity;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline void softmax_inplace(std::vector<double>& z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

/// Immutable feed-forward network. Safe to share between concurrent attacks.
class ClassifierModel {
 public:
  ClassifierModel(Shape input_shape, std::vector<DenseLayer> layers)
      : input_shape_(input_shape), layers_(std::move(layers)) {
    validate();
  }

  [[nodiscard]] const Shape& input_shape() const noexcept { return input_shape_; }
  [[nodiscard]] std::size_t input_size() const noexcept { return input_shape_.size(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return layers_.back().rows; }
  [[nodiscard]] const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  /// Probability vector f(x). Not query-counted; attack code goes through BlackBoxClassifier.
  [[nodiscard]] std::vector<double> forward(std::span<const double> x) const {
    if (x.size() != input_size())
      throw DimensionError("input length " + std::to_string(x.size()) + " != model input " +
                           std::to_string(input_size()));
    std::vector<double> cur(x.begin(), x.end());
    std::vector<double> next;
    for (const auto& layer : layers_) {
      next.assign(layer.rows, 0.0);
      for (std::size_t r = 0; r < layer.rows; ++r) {
        const double* w = layer.weights.data() + r * layer.cols;
        double acc = layer.bias[r];
        for (std::size_t c = 0; c < layer.cols; ++c) acc += w[c] * cur[c];
        next[r] = acc;
      }
      switch (layer.activation) {
        case Activation::relu:
          for (double& v : next) v = std::max(v, 0.0);
          break;
        case Activation::softmax:
          softmax_inplace(next);
          break;
        case Activation::identity:
          break;
      }
      cur.swap(next);
    }
    return cur;
  }

  static ClassifierModel from_json(const nlohmann::json& doc) {
    auto fail = [](const std::string& what) { throw ParseError("weights file: " + what); };
    if (!doc.is_object()) fail("top level must be an object");
    if (!doc.contains("input_shape") || !doc.contains("layers")) fail("missing input_shape or layers");
    const auto& js = doc.at("input_shape");
    if (!js.is_array() || js.size() != 3) fail("input_shape must be [h, w, c]");
    Shape shape;
    try {
      shape = {js[0].get<std::size_t>(), js[1].get<std::size_t>(), js[2].get<std::size_t>()};
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("input_shape: ") + e.what());
    }
    if (!doc.at("layers").is_array()) fail("layers must be a list");
    std::vector<DenseLayer> layers;
    for (const auto& jl : doc.at("layers")) {
      DenseLayer layer;
      try {
        layer.rows = jl.at("rows").get<std::size_t>();
        layer.cols = jl.at("cols").get<std::size_t>();
        layer.weights = real_list(jl.at("weights"), "weights");
        layer.bias = real_list(jl.at("bias"), "bias");
        layer.activation = parse_activation(jl.at("activation").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        fail(std::string("layer ") + std::to_string(layers.size()) + ": " + e.what());
      }
      layers.push_back(std::move(layer));
    }
    return ClassifierModel(shape, std::move(layers));
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["input_shape"] = {input_shape_.height, input_shape_.width, input_shape_.channels};
    doc["layers"] = nlohmann::json::array();
    for (const auto& l : layers_) {
      doc["layers"].push_back({{"rows", l.rows},
                               {"cols", l.cols},
                               {"weights", l.weights},
                               {"bias", l.bias},
                               {"activation", activation_name(l.activation)}});
    }
    return doc;
  }

 private:
  static std::vector<double> real_list(const nlohmann::json& j, const char* what) {
    if (!j.is_array()) throw ParseError(std::string(what) + " must be a list");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) {
      if (!v.is_number()) throw ParseError(std::string(what) + " contains a non-number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) throw ParseError(std::string(what) + " contains a non-finite value");
      out.push_back(d);
    }
    return out;
  }

  void validate() const {
    if (input_shape_.size() == 0) throw DimensionError("input_shape has zero entries");
    if (layers_.empty()) throw DimensionError("model has no layers");
    std::size_t width = input_shape_.size();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const std::string tag = "layer " + std::to_string(i) + ": ";
      if (l.rows == 0 || l.cols == 0) throw DimensionError(tag + "empty weight matrix");
      if (l.cols != width)
        throw DimensionError(tag + "expects " + std::to_string(l.cols) + " inputs but receives " +
                             std::to_string(width));
      if (l.weights.size() != l.rows * l.cols)
        throw DimensionError(tag + "weights length != rows*cols");
      if (l.bias.size() != l.rows) throw DimensionError(tag + "bias length != rows");
      if (l.activation == Activation::softmax && i + 1 != layers_.size())
        throw DimensionError(tag + "softmax is only allowed on the last layer");
      width = l.rows;
    }
    if (layers_.back().activation != Activation::softmax)
      throw DimensionError("last layer activation must be softmax");
  }

  Shape input_shape_;
  std::vector<DenseLayer> layers_;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_json_text(std::string_view text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

inline ClassifierModel parse_model(std::string_view text) {
  return ClassifierModel::from_json(parse_json_text(text, "weights file"));
}

inline ClassifierModel load_model(const std::filesystem::path& path) {
  return parse_model(read_text_file(path));
}

/// Image files: {"shape": [h, w, c], "data": [...]} with data in row-major HWC order.
inline InputTensor tensor_from_json(const nlohmann::json& doc, double lower, double upper) {
  InputTensor t;
  try {
    const auto& js = doc.at("shape");
    if (!js.is_array() || js.size() != 3) throw ParseError("image shape must be [h, w, c]");
    t.shape = {js[0].get<std::size_t>(), js[1].get<std::size_t>(), js[2].get<std::size_t>()};
    for (const auto& v : doc.at("data")) {
      if (!v.is_number()) throw ParseError("image data contains a non-number");
      t.data.push_back(v.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("image file: ") + e.what());
  }
  t.lower = lower;
  t.upper = upper;
  t.validate();
  return t;
}

inline InputTensor load_tensor(const std::filesystem::path& path, double lower = -0.5,
                               double upper = 0.5) {
  return tensor_from_json(parse_json_text(read_text_file(path), path.string()), lower, upper);
}

inline nlohmann::json tensor_to_json(const InputTensor& t) {
  return {{"shape", {t.shape.height, t.shape.width, t.shape.channels}}, {"data", t.data}};
}

/// Per-attack query accounting. Single owner.
class QueryCounter {
 public:
  explicit QueryCounter(std::size_t budget) : budget_(budget) {
    if (budget == 0) throw ConfigError("query budget must be positive");
  }

  [[nodiscard]] std::size_t count() const noexcept { return count_; }
  [[nodiscard]] std::size_t budget() const noexcept { return budget_; }
  [[nodiscard]] std::size_t remaining() const noexcept { return budget_ - count_; }
  [[nodiscard]] bool exhausted() const noexcept { return count_ >= budget_; }

  void consume() {
    if (exhausted())
      throw BudgetExhausted("query budget of " + std::to_string(budget_) + " exhausted");
    ++count_;
  }

 private:
  std::size_t count_ = 0;
  std::size_t budget_;
};

/// What attack code is allowed to see of a classifier.
template <class T>
concept QueryOracle = requires(T& o, const T& co, std::span<const double> x) {
  { o.query(x) } -> std::same_as<std::vector<double>>;
  { o.verify_class(x) } -> std::same_as<std::size_t>;
  { co.input_shape() } -> std::convertible_to<Shape>;
  { co.num_classes() } -> std::convertible_to<std::size_t>;
  { co.queries_used() } -> std::convertible_to<std::size_t>;
  { co.remaining() } -> std::convertible_to<std::size_t>;
};

/// Query-counted view of a model: exposes only f(x), never weights.
class BlackBoxClassifier {
 public:
  BlackBoxClassifier(const ClassifierModel& model, std::size_t budget)
      : model_(&model), counter_(budget) {}

  /// f(x); consumes exactly one query.
  std::vector<double> query(std::span<const double> x) {
    check_input(x);
    counter_.consume();
    return model_->forward(x);
  }
  std::vector<double> query(const InputTensor& x) {
    check_shape(x.shape);
    return query(std::span<const double>(x.data));
  }

  std::size_t predict_class(std::span<const double> x) { return argmax(query(x)); }
  std::size_t predict_class(const InputTensor& x) {
    check_shape(x.shape);
    return predict_class(std::span<const double>(x.data));
  }

  /// Post-hoc check of a finished attack; tallied separately from the budget.
  std::size_t verify_class(std::span<const double> x) {
    check_input(x);
    ++verifications_;
    return argmax(model_->forward(x));
  }

  [[nodiscard]] const Shape& input_shape() const noexcept { return model_->input_shape(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return model_->num_classes(); }
  [[nodiscard]] std::size_t queries_used() const noexcept { return counter_.count(); }
  [[nodiscard]] std::size_t remaining() const noexcept { return counter_.remaining(); }
  [[nodiscard]] std::size_t verifications() const noexcept { return verifications_; }
  [[nodiscard]] const QueryCounter& counter() const noexcept { return counter_; }

 private:
  void check_input(std::span<const double> x) const {
    if (x.size() != model_->input_size())
      throw DimensionError("query input length " + std::to_string(x.size()) +
                           " does not match model input " + to_string(model_->input_shape()));
  }
  void check_shape(const Shape& s) const {
    if (!(s == model_->input_shape()))
      throw DimensionError("query shape " + to_string(s) + " does not match model input " +
                           to_string(model_->input_shape()));
  }

  const ClassifierModel* model_;
  QueryCounter counter_;
  std::size_t verifications_ = 0;
};

static_assert(QueryOracle<BlackBoxClassifier>);

}  // namespace bbdfo
