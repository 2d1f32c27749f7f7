#ifndef XAVG_MODEL_HPP
#define XAVG_MODEL_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xavg/rng.hpp"
#include "xavg/tensor_store.hpp"

namespace xavg {

/// LINEAR is a softmax classifier with an empty body; MLP adds one tanh
/// hidden layer as the body the freezing curriculum manipulates.
enum class ModelFamily { LINEAR, MLP };

ModelFamily model_family_from_name(const std::string& name);  // "linear" | "mlp"
std::string model_family_name(ModelFamily f);

struct ModelSpec {
    ModelFamily family = ModelFamily::LINEAR;
    std::size_t feature_dim = 0;
    std::size_t n_classes = 0;
    std::size_t hidden_dim = 0;  // MLP only

    void validate() const;
};

struct Example {
    std::vector<double> features;
    int label = 0;
};

using NamedVectors = std::map<std::string, std::vector<double>>;

/// Model weights partitioned into "body.*" and "classifier.*" tensors.
/// LINEAR: classifier.weight [C,D], classifier.bias [C].
/// MLP:    body.weight [H,D], body.bias [H],
///         classifier.weight [C,H], classifier.bias [C].
struct ModelParams {
    ModelSpec spec;
    NamedVectors tensors;
};

inline bool is_classifier_tensor(const std::string& name) { return name.starts_with("classifier."); }
inline bool is_body_tensor(const std::string& name) { return name.starts_with("body."); }
inline bool is_weight_tensor(const std::string& name) { return name.ends_with(".weight"); }

std::vector<std::uint64_t> tensor_shape(const ModelSpec& spec, const std::string& name);

/// Uniform init in (-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, drawn in
/// lexicographic tensor order from the given generator.
ModelParams init_params(const ModelSpec& spec, SplitMix64& rng);

std::vector<double> logits(const ModelParams& params, std::span<const double> features);
int predict(const ModelParams& params, std::span<const double> features);

/// Mean softmax cross-entropy over the examples and its analytic gradient
/// for every tensor.
std::pair<double, NamedVectors> forward_loss_and_grad(const ModelParams& params,
                                                      std::span<const Example> examples);

/// Cosine of the flattened classifier weight tensors (biases excluded).
double classifier_cosine(const ModelParams& a, const ModelParams& b);

Checkpoint params_to_checkpoint(const ModelParams& params);
ModelParams params_from_checkpoint(const CheckpointRef& ref);
ModelSpec model_spec_from_metadata(const std::map<std::string, std::string>& metadata);

}  // namespace xavg

#endif  // XAVG_MODEL_HPP
