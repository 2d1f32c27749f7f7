#include "xavg/model.hpp"

#include <algorithm>
#include <cmath>

namespace xavg {

ModelFamily model_family_from_name(const std::string& name) {
    if (name == "linear") return ModelFamily::LINEAR;
    if (name == "mlp") return ModelFamily::MLP;
    throw ValidationError("unknown model family '" + name + "'");
}

std::string model_family_name(ModelFamily f) {
    return f == ModelFamily::LINEAR ? "linear" : "mlp";
}

void ModelSpec::validate() const {
    if (feature_dim == 0) throw ValidationError("feature_dim must be positive");
    if (n_classes < 2) throw ValidationError("need at least two classes");
    if (family == ModelFamily::MLP && hidden_dim == 0) {
        throw ValidationError("mlp model needs a positive hidden_dim");
    }
}

std::vector<std::uint64_t> tensor_shape(const ModelSpec& spec, const std::string& name) {
    const auto C = static_cast<std::uint64_t>(spec.n_classes);
    const auto D = static_cast<std::uint64_t>(spec.feature_dim);
    const auto H = static_cast<std::uint64_t>(spec.hidden_dim);
    if (spec.family == ModelFamily::LINEAR) {
        if (name == "classifier.weight") return {C, D};
        if (name == "classifier.bias") return {C};
    } else {
        if (name == "body.weight") return {H, D};
        if (name == "body.bias") return {H};
        if (name == "classifier.weight") return {C, H};
        if (name == "classifier.bias") return {C};
    }
    throw ValidationError("model has no tensor named '" + name + "'");
}

namespace {

std::vector<std::string> tensor_names(const ModelSpec& spec) {
    if (spec.family == ModelFamily::LINEAR) return {"classifier.bias", "classifier.weight"};
    return {"body.bias", "body.weight", "classifier.bias", "classifier.weight"};
}

std::size_t flat_size(const ModelSpec& spec, const std::string& name) {
    std::size_t n = 1;
    for (auto e : tensor_shape(spec, name)) n *= static_cast<std::size_t>(e);
    return n;
}

double fan_in(const ModelSpec& spec, const std::string& name) {
    if (is_body_tensor(name)) return static_cast<double>(spec.feature_dim);
    return spec.family == ModelFamily::LINEAR ? static_cast<double>(spec.feature_dim)
                                              : static_cast<double>(spec.hidden_dim);
}

void check_features(const ModelSpec& spec, std::span<const double> features) {
    if (features.size() != spec.feature_dim) {
        throw ValidationError("feature vector has dimension " + std::to_string(features.size()) +
                              ", model expects " + std::to_string(spec.feature_dim));
    }
}

/// Softmax probabilities from logits, stable under large magnitudes.
std::vector<double> softmax(std::vector<double> z) {
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

}  // namespace

ModelParams init_params(const ModelSpec& spec, SplitMix64& rng) {
    spec.validate();
    ModelParams params;
    params.spec = spec;
    for (const std::string& name : tensor_names(spec)) {
        double bound = 1.0 / std::sqrt(fan_in(spec, name));
        std::vector<double> values(flat_size(spec, name));
        for (double& v : values) v = rng.next_uniform(-bound, bound);
        params.tensors[name] = std::move(values);
    }
    return params;
}

std::vector<double> logits(const ModelParams& params, std::span<const double> features) {
    const ModelSpec& spec = params.spec;
    check_features(spec, features);
    const std::size_t C = spec.n_classes;

    if (spec.family == ModelFamily::LINEAR) {
        const auto& w = params.tensors.at("classifier.weight");
        const auto& b = params.tensors.at("classifier.bias");
        std::vector<double> z(C);
        for (std::size_t c = 0; c < C; ++c) {
            double acc = b[c];
            for (std::size_t d = 0; d < spec.feature_dim; ++d) acc += w[c * spec.feature_dim + d] * features[d];
            z[c] = acc;
        }
        return z;
    }

    const std::size_t H = spec.hidden_dim;
    const auto& w1 = params.tensors.at("body.weight");
    const auto& b1 = params.tensors.at("body.bias");
    const auto& w2 = params.tensors.at("classifier.weight");
    const auto& b2 = params.tensors.at("classifier.bias");
    std::vector<double> hidden(H);
    for (std::size_t h = 0; h < H; ++h) {
        double acc = b1[h];
        for (std::size_t d = 0; d < spec.feature_dim; ++d) acc += w1[h * spec.feature_dim + d] * features[d];
        hidden[h] = std::tanh(acc);
    }
    std::vector<double> z(C);
    for (std::size_t c = 0; c < C; ++c) {
        double acc = b2[c];
        for (std::size_t h = 0; h < H; ++h) acc += w2[c * H + h] * hidden[h];
        z[c] = acc;
    }
    return z;
}

int predict(const ModelParams& params, std::span<const double> features) {
    std::vector<double> z = logits(params, features);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::pair<double, NamedVectors> forward_loss_and_grad(const ModelParams& params,
                                                      std::span<const Example> examples) {
    const ModelSpec& spec = params.spec;
    if (examples.empty()) throw ValidationError("forward_loss_and_grad: no examples");

    NamedVectors grads;
    for (const auto& [name, values] : params.tensors) grads[name] = std::vector<double>(values.size(), 0.0);

    const std::size_t C = spec.n_classes;
    const std::size_t D = spec.feature_dim;
    const double inv_n = 1.0 / static_cast<double>(examples.size());
    double loss = 0.0;

    if (spec.family == ModelFamily::LINEAR) {
        auto& gw = grads["classifier.weight"];
        auto& gb = grads["classifier.bias"];
        for (const Example& ex : examples) {
            if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= C) {
                throw ValidationError("label " + std::to_string(ex.label) + " out of range");
            }
            std::vector<double> p = softmax(logits(params, ex.features));
            loss -= std::log(p[static_cast<std::size_t>(ex.label)]) * inv_n;
            for (std::size_t c = 0; c < C; ++c) {
                double dz = (p[c] - (static_cast<int>(c) == ex.label ? 1.0 : 0.0)) * inv_n;
                gb[c] += dz;
                for (std::size_t d = 0; d < D; ++d) gw[c * D + d] += dz * ex.features[d];
            }
        }
        return {loss, std::move(grads)};
    }

    const std::size_t H = spec.hidden_dim;
    const auto& w1 = params.tensors.at("body.weight");
    const auto& b1 = params.tensors.at("body.bias");
    const auto& w2 = params.tensors.at("classifier.weight");
    const auto& b2 = params.tensors.at("classifier.bias");
    auto& gw1 = grads["body.weight"];
    auto& gb1 = grads["body.bias"];
    auto& gw2 = grads["classifier.weight"];
    auto& gb2 = grads["classifier.bias"];

    for (const Example& ex : examples) {
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= C) {
            throw ValidationError("label " + std::to_string(ex.label) + " out of range");
        }
        check_features(spec, ex.features);
        std::vector<double> hidden(H);
        for (std::size_t h = 0; h < H; ++h) {
            double acc = b1[h];
            for (std::size_t d = 0; d < D; ++d) acc += w1[h * D + d] * ex.features[d];
            hidden[h] = std::tanh(acc);
        }
        std::vector<double> z(C);
        for (std::size_t c = 0; c < C; ++c) {
            double acc = b2[c];
            for (std::size_t h = 0; h < H; ++h) acc += w2[c * H + h] * hidden[h];
            z[c] = acc;
        }
        std::vector<double> p = softmax(std::move(z));
        loss -= std::log(p[static_cast<std::size_t>(ex.label)]) * inv_n;

        std::vector<double> dhidden(H, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            double dz = (p[c] - (static_cast<int>(c) == ex.label ? 1.0 : 0.0)) * inv_n;
            gb2[c] += dz;
            for (std::size_t h = 0; h < H; ++h) {
                gw2[c * H + h] += dz * hidden[h];
                dhidden[h] += dz * w2[c * H + h];
            }
        }
        for (std::size_t h = 0; h < H; ++h) {
            double da = dhidden[h] * (1.0 - hidden[h] * hidden[h]);
            gb1[h] += da;
            for (std::size_t d = 0; d < D; ++d) gw1[h * D + d] += da * ex.features[d];
        }
    }
    return {loss, std::move(grads)};
}

double classifier_cosine(const ModelParams& a, const ModelParams& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    bool seen = false;
    for (const auto& [name, va] : a.tensors) {
        if (!is_classifier_tensor(name) || !is_weight_tensor(name)) continue;
        auto it = b.tensors.find(name);
        if (it == b.tensors.end() || it->second.size() != va.size()) {
            throw ValidationError("classifier shapes differ on '" + name + "'");
        }
        seen = true;
        const auto& vb = it->second;
        for (std::size_t i = 0; i < va.size(); ++i) {
            dot += va[i] * vb[i];
            na += va[i] * va[i];
            nb += vb[i] * vb[i];
        }
    }
    if (!seen) throw ValidationError("models have no classifier weight tensors");
    if (na == 0.0 || nb == 0.0) throw ValidationError("classifier_cosine: zero-norm classifier");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Checkpoint params_to_checkpoint(const ModelParams& params) {
    Checkpoint cp;
    for (const auto& [name, values] : params.tensors) {
        cp.add(name, TensorData::from_f64(tensor_shape(params.spec, name), values));
    }
    cp.set_metadata("model_family", model_family_name(params.spec.family));
    cp.set_metadata("feature_dim", std::to_string(params.spec.feature_dim));
    cp.set_metadata("n_classes", std::to_string(params.spec.n_classes));
    if (params.spec.family == ModelFamily::MLP) {
        cp.set_metadata("hidden_dim", std::to_string(params.spec.hidden_dim));
    }
    return cp;
}

ModelSpec model_spec_from_metadata(const std::map<std::string, std::string>& metadata) {
    auto get = [&metadata](const std::string& key) -> std::string {
        auto it = metadata.find(key);
        if (it == metadata.end()) throw ValidationError("checkpoint metadata lacks '" + key + "'");
        return it->second;
    };
    ModelSpec spec;
    spec.family = model_family_from_name(get("model_family"));
    spec.feature_dim = std::stoull(get("feature_dim"));
    spec.n_classes = std::stoull(get("n_classes"));
    if (spec.family == ModelFamily::MLP) spec.hidden_dim = std::stoull(get("hidden_dim"));
    spec.validate();
    return spec;
}

ModelParams params_from_checkpoint(const CheckpointRef& ref) {
    ModelParams params;
    params.spec = model_spec_from_metadata(ref.metadata());
    for (const std::string& name : tensor_names(params.spec)) {
        TensorData t = ref.read(name);
        if (t.dtype() != Dtype::F64 || t.shape() != tensor_shape(params.spec, name)) {
            throw ValidationError("tensor '" + name + "' does not match the model geometry");
        }
        auto values = t.as_f64();
        params.tensors[name] = std::vector<double>(values.begin(), values.end());
    }
    return params;
}

}  // namespace xavg
