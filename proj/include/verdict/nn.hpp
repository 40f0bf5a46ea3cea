#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "verdict/random.hpp"

namespace verdict::nn {

using Matrix = Eigen::MatrixXd;   // batch x features
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { linear = 0, relu = 1, sigmoid = 2 };
enum class Mode { train, eval };

/// Affine map, activation, then optional batch normalization of the activated output.
struct DenseLayer {
    Matrix weights;   // out x in
    Vector bias;      // out
    Activation activation = Activation::linear;
    bool batchnorm = false;
    Vector bn_gamma, bn_beta, running_mean, running_var;

    Eigen::Index in_size() const { return weights.cols(); }
    Eigen::Index out_size() const { return weights.rows(); }
};

struct LayerGrad {
    Matrix weights;
    Vector bias;
    Vector bn_gamma, bn_beta;
};

struct Gradients {
    std::vector<LayerGrad> layers;
    Matrix input;   // dLoss/dx
};

struct ForwardCache {
    struct Layer {
        Matrix input;
        Matrix pre;        // affine output
        Matrix act;        // activation output (before batchnorm)
        Matrix bn_hat;     // normalized activations
        Vector bn_inv_std;
        Matrix dropout_mask;   // empty when dropout inactive
    };
    std::vector<Layer> layers;
    const void* owner = nullptr;
    std::uint64_t version = 0;
    bool valid = false;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<DenseLayer> layers, double dropout_p);

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    double dropout_p() const { return dropout_p_; }
    void set_dropout_p(double p);

    Eigen::Index input_size() const;
    Eigen::Index output_size() const;

    /// Dropout follows every layer except the last, and only in train mode. Train mode
    /// also updates the batchnorm running statistics. `rng` is required when dropout is active.
    Matrix forward(const Matrix& x, Mode mode, Rng* rng = nullptr, ForwardCache* cache = nullptr);
    /// Eval-mode inference that leaves the network untouched.
    Matrix predict(const Matrix& x) const;

    Gradients backward(const Matrix& loss_grad, const ForwardCache& cache) const;

    /// Call after editing weights in place so outstanding caches are rejected.
    void touch() { ++version_; }
    std::uint64_t version() const { return version_; }

    std::size_t parameter_count() const;

private:
    std::vector<DenseLayer> layers_;
    double dropout_p_ = 0.0;
    std::uint64_t version_ = 1;
};

struct MlpSpec {
    std::vector<Eigen::Index> sizes;   // input, hidden..., output
    Activation hidden = Activation::relu;
    Activation output = Activation::linear;
    bool hidden_batchnorm = false;
    double dropout_p = 0.0;
};

/// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero biases.
Mlp init_seeded(const MlpSpec& spec, std::uint64_t seed);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<LayerGrad> m, v;
};

AdamState make_adam(const Mlp& net, double lr);

/// Bias-corrected Adam on a flat parameter block; `step` is the post-increment count.
void adam_update(Eigen::Ref<Eigen::ArrayXd> param, const Eigen::Ref<const Eigen::ArrayXd>& grad,
                 Eigen::Ref<Eigen::ArrayXd> m, Eigen::Ref<Eigen::ArrayXd> v, double lr, double beta1,
                 double beta2, double eps, std::uint64_t step);

void adam_step(Mlp& net, const Gradients& grads, AdamState& state);

/// Stops after `patience` epochs without an improvement larger than `min_delta`, taken
/// as a fraction of the best loss so far when `relative` is set.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience = 10, double min_delta = 1e-6, bool relative = false)
        : patience_(patience), min_delta_(min_delta), relative_(relative) {}

    /// Returns true when training should stop.
    bool update(double loss);
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    int epochs_seen() const { return epoch_; }

private:
    int patience_;
    double min_delta_;
    bool relative_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
    int epoch_ = 0;
    int stale_ = 0;
};

/// Checkpoint bytes: "VKNN1", u32 layer count, u32 sizes[count + 1], u8 activation and
/// u8 batchnorm flag per layer, f32 dropout_p, then per layer f32 weights (row-major,
/// out x in), bias, and gamma/beta/running mean/running var when batchnorm is set.
/// All integers and floats little-endian.
std::string to_checkpoint(const Mlp& net);
Mlp from_checkpoint(const std::string& bytes);
void save_checkpoint(const Mlp& net, const std::string& path);
Mlp load_checkpoint(const std::string& path);

}  // namespace verdict::nn
