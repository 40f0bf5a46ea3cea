#include "verdict/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "verdict/error.hpp"
#include "verdict/io_util.hpp"

namespace verdict::nn {

namespace {

Matrix apply_activation(const Matrix& z, Activation a) {
    switch (a) {
        case Activation::relu: return z.cwiseMax(0.0);
        case Activation::sigmoid: return (1.0 + (-z.array()).exp()).inverse().matrix();
        case Activation::linear: break;
    }
    return z;
}

void check_finite_spec(const MlpSpec& spec) {
    if (spec.sizes.size() < 2) throw std::invalid_argument("MLP needs at least input and output sizes");
    for (auto s : spec.sizes) {
        if (s < 1) throw std::invalid_argument("MLP layer sizes must be >= 1");
    }
    if (!(spec.dropout_p >= 0.0 && spec.dropout_p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
}

}  // namespace

Mlp::Mlp(std::vector<DenseLayer> layers, double dropout_p) : layers_(std::move(layers)) {
    set_dropout_p(dropout_p);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.bias.size() != l.out_size()) throw std::invalid_argument("bias size does not match layer output");
        if (i > 0 && layers_[i - 1].out_size() != l.in_size()) {
            throw std::invalid_argument("adjacent layer sizes do not match");
        }
        if (l.batchnorm && (l.bn_gamma.size() != l.out_size() || l.bn_beta.size() != l.out_size() ||
                            l.running_mean.size() != l.out_size() || l.running_var.size() != l.out_size())) {
            throw std::invalid_argument("batchnorm parameter sizes do not match layer output");
        }
    }
}

void Mlp::set_dropout_p(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
    dropout_p_ = p;
}

Eigen::Index Mlp::input_size() const { return layers_.empty() ? 0 : layers_.front().in_size(); }
Eigen::Index Mlp::output_size() const { return layers_.empty() ? 0 : layers_.back().out_size(); }

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
        if (l.batchnorm) n += static_cast<std::size_t>(2 * l.out_size());
    }
    return n;
}

Matrix Mlp::forward(const Matrix& x, Mode mode, Rng* rng, ForwardCache* cache) {
    if (x.cols() != input_size()) {
        throw std::invalid_argument("input width " + std::to_string(x.cols()) + " does not match network input " +
                                    std::to_string(input_size()));
    }
    const bool train = mode == Mode::train;
    const bool use_dropout = train && dropout_p_ > 0.0;
    if (use_dropout && rng == nullptr) throw std::invalid_argument("dropout in train mode requires an rng");
    if (cache) {
        cache->layers.assign(layers_.size(), {});
        cache->owner = this;
        cache->version = version_;
        cache->valid = true;
    }
    Matrix h = x;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        auto& l = layers_[li];
        ForwardCache::Layer* c = cache ? &cache->layers[li] : nullptr;
        if (c) c->input = h;
        Matrix z = (h * l.weights.transpose()).rowwise() + l.bias.transpose();
        Matrix a = apply_activation(z, l.activation);
        if (c) {
            c->pre = z;
            c->act = a;
        }
        if (l.batchnorm) {
            Vector mean, var;
            if (train) {
                const double n = static_cast<double>(a.rows());
                mean = a.colwise().mean().transpose();
                var = (a.rowwise() - mean.transpose()).array().square().colwise().sum().transpose() / n;
                const double unbias = a.rows() > 1 ? n / (n - 1.0) : 1.0;
                l.running_mean = (1.0 - kBatchNormMomentum) * l.running_mean + kBatchNormMomentum * mean;
                l.running_var = (1.0 - kBatchNormMomentum) * l.running_var + kBatchNormMomentum * unbias * var;
            } else {
                mean = l.running_mean;
                var = l.running_var;
            }
            const Vector inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
            Matrix hat = (a.rowwise() - mean.transpose()) * inv_std.asDiagonal();
            if (c) {
                c->bn_hat = hat;
                c->bn_inv_std = inv_std;
            }
            a = (hat * l.bn_gamma.asDiagonal()).rowwise() + l.bn_beta.transpose();
        }
        if (use_dropout && li + 1 < layers_.size()) {
            Matrix mask(a.rows(), a.cols());
            const double keep = 1.0 - dropout_p_;
            for (Eigen::Index j = 0; j < mask.cols(); ++j) {
                for (Eigen::Index i = 0; i < mask.rows(); ++i) {
                    mask(i, j) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
                }
            }
            a = a.cwiseProduct(mask);
            if (c) c->dropout_mask = std::move(mask);
        }
        h = std::move(a);
    }
    return h;
}

Matrix Mlp::predict(const Matrix& x) const {
    // eval mode never mutates state
    return const_cast<Mlp*>(this)->forward(x, Mode::eval);
}

Gradients Mlp::backward(const Matrix& loss_grad, const ForwardCache& cache) const {
    if (!cache.valid || cache.owner != this || cache.version != version_ || cache.layers.size() != layers_.size()) {
        throw std::logic_error("backward called with a stale or missing forward cache");
    }
    Gradients g;
    g.layers.resize(layers_.size());
    Matrix grad = loss_grad;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& l = layers_[li];
        const auto& c = cache.layers[li];
        if (grad.rows() != c.act.rows() || grad.cols() != l.out_size()) {
            throw std::invalid_argument("loss gradient shape does not match forward output");
        }
        auto& lg = g.layers[li];
        if (c.dropout_mask.size() > 0) grad = grad.cwiseProduct(c.dropout_mask);
        if (l.batchnorm) {
            const double n = static_cast<double>(grad.rows());
            lg.bn_gamma = grad.cwiseProduct(c.bn_hat).colwise().sum().transpose();
            lg.bn_beta = grad.colwise().sum().transpose();
            const Matrix dhat = grad * l.bn_gamma.asDiagonal();
            const Eigen::RowVectorXd sum_dhat = dhat.colwise().sum();
            const Eigen::RowVectorXd sum_dhat_hat = dhat.cwiseProduct(c.bn_hat).colwise().sum();
            Matrix centred = (n * dhat).rowwise() - sum_dhat;
            centred -= c.bn_hat * sum_dhat_hat.asDiagonal();
            grad = centred * (c.bn_inv_std / n).asDiagonal();
        }
        switch (l.activation) {
            case Activation::relu: grad = grad.cwiseProduct((c.pre.array() > 0.0).cast<double>().matrix()); break;
            case Activation::sigmoid:
                grad = grad.cwiseProduct(c.act.cwiseProduct((1.0 - c.act.array()).matrix()));
                break;
            case Activation::linear: break;
        }
        lg.weights = grad.transpose() * c.input;
        lg.bias = grad.colwise().sum().transpose();
        grad = grad * l.weights;
    }
    g.input = std::move(grad);
    return g;
}

Mlp init_seeded(const MlpSpec& spec, std::uint64_t seed) {
    check_finite_spec(spec);
    Rng rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < spec.sizes.size(); ++i) {
        const bool last = i + 2 == spec.sizes.size();
        DenseLayer l;
        const auto in = spec.sizes[i];
        const auto out = spec.sizes[i + 1];
        l.activation = last ? spec.output : spec.hidden;
        const double limit = l.activation == Activation::relu ? std::sqrt(6.0 / static_cast<double>(in))
                                                              : std::sqrt(6.0 / static_cast<double>(in + out));
        l.weights.resize(out, in);
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index cidx = 0; cidx < in; ++cidx) l.weights(r, cidx) = limit * (2.0 * uniform01(rng) - 1.0);
        }
        l.bias = Vector::Zero(out);
        l.batchnorm = !last && spec.hidden_batchnorm;
        if (l.batchnorm) {
            l.bn_gamma = Vector::Ones(out);
            l.bn_beta = Vector::Zero(out);
            l.running_mean = Vector::Zero(out);
            l.running_var = Vector::Ones(out);
        }
        layers.push_back(std::move(l));
    }
    return Mlp(std::move(layers), spec.dropout_p);
}

AdamState make_adam(const Mlp& net, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    AdamState s;
    s.lr = lr;
    for (const auto& l : net.layers()) {
        LayerGrad z;
        z.weights = Matrix::Zero(l.weights.rows(), l.weights.cols());
        z.bias = Vector::Zero(l.bias.size());
        if (l.batchnorm) {
            z.bn_gamma = Vector::Zero(l.out_size());
            z.bn_beta = Vector::Zero(l.out_size());
        }
        s.m.push_back(z);
        s.v.push_back(z);
    }
    return s;
}

void adam_update(Eigen::Ref<Eigen::ArrayXd> param, const Eigen::Ref<const Eigen::ArrayXd>& grad,
                 Eigen::Ref<Eigen::ArrayXd> m, Eigen::Ref<Eigen::ArrayXd> v, double lr, double beta1, double beta2,
                 double eps, std::uint64_t step) {
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.square();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    param -= lr * (m / c1) / ((v / c2).sqrt() + eps);
}

namespace {

template <typename T>
void adam_block(T& param, const T& grad, T& m, T& v, const AdamState& s) {
    if (param.size() == 0) return;
    Eigen::Map<Eigen::ArrayXd> p(param.data(), param.size());
    Eigen::Map<const Eigen::ArrayXd> g(grad.data(), grad.size());
    Eigen::Map<Eigen::ArrayXd> mm(m.data(), m.size());
    Eigen::Map<Eigen::ArrayXd> vv(v.data(), v.size());
    adam_update(p, g, mm, vv, s.lr, s.beta1, s.beta2, s.eps, s.step);
}

}  // namespace

void adam_step(Mlp& net, const Gradients& grads, AdamState& state) {
    auto& layers = net.layers();
    if (grads.layers.size() != layers.size() || state.m.size() != layers.size()) {
        throw std::invalid_argument("adam_step: gradient/state layer count mismatch");
    }
    ++state.step;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        const auto& g = grads.layers[i];
        if (g.weights.rows() != l.weights.rows() || g.weights.cols() != l.weights.cols()) {
            throw std::invalid_argument("adam_step: gradient shape mismatch");
        }
        adam_block(l.weights, g.weights, state.m[i].weights, state.v[i].weights, state);
        adam_block(l.bias, g.bias, state.m[i].bias, state.v[i].bias, state);
        if (l.batchnorm) {
            adam_block(l.bn_gamma, g.bn_gamma, state.m[i].bn_gamma, state.v[i].bn_gamma, state);
            adam_block(l.bn_beta, g.bn_beta, state.m[i].bn_beta, state.v[i].bn_beta, state);
        }
    }
    net.touch();
}

bool EarlyStopping::update(double loss) {
    if (loss < best_ - min_delta_ * (relative_ && std::isfinite(best_) ? best_ : 1.0)) {
        best_ = loss;
        best_epoch_ = epoch_;
        stale_ = 0;
    } else {
        ++stale_;
    }
    ++epoch_;
    return stale_ >= patience_;
}

// Checkpoint serialization

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes a little-endian host");

constexpr char kMagic[5] = {'V', 'K', 'N', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    char b[4];
    std::memcpy(b, &f, 4);
    out.append(b, 4);
}

template <typename Derived>
void put_row_major(std::string& out, const Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f32(out, m(r, c));
    }
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}
    void need(std::size_t n) const {
        if (pos_ + n > s_.size()) throw ValidationError("checkpoint truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(s_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, s_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    double f32() {
        need(4);
        float f;
        std::memcpy(&f, s_.data() + pos_, 4);
        pos_ += 4;
        return static_cast<double>(f);
    }
    bool done() const { return pos_ == s_.size(); }
    std::size_t pos_ = 0;

private:
    const std::string& s_;
};

}  // namespace

std::string to_checkpoint(const Mlp& net) {
    std::string out(kMagic, sizeof(kMagic));
    const auto& layers = net.layers();
    put_u32(out, static_cast<std::uint32_t>(layers.size()));
    if (!layers.empty()) put_u32(out, static_cast<std::uint32_t>(layers.front().in_size()));
    for (const auto& l : layers) put_u32(out, static_cast<std::uint32_t>(l.out_size()));
    for (const auto& l : layers) {
        out.push_back(static_cast<char>(l.activation));
        out.push_back(static_cast<char>(l.batchnorm ? 1 : 0));
    }
    put_f32(out, net.dropout_p());
    for (const auto& l : layers) {
        put_row_major(out, l.weights);
        put_row_major(out, l.bias.transpose());
        if (l.batchnorm) {
            put_row_major(out, l.bn_gamma.transpose());
            put_row_major(out, l.bn_beta.transpose());
            put_row_major(out, l.running_mean.transpose());
            put_row_major(out, l.running_var.transpose());
        }
    }
    return out;
}

Mlp from_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) || bytes.compare(0, sizeof(kMagic), kMagic, sizeof(kMagic)) != 0) {
        throw ValidationError("not a VKNN1 checkpoint");
    }
    Reader r(bytes);
    r.pos_ = sizeof(kMagic);
    const std::uint32_t n = r.u32();
    if (n == 0 || n > 1024) throw ValidationError("checkpoint: implausible layer count");
    std::vector<Eigen::Index> sizes(n + 1);
    for (auto& s : sizes) {
        s = r.u32();
        if (s == 0 || s > (1u << 20)) throw ValidationError("checkpoint: implausible layer size");
    }
    std::vector<DenseLayer> layers(n);
    for (auto& l : layers) {
        const auto act = r.u8();
        if (act > 2) throw ValidationError("checkpoint: unknown activation");
        l.activation = static_cast<Activation>(act);
        l.batchnorm = r.u8() != 0;
    }
    const double dropout = r.f32();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto& l = layers[i];
        const auto in = sizes[i];
        const auto out = sizes[i + 1];
        l.weights.resize(out, in);
        for (Eigen::Index a = 0; a < out; ++a) {
            for (Eigen::Index b = 0; b < in; ++b) l.weights(a, b) = r.f32();
        }
        auto read_vec = [&](Vector& v) {
            v.resize(out);
            for (Eigen::Index a = 0; a < out; ++a) v(a) = r.f32();
        };
        read_vec(l.bias);
        if (l.batchnorm) {
            read_vec(l.bn_gamma);
            read_vec(l.bn_beta);
            read_vec(l.running_mean);
            read_vec(l.running_var);
        }
    }
    if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
    return Mlp(std::move(layers), dropout);
}

void save_checkpoint(const Mlp& net, const std::string& path) { write_file_atomic(path, to_checkpoint(net)); }

Mlp load_checkpoint(const std::string& path) { return from_checkpoint(read_file(path)); }

}  // namespace verdict::nn
