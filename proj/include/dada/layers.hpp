#ifndef DADA_LAYERS_HPP
#define DADA_LAYERS_HPP

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dada/types.hpp"

namespace dada {

/// Controls the stochastic and stateful behaviour of a forward pass.
///
/// `training` selects batch statistics for batch-norm and enables dropout.
/// `update_stats` additionally folds the batch statistics into the running
/// estimates; components that are held fixed during an update step are run
/// with `training = true, update_stats = false`.
struct ForwardOptions {
    bool training = false;
    bool update_stats = false;
    Rng* rng = nullptr;

    static ForwardOptions eval() { return {}; }
    static ForwardOptions train(Rng& rng, bool update_stats = true) { return {true, update_stats, &rng}; }
};

template <typename Scalar>
struct LayerCache {
    Matrix<Scalar> input;
    Matrix<Scalar> aux;
    RowVector<Scalar> stat;
    std::vector<int> index;
    bool training = false;
};

enum class InitScheme { normal, he };

struct InitOptions {
    InitScheme scheme = InitScheme::normal;
    double stddev = 0.02;

    double stddev_for(int fan_in) const {
        return scheme == InitScheme::he ? std::sqrt(2.0 / fan_in) : stddev;
    }
};

template <typename Scalar, typename Derived>
void fill_normal(Eigen::DenseBase<Derived>& m, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
struct ParamRef {
    std::string name;
    Matrix<Scalar>* value;
};

/// Fully connected layer, y = x W + b with W stored (in x out).
template <typename Scalar>
struct Linear {
    Matrix<Scalar> weight;
    Matrix<Scalar> bias;

    Linear(int in, int out) : weight(Matrix<Scalar>::Zero(in, out)), bias(Matrix<Scalar>::Zero(1, out)) {}

    int in_width() const { return static_cast<int>(weight.rows()); }
    int out_width() const { return static_cast<int>(weight.cols()); }

    void initialize(const InitOptions& init, Rng& rng) {
        fill_normal<Scalar>(weight, init.stddev_for(in_width()), rng);
        bias.setZero();
    }

    std::vector<ParamRef<Scalar>> params() { return {{"weight", &weight}, {"bias", &bias}}; }
    std::vector<ParamRef<Scalar>> buffers() { return {}; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions&, LayerCache<Scalar>& cache) const {
        if (x.cols() != weight.rows())
            throw ShapeError("linear layer expects width " + std::to_string(weight.rows()) + ", got " +
                             std::to_string(x.cols()));
        cache.input = x;
        Matrix<Scalar> y = x * weight;
        y.rowwise() += bias.row(0);
        return y;
    }

    Matrix<Scalar> backward(const LayerCache<Scalar>& cache, const Matrix<Scalar>& dy,
                            std::span<Matrix<Scalar>> grads) const {
        grads[0].noalias() += cache.input.transpose() * dy;
        grads[1] += dy.colwise().sum();
        return dy * weight.transpose();
    }
};

/// 2-D convolution over (C, H, W) images flattened into rows, lowered to a
/// single GEMM per batch through an im2col buffer.
template <typename Scalar>
struct Conv2d {
    ImageShape in_shape;
    int out_channels;
    int kernel;
    int stride;
    int padding;
    Matrix<Scalar> weight;  // out_channels x (in_channels * kernel * kernel)
    Matrix<Scalar> bias;    // 1 x out_channels

    Conv2d(ImageShape in, int out, int k, int s, int p)
        : in_shape(in), out_channels(out), kernel(k), stride(s), padding(p),
          weight(Matrix<Scalar>::Zero(out, in.channels * k * k)), bias(Matrix<Scalar>::Zero(1, out)) {
        if (out_height() <= 0 || out_width_px() <= 0) throw ShapeError("convolution output is empty");
    }

    int out_height() const { return (in_shape.height + 2 * padding - kernel) / stride + 1; }
    int out_width_px() const { return (in_shape.width + 2 * padding - kernel) / stride + 1; }
    ImageShape out_shape() const { return {out_channels, out_height(), out_width_px()}; }

    void initialize(const InitOptions& init, Rng& rng) {
        fill_normal<Scalar>(weight, init.stddev_for(static_cast<int>(weight.cols())), rng);
        bias.setZero();
    }

    std::vector<ParamRef<Scalar>> params() { return {{"weight", &weight}, {"bias", &bias}}; }
    std::vector<ParamRef<Scalar>> buffers() { return {}; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions&, LayerCache<Scalar>& cache) const {
        if (x.cols() != in_shape.size())
            throw ShapeError("convolution expects " + std::to_string(in_shape.size()) + " values per image, got " +
                             std::to_string(x.cols()));
        const Eigen::Index n = x.rows();
        const int pixels = out_height() * out_width_px();
        Matrix<Scalar> cols = im2col(x);
        Matrix<Scalar> out_all = weight * cols;  // out_channels x (n * pixels)
        Matrix<Scalar> y(n, out_channels * pixels);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < out_channels; ++c)
                y.row(i).segment(c * pixels, pixels) =
                    out_all.row(c).segment(i * pixels, pixels).array() + bias(0, c);
        cache.aux = std::move(cols);
        cache.stat.resize(1);
        cache.stat(0) = static_cast<Scalar>(n);
        return y;
    }

    Matrix<Scalar> backward(const LayerCache<Scalar>& cache, const Matrix<Scalar>& dy,
                            std::span<Matrix<Scalar>> grads) const {
        const auto n = static_cast<Eigen::Index>(cache.stat(0));
        const int pixels = out_height() * out_width_px();
        Matrix<Scalar> dout(out_channels, n * pixels);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < out_channels; ++c)
                dout.row(c).segment(i * pixels, pixels) = dy.row(i).segment(c * pixels, pixels);
        grads[0].noalias() += dout * cache.aux.transpose();
        grads[1] += dout.rowwise().sum().transpose();
        Matrix<Scalar> dcols = weight.transpose() * dout;
        return col2im(dcols, n);
    }

private:
    Matrix<Scalar> im2col(const Matrix<Scalar>& x) const {
        const Eigen::Index n = x.rows();
        const int oh = out_height(), ow = out_width_px(), pixels = oh * ow;
        const int h = in_shape.height, w = in_shape.width, plane = h * w;
        Matrix<Scalar> cols = Matrix<Scalar>::Zero(in_shape.channels * kernel * kernel, n * pixels);
        for (int c = 0; c < in_shape.channels; ++c)
            for (int ki = 0; ki < kernel; ++ki)
                for (int kj = 0; kj < kernel; ++kj) {
                    const int r = (c * kernel + ki) * kernel + kj;
                    Scalar* dst = cols.row(r).data();
                    for (Eigen::Index i = 0; i < n; ++i) {
                        const Scalar* src = x.row(i).data() + c * plane;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - padding + ki;
                            if (iy < 0 || iy >= h) continue;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - padding + kj;
                                if (ix < 0 || ix >= w) continue;
                                dst[i * pixels + oy * ow + ox] = src[iy * w + ix];
                            }
                        }
                    }
                }
        return cols;
    }

    Matrix<Scalar> col2im(const Matrix<Scalar>& cols, Eigen::Index n) const {
        const int oh = out_height(), ow = out_width_px(), pixels = oh * ow;
        const int h = in_shape.height, w = in_shape.width, plane = h * w;
        Matrix<Scalar> dx = Matrix<Scalar>::Zero(n, in_shape.size());
        for (int c = 0; c < in_shape.channels; ++c)
            for (int ki = 0; ki < kernel; ++ki)
                for (int kj = 0; kj < kernel; ++kj) {
                    const int r = (c * kernel + ki) * kernel + kj;
                    const Scalar* src = cols.row(r).data();
                    for (Eigen::Index i = 0; i < n; ++i) {
                        Scalar* dst = dx.row(i).data() + c * plane;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - padding + ki;
                            if (iy < 0 || iy >= h) continue;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - padding + kj;
                                if (ix < 0 || ix >= w) continue;
                                dst[iy * w + ix] += src[i * pixels + oy * ow + ox];
                            }
                        }
                    }
                }
        return dx;
    }
};

/// Batch normalization over `channels` groups of `spatial` contiguous values.
/// spatial == 1 is the fully connected case.
template <typename Scalar>
struct BatchNorm {
    int channels;
    int spatial;
    double momentum = 0.1;
    double eps = 1e-5;
    Matrix<Scalar> gamma;
    Matrix<Scalar> beta;
    Matrix<Scalar> running_mean;
    Matrix<Scalar> running_var;

    BatchNorm(int c, int s)
        : channels(c), spatial(s), gamma(Matrix<Scalar>::Ones(1, c)), beta(Matrix<Scalar>::Zero(1, c)),
          running_mean(Matrix<Scalar>::Zero(1, c)), running_var(Matrix<Scalar>::Ones(1, c)) {}

    void initialize(const InitOptions&, Rng&) {
        gamma.setOnes();
        beta.setZero();
        running_mean.setZero();
        running_var.setOnes();
    }

    std::vector<ParamRef<Scalar>> params() { return {{"gamma", &gamma}, {"beta", &beta}}; }
    std::vector<ParamRef<Scalar>> buffers() { return {{"running_mean", &running_mean}, {"running_var", &running_var}}; }

    // Non-const because update_stats mutates the running estimates.
    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions& opt, LayerCache<Scalar>& cache) {
        if (x.cols() != static_cast<Eigen::Index>(channels) * spatial)
            throw ShapeError("batch-norm expects width " + std::to_string(channels * spatial) + ", got " +
                             std::to_string(x.cols()));
        const Eigen::Index n = x.rows();
        const double count = static_cast<double>(n) * spatial;
        Matrix<Scalar> xhat(n, x.cols());
        RowVector<Scalar> inv_std(channels);
        cache.training = opt.training;
        for (int c = 0; c < channels; ++c) {
            auto block = x.middleCols(static_cast<Eigen::Index>(c) * spatial, spatial);
            Scalar mean, var;
            if (opt.training) {
                mean = block.sum() / static_cast<Scalar>(count);
                var = (block.array() - mean).square().sum() / static_cast<Scalar>(count);
                if (opt.update_stats) {
                    const double unbiased = count > 1 ? static_cast<double>(var) * count / (count - 1) : static_cast<double>(var);
                    running_mean(0, c) = static_cast<Scalar>((1 - momentum) * running_mean(0, c) + momentum * mean);
                    running_var(0, c) = static_cast<Scalar>((1 - momentum) * running_var(0, c) + momentum * unbiased);
                }
            } else {
                mean = running_mean(0, c);
                var = running_var(0, c);
            }
            inv_std(c) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
            xhat.middleCols(static_cast<Eigen::Index>(c) * spatial, spatial) = (block.array() - mean) * inv_std(c);
        }
        Matrix<Scalar> y(n, x.cols());
        for (int c = 0; c < channels; ++c)
            y.middleCols(static_cast<Eigen::Index>(c) * spatial, spatial) =
                xhat.middleCols(static_cast<Eigen::Index>(c) * spatial, spatial).array() * gamma(0, c) + beta(0, c);
        cache.aux = std::move(xhat);
        cache.stat = std::move(inv_std);
        return y;
    }

    Matrix<Scalar> backward(const LayerCache<Scalar>& cache, const Matrix<Scalar>& dy,
                            std::span<Matrix<Scalar>> grads) const {
        const Eigen::Index n = dy.rows();
        const Scalar count = static_cast<Scalar>(n * spatial);
        Matrix<Scalar> dx(n, dy.cols());
        for (int c = 0; c < channels; ++c) {
            const Eigen::Index off = static_cast<Eigen::Index>(c) * spatial;
            auto g = dy.middleCols(off, spatial).array();
            auto xh = cache.aux.middleCols(off, spatial).array();
            const Scalar sum_g = g.sum();
            const Scalar sum_gx = (g * xh).sum();
            grads[0](0, c) += sum_gx;
            grads[1](0, c) += sum_g;
            const Scalar scale = gamma(0, c) * cache.stat(c);
            if (cache.training)
                dx.middleCols(off, spatial) = scale * (g - sum_g / count - xh * (sum_gx / count));
            else
                dx.middleCols(off, spatial) = scale * g;
        }
        return dx;
    }
};

template <typename Scalar>
struct ReLU {
    void initialize(const InitOptions&, Rng&) {}
    std::vector<ParamRef<Scalar>> params() { return {}; }
    std::vector<ParamRef<Scalar>> buffers() { return {}; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions&, LayerCache<Scalar>& cache) const {
        cache.input = x;
        return x.cwiseMax(Scalar(0));
    }
    Matrix<Scalar> backward(const LayerCache<Scalar>& cache, const Matrix<Scalar>& dy,
                            std::span<Matrix<Scalar>>) const {
        return (cache.input.array() > Scalar(0)).select(dy, Scalar(0));
    }
};

template <typename Scalar>
struct LeakyReLU {
    double slope = 0.2;

    void initialize(const InitOptions&, Rng&) {}
    std::vector<ParamRef<Scalar>> params() { return {}; }
    std::vector<ParamRef<Scalar>> buffers() { return {}; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions&, LayerCache<Scalar>& cache) const {
        cache.input = x;
        return (x.array() > Scalar(0)).select(x, x * static_cast<Scalar>(slope));
    }
    Matrix<Scalar> backward(const LayerCache<Scalar>& cache, const Matrix<Scalar>& dy,
                            std::span<Matrix<Scalar>>) const {
        return (cache.input.array() > Scalar(0)).select(dy, dy * static_cast<Scalar>(slope));
    }
};

/// Non-overlapping max pooling (kernel == stride).
template <typename Scalar>
struct MaxPool2d {
    ImageShape in_shape;
    int size = 2;

    ImageShape out_shape() const { return {in_shape.channels, in_shape.height / size, in_shape.width / size}; }

    void initialize(const InitOptions&, Rng&) {}
    std::vector<ParamRef<Scalar>> params() { return {}; }
    std::vector<ParamRef<Scalar>> buffers() { return {}; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions&, LayerCache<Scalar>& cache) const {
        if (x.cols() != in_shape.size()) throw ShapeError("max-pool input width mismatch");
        const ImageShape o = out_shape();
        const Eigen::Index n = x.rows();
        Matrix<Scalar> y(n, o.size());
        cache.index.assign(static_cast<std::size_t>(n * o.size()), 0);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < o.channels; ++c)
                for (int oy = 0; oy < o.height; ++oy)
                    for (int ox = 0; ox < o.width; ++ox) {
                        int best = -1;
                        Scalar best_v = 0;
                        for (int dy = 0; dy < size; ++dy)
                            for (int dx = 0; dx < size; ++dx) {
                                const int idx = (c * in_shape.height + oy * size + dy) * in_shape.width + ox * size + dx;
                                if (best < 0 || x(i, idx) > best_v) {
                                    best = idx;
                                    best_v = x(i, idx);
                                }
                            }
                        const int oidx = (c * o.height + oy) * o.width + ox;
                        y(i, oidx) = best_v;
                        cache.index[static_cast<std::size_t>(i * o.size() + oidx)] = best;
                    }
        cache.stat.resize(1);
        cache.stat(0) = static_cast<Scalar>(n);
        return y;
    }

    Matrix<Scalar> backward(const LayerCache<Scalar>& cache, const Matrix<Scalar>& dy,
                            std::span<Matrix<Scalar>>) const {
        const Eigen::Index n = dy.rows();
        const int osize = out_shape().size();
        Matrix<Scalar> dx = Matrix<Scalar>::Zero(n, in_shape.size());
        for (Eigen::Index i = 0; i < n; ++i)
            for (int o = 0; o < osize; ++o) dx(i, cache.index[static_cast<std::size_t>(i * osize + o)]) += dy(i, o);
        return dx;
    }
};

/// Inverted dropout; the mask is drawn from the caller-provided RNG.
template <typename Scalar>
struct Dropout {
    double probability = 0.5;

    void initialize(const InitOptions&, Rng&) {}
    std::vector<ParamRef<Scalar>> params() { return {}; }
    std::vector<ParamRef<Scalar>> buffers() { return {}; }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions& opt, LayerCache<Scalar>& cache) const {
        cache.training = opt.training && probability > 0;
        if (!cache.training) return x;
        if (opt.rng == nullptr) throw std::logic_error("dropout in training mode needs an RNG");
        std::bernoulli_distribution keep(1.0 - probability);
        const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - probability));
        cache.aux.resize(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j) cache.aux(i, j) = keep(*opt.rng) ? scale : Scalar(0);
        return x.cwiseProduct(cache.aux);
    }

    Matrix<Scalar> backward(const LayerCache<Scalar>& cache, const Matrix<Scalar>& dy,
                            std::span<Matrix<Scalar>>) const {
        return cache.training ? Matrix<Scalar>(dy.cwiseProduct(cache.aux)) : dy;
    }
};

}  // namespace dada

#endif  // DADA_LAYERS_HPP
