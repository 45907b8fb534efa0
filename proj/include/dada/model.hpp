#ifndef DADA_MODEL_HPP
#define DADA_MODEL_HPP

#include <functional>
#include <string>
#include <vector>

#include "dada/architecture.hpp"
#include "dada/network.hpp"

namespace dada {

/// MINE statistic network T(x, z) = head(leaky(fc1_x(x) + fc1_y(z))).
template <typename Scalar>
class StatisticNetwork {
public:
    struct Trace {
        LayerCache<Scalar> x_branch, z_branch, activation, head;
    };

    StatisticNetwork() : fc1_x_(1, 1), fc1_y_(1, 1), head_(1, 1) {}
    explicit StatisticNetwork(const std::vector<LayerSpec>& spec)
        : fc1_x_(spec.at(0).in_width(), spec.at(0).out), fc1_y_(spec.at(1).in_width(), spec.at(1).out),
          activation_{spec.at(2).value}, head_(spec.at(3).in_width(), spec.at(3).out) {
        if (fc1_x_.out_width() != fc1_y_.out_width() || head_.in_width() != fc1_x_.out_width() ||
            head_.out_width() != 1)
            throw ShapeError("statistic network: inconsistent branch widths");
    }

    int x_width() const { return fc1_x_.in_width(); }
    int z_width() const { return fc1_y_.in_width(); }
    int hidden_width() const { return fc1_x_.out_width(); }
    double slope() const { return activation_.slope; }

    const Linear<Scalar>& fc1_x() const { return fc1_x_; }
    const Linear<Scalar>& fc1_y() const { return fc1_y_; }
    const Linear<Scalar>& head() const { return head_; }

    void initialize(const InitOptions& init, Rng& rng) {
        fc1_x_.initialize(init, rng);
        fc1_y_.initialize(init, rng);
        head_.initialize(init, rng);
    }

    std::vector<ParamRef<Scalar>> parameters() {
        return {{"statistic.fc1_x.weight", &fc1_x_.weight}, {"statistic.fc1_x.bias", &fc1_x_.bias},
                {"statistic.fc1_y.weight", &fc1_y_.weight}, {"statistic.fc1_y.bias", &fc1_y_.bias},
                {"statistic.head.weight", &head_.weight},   {"statistic.head.bias", &head_.bias}};
    }
    std::vector<ParamRef<Scalar>> buffers() { return {}; }

    Gradients<Scalar> zero_gradients() const {
        Gradients<Scalar> g;
        for (const Linear<Scalar>* l : {&fc1_x_, &fc1_y_, &head_}) {
            g.push_back(Matrix<Scalar>::Zero(l->weight.rows(), l->weight.cols()));
            g.push_back(Matrix<Scalar>::Zero(l->bias.rows(), l->bias.cols()));
        }
        return g;
    }

    /// Batched statistic: one output per row pair, returned as an n x 1 column.
    Matrix<Scalar> forward(const Matrix<Scalar>& x, const Matrix<Scalar>& z, Trace* trace = nullptr) const {
        if (x.cols() != x_width() || z.cols() != z_width())
            throw ShapeError("statistic network expects widths (" + std::to_string(x_width()) + ", " +
                             std::to_string(z_width()) + "), got (" + std::to_string(x.cols()) + ", " +
                             std::to_string(z.cols()) + ")");
        if (x.rows() != z.rows()) throw ShapeError("statistic network: x and z batch sizes differ");
        Trace scratch;
        Trace& t = trace != nullptr ? *trace : scratch;
        const ForwardOptions opt;
        Matrix<Scalar> pre = fc1_x_.forward(x, opt, t.x_branch) + fc1_y_.forward(z, opt, t.z_branch);
        Matrix<Scalar> act = activation_.forward(pre, opt, t.activation);
        return head_.forward(act, opt, t.head);
    }

    /// Accumulates parameter gradients; returns (dL/dx, dL/dz).
    std::pair<Matrix<Scalar>, Matrix<Scalar>> backward(const Trace& t, const Matrix<Scalar>& grad_out,
                                                       Gradients<Scalar>& grads) const {
        std::span<Matrix<Scalar>> all(grads);
        Matrix<Scalar> d_act = head_.backward(t.head, grad_out, all.subspan(4, 2));
        Matrix<Scalar> d_pre = activation_.backward(t.activation, d_act, {});
        Matrix<Scalar> dx = fc1_x_.backward(t.x_branch, d_pre, all.subspan(0, 2));
        Matrix<Scalar> dz = fc1_y_.backward(t.z_branch, d_pre, all.subspan(2, 2));
        return {std::move(dx), std::move(dz)};
    }

private:
    Linear<Scalar> fc1_x_;
    Linear<Scalar> fc1_y_;
    LeakyReLU<Scalar> activation_;
    Linear<Scalar> head_;
};

/// The four feature matrices of one batch, one example per row.
template <typename Scalar>
struct FeatureBundle {
    Matrix<Scalar> f_g;
    Matrix<Scalar> f_di;
    Matrix<Scalar> f_ds;
    Matrix<Scalar> f_ci;
};

/// Parameter containers for every component of the model.
template <typename Scalar>
struct ComponentSet {
    ResolvedArch arch;
    Network<Scalar> generator;
    Network<Scalar> di_head;
    Network<Scalar> ds_head;
    Network<Scalar> ci_head;
    Network<Scalar> classifier;
    Network<Scalar> domain_identifier;
    Network<Scalar> reconstructor;
    StatisticNetwork<Scalar> statistic;

    /// Named access used by checkpoints, optimizers and snapshot tests.
    std::vector<std::reference_wrapper<Network<Scalar>>> networks() {
        return {generator, di_head, ds_head, ci_head, classifier, domain_identifier, reconstructor};
    }

    std::vector<ParamRef<Scalar>> parameters() {
        std::vector<ParamRef<Scalar>> out;
        for (Network<Scalar>& n : networks())
            for (auto& p : n.parameters()) out.push_back(p);
        for (auto& p : statistic.parameters()) out.push_back(p);
        return out;
    }

    std::vector<ParamRef<Scalar>> buffers() {
        std::vector<ParamRef<Scalar>> out;
        for (Network<Scalar>& n : networks())
            for (auto& p : n.buffers()) out.push_back(p);
        return out;
    }
};

template <typename Scalar>
ComponentSet<Scalar> build_components(const ArchConfig& config, Rng& rng) {
    ComponentSet<Scalar> cs;
    cs.arch = resolve_architecture(config);
    const auto& a = cs.arch;
    cs.generator = make_network<Scalar>("generator", generator_spec(a));
    cs.di_head = make_network<Scalar>("disentangler_di", disentangler_spec(a));
    cs.ds_head = make_network<Scalar>("disentangler_ds", disentangler_spec(a));
    cs.ci_head = make_network<Scalar>("disentangler_ci", disentangler_spec(a));
    cs.classifier = make_network<Scalar>("class_identifier", class_identifier_spec(a));
    cs.domain_identifier = make_network<Scalar>("domain_identifier", domain_identifier_spec(a));
    cs.reconstructor = make_network<Scalar>("reconstructor", reconstructor_spec(a));
    cs.statistic = StatisticNetwork<Scalar>(statistic_spec(a));

    const InitOptions& init = a.config.init;
    for (Network<Scalar>& n : cs.networks()) n.initialize(init, rng);
    cs.statistic.initialize(init, rng);
    return cs;
}

/// Traces of one forward_bundle call, needed to backpropagate into G and
/// the disentangler heads.
template <typename Scalar>
struct BundleTrace {
    Trace<Scalar> generator, di, ds, ci;
};

/// Per-component forward options, so that held-fixed components can run
/// without touching their batch-norm statistics.
struct BundleOptions {
    ForwardOptions generator;
    ForwardOptions heads;

    static BundleOptions uniform(const ForwardOptions& o) { return {o, o}; }
};

template <typename Scalar>
FeatureBundle<Scalar> forward_bundle(ComponentSet<Scalar>& cs, const Matrix<Scalar>& images,
                                     const BundleOptions& opt, BundleTrace<Scalar>* trace = nullptr) {
    if (images.cols() != cs.arch.config.input.size())
        throw ShapeError("forward_bundle: images have width " + std::to_string(images.cols()) + ", expected " +
                         std::to_string(cs.arch.config.input.size()));
    BundleTrace<Scalar> scratch;
    BundleTrace<Scalar>& t = trace != nullptr ? *trace : scratch;
    FeatureBundle<Scalar> b;
    b.f_g = cs.generator.forward(images, opt.generator, &t.generator);
    b.f_di = cs.di_head.forward(b.f_g, opt.heads, &t.di);
    b.f_ds = cs.ds_head.forward(b.f_g, opt.heads, &t.ds);
    b.f_ci = cs.ci_head.forward(b.f_g, opt.heads, &t.ci);
    return b;
}

template <typename Scalar>
FeatureBundle<Scalar> forward_bundle(ComponentSet<Scalar>& cs, const Matrix<Scalar>& images,
                                     const ForwardOptions& opt) {
    return forward_bundle(cs, images, BundleOptions::uniform(opt));
}

/// T(x, z) for a single pair of feature vectors.
template <typename Scalar>
Scalar mine_statistic(const StatisticNetwork<Scalar>& t, const RowVector<Scalar>& x, const RowVector<Scalar>& z) {
    if (x.size() != t.x_width() || z.size() != t.z_width())
        throw ShapeError("mine_statistic: feature width mismatch");
    return t.forward(Matrix<Scalar>(x), Matrix<Scalar>(z))(0, 0);
}

/// Horizontal concatenation [a b], the reconstructor's input layout.
template <typename Scalar>
Matrix<Scalar> concat_features(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    if (a.rows() != b.rows()) throw ShapeError("concat_features: row count mismatch");
    Matrix<Scalar> out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

}  // namespace dada

#endif  // DADA_MODEL_HPP
