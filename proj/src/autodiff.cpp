#include "ofcre/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ofcre::ad {

namespace {
void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

Vec Graph::alloc(int dim) {
    Node n;
    n.off = vals_.size();
    n.dim = dim;
    vals_.resize(vals_.size() + static_cast<size_t>(dim), 0.0);
    grads_.resize(grads_.size() + static_cast<size_t>(dim), 0.0);
    nodes_.push_back(std::move(n));
    return Vec{static_cast<int>(nodes_.size()) - 1, dim};
}

Vec Graph::input(std::span<const double> x) {
    Vec v = alloc(static_cast<int>(x.size()));
    std::copy(x.begin(), x.end(), val(v.id));
    return v;
}

Vec Graph::constant(double c) {
    Vec v = alloc(1);
    val(v.id)[0] = c;
    return v;
}

Vec Graph::zeros(int dim) { return alloc(dim); }

Vec Graph::param_row(Param& p, int row) {
    require(row >= 0 && row < p.value.rows, "param_row: row out of range");
    Vec v = alloc(p.value.cols);
    auto src = p.value.row(row);
    std::copy(src.begin(), src.end(), val(v.id));
    Param* pp = &p;
    nodes_.back().back = [id = v.id, pp, row](Graph& g) {
        const double* gv = g.grd(id);
        auto dst = pp->grad.row(row);
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += gv[i];
    };
    return v;
}

Vec Graph::param_bias(Param& p) {
    Vec v = alloc(p.value.size());
    std::copy(p.value.v.begin(), p.value.v.end(), val(v.id));
    Param* pp = &p;
    nodes_.back().back = [id = v.id, pp](Graph& g) {
        const double* gv = g.grd(id);
        for (size_t i = 0; i < pp->grad.v.size(); ++i) pp->grad.v[i] += gv[i];
    };
    return v;
}

Vec Graph::add(Vec a, Vec b) {
    require(a.dim == b.dim, "add: dimension mismatch");
    Vec v = alloc(a.dim);
    const double* av = val(a.id);
    const double* bv = val(b.id);
    double* ov = val(v.id);
    for (int i = 0; i < a.dim; ++i) ov[i] = av[i] + bv[i];
    nodes_.back().back = [id = v.id, a, b](Graph& g) {
        const double* gv = g.grd(id);
        double* ga = g.grd(a.id);
        double* gb = g.grd(b.id);
        for (int i = 0; i < a.dim; ++i) {
            ga[i] += gv[i];
            gb[i] += gv[i];
        }
    };
    return v;
}

Vec Graph::sub(Vec a, Vec b) {
    require(a.dim == b.dim, "sub: dimension mismatch");
    Vec v = alloc(a.dim);
    const double* av = val(a.id);
    const double* bv = val(b.id);
    double* ov = val(v.id);
    for (int i = 0; i < a.dim; ++i) ov[i] = av[i] - bv[i];
    nodes_.back().back = [id = v.id, a, b](Graph& g) {
        const double* gv = g.grd(id);
        double* ga = g.grd(a.id);
        double* gb = g.grd(b.id);
        for (int i = 0; i < a.dim; ++i) {
            ga[i] += gv[i];
            gb[i] -= gv[i];
        }
    };
    return v;
}

Vec Graph::hadamard(Vec a, Vec b) {
    require(a.dim == b.dim, "hadamard: dimension mismatch");
    Vec v = alloc(a.dim);
    const double* av = val(a.id);
    const double* bv = val(b.id);
    double* ov = val(v.id);
    for (int i = 0; i < a.dim; ++i) ov[i] = av[i] * bv[i];
    nodes_.back().back = [id = v.id, a, b](Graph& g) {
        const double* gv = g.grd(id);
        const double* av2 = g.val(a.id);
        const double* bv2 = g.val(b.id);
        double* ga = g.grd(a.id);
        double* gb = g.grd(b.id);
        for (int i = 0; i < a.dim; ++i) {
            ga[i] += gv[i] * bv2[i];
            gb[i] += gv[i] * av2[i];
        }
    };
    return v;
}

Vec Graph::scale(Vec a, double c) {
    Vec v = alloc(a.dim);
    const double* av = val(a.id);
    double* ov = val(v.id);
    for (int i = 0; i < a.dim; ++i) ov[i] = av[i] * c;
    nodes_.back().back = [id = v.id, a, c](Graph& g) {
        const double* gv = g.grd(id);
        double* ga = g.grd(a.id);
        for (int i = 0; i < a.dim; ++i) ga[i] += gv[i] * c;
    };
    return v;
}

Vec Graph::offset(Vec a, std::span<const double> c) {
    require(static_cast<size_t>(a.dim) == c.size(), "offset: dimension mismatch");
    Vec v = alloc(a.dim);
    const double* av = val(a.id);
    double* ov = val(v.id);
    for (int i = 0; i < a.dim; ++i) ov[i] = av[i] + c[static_cast<size_t>(i)];
    nodes_.back().back = [id = v.id, a](Graph& g) {
        const double* gv = g.grd(id);
        double* ga = g.grd(a.id);
        for (int i = 0; i < a.dim; ++i) ga[i] += gv[i];
    };
    return v;
}

Vec Graph::matvec(Param& w, Vec x) {
    require(w.value.cols == x.dim, "matvec: dimension mismatch");
    Vec v = alloc(w.value.rows);
    const double* xv = val(x.id);
    double* ov = val(v.id);
    for (int r = 0; r < w.value.rows; ++r) {
        double s = 0.0;
        auto wr = w.value.row(r);
        for (int c = 0; c < w.value.cols; ++c) s += wr[static_cast<size_t>(c)] * xv[c];
        ov[r] = s;
    }
    Param* pw = &w;
    nodes_.back().back = [id = v.id, pw, x](Graph& g) {
        const double* gv = g.grd(id);
        const double* xv2 = g.val(x.id);
        double* gx = g.grd(x.id);
        for (int r = 0; r < pw->value.rows; ++r) {
            const double gr = gv[r];
            if (gr == 0.0) continue;
            auto wr = pw->value.row(r);
            auto dwr = pw->grad.row(r);
            for (int c = 0; c < pw->value.cols; ++c) {
                dwr[static_cast<size_t>(c)] += gr * xv2[c];
                gx[c] += gr * wr[static_cast<size_t>(c)];
            }
        }
    };
    return v;
}

Vec Graph::tanh_(Vec a) {
    Vec v = alloc(a.dim);
    const double* av = val(a.id);
    double* ov = val(v.id);
    for (int i = 0; i < a.dim; ++i) ov[i] = std::tanh(av[i]);
    nodes_.back().back = [id = v.id, a](Graph& g) {
        const double* gv = g.grd(id);
        const double* ov2 = g.val(id);
        double* ga = g.grd(a.id);
        for (int i = 0; i < a.dim; ++i) ga[i] += gv[i] * (1.0 - ov2[i] * ov2[i]);
    };
    return v;
}

Vec Graph::mean(std::span<const Vec> xs) {
    require(!xs.empty(), "mean: empty input");
    const int dim = xs[0].dim;
    for (const Vec& x : xs) require(x.dim == dim, "mean: dimension mismatch");
    Vec v = alloc(dim);
    double* ov = val(v.id);
    for (const Vec& x : xs) {
        const double* xv = val(x.id);
        for (int i = 0; i < dim; ++i) ov[i] += xv[i];
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (int i = 0; i < dim; ++i) ov[i] *= inv;
    std::vector<Vec> deps(xs.begin(), xs.end());
    nodes_.back().back = [id = v.id, deps, inv, dim](Graph& g) {
        const double* gv = g.grd(id);
        for (const Vec& x : deps) {
            double* gx = g.grd(x.id);
            for (int i = 0; i < dim; ++i) gx[i] += gv[i] * inv;
        }
    };
    return v;
}

Vec Graph::dot(Vec a, Vec b) {
    require(a.dim == b.dim, "dot: dimension mismatch");
    Vec v = alloc(1);
    const double* av = val(a.id);
    const double* bv = val(b.id);
    double s = 0.0;
    for (int i = 0; i < a.dim; ++i) s += av[i] * bv[i];
    val(v.id)[0] = s;
    nodes_.back().back = [id = v.id, a, b](Graph& g) {
        const double gv = g.grd(id)[0];
        const double* av2 = g.val(a.id);
        const double* bv2 = g.val(b.id);
        double* ga = g.grd(a.id);
        double* gb = g.grd(b.id);
        for (int i = 0; i < a.dim; ++i) {
            ga[i] += gv * bv2[i];
            gb[i] += gv * av2[i];
        }
    };
    return v;
}

Vec Graph::sum(Vec a) {
    Vec v = alloc(1);
    const double* av = val(a.id);
    double s = 0.0;
    for (int i = 0; i < a.dim; ++i) s += av[i];
    val(v.id)[0] = s;
    nodes_.back().back = [id = v.id, a](Graph& g) {
        const double gv = g.grd(id)[0];
        double* ga = g.grd(a.id);
        for (int i = 0; i < a.dim; ++i) ga[i] += gv;
    };
    return v;
}

Vec Graph::euclidean(Vec a, Vec b) {
    require(a.dim == b.dim, "euclidean: dimension mismatch");
    Vec v = alloc(1);
    const double* av = val(a.id);
    const double* bv = val(b.id);
    double s = 0.0;
    for (int i = 0; i < a.dim; ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    const double dist = std::sqrt(s);
    val(v.id)[0] = dist;
    nodes_.back().back = [id = v.id, a, b](Graph& g) {
        const double dist2 = g.val(id)[0];
        if (dist2 < 1e-12) return;  // subgradient at coincident points
        const double gv = g.grd(id)[0] / dist2;
        const double* av2 = g.val(a.id);
        const double* bv2 = g.val(b.id);
        double* ga = g.grd(a.id);
        double* gb = g.grd(b.id);
        for (int i = 0; i < a.dim; ++i) {
            const double d = (av2[i] - bv2[i]) * gv;
            ga[i] += d;
            gb[i] -= d;
        }
    };
    return v;
}

Vec Graph::softplus(Vec x) {
    require(x.dim == 1, "softplus: scalar expected");
    Vec v = alloc(1);
    const double xv = val(x.id)[0];
    val(v.id)[0] = std::max(xv, 0.0) + std::log1p(std::exp(-std::abs(xv)));
    nodes_.back().back = [id = v.id, x](Graph& g) {
        const double xv2 = g.val(x.id)[0];
        const double sig = 1.0 / (1.0 + std::exp(-xv2));
        g.grd(x.id)[0] += g.grd(id)[0] * sig;
    };
    return v;
}

Vec Graph::logsumexp(std::span<const Vec> xs) {
    require(!xs.empty(), "logsumexp: empty input");
    for (const Vec& x : xs) require(x.dim == 1, "logsumexp: scalars expected");
    Vec v = alloc(1);
    double m = -std::numeric_limits<double>::infinity();
    for (const Vec& x : xs) m = std::max(m, val(x.id)[0]);
    double s = 0.0;
    for (const Vec& x : xs) s += std::exp(val(x.id)[0] - m);
    val(v.id)[0] = m + std::log(s);
    std::vector<Vec> deps(xs.begin(), xs.end());
    nodes_.back().back = [id = v.id, deps](Graph& g) {
        const double gv = g.grd(id)[0];
        const double out = g.val(id)[0];
        for (const Vec& x : deps) g.grd(x.id)[0] += gv * std::exp(g.val(x.id)[0] - out);
    };
    return v;
}

Vec Graph::max_of(std::span<const Vec> xs) {
    require(!xs.empty(), "max_of: empty input");
    Vec v = alloc(1);
    int best = xs[0].id;
    double bv = val(xs[0].id)[0];
    for (const Vec& x : xs) {
        require(x.dim == 1, "max_of: scalars expected");
        if (val(x.id)[0] > bv) {
            bv = val(x.id)[0];
            best = x.id;
        }
    }
    val(v.id)[0] = bv;
    nodes_.back().back = [id = v.id, best](Graph& g) { g.grd(best)[0] += g.grd(id)[0]; };
    return v;
}

Vec Graph::min_of(std::span<const Vec> xs) {
    require(!xs.empty(), "min_of: empty input");
    Vec v = alloc(1);
    int best = xs[0].id;
    double bv = val(xs[0].id)[0];
    for (const Vec& x : xs) {
        require(x.dim == 1, "min_of: scalars expected");
        if (val(x.id)[0] < bv) {
            bv = val(x.id)[0];
            best = x.id;
        }
    }
    val(v.id)[0] = bv;
    nodes_.back().back = [id = v.id, best](Graph& g) { g.grd(best)[0] += g.grd(id)[0]; };
    return v;
}

Vec Graph::weighted_sum(std::span<const Vec> xs, std::span<const double> ws) {
    require(xs.size() == ws.size(), "weighted_sum: size mismatch");
    Vec v = alloc(1);
    double s = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        require(xs[i].dim == 1, "weighted_sum: scalars expected");
        s += ws[i] * val(xs[i].id)[0];
    }
    val(v.id)[0] = s;
    std::vector<Vec> deps(xs.begin(), xs.end());
    std::vector<double> w(ws.begin(), ws.end());
    nodes_.back().back = [id = v.id, deps, w](Graph& g) {
        const double gv = g.grd(id)[0];
        for (size_t i = 0; i < deps.size(); ++i) g.grd(deps[i].id)[0] += gv * w[i];
    };
    return v;
}

double Graph::value0(Vec v) const {
    require(v.valid() && v.dim == 1, "value0: scalar expected");
    return val(v.id)[0];
}

std::span<const double> Graph::value(Vec v) const {
    require(v.valid(), "value: invalid node");
    return {val(v.id), static_cast<size_t>(v.dim)};
}

void Graph::backward(Vec loss) {
    require(loss.valid() && loss.dim == 1, "backward: scalar loss expected");
    std::fill(grads_.begin(), grads_.end(), 0.0);
    grd(loss.id)[0] = 1.0;
    for (size_t i = static_cast<size_t>(loss.id) + 1; i-- > 0;) {
        if (nodes_[i].back) nodes_[i].back(*this);
    }
}

void Graph::clear() {
    nodes_.clear();
    vals_.clear();
    grads_.clear();
}

}  // namespace ofcre::ad
