#include "repq/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "repq/errors.hpp"

namespace repq {

NodeId Tape::push(Tensor4 value, std::function<void(Tape&, NodeId)> backprop) {
    nodes_.push_back(Node{std::move(value), std::move(backprop)});
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor4 value) { return push(std::move(value), nullptr); }

NodeId Tape::conv2d(NodeId xid, NodeId wid, std::optional<NodeId> bid, int stride, int padding, int groups) {
    ConvKernel k;
    k.weight = value(wid);
    if (bid) k.bias = std::vector<float>(value(*bid).vec());
    k.stride = stride;
    k.padding = padding;
    k.groups = groups;
    Tensor4 y = repq::conv2d(value(xid), k);

    auto back = [xid, wid, bid, stride, padding, groups](Tape& t, NodeId self) {
        const Tensor4& gy = t.grad(self);
        const Tensor4& x = t.value(xid);
        const Tensor4& w = t.value(wid);
        const int n = x.n(), c1 = x.c(), h = x.h(), wd = x.w();
        const int c2 = w.n(), ks = w.h();
        const int s = stride, p = padding;
        const int oh = gy.h(), ow = gy.w();
        const int cg1 = c1 / groups, cg2 = c2 / groups;

        Tensor4& gx = t.grad_mut(xid);
        Tensor4& gw = t.grad_mut(wid);

#pragma omp parallel for schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int oc = 0; oc < c2; ++oc) {
                const int g = oc / cg2;
                for (int icg = 0; icg < cg1; ++icg) {
                    const int ic = g * cg1 + icg;
                    for (int kh = 0; kh < ks; ++kh) {
                        for (int kw = 0; kw < ks; ++kw) {
                            const double wt = w.at(oc, icg, kh, kw);
                            if (wt == 0.0) continue;
                            const int oy0 = std::max(0, (p - kh + s - 1) / s);
                            const int oy1 = std::min(oh - 1, (h - 1 + p - kh) / s);
                            const int ox0 = std::max(0, (p - kw + s - 1) / s);
                            const int ox1 = std::min(ow - 1, (wd - 1 + p - kw) / s);
                            for (int oy = oy0; oy <= oy1; ++oy) {
                                const int iy = oy * s - p + kh;
                                const float* grow = gy.ptr(in, oc, oy, 0);
                                float* xrow = gx.ptr(in, ic, iy, 0);
                                for (int ox = ox0; ox <= ox1; ++ox) {
                                    xrow[ox * s - p + kw] += static_cast<float>(wt * grow[ox]);
                                }
                            }
                        }
                    }
                }
            }
        }

#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < c2; ++oc) {
            const int g = oc / cg2;
            for (int icg = 0; icg < cg1; ++icg) {
                const int ic = g * cg1 + icg;
                for (int kh = 0; kh < ks; ++kh) {
                    for (int kw = 0; kw < ks; ++kw) {
                        double acc = 0.0;
                        for (int in = 0; in < n; ++in) {
                            const int oy0 = std::max(0, (p - kh + s - 1) / s);
                            const int oy1 = std::min(oh - 1, (h - 1 + p - kh) / s);
                            const int ox0 = std::max(0, (p - kw + s - 1) / s);
                            const int ox1 = std::min(ow - 1, (wd - 1 + p - kw) / s);
                            for (int oy = oy0; oy <= oy1; ++oy) {
                                const int iy = oy * s - p + kh;
                                const float* grow = gy.ptr(in, oc, oy, 0);
                                const float* xrow = x.ptr(in, ic, iy, 0);
                                for (int ox = ox0; ox <= ox1; ++ox) {
                                    acc += static_cast<double>(grow[ox]) * xrow[ox * s - p + kw];
                                }
                            }
                        }
                        gw.at(oc, icg, kh, kw) += static_cast<float>(acc);
                    }
                }
            }
        }

        if (bid) {
            Tensor4& gb = t.grad_mut(*bid);
            for (int oc = 0; oc < c2; ++oc) {
                double acc = 0.0;
                for (int in = 0; in < n; ++in) {
                    const float* plane = gy.ptr(in, oc, 0, 0);
                    for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += plane[i];
                }
                gb.vec()[static_cast<std::size_t>(oc)] += static_cast<float>(acc);
            }
        }
    };
    return push(std::move(y), std::move(back));
}

NodeId Tape::batch_norm_train(NodeId xid, NodeId gid, NodeId bid, BNParams& stats, float momentum) {
    const Tensor4& x = value(xid);
    const int c = x.c();
    if (value(gid).n() != c || value(bid).n() != c) {
        throw ConfigError("batch_norm_train: gamma/beta length mismatch");
    }
    BNParams bn = stats;
    bn.gamma = value(gid).vec();
    bn.beta = value(bid).vec();
    Tensor4 y = repq::batch_norm_train(x, bn, momentum);
    // side-effect update of the live running stats
    stats.running_mean = bn.running_mean;
    stats.running_var = bn.running_var;

    // recompute batch statistics for the backward closure
    const int n = x.n(), h = x.h(), w = x.w();
    const std::size_t cnt = static_cast<std::size_t>(n) * h * w;
    std::vector<double> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
    for (int ic = 0; ic < c; ++ic) {
        double sum = 0.0, sumsq = 0.0;
        for (int in = 0; in < n; ++in) {
            const float* plane = x.ptr(in, ic, 0, 0);
            for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
                sum += plane[i];
                sumsq += plane[i] * static_cast<double>(plane[i]);
            }
        }
        const double m = sum / static_cast<double>(cnt);
        const double var = std::max(0.0, sumsq / static_cast<double>(cnt) - m * m);
        mean[static_cast<std::size_t>(ic)] = m;
        inv_std[static_cast<std::size_t>(ic)] = 1.0 / std::sqrt(static_cast<double>(stats.eps) + var);
    }

    auto back = [xid, gid, bid, mean, inv_std](Tape& t, NodeId self) {
        const Tensor4& gy = t.grad(self);
        const Tensor4& x = t.value(xid);
        const Tensor4& gamma = t.value(gid);
        const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
        const std::size_t cnt = static_cast<std::size_t>(n) * h * w;
        Tensor4& gx = t.grad_mut(xid);
        Tensor4& gg = t.grad_mut(gid);
        Tensor4& gb = t.grad_mut(bid);

#pragma omp parallel for schedule(static)
        for (int ic = 0; ic < c; ++ic) {
            const double m = mean[static_cast<std::size_t>(ic)];
            const double is = inv_std[static_cast<std::size_t>(ic)];
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int in = 0; in < n; ++in) {
                const float* gplane = gy.ptr(in, ic, 0, 0);
                const float* xplane = x.ptr(in, ic, 0, 0);
                for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
                    const double xh = (xplane[i] - m) * is;
                    sum_gy += gplane[i];
                    sum_gy_xhat += gplane[i] * xh;
                }
            }
            gb.vec()[static_cast<std::size_t>(ic)] += static_cast<float>(sum_gy);
            gg.vec()[static_cast<std::size_t>(ic)] += static_cast<float>(sum_gy_xhat);

            const double g = gamma.vec()[static_cast<std::size_t>(ic)];
            const double mean_gy = sum_gy / static_cast<double>(cnt);
            const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(cnt);
            for (int in = 0; in < n; ++in) {
                const float* gplane = gy.ptr(in, ic, 0, 0);
                const float* xplane = x.ptr(in, ic, 0, 0);
                float* dst = gx.ptr(in, ic, 0, 0);
                for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
                    const double xh = (xplane[i] - m) * is;
                    dst[i] += static_cast<float>(g * is * (gplane[i] - mean_gy - xh * mean_gy_xhat));
                }
            }
        }
    };
    return push(std::move(y), std::move(back));
}

NodeId Tape::relu(NodeId xid) {
    Tensor4 y = repq::relu(value(xid));
    auto back = [xid](Tape& t, NodeId self) {
        const Tensor4& gy = t.grad(self);
        const Tensor4& x = t.value(xid);
        Tensor4& gx = t.grad_mut(xid);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            if (x.data()[i] > 0.0f) gx.data()[i] += gy.data()[i];
        }
    };
    return push(std::move(y), std::move(back));
}

NodeId Tape::add(const std::vector<NodeId>& xs) {
    std::vector<const Tensor4*> ptrs;
    ptrs.reserve(xs.size());
    for (NodeId id : xs) ptrs.push_back(&value(id));
    Tensor4 y = repq::add(ptrs);
    auto back = [xs](Tape& t, NodeId self) {
        const Tensor4& gy = t.grad(self);
        for (NodeId id : xs) {
            Tensor4& gx = t.grad_mut(id);
            for (std::size_t i = 0; i < gy.numel(); ++i) gx.data()[i] += gy.data()[i];
        }
    };
    return push(std::move(y), std::move(back));
}

NodeId Tape::global_avg_pool(NodeId xid) {
    Tensor4 y = repq::global_avg_pool(value(xid));
    auto back = [xid](Tape& t, NodeId self) {
        const Tensor4& gy = t.grad(self);
        const Tensor4& x = t.value(xid);
        Tensor4& gx = t.grad_mut(xid);
        const float inv = 1.0f / static_cast<float>(x.h() * x.w());
        for (int in = 0; in < x.n(); ++in) {
            for (int ic = 0; ic < x.c(); ++ic) {
                const float g = gy.at(in, ic, 0, 0) * inv;
                float* plane = gx.ptr(in, ic, 0, 0);
                for (std::size_t i = 0; i < static_cast<std::size_t>(x.h()) * x.w(); ++i) plane[i] += g;
            }
        }
    };
    return push(std::move(y), std::move(back));
}

NodeId Tape::fake_quant_ste(NodeId xid, const QuantParams& qp) {
    const Tensor4& x = value(xid);
    Tensor4 y = repq::fake_quant(x, qp);
    QuantParams captured = qp;
    auto back = [xid, captured](Tape& t, NodeId self) {
        const Tensor4& gy = t.grad(self);
        const Tensor4& x = t.value(xid);
        Tensor4& gx = t.grad_mut(xid);
        const std::size_t block =
            captured.per_channel() ? x.numel() / static_cast<std::size_t>(x.n()) : x.numel();
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double s = captured.scale[i / block];
            const double q = std::round(static_cast<double>(x.data()[i]) / s + captured.zero_point);
            if (q >= captured.qmin && q <= captured.qmax) gx.data()[i] += gy.data()[i];
        }
    };
    return push(std::move(y), std::move(back));
}

NodeId Tape::sum(NodeId xid) {
    const Tensor4& x = value(xid);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    Tensor4 y(1, 1, 1, 1);
    y.data()[0] = static_cast<float>(acc);
    auto back = [xid](Tape& t, NodeId self) {
        const float g = t.grad(self).data()[0];
        Tensor4& gx = t.grad_mut(xid);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx.data()[i] += g;
    };
    return push(std::move(y), std::move(back));
}

NodeId Tape::cross_entropy(NodeId lid, const std::vector<int>& labels) {
    const Tensor4& z = value(lid);
    const int n = z.n(), k = z.c();
    if (static_cast<int>(labels.size()) != n) {
        throw ConfigError("cross_entropy: label count mismatch");
    }
    // softmax in double to keep tiny-batch runs stable
    std::vector<double> probs(static_cast<std::size_t>(n) * k);
    double loss = 0.0;
    for (int in = 0; in < n; ++in) {
        double zmax = -1e300;
        for (int ic = 0; ic < k; ++ic) zmax = std::max(zmax, static_cast<double>(z.at(in, ic, 0, 0)));
        double denom = 0.0;
        for (int ic = 0; ic < k; ++ic) denom += std::exp(static_cast<double>(z.at(in, ic, 0, 0)) - zmax);
        for (int ic = 0; ic < k; ++ic) {
            probs[static_cast<std::size_t>(in) * k + ic] =
                std::exp(static_cast<double>(z.at(in, ic, 0, 0)) - zmax) / denom;
        }
        loss -= std::log(std::max(1e-300, probs[static_cast<std::size_t>(in) * k + labels[static_cast<std::size_t>(in)]]));
    }
    loss /= static_cast<double>(n);
    Tensor4 y(1, 1, 1, 1);
    y.data()[0] = static_cast<float>(loss);
    auto back = [lid, labels, probs](Tape& t, NodeId self) {
        const float g = t.grad(self).data()[0];
        const Tensor4& z = t.value(lid);
        Tensor4& gz = t.grad_mut(lid);
        const int n = z.n(), k = z.c();
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < k; ++ic) {
                double p = probs[static_cast<std::size_t>(in) * k + ic];
                if (ic == labels[static_cast<std::size_t>(in)]) p -= 1.0;
                gz.at(in, ic, 0, 0) += static_cast<float>(g * p / static_cast<double>(n));
            }
        }
    };
    return push(std::move(y), std::move(back));
}

void Tape::backward(NodeId root) {
    const Tensor4& r = value(root);
    if (r.numel() != 1) throw ConfigError("backward: root must be scalar");
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const Node& nd : nodes_) {
        const Shape4& s = nd.value.shape();
        grads_.emplace_back(s.n, s.c, s.h, s.w);
    }
    grads_[static_cast<std::size_t>(root)].data()[0] = 1.0f;
    for (NodeId id = root; id >= 0; --id) {
        const Node& nd = nodes_[static_cast<std::size_t>(id)];
        if (nd.backprop) nd.backprop(*this, id);
    }
}

double grad_check(const std::function<double(const std::vector<Tensor4>&)>& f,
                  const std::function<std::vector<Tensor4>(const std::vector<Tensor4>&)>& analytic,
                  std::vector<Tensor4> theta, double h) {
    {
        const double base = f(theta);
        if (!std::isfinite(base)) throw NumericError("grad_check: f not finite at theta");
    }
    const std::vector<Tensor4> grads = analytic(theta);
    if (grads.size() != theta.size()) throw ConfigError("grad_check: gradient count mismatch");

    double worst = 0.0;
    for (std::size_t pi = 0; pi < theta.size(); ++pi) {
        if (!(grads[pi].shape() == theta[pi].shape())) {
            throw ConfigError("grad_check: gradient shape mismatch");
        }
        for (std::size_t i = 0; i < theta[pi].numel(); ++i) {
            const float saved = theta[pi].data()[i];
            theta[pi].data()[i] = static_cast<float>(saved + h);
            const double fp = f(theta);
            theta[pi].data()[i] = static_cast<float>(saved - h);
            const double fm = f(theta);
            theta[pi].data()[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: f not finite under perturbation");
            }
            const double central = (fp - fm) / (2.0 * h);
            const double a = grads[pi].data()[i];
            const double rel = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace repq
