#include "repq/losses.hpp"

#include "repq/errors.hpp"
#include "repq/fusion.hpp"

namespace repq {

namespace {

void require_custom_bn(const RepBlock& b, const char* what) {
    if (!b.bn3 || !b.bn1) {
        throw ConfigError(std::string(what) + ": requires BN on both 3x3 and 1x1 branches");
    }
}

// shared evaluation: value plus optional gradient accumulation
double eval_eq_loss(const RepBlock& b, bool divide, double coeff, Tensor4* g_w3, Tensor4* g_w1) {
    const std::vector<double> t3 = fold_coefficients(*b.bn3);
    const std::vector<double> t1 = fold_coefficients(*b.bn1);
    const Tensor4& k3 = b.w3.weight;
    const Tensor4& k1 = b.w1.weight;
    const int c2 = k3.n(), cg = k3.c();

    double circle = 0.0;
    for (int oc = 0; oc < c2; ++oc) {
        for (int ic = 0; ic < cg; ++ic) {
            for (int kh = 0; kh < 3; ++kh) {
                for (int kw = 0; kw < 3; ++kw) {
                    if (kh == 1 && kw == 1) continue;
                    const double v = k3.at(oc, ic, kh, kw);
                    circle += v * v;
                    if (g_w3) g_w3->at(oc, ic, kh, kw) += static_cast<float>(coeff * 2.0 * v);
                }
            }
        }
    }

    double eq_term = 0.0;
    for (int oc = 0; oc < c2; ++oc) {
        const double denom = divide ? t3[oc] * t3[oc] + t1[oc] * t1[oc] : 1.0;
        for (int ic = 0; ic < cg; ++ic) {
            const double eq = t3[oc] * static_cast<double>(k3.at(oc, ic, 1, 1)) +
                              t1[oc] * static_cast<double>(k1.at(oc, ic, 0, 0));
            eq_term += eq * eq / denom;
            if (g_w3) g_w3->at(oc, ic, 1, 1) += static_cast<float>(coeff * 2.0 * eq * t3[oc] / denom);
            if (g_w1) g_w1->at(oc, ic, 0, 0) += static_cast<float>(coeff * 2.0 * eq * t1[oc] / denom);
        }
    }
    return eq_term + circle;
}

} // namespace

double custom_l2(const RepBlock& b) {
    require_custom_bn(b, "custom_l2");
    return eval_eq_loss(b, true, 0.0, nullptr, nullptr);
}

double custom_l2_no_denom(const RepBlock& b) {
    require_custom_bn(b, "custom_l2_no_denom");
    return eval_eq_loss(b, false, 0.0, nullptr, nullptr);
}

void custom_l2_grad(const RepBlock& b, double coeff, Tensor4& g_w3, Tensor4& g_w1) {
    require_custom_bn(b, "custom_l2");
    eval_eq_loss(b, true, coeff, &g_w3, &g_w1);
}

void custom_l2_no_denom_grad(const RepBlock& b, double coeff, Tensor4& g_w3, Tensor4& g_w1) {
    require_custom_bn(b, "custom_l2_no_denom");
    eval_eq_loss(b, false, coeff, &g_w3, &g_w1);
}

double plain_l2(const std::vector<const Tensor4*>& weights) {
    double acc = 0.0;
    for (const Tensor4* w : weights) {
        for (std::size_t i = 0; i < w->numel(); ++i) {
            const double v = w->data()[i];
            acc += v * v;
        }
    }
    return acc;
}

} // namespace repq
