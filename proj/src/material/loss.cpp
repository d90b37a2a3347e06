#include <cmath>
#include <string>

#include "physhdr/error.hpp"
#include "physhdr/material.hpp"

namespace physhdr::material {

using nn::Tensor;
using nn::Var;

namespace {

void check_map(const Tensor& t, int channels, const char* what) {
    if (t.rank() != 4 || t.dim(1) != channels)
        throw ShapeError(std::string("material maps: ") + what + " has shape " + nn::to_string(t.shape()));
    for (double v : t.values()) {
        if (!(v >= 0.0 && v <= 1.0))
            throw RangeError(std::string("material maps: ") + what + " value " + std::to_string(v) + " outside [0, 1]");
    }
}

Var tone(const Var& x, const ToneCurve& curve) {
    if (curve.kind == ToneCurve::Kind::MuLaw) return nn::mu_law(x, curve.mu);
    return nn::div(x, nn::add_scalar(x, 1.0));
}

void check_pair(const MaterialMaps& gt, const MaterialMaps& pred) {
    gt.validate();
    pred.validate();
    if (gt.albedo.shape() != pred.albedo.shape())
        throw ShapeError("material_loss: map dims differ (" + nn::to_string(gt.albedo.shape()) + " vs " +
                         nn::to_string(pred.albedo.shape()) + ")");
}

void check_term(double v, const char* what) {
    if (!std::isfinite(v) || v < 0.0)
        throw NumericError(std::string("total_loss: ") + what + " = " + std::to_string(v));
}

} // namespace

void MaterialMaps::validate() const {
    check_map(albedo, 3, "albedo");
    check_map(roughness, 1, "roughness");
    check_map(metallic, 1, "metallic");
    const auto& s = albedo.shape();
    for (const Tensor* t : {&roughness, &metallic}) {
        if (t->dim(0) != s[0] || t->dim(2) != s[2] || t->dim(3) != s[3])
            throw ShapeError("material maps: spatial dims differ between maps");
    }
}

void LossWeights::validate() const {
    if (!std::isfinite(lambda_mat) || lambda_mat < 0.0)
        throw ConfigError("material.lambda must be a finite value >= 0, got " + std::to_string(lambda_mat));
}

Var material_loss(const MaterialVars& gt, const MaterialVars& pred, const ToneCurve& curve) {
    check_pair(gt.values(), pred.values());
    // The mean over [N, ...] of one map equals the batch average of per-sample means.
    Var loss;
    for (auto member : {&MaterialVars::albedo, &MaterialVars::roughness, &MaterialVars::metallic}) {
        const Var term = nn::mean(nn::abs(nn::sub(tone(gt.*member, curve), tone(pred.*member, curve))));
        loss = loss.defined() ? nn::add(loss, term) : term;
    }
    return loss;
}

double material_loss(const MaterialMaps& gt, const MaterialMaps& pred, const ToneCurve& curve) {
    nn::NoGradGuard no_grad;
    MaterialVars g{Var(gt.albedo), Var(gt.roughness), Var(gt.metallic)};
    MaterialVars p{Var(pred.albedo), Var(pred.roughness), Var(pred.metallic)};
    return material_loss(g, p, curve).item();
}

double total_loss(double l_d, double l_mat, const LossWeights& w) {
    w.validate();
    check_term(l_d, "L_d");
    check_term(l_mat, "L_mat");
    return l_d + w.lambda_mat * l_mat;
}

Var total_loss(const Var& l_d, const Var& l_mat, const LossWeights& w) {
    w.validate();
    check_term(l_d.item(), "L_d");
    check_term(l_mat.item(), "L_mat");
    if (w.lambda_mat == 0.0) return l_d;
    return nn::add(l_d, nn::scale(l_mat, w.lambda_mat));
}

} // namespace physhdr::material
