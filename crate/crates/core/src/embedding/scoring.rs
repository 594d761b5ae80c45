use super::{EmbeddingModel, ScorerKind};
use crate::kg::Triple;

/// Scores are clamped to `[-SIGMOID_CLAMP, SIGMOID_CLAMP]` before the sigmoid,
/// which keeps probabilities strictly inside `(0, 1)`.
pub const SIGMOID_CLAMP: f64 = 30.0;

// Smoothing inside the complex modulus so the rotation distance stays
// differentiable at zero.
const MODULUS_EPS: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl EmbeddingModel {
    /// `Re(<h, r, conj(t)>)` for the bilinear scorer, `margin - Σ|h∘r - t|`
    /// for the rotation scorer.
    pub fn score(&self, t: &Triple) -> f64 {
        let h = t.head.index();
        let r = t.relation.index();
        let tl = t.tail.index();
        let (hr, hi) = (self.entity_re.row(h), self.entity_im.row(h));
        let (tr, ti) = (self.entity_re.row(tl), self.entity_im.row(tl));
        match self.scorer {
            ScorerKind::Complex => {
                let (rr, ri) = (self.relation_re.row(r), self.relation_im.row(r));
                let mut s = 0.0;
                for k in 0..self.dim {
                    s += hr[k] * rr[k] * tr[k] + hi[k] * rr[k] * ti[k] + hr[k] * ri[k] * ti[k]
                        - hi[k] * ri[k] * tr[k];
                }
                s
            }
            ScorerKind::Rotate => {
                let phase = self.relation_re.row(r);
                let mut dist = 0.0;
                for k in 0..self.dim {
                    let (s, c) = phase[k].sin_cos();
                    let a = hr[k] * c - hi[k] * s - tr[k];
                    let b = hr[k] * s + hi[k] * c - ti[k];
                    dist += (a * a + b * b + MODULUS_EPS).sqrt();
                }
                self.rotate_margin - dist
            }
        }
    }

    /// `σ(F)` with the score clamped.
    pub fn probability(&self, t: &Triple) -> f64 {
        sigmoid(self.score(t).clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP))
    }

    /// Adds `coeff * ∂F/∂θ` into the row gradients; each slice is `[re.., im..]`.
    pub(crate) fn accumulate_score_gradient(
        &self,
        t: &Triple,
        coeff: f64,
        head_grad: &mut [f64],
        relation_grad: &mut [f64],
        tail_grad: &mut [f64],
    ) {
        let d = self.dim;
        let h = t.head.index();
        let r = t.relation.index();
        let tl = t.tail.index();
        let (hr, hi) = (self.entity_re.row(h), self.entity_im.row(h));
        let (tr, ti) = (self.entity_re.row(tl), self.entity_im.row(tl));
        match self.scorer {
            ScorerKind::Complex => {
                let (rr, ri) = (self.relation_re.row(r), self.relation_im.row(r));
                for k in 0..d {
                    head_grad[k] += coeff * (rr[k] * tr[k] + ri[k] * ti[k]);
                    head_grad[d + k] += coeff * (rr[k] * ti[k] - ri[k] * tr[k]);
                    tail_grad[k] += coeff * (hr[k] * rr[k] - hi[k] * ri[k]);
                    tail_grad[d + k] += coeff * (hi[k] * rr[k] + hr[k] * ri[k]);
                    relation_grad[k] += coeff * (hr[k] * tr[k] + hi[k] * ti[k]);
                    relation_grad[d + k] += coeff * (hr[k] * ti[k] - hi[k] * tr[k]);
                }
            }
            ScorerKind::Rotate => {
                let phase = self.relation_re.row(r);
                for k in 0..d {
                    let (s, c) = phase[k].sin_cos();
                    let a = hr[k] * c - hi[k] * s - tr[k];
                    let b = hr[k] * s + hi[k] * c - ti[k];
                    let m = (a * a + b * b + MODULUS_EPS).sqrt();
                    // F = margin - m, so dF/da = -a/m and dF/db = -b/m.
                    let ga = -coeff * a / m;
                    let gb = -coeff * b / m;
                    head_grad[k] += ga * c + gb * s;
                    head_grad[d + k] += -ga * s + gb * c;
                    tail_grad[k] -= ga;
                    tail_grad[d + k] -= gb;
                    relation_grad[k] +=
                        ga * (-hr[k] * s - hi[k] * c) + gb * (hr[k] * c - hi[k] * s);
                }
            }
        }
    }
}
