//! Loss terms of the explainer objective, in tape form where they carry
//! gradient and in plain-value form for checking.

use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Layout;
use crate::error::{Error, Result};
use crate::tensor::tape::bce_logit;
use crate::tensor::{Tape, Var};

/// Guards the reciprocal terms of the node-count regularizer.
pub const SUBG_EPS: f64 = 1e-8;
/// Added to the contrastive denominator.
pub const CON_EPS: f64 = 1e-8;
pub const CON_TEMPERATURE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub nodevae: f64,
    pub recon: f64,
    pub con: f64,
    pub lar: f64,
    /// Inner multipliers of the reconstruction bracket, used by ablations.
    pub mi: f64,
    pub rr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            nodevae: 1.0,
            recon: 2.0,
            con: 0.5,
            lar: 1.0,
            mi: 1.0,
            rr: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("weights.nodevae", self.nodevae),
            ("weights.recon", self.recon),
            ("weights.con", self.con),
            ("weights.lar", self.lar),
            ("weights.mi", self.mi),
            ("weights.rr", self.rr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}

/// Every scalar of the objective plus the weights that combine them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nodevae: f64,
    pub mi: f64,
    pub rr: f64,
    pub con: f64,
    pub lar: f64,
    pub causal: f64,
    pub hinge: f64,
    pub subg_node: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("nodevae", self.nodevae),
            ("mi", self.mi),
            ("rr", self.rr),
            ("con", self.con),
            ("lar", self.lar),
            ("causal", self.causal),
            ("hinge", self.hinge),
            ("subg_node", self.subg_node),
        ]
    }
}

/// `w.nodevae·L_NodeVAE + w.recon·(w.mi·L_MI + w.rr·L_RR) + w.con·L_CON
/// + w.lar·LAR + R_causal + R_hinge + R_subg_node`.
pub fn final_loss(parts: &LossBreakdown, w: &LossWeights) -> Result<f64> {
    for (name, v) in parts.named() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss term `{name}` is {v}")));
        }
    }
    Ok(w.nodevae * parts.nodevae
        + w.recon * (w.mi * parts.mi + w.rr * parts.rr)
        + w.con * parts.con
        + w.lar * parts.lar
        + parts.causal
        + parts.hinge
        + parts.subg_node)
}

/// Mean over samples of `−log p` when the subgraph keeps the label and
/// `+log p` when it does not.
pub fn mi_loss_values(matched: &[bool], log_prob: &[f64]) -> f64 {
    if matched.is_empty() {
        return 0.0;
    }
    let s: f64 = matched
        .iter()
        .zip(log_prob)
        .map(|(&m, &lp)| if m { -lp } else { lp })
        .sum();
    s / matched.len() as f64
}

pub fn mi_loss(tape: &mut Tape, log_prob: Var, matched: &[bool]) -> Var {
    let n = matched.len();
    if n == 0 {
        return tape.constant_scalar(0.0);
    }
    let sign = tape.constant(Array2::from_shape_fn((n, 1), |(i, _)| if matched[i] { -1.0 } else { 1.0 }));
    let signed = tape.mul(log_prob, sign);
    tape.mean(signed)
}

/// `exp(log p / elements)`; an empty subgraph counts as probability 1.
pub fn geometric_mean_prob(log_prob: f64, elements: usize) -> f64 {
    if elements == 0 {
        1.0
    } else {
        (log_prob / elements as f64).exp()
    }
}

pub fn geometric_mean_probs(tape: &mut Tape, log_prob: Var, elements: &[usize]) -> Var {
    let inv = tape.constant(Array2::from_shape_fn((elements.len(), 1), |(i, _)| {
        if elements[i] == 0 {
            0.0
        } else {
            1.0 / elements[i] as f64
        }
    }));
    let scaled = tape.mul(log_prob, inv);
    tape.exp(scaled)
}

/// Mean of `L_diff · Prob(G_c)` with the geometric-mean probability.
pub fn rr_loss_values(l_diff: &[f64], gm_prob: &[f64]) -> f64 {
    if l_diff.is_empty() {
        return 0.0;
    }
    l_diff.iter().zip(gm_prob).map(|(d, p)| d * p).sum::<f64>() / l_diff.len() as f64
}

pub fn rr_loss(tape: &mut Tape, gm_prob: Var, l_diff: &[f64]) -> Var {
    if l_diff.is_empty() {
        return tape.constant_scalar(0.0);
    }
    let d = tape.constant(Array2::from_shape_fn((l_diff.len(), 1), |(i, _)| l_diff[i]));
    let prod = tape.mul(gm_prob, d);
    tape.mean(prod)
}

/// Per graph: mean node BCE plus mean edge BCE; averaged over graphs.
pub fn causal_reg_values(node_logits: &[Vec<f64>], node_labels: &[Vec<bool>], edge_logits: &[Vec<f64>], edge_labels: &[Vec<bool>]) -> f64 {
    let mean_bce = |z: &[f64], y: &[bool]| {
        if z.is_empty() {
            0.0
        } else {
            z.iter().zip(y).map(|(&z, &y)| bce_logit(z, f64::from(u8::from(y)))).sum::<f64>() / z.len() as f64
        }
    };
    let b = node_logits.len();
    if b == 0 {
        return 0.0;
    }
    (0..b)
        .map(|i| mean_bce(&node_logits[i], &node_labels[i]) + mean_bce(&edge_logits[i], &edge_labels[i]))
        .sum::<f64>()
        / b as f64
}

pub fn causal_reg(
    tape: &mut Tape,
    node_logits: Var,
    edge_logits: Var,
    layout: &Layout,
    node_labels: &[Vec<bool>],
    edge_labels: &[Vec<bool>],
) -> Result<Var> {
    let b = node_labels.len();
    if b == 0 {
        return Ok(tape.constant_scalar(0.0));
    }
    let mut terms = Vec::with_capacity(2 * b);
    for g in 0..b {
        for (logits, range, labels) in [
            (node_logits, layout.nodes(g), &node_labels[g]),
            (edge_logits, layout.edges(g), &edge_labels[g]),
        ] {
            if labels.len() != range.len() {
                return Err(Error::structural("causal labels do not match the batch layout"));
            }
            if labels.is_empty() {
                continue;
            }
            let rows: Rc<[usize]> = range.collect();
            let part = tape.gather_rows(logits, rows);
            let y: Rc<[f64]> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
            terms.push(tape.bce_with_logits(part, y));
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant_scalar(0.0));
    }
    let stacked = tape.concat_rows(&terms);
    let total = tape.sum(stacked);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Mean of `L(G_s)` over instances with `L(G_s) > L(G_c)`; 0 when none.
pub fn hinge_reg(l_s: &[f64], l_c: &[f64]) -> f64 {
    let violating: Vec<f64> = l_s.iter().zip(l_c).filter(|(s, c)| s > c).map(|(&s, _)| s).collect();
    if violating.is_empty() {
        0.0
    } else {
        violating.iter().sum::<f64>() / violating.len() as f64
    }
}

/// One instance of the piecewise node-count regularizer.
pub fn subg_node_instance(l_diff: f64, n_sub: usize, n_prior: usize) -> f64 {
    let mut denom = l_diff + SUBG_EPS;
    if denom == 0.0 {
        denom = SUBG_EPS;
    }
    if l_diff > 0.0 {
        (1.0 / denom) * ((n_sub as f64 - n_prior as f64) / n_prior as f64)
    } else {
        (1.0 / denom) * (1.0 / (n_sub as f64 + SUBG_EPS))
    }
}

pub fn subg_node_reg(l_diff: &[f64], n_sub: &[usize], n_prior: &[usize]) -> f64 {
    if l_diff.is_empty() {
        return 0.0;
    }
    (0..l_diff.len())
        .map(|i| subg_node_instance(l_diff[i], n_sub[i], n_prior[i]))
        .sum::<f64>()
        / l_diff.len() as f64
}

/// Hinge term over a column of subgraph losses; the violating set is read
/// from the current values.
pub fn hinge_reg_tape(tape: &mut Tape, l_s: Var, l_c: &[f64]) -> Var {
    let values = tape.value(l_s).column(0).to_vec();
    let mask: Vec<f64> = values.iter().zip(l_c).map(|(s, c)| if s > c { 1.0 } else { 0.0 }).collect();
    let count: f64 = mask.iter().sum();
    let m = tape.constant(Array2::from_shape_vec((mask.len(), 1), mask).expect("column shape"));
    let picked = tape.mul(l_s, m);
    let total = tape.sum(picked);
    tape.scale(total, if count > 0.0 { 1.0 / count } else { 0.0 })
}

/// Node-count term as a function of a column of loss gaps.
pub fn subg_node_reg_tape(tape: &mut Tape, l_diff: Var, n_sub: &[usize], n_prior: &[usize]) -> Var {
    let values = tape.value(l_diff).column(0).to_vec();
    let rows = values.len();
    let numer: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > 0.0 {
                (n_sub[i] as f64 - n_prior[i] as f64) / n_prior[i] as f64
            } else {
                1.0 / (n_sub[i] as f64 + SUBG_EPS)
            }
        })
        .collect();
    let num = tape.constant(Array2::from_shape_vec((rows, 1), numer).expect("column shape"));
    let den = tape.offset(l_diff, SUBG_EPS);
    let q = tape.div(num, den);
    tape.mean(q)
}

/// `(E[L_diff] − E[L_diff, previous epoch]) · E[Prob(G_c)]`.
pub fn lar_values(now: f64, previous: f64, mean_prob: f64) -> f64 {
    (now - previous) * mean_prob
}

pub fn lar(tape: &mut Tape, gm_prob: Var, now: f64, previous: f64) -> Var {
    let m = tape.mean(gm_prob);
    tape.scale(m, now - previous)
}

fn pair_masks(labels: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let n = labels.len();
    let mut intra = Array2::zeros((n, n));
    let mut inter = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                intra[[i, j]] = 1.0;
            } else {
                inter[[i, j]] = 1.0;
            }
        }
    }
    (intra, inter)
}

/// `−ln(Σ e^{s_intra} / (Σ e^{s_intra} + Σ e^{s_inter} + ε))` over unordered
/// pairs, with `s` the cosine similarity divided by the temperature.
pub fn contrastive_loss(tape: &mut Tape, z: Var, labels: &[usize], temperature: f64) -> Result<Var> {
    if tape.shape(z).0 != labels.len() {
        return Err(Error::structural("contrastive_loss: label count"));
    }
    let (intra, inter) = pair_masks(labels);
    let zn = tape.row_normalize(z);
    let zt = tape.transpose(zn);
    let sim = tape.matmul(zn, zt);
    let sim = tape.scale(sim, 1.0 / temperature);
    let e = tape.exp(sim);
    let mi = tape.constant(intra);
    let me = tape.constant(inter);
    let a = tape.mul(e, mi);
    let a = tape.sum(a);
    let b = tape.mul(e, me);
    let b = tape.sum(b);
    let denom = tape.add(a, b);
    let denom = tape.offset(denom, CON_EPS);
    let ratio = tape.div(a, denom);
    let l = tape.ln(ratio);
    Ok(tape.scale(l, -1.0))
}

pub fn contrastive_loss_values(z: &[Vec<f64>], labels: &[usize], temperature: f64) -> f64 {
    let norm: Vec<Vec<f64>> = z
        .iter()
        .map(|r| {
            let n = (r.iter().map(|x| x * x).sum::<f64>() + 1e-12).sqrt();
            r.iter().map(|x| x / n).collect()
        })
        .collect();
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            let s = norm[i].iter().zip(&norm[j]).map(|(x, y)| x * y).sum::<f64>() / temperature;
            if labels[i] == labels[j] {
                a += s.exp();
            } else {
                b += s.exp();
            }
        }
    }
    -(a / (a + b + CON_EPS)).ln()
}
