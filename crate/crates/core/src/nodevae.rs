//! Conditional VAE over node embeddings.
//!
//! The encoder maps `[h_i ‖ e_i]` to `(μ_i, log σ_i²)`; the decoder maps
//! `[z_i ‖ e_i]` back to `ĥ_i`. `e_i` is the feature-environment embedding
//! of the node's graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::nn::{init_mlp2, mlp2_forward, mlp2_shape, Activation, Mlp2Shape};
use crate::tensor::{ParamStore, Tape, Var};

pub const ENCODER: &str = "nodevae.enc";
pub const DECODER: &str = "nodevae.dec";
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeVaeWeights {
    pub mse: f64,
    pub kl: f64,
}

impl Default for NodeVaeWeights {
    fn default() -> Self {
        Self { mse: 1.0, kl: 0.1 }
    }
}

/// Registers encoder and decoder perceptrons.
pub fn init_nodevae(
    store: &mut ParamStore,
    embed_dim: usize,
    env_dim: usize,
    hidden: usize,
    latent: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init_mlp2(
        store,
        ENCODER,
        Mlp2Shape {
            input: embed_dim + env_dim,
            hidden,
            output: 2 * latent,
        },
        rng,
    )?;
    init_mlp2(
        store,
        DECODER,
        Mlp2Shape {
            input: latent + env_dim,
            hidden,
            output: embed_dim,
        },
        rng,
    )
}

/// Splits a `2·latent` wide output into `(μ, clamped log σ²)`.
pub(crate) fn split_gaussian(tape: &mut Tape, out: Var) -> Result<(Var, Var)> {
    let (_, cols) = tape.shape(out);
    if cols % 2 != 0 {
        return Err(Error::structural("encoder output width must be even"));
    }
    let half = cols / 2;
    let mu = tape.slice_cols(out, 0, half);
    let raw = tape.slice_cols(out, half, half);
    Ok((mu, tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX)))
}

/// `(μ, log σ²)` for each row of `h` paired with the same row of `e`.
pub fn encode_node(tape: &mut Tape, store: &ParamStore, h: Var, e: Var) -> Result<(Var, Var)> {
    if tape.shape(h).0 != tape.shape(e).0 {
        return Err(Error::structural("encode_node: row count mismatch"));
    }
    let x = tape.concat_cols(&[h, e]);
    let out = mlp2_forward(tape, store, ENCODER, x, Activation::Relu)?;
    split_gaussian(tape, out)
}

pub fn decode_node(tape: &mut Tape, store: &ParamStore, z: Var, e: Var) -> Result<Var> {
    if tape.shape(z).0 != tape.shape(e).0 {
        return Err(Error::structural("decode_node: row count mismatch"));
    }
    let x = tape.concat_cols(&[z, e]);
    mlp2_forward(tape, store, DECODER, x, Activation::Relu)
}

pub fn latent_dim(store: &ParamStore) -> Result<usize> {
    Ok(mlp2_shape(store, ENCODER)?.output / 2)
}

/// `w.mse · mean squared error + w.kl · mean over rows of the row KL`.
/// An empty batch gives 0.
pub fn nodevae_loss(tape: &mut Tape, h: Var, h_hat: Var, mu: Var, logvar: Var, w: NodeVaeWeights) -> Result<Var> {
    if tape.shape(h) != tape.shape(h_hat) || tape.shape(mu) != tape.shape(logvar) {
        return Err(Error::structural("nodevae_loss: shape mismatch"));
    }
    let rows = tape.shape(h).0;
    if rows == 0 {
        return Ok(tape.constant_scalar(0.0));
    }
    let diff = tape.sub(h_hat, h);
    let sq = tape.mul(diff, diff);
    let mse = tape.mean(sq);
    let kl = crate::tensor::kl_std_normal(tape, mu, logvar)?;
    let kl = tape.scale(kl, 1.0 / rows as f64);
    let a = tape.scale(mse, w.mse);
    let b = tape.scale(kl, w.kl);
    Ok(tape.add(a, b))
}

/// Plain-value form of [`nodevae_loss`] over row slices.
pub fn nodevae_loss_values(
    h: &[Vec<f64>],
    h_hat: &[Vec<f64>],
    mu: &[Vec<f64>],
    logvar: &[Vec<f64>],
    w: NodeVaeWeights,
) -> Result<f64> {
    if h.is_empty() {
        return Ok(0.0);
    }
    let mut se = 0.0;
    let mut count = 0usize;
    for (a, b) in h.iter().zip(h_hat) {
        for (x, y) in a.iter().zip(b) {
            se += (x - y) * (x - y);
            count += 1;
        }
    }
    let mut kl = 0.0;
    for (m, lv) in mu.iter().zip(logvar) {
        kl += crate::tensor::nn::kl_std_normal_values(m, lv)?;
    }
    Ok(w.mse * se / count as f64 + w.kl * kl / h.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_store() -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_nodevae(&mut s, 3, 2, 4, 2, &mut rng).unwrap();
        let names: Vec<String> = s.names().map(String::from).collect();
        for n in names {
            s.value_mut(&n).unwrap().fill(0.0);
        }
        s
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let s = zero_store();
        let mut t = Tape::new();
        let h = t.constant(array![[1.0, 2.0, 3.0]]);
        let e = t.constant(array![[0.5, -0.5]]);
        let (mu, lv) = encode_node(&mut t, &s, h, e).unwrap();
        assert!(t.value(mu).iter().chain(t.value(lv).iter()).all(|&x| x == 0.0));
        let z = t.constant(array![[0.3, 0.1]]);
        let out = decode_node(&mut t, &s, z, e).unwrap();
        assert!(t.value(out).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encoder_matches_matrix_oracle_and_is_row_deterministic() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        init_nodevae(&mut s, 3, 2, 4, 2, &mut rng).unwrap();
        let mut t = Tape::new();
        let hv = array![[0.2, -1.0, 0.4], [0.2, -1.0, 0.4]];
        let ev = array![[1.0, 0.0], [1.0, 0.0]];
        let h = t.constant(hv.clone());
        let e = t.constant(ev.clone());
        let (mu, lv) = encode_node(&mut t, &s, h, e).unwrap();
        assert_eq!(t.value(mu).row(0), t.value(mu).row(1));
        let x = ndarray::concatenate![ndarray::Axis(1), hv, ev];
        let hid = (x.dot(s.value("nodevae.enc.w1").unwrap()) + s.value("nodevae.enc.b1").unwrap()).mapv(|v| v.max(0.0));
        let out = hid.dot(s.value("nodevae.enc.w2").unwrap()) + s.value("nodevae.enc.b2").unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(t.value(mu)[[0, j]], out[[0, j]], epsilon = 1e-12);
            assert_abs_diff_eq!(t.value(lv)[[0, j]], out[[0, j + 2]].clamp(-10.0, 10.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_oracles() {
        let w = NodeVaeWeights::default();
        let z = vec![vec![0.0, 0.0]];
        assert_eq!(nodevae_loss_values(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]], &z, &z, w).unwrap(), 0.0);
        // hand case: h = [[1,2],[0,1]], ĥ = [[0,2],[1,1]] -> squared errors 1,0,1,0 -> mse 0.5
        // mu = [[1,0],[0,0]], logvar 0 -> row KLs 0.5, 0 -> mean 0.25
        let h = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        let hh = vec![vec![0.0, 2.0], vec![1.0, 1.0]];
        let mu = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let lv = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_abs_diff_eq!(nodevae_loss_values(&h, &hh, &mu, &lv, w).unwrap(), 0.5 + 0.1 * 0.25, epsilon = 1e-12);
        let no_kl = NodeVaeWeights { mse: 1.0, kl: 0.0 };
        assert_abs_diff_eq!(nodevae_loss_values(&h, &hh, &mu, &lv, no_kl).unwrap(), 0.5, epsilon = 1e-12);
        let mut t = Tape::new();
        let m = |rows: &Vec<Vec<f64>>| Array2::from_shape_fn((2, 2), |(i, j)| rows[i][j]);
        let (a, b, c, d) = (t.constant(m(&h)), t.constant(m(&hh)), t.constant(m(&mu)), t.constant(m(&lv)));
        let l = nodevae_loss(&mut t, a, b, c, d, w).unwrap();
        assert_abs_diff_eq!(t.scalar(l), 0.525, epsilon = 1e-12);
    }

    #[test]
    fn gradient_check_over_all_parameters() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        init_nodevae(&mut s, 3, 2, 5, 2, &mut rng).unwrap();
        s.insert_glorot("env.feature", 2, 2, &mut rng).unwrap();
        let hv = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let noise = Array2::from_shape_fn((4, 2), |(i, j)| ((i + 2 * j) as f64 * 0.71).cos());
        let report = grad_check(
            |t, p| {
                let table = t.param(p, "env.feature")?;
                let e = t.gather_rows(table, vec![0, 0, 1, 1].into());
                let h = t.constant(hv.clone());
                let (mu, lv) = encode_node(t, p, h, e)?;
                let n = t.constant(noise.clone());
                let z = crate::tensor::reparameterize(t, mu, lv, n)?;
                let hh = decode_node(t, p, z, e)?;
                nodevae_loss(t, h, hh, mu, lv, NodeVaeWeights::default())
            },
            &s,
            1e-6,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}
