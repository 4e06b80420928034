//! Two-layer perceptrons and Gaussian helpers used by the learned modules.

use rand::Rng;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Layer widths of a two-layer perceptron.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp2Shape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

fn names(prefix: &str) -> [String; 4] {
    [
        format!("{prefix}.w1"),
        format!("{prefix}.b1"),
        format!("{prefix}.w2"),
        format!("{prefix}.b2"),
    ]
}

/// Registers `prefix.{w1,b1,w2,b2}`: Glorot weights, zero biases.
pub fn init_mlp2(store: &mut ParamStore, prefix: &str, shape: Mlp2Shape, rng: &mut impl Rng) -> Result<()> {
    let [w1, b1, w2, b2] = names(prefix);
    store.insert_glorot(w1, shape.input, shape.hidden, rng)?;
    store.insert_zeros(b1, 1, shape.hidden)?;
    store.insert_glorot(w2, shape.hidden, shape.output, rng)?;
    store.insert_zeros(b2, 1, shape.output)
}

/// Shape of the perceptron stored under `prefix`.
pub fn mlp2_shape(store: &ParamStore, prefix: &str) -> Result<Mlp2Shape> {
    let [w1, b1, w2, b2] = names(prefix);
    let get = |n: &str| {
        store
            .value(n)
            .map(|m| m.dim())
            .ok_or_else(|| Error::structural(format!("missing parameter `{n}`")))
    };
    let (i, h) = get(&w1)?;
    let (h2, o) = get(&w2)?;
    if get(&b1)? != (1, h) || h2 != h || get(&b2)? != (1, o) {
        return Err(Error::structural(format!("inconsistent perceptron `{prefix}`")));
    }
    Ok(Mlp2Shape {
        input: i,
        hidden: h,
        output: o,
    })
}

/// `y = act(x W1 + b1) W2 + b2`, applied to each row of `x`.
pub fn mlp2_forward(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, act: Activation) -> Result<Var> {
    let shape = mlp2_shape(store, prefix)?;
    let (_, cols) = tape.shape(x);
    if cols != shape.input {
        return Err(Error::structural(format!(
            "perceptron `{prefix}` expects {} inputs, got {cols}",
            shape.input
        )));
    }
    let [w1, b1, w2, b2] = names(prefix);
    let (w1, b1, w2, b2) = (
        tape.param(store, &w1)?,
        tape.param(store, &b1)?,
        tape.param(store, &w2)?,
        tape.param(store, &b2)?,
    );
    let pre = tape.matmul(x, w1);
    let pre = tape.add_row(pre, b1);
    let hidden = match act {
        Activation::Relu => tape.relu(pre),
        Activation::Linear => pre,
    };
    let out = tape.matmul(hidden, w2);
    Ok(tape.add_row(out, b2))
}

/// `z = mu + exp(logvar / 2) ⊙ noise` on the tape.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, noise: Var) -> Result<Var> {
    if tape.shape(mu) != tape.shape(logvar) || tape.shape(mu) != tape.shape(noise) {
        return Err(Error::structural("reparameterize: shape mismatch"));
    }
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let scaled = tape.mul(std, noise);
    Ok(tape.add(mu, scaled))
}

/// `½ Σ (exp(logvar) + mu² − 1 − logvar)` summed over every entry.
pub fn kl_std_normal(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    if tape.shape(mu) != tape.shape(logvar) {
        return Err(Error::structural("kl_std_normal: shape mismatch"));
    }
    let var = tape.exp(logvar);
    let mu2 = tape.mul(mu, mu);
    let a = tape.add(var, mu2);
    let b = tape.sub(a, logvar);
    let c = tape.offset(b, -1.0);
    let total = tape.sum(c);
    Ok(tape.scale(total, 0.5))
}

/// Plain-slice form of [`reparameterize`].
pub fn reparameterize_values(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::structural("reparameterize: length mismatch"));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect())
}

/// Plain-slice form of [`kl_std_normal`].
pub fn kl_std_normal_values(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::structural("kl_std_normal: length mismatch"));
    }
    Ok(0.5 * mu.iter().zip(logvar).map(|(m, lv)| lv.exp() + m * m - 1.0 - lv).sum::<f64>())
}
