use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Gradients below this magnitude are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Compares tape gradients against central finite differences.
///
/// `loss_fn` must be deterministic. At most `max_entries` parameter entries
/// are checked, chosen with `seed` when there are more.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore, eps: f64, max_entries: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss_fn(&mut tape, store)?;
        let v = tape.scalar(out);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("loss evaluated to {v}")))
        }
    };

    let mut analytic = params.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new();
        let out = loss_fn(&mut tape, &analytic)?;
        if !tape.scalar(out).is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let grads = tape.backward(out);
        grads.accumulate_into(&tape, &mut analytic);
    }

    let entries: Vec<(String, usize)> = params
        .names()
        .flat_map(|n| (0..params.value(n).map_or(0, |m| m.len())).map(move |i| (n.to_string(), i)))
        .collect();
    let chosen: Vec<usize> = if entries.len() > max_entries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, entries.len(), max_entries).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..entries.len()).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = params.clone();
    for k in chosen {
        let (name, flat) = &entries[k];
        let original = probe.value(name).unwrap().as_slice().unwrap()[*flat];
        let set = |store: &mut ParamStore, v: f64| {
            store.value_mut(name).unwrap().as_slice_mut().unwrap()[*flat] = v;
        };
        set(&mut probe, original + eps);
        let plus = eval(&probe)?;
        set(&mut probe, original - eps);
        let minus = eval(&probe)?;
        set(&mut probe, original);
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.grad(name).unwrap().as_slice().unwrap()[*flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((name.clone(), *flat));
            }
        }
    }
    Ok(report)
}
