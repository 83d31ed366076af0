//! Finite-difference gradient verification.

use super::{Param, Scalar};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of a [`gradcheck`] run.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Number of parameter coordinates probed.
    pub probes: usize,
    /// Worst relative error over all probes.
    pub max_rel_err: f64,
    /// (parameter name, flat coordinate, relative error) of the worst probe.
    pub worst: Option<(String, usize, f64)>,
    /// Per-parameter worst relative error, in parameter order, for every
    /// parameter that received at least one probe.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

/// Relative error with an absolute floor so tiny gradients don't explode it.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare analytic gradients against central finite differences on
/// `probe_count` randomly chosen parameter coordinates.
///
/// `loss_fn(params, want_grad)` evaluates the scalar loss; when `want_grad`
/// is set it must also return one gradient buffer per parameter. The loss
/// must be deterministic — it is evaluated twice at the unperturbed point
/// and a bitwise difference is a usage error.
pub fn gradcheck<S: Scalar, F>(
    params: &[Param<S>],
    loss_fn: F,
    probe_count: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Param<S>], bool) -> Result<(S, Option<Vec<Vec<S>>>)>,
{
    let (f0, grads) = loss_fn(params, true)?;
    let grads = grads.ok_or_else(|| Error::Usage("gradcheck: loss_fn returned no gradients".into()))?;
    if grads.len() != params.len() {
        return Err(Error::Usage(format!(
            "gradcheck: {} gradient tensors for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let (f0_again, _) = loss_fn(params, false)?;
    if f0.to_f64().to_bits() != f0_again.to_f64().to_bits() {
        return Err(Error::Usage(
            "gradcheck: loss is not deterministic (two identical evaluations differ)".into(),
        ));
    }

    // Flat coordinate space over all parameters, sampled without replacement.
    let total: usize = params.iter().map(|p| p.values.len()).sum();
    let mut coords: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(probe_count.min(total));
    coords.sort_unstable();

    let starts: Vec<usize> = params
        .iter()
        .scan(0usize, |acc, p| {
            let s = *acc;
            *acc += p.values.len();
            Some(s)
        })
        .collect();

    let mut working: Vec<Param<S>> = params.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut per_param: Vec<Option<f64>> = vec![None; params.len()];

    for flat in coords.iter().copied() {
        let p = match starts.binary_search(&flat) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let k = flat - starts[p];
        let orig = working[p].values[k];

        let plus = S::from_f64(orig.to_f64() + h);
        working[p].values[k] = plus;
        let (f_plus, _) = loss_fn(&working, false)?;
        let minus = S::from_f64(orig.to_f64() - h);
        working[p].values[k] = minus;
        let (f_minus, _) = loss_fn(&working, false)?;
        working[p].values[k] = orig;

        // Use the realized step after rounding to S, not the nominal h.
        let denom = plus.to_f64() - minus.to_f64();
        let fd = (f_plus.to_f64() - f_minus.to_f64()) / denom;
        let analytic = grads[p][k].to_f64();
        let e = rel_err(analytic, fd);
        if e > max_rel {
            max_rel = e;
            worst = Some((params[p].name.clone(), k, e));
        }
        let slot = per_param[p].get_or_insert(0.0);
        *slot = slot.max(e);
    }

    let per_param = params
        .iter()
        .zip(per_param)
        .filter_map(|(p, e)| e.map(|e| (p.name.clone(), e)))
        .collect();
    Ok(GradCheckReport { probes: coords.len(), max_rel_err: max_rel, worst, per_param })
}
