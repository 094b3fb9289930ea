//! Central finite-difference verification of backward passes.
//!
//! The checker perturbs leaf values in place, rebuilds the forward graph via
//! the supplied closure, and compares (f(x+h) − f(x−h)) / 2h against the
//! analytic gradient. Large leaves can be spot-checked on a seeded sample of
//! elements instead of exhaustively.

use super::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_leaf: usize,
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Compare analytic and finite-difference gradients of `build()` w.r.t. the
/// given leaves. `sample_per_leaf` caps how many elements of each leaf are
/// probed (None = all).
pub fn check(
    build: &dyn Fn() -> Tensor,
    leaves: &[Tensor],
    eps: f64,
    sample_per_leaf: Option<usize>,
    seed: u64,
) -> GradCheckReport {
    for leaf in leaves {
        assert!(leaf.is_tracked(), "gradcheck leaves must require grad");
        leaf.zero_grad();
    }
    let loss = build();
    assert_eq!(loss.numel(), 1, "gradcheck target must be scalar");
    loss.backward();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_leaf: 0,
        worst_index: 0,
    };
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.numel();
        let mut indices: Vec<usize> = (0..n).collect();
        if let Some(k) = sample_per_leaf {
            indices.shuffle(&mut rng);
            indices.truncate(k.min(n));
            indices.sort_unstable();
        }
        for &i in &indices {
            let orig = leaf.value_at(i);
            leaf.with_data_mut(|d| d[i] = orig + eps);
            let fp = super::no_grad(build).item();
            leaf.with_data_mut(|d| d[i] = orig - eps);
            let fm = super::no_grad(build).item();
            leaf.with_data_mut(|d| d[i] = orig);
            let fd = (fp - fm) / (2.0 * eps);
            let an = analytic[li][i];
            let abs = (fd - an).abs();
            let rel = abs / an.abs().max(fd.abs()).max(1e-2);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_leaf = li;
                report.worst_index = i;
            }
            report.max_abs_err = report.max_abs_err.max(abs);
        }
    }
    report
}
