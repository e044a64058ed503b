//! Training objectives: the contrastive masked-prediction loss, the
//! risk-minimization codebook loss, and the total objective, each with
//! hand-derived gradients that match finite differences.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Scalar losses and named parameter gradients for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_contrastive: f64,
    pub l_rm: f64,
    pub l_total: f64,
    pub gradients: BTreeMap<String, Vec<f64>>,
}

impl LossReport {
    pub fn new(
        l_contrastive: f64,
        l_rm: f64,
        gamma: f64,
        gradients: BTreeMap<String, Vec<f64>>,
    ) -> Self {
        LossReport {
            l_contrastive,
            l_rm,
            l_total: total_loss(l_contrastive, l_rm, gamma),
            gradients,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity `m.n / (|m| |n|)`, in `[-1, 1]`.
pub fn cosine_sim(m: &[f64], n: &[f64]) -> Result<f64> {
    let (nm, nn) = (norm(m), norm(n));
    if nm == 0.0 || nn == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok(dot(m, n) / (nm * nn))
}

/// Cosine similarity plus its gradients with respect to both arguments.
pub fn cosine_sim_grads(m: &[f64], n: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (nm, nn) = (norm(m), norm(n));
    if nm == 0.0 || nn == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    let sim = dot(m, n) / (nm * nn);
    let grad_m = m
        .iter()
        .zip(n)
        .map(|(mi, ni)| ni / (nm * nn) - sim * mi / (nm * nm))
        .collect();
    let grad_n = n
        .iter()
        .zip(m)
        .map(|(ni, mi)| mi / (nm * nn) - sim * ni / (nn * nn))
        .collect();
    Ok((sim, grad_m, grad_n))
}

/// Contrastive masked-prediction loss: the negative log probability of the
/// true quantized vector among the distractor set, with cosine similarity
/// scaled by `1/kappa` inside the exponents.
pub fn contrastive_loss(
    c: &[f64],
    z_true: &[f64],
    distractors: &[Vec<f64>],
    kappa: f64,
) -> Result<f64> {
    let (loss, _, _, _) = contrastive_loss_grads(c, z_true, distractors, kappa)?;
    Ok(loss)
}

/// [`contrastive_loss`] plus gradients with respect to the context vector,
/// the true vector, and each distractor.
#[allow(clippy::type_complexity)]
pub fn contrastive_loss_grads(
    c: &[f64],
    z_true: &[f64],
    distractors: &[Vec<f64>],
    kappa: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("kappa must be > 0, got {kappa}")));
    }
    let dim = c.len();
    // Candidate 0 is the true vector.
    let mut sims = Vec::with_capacity(distractors.len() + 1);
    let mut grads_c = Vec::with_capacity(distractors.len() + 1);
    let mut grads_z = Vec::with_capacity(distractors.len() + 1);
    for z in std::iter::once(z_true).chain(distractors.iter().map(|d| d.as_slice())) {
        let (sim, gc, gz) = cosine_sim_grads(c, z)?;
        sims.push(sim / kappa);
        grads_c.push(gc);
        grads_z.push(gz);
    }
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(sims[0] - max - sum.ln());
    // dL/dsim_i = (p_i - [i == 0]) / kappa.
    let mut grad_c = vec![0.0; dim];
    let mut grad_true = vec![0.0; dim];
    let mut grad_distractors = vec![vec![0.0; dim]; distractors.len()];
    for (i, exp) in exps.iter().enumerate() {
        let ds = (exp / sum - if i == 0 { 1.0 } else { 0.0 }) / kappa;
        for j in 0..dim {
            grad_c[j] += ds * grads_c[i][j];
        }
        let target = if i == 0 {
            &mut grad_true
        } else {
            &mut grad_distractors[i - 1]
        };
        for j in 0..dim {
            target[j] += ds * grads_z[i][j];
        }
    }
    Ok((loss, grad_c, grad_true, grad_distractors))
}

/// Ball radius below which the unsquared-norm gradients are clipped to 0.
const NORM_SINGULARITY: f64 = 1e-8;

/// Risk-minimization loss `|sg(z) - zhat| + beta * |z - sg(zhat)|` with
/// unsquared Euclidean norms. The forward value treats both terms alike;
/// the gradient contract routes the first term into `zhat` only and the
/// second into `z` only.
pub fn rm_loss(z: &[f64], z_hat: &[f64], beta: f64) -> Result<f64> {
    let (loss, _, _) = rm_loss_grads(z, z_hat, beta)?;
    Ok(loss)
}

/// [`rm_loss`] plus `(grad_z, grad_zhat)`. Within a `1e-8` ball around
/// `z = zhat` the gradients are 0 (the norm is singular there).
pub fn rm_loss_grads(z: &[f64], z_hat: &[f64], beta: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if z.len() != z_hat.len() {
        return Err(Error::Validation(format!(
            "dimension mismatch: {} vs {}",
            z.len(),
            z_hat.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
    }
    let diff: Vec<f64> = z.iter().zip(z_hat).map(|(a, b)| a - b).collect();
    let dist = norm(&diff);
    let loss = dist + beta * dist;
    if dist < NORM_SINGULARITY {
        return Ok((loss, vec![0.0; z.len()], vec![0.0; z.len()]));
    }
    let grad_z = diff.iter().map(|d| beta * d / dist).collect();
    let grad_z_hat = diff.iter().map(|d| -d / dist).collect();
    Ok((loss, grad_z, grad_z_hat))
}

/// Total objective `l_contrastive + gamma * l_rm`.
pub fn total_loss(l_contrastive: f64, l_rm: f64, gamma: f64) -> f64 {
    l_contrastive + gamma * l_rm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let got = cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((got - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((got - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn cosine_zero_vector_is_domain_error() {
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cosine_grads_match_finite_differences() {
        let mut rng = substream(3, "loss-test", &[0]);
        for _ in 0..20 {
            let m: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.2).collect();
            let n: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.2).collect();
            let (_, gm, gn) = cosine_sim_grads(&m, &n).unwrap();
            let h = 1e-6;
            for j in 0..4 {
                let mut mp = m.clone();
                mp[j] += h;
                let mut mm = m.clone();
                mm[j] -= h;
                let fd = (cosine_sim(&mp, &n).unwrap() - cosine_sim(&mm, &n).unwrap()) / (2.0 * h);
                assert!((gm[j] - fd).abs() / fd.abs().max(1e-8) < 1e-4);
                let mut np = n.clone();
                np[j] += h;
                let mut nm = n.clone();
                nm[j] -= h;
                let fd = (cosine_sim(&m, &np).unwrap() - cosine_sim(&m, &nm).unwrap()) / (2.0 * h);
                assert!((gn[j] - fd).abs() / fd.abs().max(1e-8) < 1e-4);
            }
        }
    }

    #[test]
    fn contrastive_no_distractors_is_zero() {
        let loss = contrastive_loss(&[0.3, 0.4], &[1.0, 0.0], &[], 0.7).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn contrastive_hand_case() {
        // sim(c, true) = 1, sim(c, distractor) = 0, kappa = 1.
        let c = vec![1.0, 0.0];
        let loss = contrastive_loss(&c, &[2.0, 0.0], &[vec![0.0, 3.0]], 1.0).unwrap();
        let want = -(1.0f64.exp() / (1.0f64.exp() + 1.0)).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn contrastive_identical_distractor_gives_log2() {
        for c in [vec![0.5, 1.0], vec![-2.0, 0.1]] {
            let z = vec![0.7, 0.3];
            let loss = contrastive_loss(&c, &z, &[z.clone()], 0.37).unwrap();
            assert!((loss - 2.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_equal_similarities_give_log_count() {
        // All candidates identical: loss = log |Omega|.
        let z = vec![1.0, 2.0];
        let loss = contrastive_loss(&[0.3, -0.8], &z, &[z.clone(), z.clone(), z.clone()], 0.5)
            .unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_is_nonnegative_and_scale_invariant() {
        let mut rng = substream(4, "loss-test", &[1]);
        for _ in 0..50 {
            let dim = 3;
            let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0 + 0.01).collect()
            };
            let c = gen(&mut rng);
            let z = gen(&mut rng);
            let d = vec![gen(&mut rng), gen(&mut rng)];
            let loss = contrastive_loss(&c, &z, &d, 0.3).unwrap();
            assert!(loss >= 0.0);
            let z_scaled: Vec<f64> = z.iter().map(|x| x * 7.5).collect();
            let scaled = contrastive_loss(&c, &z_scaled, &d, 0.3).unwrap();
            assert!((loss - scaled).abs() < 1e-9);
        }
    }

    #[test]
    fn contrastive_grads_match_finite_differences() {
        let mut rng = substream(5, "loss-test", &[2]);
        let dim = 3;
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.random::<f64>() + 0.1).collect()
        };
        for _ in 0..20 {
            let c = gen(&mut rng);
            let z = gen(&mut rng);
            let d = vec![gen(&mut rng), gen(&mut rng)];
            let kappa = 0.4;
            let (_, gc, gz, gd) = contrastive_loss_grads(&c, &z, &d, kappa).unwrap();
            let h = 1e-6;
            let check = |analytic: f64, plus: f64, minus: f64| {
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    (analytic - fd).abs() / fd.abs().max(1e-6) < 1e-4,
                    "{analytic} vs {fd}"
                );
            };
            for j in 0..dim {
                let mut cp = c.clone();
                cp[j] += h;
                let mut cm = c.clone();
                cm[j] -= h;
                check(
                    gc[j],
                    contrastive_loss(&cp, &z, &d, kappa).unwrap(),
                    contrastive_loss(&cm, &z, &d, kappa).unwrap(),
                );
                let mut zp = z.clone();
                zp[j] += h;
                let mut zm = z.clone();
                zm[j] -= h;
                check(
                    gz[j],
                    contrastive_loss(&c, &zp, &d, kappa).unwrap(),
                    contrastive_loss(&c, &zm, &d, kappa).unwrap(),
                );
                let mut dp = d.clone();
                dp[0][j] += h;
                let mut dm = d.clone();
                dm[0][j] -= h;
                check(
                    gd[0][j],
                    contrastive_loss(&c, &z, &dp, kappa).unwrap(),
                    contrastive_loss(&c, &z, &dm, kappa).unwrap(),
                );
            }
        }
    }

    #[test]
    fn rm_zero_at_equal_inputs() {
        assert_eq!(rm_loss(&[1.0, 2.0], &[1.0, 2.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn rm_hand_case() {
        let loss = rm_loss(&[0.0, 0.0], &[3.0, 4.0], 2.0).unwrap();
        assert!((loss - 15.0).abs() < 1e-12);
    }

    #[test]
    fn rm_gradient_hand_case() {
        let (_, gz, _) = rm_loss_grads(&[0.0, 0.0], &[3.0, 4.0], 2.0).unwrap();
        assert!((gz[0] - (-1.2)).abs() < 1e-12);
        assert!((gz[1] - (-1.6)).abs() < 1e-12);
    }

    #[test]
    fn rm_stop_gradient_contract() {
        // Perturbing zhat changes only the first term to first order, so
        // grad_zhat carries no beta factor; grad_z carries only beta.
        let z = vec![0.5, -0.3, 1.0];
        let z_hat = vec![-0.2, 0.4, 0.9];
        let beta = 2.0;
        let (_, gz, gzh) = rm_loss_grads(&z, &z_hat, beta).unwrap();
        let h = 1e-6;
        // Finite differences of each term separately.
        let term1 = |zh: &[f64]| {
            z.iter()
                .zip(zh)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let term2 = |zz: &[f64]| {
            zz.iter()
                .zip(&z_hat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        for j in 0..3 {
            let mut p = z_hat.clone();
            p[j] += h;
            let mut m = z_hat.clone();
            m[j] -= h;
            let fd = (term1(&p) - term1(&m)) / (2.0 * h);
            assert!((gzh[j] - fd).abs() / fd.abs().max(1e-6) < 1e-4);
            let mut p = z.clone();
            p[j] += h;
            let mut m = z.clone();
            m[j] -= h;
            let fd = beta * (term2(&p) - term2(&m)) / (2.0 * h);
            assert!((gz[j] - fd).abs() / fd.abs().max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn rm_gradient_clipped_near_singularity() {
        let (_, gz, gzh) = rm_loss_grads(&[1.0, 1.0], &[1.0 + 1e-10, 1.0], 2.0).unwrap();
        assert_eq!(gz, vec![0.0, 0.0]);
        assert_eq!(gzh, vec![0.0, 0.0]);
    }

    #[test]
    fn total_is_weighted_sum() {
        assert_eq!(total_loss(0.7, 15.0, 0.0), 0.7);
        assert!((total_loss(0.3133, 15.0, 0.5) - 7.8133).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 3.0), 0.0);
    }

    #[test]
    fn loss_report_total_invariant() {
        let r = LossReport::new(0.25, 4.0, 0.5, BTreeMap::new());
        assert!((r.l_total - (r.l_contrastive + 0.5 * r.l_rm)).abs() < 1e-12);
    }
}
