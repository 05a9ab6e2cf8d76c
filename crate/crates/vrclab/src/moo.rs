//! Joint descent over several rate points at once.
//!
//! Each rate point carries its own scalar loss; a training step must not
//! trade one off against another. The shared-parameter update direction is
//! the minimum-norm point in the convex hull of the per-point gradients,
//! which is a common descent direction whenever one exists and vanishes at
//! vector stationarity.

use crate::error::{Error, Result};

/// Rate, distortion, and their weighted sum for one rate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTriple {
    pub rate: f64,
    pub distortion: f64,
    pub lambda: f64,
    pub loss: f64,
}

impl LossTriple {
    pub fn new(rate: f64, distortion: f64, lambda: f64) -> Result<Self> {
        if !rate.is_finite() || !distortion.is_finite() {
            return Err(Error::non_finite("loss triple"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(
                "loss_triple",
                format!("lambda {lambda} must be positive and finite"),
            ));
        }
        Ok(LossTriple {
            rate,
            distortion,
            lambda,
            loss: rate + lambda * distortion,
        })
    }
}

fn check_same_len(op: &'static str, a: &[LossTriple], b: &[LossTriple]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(
            op,
            format!("{} vs {} rate points", a.len(), b.len()),
        ));
    }
    Ok(())
}

/// Non-strict dominance: no point worse, at least one better.
pub fn dominates(a: &[LossTriple], b: &[LossTriple]) -> Result<bool> {
    check_same_len("dominates", a, b)?;
    let mut any_better = false;
    for (x, y) in a.iter().zip(b) {
        if x.loss > y.loss {
            return Ok(false);
        }
        if x.loss < y.loss {
            any_better = true;
        }
    }
    Ok(any_better)
}

/// Every point strictly better.
pub fn dominates_strictly(a: &[LossTriple], b: &[LossTriple]) -> Result<bool> {
    check_same_len("dominates_strictly", a, b)?;
    Ok(a.iter().zip(b).all(|(x, y)| x.loss < y.loss))
}

/// Convergence tolerance on the duality gap of the min-norm solve.
pub const FW_TOL: f64 = 1e-8;
pub const FW_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone)]
pub struct MinNormSolution {
    /// Simplex weights over the input gradients.
    pub weights: Vec<f64>,
    /// Squared norm of the weighted combination.
    pub norm_sq: f64,
    /// Final duality gap (0 for closed-form branches).
    pub gap: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn combine(grads: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let len = grads[0].len();
    let mut out = vec![0.0; len];
    for (g, &w) in grads.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(g) {
            *o += w * v;
        }
    }
    out
}

fn validate_grads(op: &'static str, grads: &[Vec<f64>]) -> Result<()> {
    if grads.is_empty() {
        return Err(Error::invalid(op, "no gradients"));
    }
    let len = grads[0].len();
    if len == 0 {
        return Err(Error::invalid(op, "zero-length gradients"));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != len {
            return Err(Error::invalid(
                op,
                format!("gradient {i} has length {} vs {len}", g.len()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("min-norm gradient"));
        }
    }
    Ok(())
}

/// Minimum-norm element of the convex hull of `grads`.
///
/// One and two gradients are solved in closed form; beyond that a
/// Frank-Wolfe loop on the Gram matrix runs until the duality gap drops
/// under [`FW_TOL`]. Ties in the linear subproblem break toward the lowest
/// index, which keeps the iterate sequence deterministic.
pub fn min_norm_weights(grads: &[Vec<f64>]) -> Result<MinNormSolution> {
    validate_grads("min_norm", grads)?;
    let n = grads.len();

    if n == 1 {
        return Ok(MinNormSolution {
            weights: vec![1.0],
            norm_sq: dot(&grads[0], &grads[0]),
            gap: 0.0,
            iterations: 0,
        });
    }

    if n == 2 {
        let g1 = &grads[0];
        let g2 = &grads[1];
        let diff_sq = dot(g1, g1) - 2.0 * dot(g1, g2) + dot(g2, g2);
        let t = if diff_sq > 0.0 {
            ((dot(g2, g2) - dot(g1, g2)) / diff_sq).clamp(0.0, 1.0)
        } else {
            // identical gradients; lowest index takes the mass
            1.0
        };
        let w = vec![t, 1.0 - t];
        let c = combine(grads, &w);
        return Ok(MinNormSolution {
            weights: w,
            norm_sq: dot(&c, &c),
            gap: 0.0,
            iterations: 0,
        });
    }

    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&grads[i], &grads[j]);
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }

    // Frank-Wolfe with away steps; the away direction is what makes weights
    // on the optimal face reach zero in finite time instead of zigzagging
    let mut alpha = vec![1.0 / n as f64; n];
    let mut gap = f64::INFINITY;
    let mut iters = 0;
    for it in 0..FW_MAX_ITERS {
        iters = it;
        let g_alpha: Vec<f64> = (0..n).map(|i| dot(&gram[i], &alpha)).collect();
        let obj = dot(&alpha, &g_alpha);
        let mut toward = 0;
        let mut away = 0;
        for i in 1..n {
            if g_alpha[i] < g_alpha[toward] {
                toward = i;
            }
            if alpha[i] > 0.0 && (alpha[away] == 0.0 || g_alpha[i] > g_alpha[away]) {
                away = i;
            }
        }
        gap = obj - g_alpha[toward];
        if gap <= FW_TOL {
            break;
        }
        let away_gap = g_alpha[away] - obj;
        let (d_g_alpha, d_g_d, gamma_max, vertex, sign) = if gap >= away_gap {
            let dgd = gram[toward][toward] - 2.0 * g_alpha[toward] + obj;
            (-gap, dgd, 1.0, toward, 1.0)
        } else {
            let dgd = obj - 2.0 * g_alpha[away] + gram[away][away];
            let cap = alpha[away] / (1.0 - alpha[away]).max(f64::MIN_POSITIVE);
            (-away_gap, dgd, cap, away, -1.0)
        };
        let gamma = if d_g_d > 0.0 {
            (-d_g_alpha / d_g_d).clamp(0.0, gamma_max)
        } else {
            gamma_max
        };
        for (i, a) in alpha.iter_mut().enumerate() {
            let d = if i == vertex { sign - *a * sign } else { -*a * sign };
            *a = (*a + gamma * d).max(0.0);
        }
        let sum: f64 = alpha.iter().sum();
        for a in &mut alpha {
            *a /= sum;
        }
    }
    let c = combine(grads, &alpha);
    Ok(MinNormSolution {
        weights: alpha,
        norm_sq: dot(&c, &c),
        gap: gap.max(0.0),
        iterations: iters,
    })
}

/// Grid-plus-polish reference solver, deliberately avoiding the Gram matrix
/// and Frank-Wolfe structure of [`min_norm_weights`].
///
/// Walks the simplex grid with spacing 1/resolution over all but the last
/// two coordinates; the remaining mass is split between those two by exact
/// one-dimensional quadratic minimization, so every full-grid point is
/// matched or beaten. A final round of pairwise mass redistribution polishes
/// the winner. Supports up to four gradients.
pub fn min_norm_bruteforce(grads: &[Vec<f64>], resolution: usize) -> Result<MinNormSolution> {
    validate_grads("min_norm_bruteforce", grads)?;
    let n = grads.len();
    if n > 4 {
        return Err(Error::invalid(
            "min_norm_bruteforce",
            format!("{n} gradients exceed the supported 4"),
        ));
    }
    if resolution == 0 {
        return Err(Error::invalid("min_norm_bruteforce", "resolution 0"));
    }

    let norm_of = |w: &[f64]| {
        let c = combine(grads, w);
        dot(&c, &c)
    };

    // best split of mass m between coordinates i and j, everything else in
    // `w` fixed; the restriction is an exact quadratic in the transfer, so
    // three evaluations pin the parabola
    let split_pair = |w: &[f64], i: usize, j: usize, m: f64| -> (f64, f64) {
        let eval = |t: f64| {
            let mut w = w.to_vec();
            w[i] = t;
            w[j] = m - t;
            norm_of(&w)
        };
        if m <= 0.0 {
            return (0.0, eval(0.0));
        }
        let f0 = eval(0.0);
        let fh = eval(0.5 * m);
        let f1 = eval(m);
        let a2 = 2.0 * (f0 - 2.0 * fh + f1) / (m * m);
        let a1 = (4.0 * fh - 3.0 * f0 - f1) / m;
        let t = if a2 > 0.0 {
            (-a1 / (2.0 * a2)).clamp(0.0, m)
        } else if f0 <= f1 {
            0.0
        } else {
            m
        };
        [(t, eval(t)), (0.0, f0), (m, f1)]
            .into_iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
    };

    let mut best_w = vec![0.0; n];
    best_w[0] = 1.0;
    let mut best_f = norm_of(&best_w);
    let mut consider = |w: &mut Vec<f64>| {
        let (t, f) = split_pair(w, n - 2, n - 1, 1.0 - w[..n - 2].iter().sum::<f64>());
        if f < best_f {
            best_f = f;
            w[n - 2] = t;
            w[n - 1] = 1.0 - w[..n - 1].iter().sum::<f64>();
            best_w = w.clone();
        }
    };
    match n {
        1 => {}
        2 | 3 => {
            let outer = if n == 2 { 0 } else { resolution };
            for k in 0..=outer {
                let mut w = vec![0.0; n];
                if n == 3 {
                    w[0] = k as f64 / resolution as f64;
                }
                consider(&mut w);
            }
        }
        _ => {
            for k1 in 0..=resolution {
                for k2 in 0..=(resolution - k1) {
                    let mut w = vec![0.0; n];
                    w[0] = k1 as f64 / resolution as f64;
                    w[1] = k2 as f64 / resolution as f64;
                    consider(&mut w);
                }
            }
        }
    }

    // pairwise polish over all coordinate pairs until the objective stalls
    let mut sweeps = 0;
    for _ in 0..500 {
        sweeps += 1;
        let before = best_f;
        for i in 0..n {
            for j in (i + 1)..n {
                let m = best_w[i] + best_w[j];
                let (t, ft) = split_pair(&best_w, i, j, m);
                if ft < best_f {
                    best_f = ft;
                    best_w[i] = t;
                    best_w[j] = m - t;
                }
            }
        }
        if before - best_f <= f64::EPSILON * (1.0 + before.abs()) {
            break;
        }
    }

    let sum: f64 = best_w.iter().sum();
    for w in &mut best_w {
        *w /= sum;
    }
    Ok(MinNormSolution {
        weights: best_w.clone(),
        norm_sq: norm_of(&best_w),
        gap: 0.0,
        iterations: sweeps,
    })
}

/// Loss value and shared-parameter gradient for one rate point, both taken
/// at the same parameter state.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub triple: LossTriple,
    pub shared: Vec<f64>,
}

/// One training objective exposing several rate points over a shared
/// parameter block plus per-point specific blocks.
///
/// `loss_and_grads` must evaluate at the current state and stash the
/// specific-parameter gradient internally; the drivers call it for every
/// point before applying any update, so all gradients see the pre-step
/// state.
pub trait MultiRateObjective {
    fn num_rates(&self) -> usize;
    fn shared_len(&self) -> usize;
    fn loss_and_grads(&mut self, i: usize) -> Result<GradientBundle>;
    /// Descend the specific block of point `i` using the gradient stashed by
    /// the matching `loss_and_grads` call.
    fn apply_specific(&mut self, i: usize, lr: f64) -> Result<()>;
    /// theta <- theta - lr * direction.
    fn apply_shared(&mut self, direction: &[f64], lr: f64) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub triples: Vec<LossTriple>,
    pub weights: Vec<f64>,
    pub norm_sq: f64,
    pub gap: f64,
    pub solver_iterations: usize,
}

impl StepDiagnostics {
    pub fn csv_header(n: usize) -> String {
        let mut cols = vec!["step".to_string()];
        for i in 0..n {
            cols.push(format!("loss_{i}"));
            cols.push(format!("rate_{i}"));
            cols.push(format!("dist_{i}"));
        }
        for i in 0..n {
            cols.push(format!("alpha_{i}"));
        }
        cols.push("norm_sq".to_string());
        cols.push("gap".to_string());
        cols.join(",")
    }

    pub fn csv_line(&self, step: usize) -> String {
        let mut cols = vec![step.to_string()];
        for t in &self.triples {
            cols.push(format!("{:.8}", t.loss));
            cols.push(format!("{:.8}", t.rate));
            cols.push(format!("{:.8}", t.distortion));
        }
        for w in &self.weights {
            cols.push(format!("{:.8}", w));
        }
        cols.push(format!("{:.6e}", self.norm_sq));
        cols.push(format!("{:.3e}", self.gap));
        cols.join(",")
    }
}

fn gather_bundles(
    obj: &mut dyn MultiRateObjective,
) -> Result<(Vec<LossTriple>, Vec<Vec<f64>>)> {
    let n = obj.num_rates();
    if n == 0 {
        return Err(Error::invalid("moo_step", "objective exposes no rate points"));
    }
    let shared_len = obj.shared_len();
    let mut triples = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let b = obj.loss_and_grads(i)?;
        if b.shared.len() != shared_len {
            return Err(Error::invalid(
                "moo_step",
                format!(
                    "point {i} returned {} shared gradient entries, expected {shared_len}",
                    b.shared.len()
                ),
            ));
        }
        triples.push(b.triple);
        grads.push(b.shared);
    }
    Ok((triples, grads))
}

/// One joint step: gradients for every point at the pre-update state, then
/// the specific blocks, then the min-norm weighted shared update.
pub fn mgda_step(obj: &mut dyn MultiRateObjective, lr: f64) -> Result<StepDiagnostics> {
    let (triples, grads) = gather_bundles(obj)?;
    for i in 0..obj.num_rates() {
        obj.apply_specific(i, lr)?;
    }
    let sol = min_norm_weights(&grads)?;
    let direction = combine(&grads, &sol.weights);
    obj.apply_shared(&direction, lr)?;
    Ok(StepDiagnostics {
        triples,
        weights: sol.weights,
        norm_sq: sol.norm_sq,
        gap: sol.gap,
        solver_iterations: sol.iterations,
    })
}

/// Plain summed-loss step over the same interface: the shared direction is
/// the unweighted gradient sum.
pub fn summed_loss_step(obj: &mut dyn MultiRateObjective, lr: f64) -> Result<StepDiagnostics> {
    let (triples, grads) = gather_bundles(obj)?;
    for i in 0..obj.num_rates() {
        obj.apply_specific(i, lr)?;
    }
    let n = grads.len();
    let direction = combine(&grads, &vec![1.0; n]);
    let norm_sq = dot(&direction, &direction);
    obj.apply_shared(&direction, lr)?;
    Ok(StepDiagnostics {
        triples,
        weights: vec![1.0; n],
        norm_sq,
        gap: 0.0,
        solver_iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn triples(losses: &[f64]) -> Vec<LossTriple> {
        losses
            .iter()
            .map(|&l| LossTriple::new(l, 0.0, 1.0).unwrap())
            .collect()
    }

    #[test]
    fn loss_triple_combines_rate_and_weighted_distortion() {
        let t = LossTriple::new(2.0, 0.5, 4.0).unwrap();
        assert_eq!(t.loss, 4.0);
        assert!(LossTriple::new(f64::NAN, 0.0, 1.0).is_err());
        assert!(LossTriple::new(1.0, 0.0, 0.0).is_err());
        assert!(LossTriple::new(1.0, 0.0, -2.0).is_err());
    }

    #[test]
    fn dominance_requires_one_strict_improvement() {
        let a = triples(&[1.0, 2.0]);
        let b = triples(&[1.0, 3.0]);
        assert!(dominates(&a, &b).unwrap());
        assert!(!dominates(&b, &a).unwrap());
        assert!(!dominates(&a, &a.clone()).unwrap());
        assert!(!dominates_strictly(&a, &b).unwrap());
        let c = triples(&[0.5, 2.5]);
        assert!(dominates_strictly(&c, &b).unwrap());
        assert!(!dominates(&c, &a).unwrap());
        assert!(dominates(&triples(&[1.0]), &triples(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn orthogonal_unit_gradients_get_equal_weights() {
        let sol = min_norm_weights(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((sol.weights[0] - 0.5).abs() < 1e-12);
        assert!((sol.weights[1] - 0.5).abs() < 1e-12);
        assert!((sol.norm_sq - 0.5).abs() < 1e-12);
    }

    #[test]
    fn opposed_gradients_cancel_exactly() {
        let sol = min_norm_weights(&[vec![2.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!((sol.weights[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((sol.weights[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(sol.norm_sq < 1e-24);
    }

    #[test]
    fn two_quadratics_are_stationary_between_their_minima() {
        // f1 = (x-1)^2, f2 = (x+1)^2
        let grad = |x: f64| (vec![2.0 * (x - 1.0)], vec![2.0 * (x + 1.0)]);
        let (g1, g2) = grad(0.0);
        let sol = min_norm_weights(&[g1, g2]).unwrap();
        assert!(sol.norm_sq < 1e-24);

        let (g1, g2) = grad(0.5);
        assert_eq!(g1, vec![-1.0]);
        assert_eq!(g2, vec![3.0]);
        let sol = min_norm_weights(&[g1, g2]).unwrap();
        assert!((sol.weights[0] - 0.75).abs() < 1e-12);
        assert!((sol.weights[1] - 0.25).abs() < 1e-12);
        assert!(sol.norm_sq < 1e-24);
    }

    #[test]
    fn single_gradient_passes_through() {
        let sol = min_norm_weights(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(sol.weights, vec![1.0]);
        assert!((sol.norm_sq - 25.0).abs() < 1e-12);
    }

    #[test]
    fn identical_gradients_break_toward_lowest_index() {
        let sol = min_norm_weights(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(sol.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn degenerate_input_is_rejected() {
        assert!(min_norm_weights(&[]).is_err());
        assert!(min_norm_weights(&[vec![]]).is_err());
        assert!(min_norm_weights(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(min_norm_weights(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn frank_wolfe_matches_two_point_closed_form() {
        // three gradients where one is a convex combination of the others,
        // so the optimum lies on the face spanned by the outer two
        let g1 = vec![2.0, 0.0, 1.0];
        let g2 = vec![-1.0, 1.0, 0.5];
        let g3: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let three = min_norm_weights(&[g1.clone(), g2.clone(), g3]).unwrap();
        let two = min_norm_weights(&[g1, g2]).unwrap();
        assert!((three.norm_sq - two.norm_sq).abs() < 1e-6);
    }

    #[test]
    fn solver_and_reference_agree_on_random_bundles() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..20 {
            let n = rng.gen_range(2..=4usize);
            let dim = rng.gen_range(3..12usize);
            let grads: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let fw = min_norm_weights(&grads).unwrap();
            let bf = min_norm_bruteforce(&grads, 40).unwrap();
            assert!(
                (fw.norm_sq - bf.norm_sq).abs() < 1e-6,
                "trial {trial}: fw {} vs bf {}",
                fw.norm_sq,
                bf.norm_sq
            );
        }
    }

    #[test]
    fn reference_solver_rejects_wide_bundles() {
        let g = vec![vec![1.0]; 5];
        assert!(min_norm_bruteforce(&g, 10).is_err());
        assert!(min_norm_bruteforce(&[vec![1.0]], 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn weights_always_live_on_the_simplex(
            flat in proptest::collection::vec(-5.0f64..5.0, 6..24),
            n in 2usize..=4,
        ) {
            let dim = flat.len() / n;
            prop_assume!(dim >= 1);
            let grads: Vec<Vec<f64>> = (0..n)
                .map(|i| flat[i * dim..(i + 1) * dim].to_vec())
                .collect();
            let sol = min_norm_weights(&grads).unwrap();
            let sum: f64 = sol.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(sol.weights.iter().all(|&w| (-1e-12..=1.0 + 1e-9).contains(&w)));
            prop_assert!(sol.norm_sq >= -1e-12);
            // hull membership: combination norm can never beat the best vertex pair
            let direct = combine(&grads, &sol.weights);
            prop_assert!((dot(&direct, &direct) - sol.norm_sq).abs() < 1e-9);
        }
    }

    // shared quadratic bowls with per-point specific scalars; loss_i =
    // |theta - c_i|^2 + (phi_i - d_i)^2
    struct QuadObjective {
        theta: Vec<f64>,
        phi: Vec<f64>,
        centers: Vec<Vec<f64>>,
        phi_targets: Vec<f64>,
        stashed_phi_grad: Vec<f64>,
        log: Vec<String>,
    }

    impl QuadObjective {
        fn new(theta: Vec<f64>, centers: Vec<Vec<f64>>, phi_targets: Vec<f64>) -> Self {
            let n = centers.len();
            QuadObjective {
                theta,
                phi: vec![0.0; n],
                centers,
                phi_targets,
                stashed_phi_grad: vec![0.0; n],
                log: Vec::new(),
            }
        }

        fn loss(&self, i: usize) -> f64 {
            let shared: f64 = self
                .theta
                .iter()
                .zip(&self.centers[i])
                .map(|(t, c)| (t - c) * (t - c))
                .sum();
            shared + (self.phi[i] - self.phi_targets[i]).powi(2)
        }
    }

    impl MultiRateObjective for QuadObjective {
        fn num_rates(&self) -> usize {
            self.centers.len()
        }

        fn shared_len(&self) -> usize {
            self.theta.len()
        }

        fn loss_and_grads(&mut self, i: usize) -> Result<GradientBundle> {
            self.log.push(format!("grad {i}"));
            let shared = self
                .theta
                .iter()
                .zip(&self.centers[i])
                .map(|(t, c)| 2.0 * (t - c))
                .collect();
            self.stashed_phi_grad[i] = 2.0 * (self.phi[i] - self.phi_targets[i]);
            Ok(GradientBundle {
                triple: LossTriple::new(self.loss(i), 0.0, 1.0)?,
                shared,
            })
        }

        fn apply_specific(&mut self, i: usize, lr: f64) -> Result<()> {
            self.log.push(format!("phi {i}"));
            self.phi[i] -= lr * self.stashed_phi_grad[i];
            Ok(())
        }

        fn apply_shared(&mut self, direction: &[f64], lr: f64) -> Result<()> {
            self.log.push("theta".to_string());
            for (t, d) in self.theta.iter_mut().zip(direction) {
                *t -= lr * d;
            }
            Ok(())
        }
    }

    #[test]
    fn step_gathers_all_gradients_before_any_update() {
        let mut obj = QuadObjective::new(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![1.0, -1.0, 0.5],
        );
        mgda_step(&mut obj, 0.1).unwrap();
        assert_eq!(
            obj.log,
            vec!["grad 0", "grad 1", "grad 2", "phi 0", "phi 1", "phi 2", "theta"]
        );
    }

    #[test]
    fn joint_step_never_raises_any_loss_on_convex_bowls() {
        let mut obj = QuadObjective::new(
            vec![0.3, -0.2, 0.0],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, -1.0],
                vec![-1.0, -1.0, 2.0],
            ],
            vec![1.0, -1.0, 0.5],
        );
        for _ in 0..50 {
            let before: Vec<f64> = (0..3).map(|i| obj.loss(i)).collect();
            mgda_step(&mut obj, 0.05).unwrap();
            let after: Vec<f64> = (0..3).map(|i| obj.loss(i)).collect();
            for (b, a) in before.iter().zip(&after) {
                assert!(*a <= b + 1e-9, "loss rose from {b} to {a}");
            }
        }
    }

    #[test]
    fn single_point_step_reduces_to_gradient_descent() {
        let mut obj = QuadObjective::new(vec![2.0, -1.0], vec![vec![0.5, 0.5]], vec![0.0]);
        mgda_step(&mut obj, 0.25).unwrap();
        // theta - lr * 2 (theta - c)
        assert!((obj.theta[0] - (2.0 - 0.25 * 2.0 * 1.5)).abs() < 1e-12);
        assert!((obj.theta[1] - (-1.0 - 0.25 * 2.0 * -1.5)).abs() < 1e-12);
    }

    #[test]
    fn summed_step_uses_unit_weights() {
        let mut obj = QuadObjective::new(
            vec![0.0],
            vec![vec![1.0], vec![-1.0]],
            vec![0.0, 0.0],
        );
        let diag = summed_loss_step(&mut obj, 0.1).unwrap();
        assert_eq!(diag.weights, vec![1.0, 1.0]);
        // opposing pulls cancel under summation
        assert!((obj.theta[0]).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_csv_shapes_match() {
        let header = StepDiagnostics::csv_header(2);
        assert_eq!(
            header,
            "step,loss_0,rate_0,dist_0,loss_1,rate_1,dist_1,alpha_0,alpha_1,norm_sq,gap"
        );
        let diag = StepDiagnostics {
            triples: triples(&[1.0, 2.0]),
            weights: vec![0.5, 0.5],
            norm_sq: 0.25,
            gap: 0.0,
            solver_iterations: 3,
        };
        let line = diag.csv_line(7);
        assert_eq!(line.split(',').count(), header.split(',').count());
        assert!(line.starts_with("7,"));
    }
}
