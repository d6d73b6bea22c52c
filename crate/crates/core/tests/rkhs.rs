//! RKHS-norm bound against the kernel quadratic form on a fine grid.

use nalgebra::{DMatrix, DVector};
use ppcpt_core::privacy::rkhs_norm_sq_bound;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let pieces = rng.random_range(1..8);
        let mut knots: Vec<f64> = (0..pieces - 1).map(|_| rng.random::<f64>()).collect();
        knots.push(0.0);
        knots.push(1.0);
        knots.sort_by(f64::total_cmp);
        let values = knots.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        Self { knots, values }
    }

    fn eval(&self, x: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= x).clamp(1, self.knots.len() - 1);
        let (x0, x1) = (self.knots[i - 1], self.knots[i]);
        let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        self.values[i - 1] + t * (self.values[i] - self.values[i - 1])
    }

    fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn lipschitz(&self) -> f64 {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .filter(|(k, _)| k[1] > k[0])
            .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
            .fold(0.0, f64::max)
    }
}

fn quadratic_form_norm(f: &PiecewiseLinear, beta: f64, grid: usize) -> f64 {
    let xs: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let k = DMatrix::from_fn(grid, grid, |i, j| (-beta * (xs[i] - xs[j]).abs()).exp());
    let phi = DVector::from_iterator(grid, xs.iter().map(|&x| f.eval(x)));
    let chol = k.cholesky().expect("exponential kernel matrices are positive definite");
    phi.dot(&chol.solve(&phi))
}

#[test]
fn bound_dominates_grid_norm_for_random_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..20 {
        let f = PiecewiseLinear::random(&mut rng);
        let beta = [0.2, 1.0, 5.0, 25.0][trial % 4];
        let norm = quadratic_form_norm(&f, beta, 300);
        let bound = rkhs_norm_sq_bound(f.sup_norm(), f.lipschitz(), beta);
        assert!(norm <= bound, "trial {trial}: grid norm {norm} exceeds bound {bound}");
    }
}

#[test]
fn constant_function_grid_norm_has_closed_form() {
    // On n equispaced points with correlation r = e^{-beta h}, the Markov
    // structure gives 1' K^{-1} 1 = 1 + (n - 1)(1 - r)/(1 + r), which tends
    // to 1 + beta/2, the value of the bound for a constant.
    let f = PiecewiseLinear { knots: vec![0.0, 1.0], values: vec![2.0, 2.0] };
    for beta in [0.5, 3.0] {
        let n = 400;
        let r = (-beta / (n - 1) as f64).exp();
        let closed = 4.0 * (1.0 + (n - 1) as f64 * (1.0 - r) / (1.0 + r));
        let norm = quadratic_form_norm(&f, beta, n);
        assert!((norm - closed).abs() < 1e-9 * closed, "{norm} vs {closed}");
        let bound = rkhs_norm_sq_bound(2.0, 0.0, beta);
        assert_eq!(bound, 4.0 * (1.0 + beta / 2.0));
        assert!(norm <= bound);
    }
}
