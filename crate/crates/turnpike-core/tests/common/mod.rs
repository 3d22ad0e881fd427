// each test binary compiles this module separately and uses a subset of it
#![allow(dead_code)]

//! Shared oracles for the integration tests.
//!
//! Everything here is deliberately independent of the library's linear
//! algebra: dense solves use hand-rolled Gaussian elimination and Hessians
//! of quadratic objectives are extracted by exact second differences, so
//! agreement between the oracle route and the library route is meaningful.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use turnpike_core::{BoxConstraints, CostSpec, LinearDynamics, ProblemInstance, SpatialGrid};

/// Smallest eigenvalue of `-lap_h` for the 3-point stencil on `(0, 1)` with
/// 3 interior points: `(2/h^2)(1 - cos(pi/4))` with `h = 1/4`.
pub const LAMBDA1_N3_L1: f64 = 32.0 - 16.0 * std::f64::consts::SQRT_2;

/// Closed-form smallest eigenvalue of `-lap_h` on `(0, length)` with `n`
/// interior points.
pub fn lambda1_closed_form(n: usize, length: f64) -> f64 {
    let h = length / (n + 1) as f64;
    2.0 / (h * h) * (1.0 - (std::f64::consts::PI / (n + 1) as f64).cos())
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting on plain
/// `Vec` rows (no factorization types involved).
pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "square system expected");
    assert_eq!(b.len(), n, "rhs size mismatch");
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a[(i, j)])
                .chain(std::iter::once(b[i]))
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        assert!(m[col][col].abs() > 1e-300, "singular oracle system");
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for j in col..=n {
                m[row][j] -= f * m[col][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for j in row + 1..n {
            acc -= m[row][j] * x[j];
        }
        x[row] = acc / m[row][row];
    }
    DVector::from_vec(x)
}

/// Central-difference gradient of `f` at `z`.
pub fn fd_gradient(
    mut f: impl FnMut(&DVector<f64>) -> f64,
    z: &DVector<f64>,
    step: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(z.len());
    let mut zp = z.clone();
    for i in 0..z.len() {
        let zi = z[i];
        zp[i] = zi + step;
        let fp = f(&zp);
        zp[i] = zi - step;
        let fm = f(&zp);
        zp[i] = zi;
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Componentwise agreement criterion for adjoint-vs-difference gradients:
/// the error is allowed to scale with the gradient's own magnitude.
pub fn gradients_agree(adj: &DVector<f64>, fd: &DVector<f64>, tol: f64) -> bool {
    let scale = fd.amax().max(1e-6);
    (0..adj.len()).all(|i| (adj[i] - fd[i]).abs() <= tol * scale.max(fd[i].abs()))
}

/// Exact normal form `(H, g, c)` of a quadratic `f(x) = x' H x / 2 + g' x + c`
/// recovered from unit-step second differences (exact for quadratics up to
/// round-off, no derivative code involved).
pub fn quadratic_normal_form(
    mut f: impl FnMut(&DVector<f64>) -> f64,
    dim: usize,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let unit = |i: usize| -> DVector<f64> {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        v
    };
    let c = f(&DVector::zeros(dim));
    let f_unit: Vec<f64> = (0..dim).map(|i| f(&unit(i))).collect();
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let mut two = DVector::zeros(dim);
        two[i] = 2.0;
        h[(i, i)] = f(&two) - 2.0 * f_unit[i] + c;
        for j in i + 1..dim {
            let mut both = unit(i);
            both[j] = 1.0;
            let hij = f(&both) - f_unit[i] - f_unit[j] + c;
            h[(i, j)] = hij;
            h[(j, i)] = hij;
        }
    }
    let g = DVector::from_iterator(dim, (0..dim).map(|i| f_unit[i] - c - 0.5 * h[(i, i)]));
    (h, g, c)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random heat instance: random control support, random smooth-ish target,
/// random bounded box, random initial state.
pub fn random_heat_instance(rng: &mut ChaCha8Rng) -> ProblemInstance {
    let n = rng.random_range(3..=6);
    let grid = SpatialGrid::new(n, 1.0);
    let mut support: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
    if support.is_empty() {
        support.push(rng.random_range(0..n));
    }
    let y_d = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
    let m = support.len();
    let lower = DVector::from_iterator(m, (0..m).map(|_| -rng.random_range(0.5..2.0)));
    let upper = DVector::from_iterator(m, (0..m).map(|_| rng.random_range(0.5..2.0)));
    let y0 = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
    let horizon = rng.random_range(0.3..1.2);
    let nt = rng.random_range(5..=12);
    ProblemInstance::heat_1d(
        &grid,
        &support,
        y_d,
        BoxConstraints::new(lower, upper).unwrap(),
        Some(y0),
        horizon,
        nt,
    )
    .unwrap()
}

/// Random stable finite-dimensional instance.
pub fn random_finite_dim_instance(rng: &mut ChaCha8Rng) -> ProblemInstance {
    let n = rng.random_range(2..=4);
    let m = rng.random_range(1..=3);
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    // push the spectrum into the left half plane
    let shift = a.amax() * (n as f64) + 0.2;
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let y_d = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
    let lower = DVector::from_iterator(m, (0..m).map(|_| -rng.random_range(0.5..3.0)));
    let upper = DVector::from_iterator(m, (0..m).map(|_| rng.random_range(0.5..3.0)));
    let y0 = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
    let horizon = rng.random_range(0.4..1.5);
    let nt = rng.random_range(4..=10);
    let mut cost = CostSpec::tracking(y_d);
    cost.state_weight = rng.random_range(0.5..2.0);
    cost.control_weight = rng.random_range(0.5..2.0);
    ProblemInstance::finite_dim(
        LinearDynamics::new(a, b).unwrap(),
        cost,
        BoxConstraints::new(lower, upper).unwrap(),
        Some(y0),
        horizon,
        nt,
    )
    .unwrap()
}
