//! Reference computations shared by the integration tests. Nothing here
//! calls into the library's numerics, so each helper is an independent
//! oracle for the routine it is compared against.

#![allow(dead_code)]

use gridftc::power::LinearizedPlant;
use nalgebra::{DMatrix, Matrix3, RowVector3, Vector3};
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::Rng;

/// Exact rank of an integer matrix by fraction-free Gaussian elimination.
pub fn bareiss_rank(m: &[Vec<i64>]) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut a: Vec<Vec<BigInt>> = m.iter().map(|r| r.iter().map(|&v| BigInt::from(v)).collect()).collect();
    let mut prev = BigInt::from(1);
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(p) = (rank..rows).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        for r in rank + 1..rows {
            for c in col + 1..cols {
                let v = &a[rank][col] * &a[r][c] - &a[r][col] * &a[rank][c];
                assert!((&v % &prev).is_zero(), "Bareiss division must be exact");
                a[r][c] = v / &prev;
            }
            a[r][col] = BigInt::zero();
        }
        prev = a[rank][col].abs();
        rank += 1;
    }
    rank
}

/// Integer observability matrix `[C; CA; …; CA^{n−1}]`.
pub fn int_observability(a: &[Vec<i64>], c: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let n = a.len();
    let mut out = Vec::new();
    let mut block: Vec<Vec<i64>> = c.to_vec();
    for _ in 0..n {
        out.extend(block.iter().cloned());
        block = block
            .iter()
            .map(|row| (0..n).map(|j| (0..n).map(|k| row[k] * a[k][j]).sum()).collect())
            .collect();
    }
    out
}

pub fn to_f64(m: &[Vec<i64>]) -> DMatrix<f64> {
    let cols = m.first().map_or(0, Vec::len);
    DMatrix::from_fn(m.len(), cols, |i, j| m[i][j] as f64)
}

/// Rank from singular values relative to the largest one.
pub fn svd_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

pub fn svd_observable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut o = DMatrix::zeros(c.nrows() * n, n);
    let mut blk = c.clone();
    for k in 0..n {
        o.view_mut((k * c.nrows(), 0), (c.nrows(), n)).copy_from(&blk);
        blk = &blk * a;
    }
    svd_rank(&o, 1e-9) == n
}

pub fn max_real_eig(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Random `n × n` matrix shifted so that its spectral abscissa is `-margin`.
pub fn random_hurwitz<R: Rng>(rng: &mut R, n: usize, margin: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let shift = max_real_eig(&m) + margin;
    m - DMatrix::identity(n, n) * shift
}

/// Solves `AᵀW + WA + Q = 0` through the Kronecker-sum linear system.
pub fn lyapunov_kron(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = nalgebra::DVector::from_column_slice((-q).as_slice());
    let w = k.lu().solve(&rhs).expect("Kronecker sum is nonsingular for Hurwitz A");
    DMatrix::from_column_slice(n, n, w.as_slice())
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(order);
    for i in 0..order {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `∫₀^∞ trace(e^{Aᵀt} CᵀC e^{At}) dt` by composite Gauss-Legendre
/// quadrature, panel by panel until the integrand has decayed.
pub fn gramian_trace_quadrature(a: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let nodes = gauss_legendre(10);
    let h = 0.5 / a.norm().max(1e-3);
    let step = (a * h).exp();
    let local: Vec<(DMatrix<f64>, f64)> = nodes.iter().map(|&(x, w)| ((a * (0.5 * h * (x + 1.0))).exp(), 0.5 * h * w)).collect();
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut total = 0.0;
    for _ in 0..10_000_000 {
        let mut panel = 0.0;
        for (e, w) in &local {
            let m = c * e * &phi;
            panel += w * m.norm_squared();
        }
        total += panel;
        phi = &step * &phi;
        if panel < 1e-16 * total && phi.norm() < 1e-8 {
            break;
        }
    }
    total
}

/// Nonlinear third-order machine model written out longhand. Returns
/// `dx/dt` at the deviation state `x` with absolute field inputs `u`.
pub fn reference_rhs(plant: &gridftc::power::PlantModel, x: &[f64], u: &[f64]) -> Vec<f64> {
    let n = plant.n();
    let op = &plant.operating_point;
    let (g, b) = (&plant.network.g, &plant.network.b);
    let delta: Vec<f64> = (0..n).map(|i| op.delta0[i] + x[3 * i]).collect();
    let e: Vec<f64> = (0..n).map(|i| op.eq_prime0[i] + x[3 * i + 2]).collect();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let gen = &plant.generators[i];
        let mut id = 0.0;
        let mut iq = 0.0;
        for j in 0..n {
            let ang = delta[i] - delta[j];
            id += e[j] * (g[(i, j)] * ang.sin() - b[(i, j)] * ang.cos());
            iq += e[j] * (b[(i, j)] * ang.sin() + g[(i, j)] * ang.cos());
        }
        let pe = e[i] * iq;
        let eq = e[i] + (gen.xd - gen.xd_prime) * id;
        out[3 * i] = x[3 * i + 1];
        out[3 * i + 1] = (-gen.damping * x[3 * i + 1] + gen.omega0 * (gen.pm - pe)) / (2.0 * gen.inertia);
        out[3 * i + 2] = (u[i] - eq) / gen.tdo_prime;
    }
    out
}

/// Central-difference Jacobian of [`reference_rhs`] at zero deviation.
pub fn fd_jacobian(plant: &gridftc::power::PlantModel, h: f64) -> DMatrix<f64> {
    let n = 3 * plant.n();
    let u = plant.operating_point.ef0.clone();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut xp = vec![0.0; n];
        let mut xm = vec![0.0; n];
        xp[k] = h;
        xm[k] = -h;
        let fp = reference_rhs(plant, &xp, &u);
        let fm = reference_rhs(plant, &xm, &u);
        for r in 0..n {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

/// Largest entrywise relative error. Entries are compared against the
/// larger of their own magnitude and `floor`.
pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub struct Oracle {
    pub set: Vec<usize>,
    pub j: f64,
}

/// Exhaustive search: every set containing the faulty subsystem, screened
/// for observability and stability, ranked by size, then cost, then ids.
pub fn brute_force(lin: &LinearizedPlant, faulty: usize, alpha: f64, xi: f64) -> Option<Oracle> {
    let n = lin.n();
    let others: Vec<usize> = (1..=n).filter(|&i| i != faulty).collect();
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for mask in 1..(1_u32 << others.len()) {
        let mut set = vec![faulty];
        set.extend(others.iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0).map(|(_, &i)| i));
        let m = set.len();
        let a = DMatrix::from_fn(3 * m, 3 * m, |r, c| {
            let (i, j) = (set[r / 3] - 1, set[c / 3] - 1);
            if i == j { lin.a[i][(r % 3, c % 3)] } else { lin.gint[i][j][(r % 3, c % 3)] }
        });
        let b = DMatrix::from_fn(3 * m, m, |r, c| if r / 3 == c { lin.bsub[set[c] - 1][r % 3] } else { 0.0 });
        let ch = DMatrix::from_fn(m, 3 * m, |r, c| if c / 3 == r { lin.csub[set[r] - 1][c % 3] } else { 0.0 });
        let mut cf = ch.clone();
        cf.row_mut(0).fill(0.0);
        if !svd_observable(&a, &cf) || max_real_eig(&a) >= 0.0 {
            continue;
        }
        let wo = lyapunov_kron(&a, &(cf.transpose() * &cf));
        let wc = lyapunov_kron(&a.transpose(), &(&b * b.transpose()));
        let gap = (&ch * &wc * ch.transpose()).trace() - (&cf * &wc * cf.transpose()).trace();
        let j = alpha / wo.trace().powi(2) + xi * gap.max(0.0);
        let mut key = set.clone();
        key.sort_unstable();
        let better = match &best {
            None => true,
            Some((bm, bj, bk)) => (m, j) < (*bm, *bj) || (m == *bm && j == *bj && key < *bk),
        };
        if better {
            best = Some((m, j, key));
        }
    }
    best.map(|(_, j, set)| Oracle { set, j })
}

pub fn machine_block(k: f64, d: f64, a23: f64, a31: f64, a33: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, 1.0, 0.0, -k, -d, -a23, -a31, 0.0, -a33)
}

pub fn coupling(g21: f64, g23: f64, g31: f64, g33: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 0.0, g21, 0.0, g23, g31, 0.0, g33)
}

/// Four machines. Machine 2 never hears from machine 1, and machines 1
/// and 4 pull each other's angles hard enough that their pair is unstable.
pub fn engineered() -> LinearizedPlant {
    let a = vec![
        machine_block(2.0, 0.8, 0.5, 0.3, 0.6),
        machine_block(3.0, 1.0, 0.4, 0.2, 0.5),
        machine_block(1.5, 0.6, 0.3, 0.1, 0.4),
        machine_block(2.5, 0.9, 0.6, 0.2, 0.7),
    ];
    let mut g = vec![vec![Matrix3::zeros(); 4]; 4];
    g[0][1] = coupling(0.2, 0.1, 0.05, 0.02);
    g[0][2] = coupling(0.3, 0.1, 0.0, 0.03);
    g[0][3] = coupling(4.0, 0.0, 0.0, 0.0);
    g[1][2] = coupling(0.25, 0.05, 0.02, 0.0);
    g[1][3] = coupling(0.1, 0.0, 0.0, 0.01);
    g[2][0] = coupling(0.4, 0.1, 0.05, 0.0);
    g[2][1] = coupling(0.3, 0.05, 0.0, 0.02);
    g[2][3] = coupling(0.15, 0.0, 0.0, 0.02);
    g[3][0] = coupling(4.0, 0.0, 0.0, 0.0);
    g[3][2] = coupling(0.2, 0.0, 0.03, 0.0);
    LinearizedPlant {
        a,
        gint: g,
        bsub: vec![Vector3::new(0.0, 0.0, 0.2); 4],
        csub: vec![RowVector3::new(1.0, 0.0, 0.0); 4],
    }
}

