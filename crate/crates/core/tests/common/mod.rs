//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the library's solvers: dense linear algebra,
//! neighbour arithmetic and matrix exponentials are all done from scratch so
//! that agreement means something.
#![allow(dead_code)]

use rand::Rng;
use trapsim::environment::WField;
use trapsim::lattice::TorusSpec;

/// Neighbours of flat index `x` on `(Z/NZ)^d`, row-major with the last
/// coordinate fastest.
pub fn torus_neighbors(d: usize, n: usize, x: usize) -> Vec<usize> {
    let mut coords = vec![0usize; d];
    let mut rest = x;
    for c in coords.iter_mut().rev() {
        *c = rest % n;
        rest /= n;
    }
    let mut out = Vec::with_capacity(2 * d);
    for axis in 0..d {
        for delta in [1, n - 1] {
            let mut c = coords.clone();
            c[axis] = (c[axis] + delta) % n;
            out.push(c.iter().fold(0, |acc, &v| acc * n + v));
        }
    }
    out
}

/// Gaussian elimination with partial pivoting; `a` is row-major `k × k`.
pub fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    assert_eq!(a.len(), k * k);
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs())).unwrap();
        if piv != col {
            for c in 0..k {
                a.swap(piv * k + c, col * k + c);
            }
            b.swap(piv, col);
        }
        let p = a[col * k + col];
        assert!(p.abs() > 1e-300, "singular system");
        for r in col + 1..k {
            let f = a[r * k + col] / p;
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                a[r * k + c] -= f * a[col * k + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r * k + c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r * k + r];
    }
    x
}

pub fn matmul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..k {
                out[i * k + j] += ail * b[l * k + j];
            }
        }
    }
    out
}

/// `exp(a)` by scaling and squaring with a degree-20 Taylor polynomial.
pub fn expm(a: &[f64], k: usize) -> Vec<f64> {
    let norm = (0..k).map(|i| (0..k).map(|j| a[i * k + j].abs()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(s as i32);
    let a: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let mut out = vec![0.0; k * k];
    let mut term = vec![0.0; k * k];
    for i in 0..k {
        out[i * k + i] = 1.0;
        term[i * k + i] = 1.0;
    }
    for p in 1..=20 {
        term = matmul(&term, &a, k);
        for v in term.iter_mut() {
            *v /= p as f64;
        }
        for (o, t) in out.iter_mut().zip(&term) {
            *o += t;
        }
    }
    for _ in 0..s {
        out = matmul(&out, &out, k);
    }
    out
}

/// Row vector `p` times `m`.
pub fn vec_mat(p: &[f64], m: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|j| (0..k).map(|i| p[i] * m[i * k + j]).sum()).collect()
}

/// `m` times column vector `v`.
pub fn mat_vec(m: &[f64], v: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|i| (0..k).map(|j| m[i * k + j] * v[j]).sum()).collect()
}

/// Full generator of the trap chain: rate `1/(2d W_x)` to each neighbour.
pub fn chain_generator(d: usize, n: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let mut q = vec![0.0; k * k];
    for x in 0..k {
        let r = 1.0 / (2.0 * d as f64 * w[x]);
        for y in torus_neighbors(d, n, x) {
            q[x * k + y] += r;
            q[x * k + x] -= r;
        }
    }
    q
}

/// Trace generator on `f` as the Schur complement
/// `Q_FF - Q_FG Q_GG^{-1} Q_GF` of the full generator.
pub fn schur_trace(q: &[f64], k: usize, f: &[usize]) -> Vec<f64> {
    let g: Vec<usize> = (0..k).filter(|x| !f.contains(x)).collect();
    let (m, r) = (f.len(), g.len());
    let mut out = vec![0.0; m * m];
    for (i, &x) in f.iter().enumerate() {
        for (j, &y) in f.iter().enumerate() {
            out[i * m + j] = q[x * k + y];
        }
    }
    if r == 0 {
        return out;
    }
    let qgg: Vec<f64> = g.iter().flat_map(|&a| g.iter().map(move |&b| q[a * k + b])).collect();
    for (j, &y) in f.iter().enumerate() {
        let col: Vec<f64> = g.iter().map(|&a| q[a * k + y]).collect();
        let sol = gauss_solve(qgg.clone(), col);
        for (i, &x) in f.iter().enumerate() {
            let s: f64 = g.iter().zip(&sol).map(|(&a, v)| q[x * k + a] * v).sum();
            out[i * m + j] -= s;
        }
    }
    out
}

/// `P_x[H(A) < H(B)]` for the simple random walk, by dense elimination.
pub fn harmonic_oracle(d: usize, n: usize, a: &[usize], b: &[usize]) -> Vec<f64> {
    let k = n.pow(d as u32);
    let free: Vec<usize> = (0..k).filter(|x| !a.contains(x) && !b.contains(x)).collect();
    let pos = |x: usize| free.iter().position(|&y| y == x);
    let r = free.len();
    let mut mat = vec![0.0; r * r];
    let mut rhs = vec![0.0; r];
    for (i, &x) in free.iter().enumerate() {
        mat[i * r + i] = 2.0 * d as f64;
        for y in torus_neighbors(d, n, x) {
            if a.contains(&y) {
                rhs[i] += 1.0;
            } else if let Some(j) = pos(y) {
                mat[i * r + j] -= 1.0;
            }
        }
    }
    let sol = gauss_solve(mat, rhs);
    let mut f = vec![0.0; k];
    for &x in a {
        f[x] = 1.0;
    }
    for (i, &x) in free.iter().enumerate() {
        f[x] = sol[i];
    }
    f
}

/// `Cap({a}, B)` as the escape probability `P_a[H(B) < H^+(a)]`.
pub fn point_capacity_oracle(d: usize, n: usize, a: usize, b: &[usize]) -> f64 {
    let f = harmonic_oracle(d, n, &[a], b);
    let nb = torus_neighbors(d, n, a);
    1.0 - nb.iter().map(|&y| f[y]).sum::<f64>() / nb.len() as f64
}

/// Log-uniform field on `[e^-3, e^3]`.
pub fn random_field<R: Rng>(spec: TorusSpec, rng: &mut R) -> WField {
    let values = (0..spec.sites()).map(|_| rng.random_range(-3.0..3.0f64).exp()).collect();
    WField::from_values(spec, values).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
