//! Small dense convex QP solver for diagonal quadratic costs.
//!
//! The per-vehicle program is `min 1/2 z' D z + c' z  s.t.  G z >= h` with a
//! strictly positive diagonal D and a few dozen rows at most. Substituting
//! `w = D^{1/2} (z - z_unc)` around the unconstrained minimizer turns it into
//! a least-distance program, which reduces to one non-negative least squares
//! solve (Lawson & Hanson): with `E = [A'; b']` and `f = (0, .., 0, 1)'`, the
//! NNLS residual `r = E q - f` either vanishes (no feasible point) or yields
//! the projection `w_j = -r_j / r_last`.

/// One inequality `coeffs . z >= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpOutcome {
    Optimal(Vec<f64>),
    Infeasible,
}

/// Row coefficients at or below this magnitude count as structurally zero.
const ZERO_ROW_TOL: f64 = 1e-13;
/// NNLS residual norms at or below this mean the constraint system is empty
/// of feasible points.
const FEAS_TOL: f64 = 1e-10;

/// Minimize `1/2 z' diag(d) z + c' z` subject to every row's `coeffs . z >= rhs`.
///
/// Panics on dimension mismatches or non-positive diagonal entries; those are
/// construction bugs, not runtime conditions.
pub fn minimize_diagonal(diag: &[f64], lin: &[f64], rows: &[InequalityRow]) -> QpOutcome {
    let n = diag.len();
    assert_eq!(lin.len(), n, "cost dimension mismatch");
    assert!(diag.iter().all(|&d| d > 0.0), "diagonal must be positive definite");

    let z_unc: Vec<f64> = (0..n).map(|j| -lin[j] / diag[j]).collect();
    let sqrt_d: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();

    // Transform rows to the least-distance frame, dropping trivial ones.
    let mut a_rows: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut b: Vec<f64> = Vec::with_capacity(rows.len());
    for row in rows {
        assert_eq!(row.coeffs.len(), n, "row dimension mismatch");
        let margin: f64 =
            row.rhs - row.coeffs.iter().zip(&z_unc).map(|(g, z)| g * z).sum::<f64>();
        if row.coeffs.iter().all(|g| g.abs() <= ZERO_ROW_TOL) {
            if margin > FEAS_TOL {
                return QpOutcome::Infeasible;
            }
            continue;
        }
        a_rows.push(row.coeffs.iter().zip(&sqrt_d).map(|(g, s)| g / s).collect());
        b.push(margin);
    }

    // The unconstrained minimizer already satisfies everything.
    if b.iter().all(|&bi| bi <= 0.0) {
        return QpOutcome::Optimal(z_unc);
    }

    let m = a_rows.len();
    // E is (n+1) x m: column j is (a_j, b_j).
    let e_rows = n + 1;
    let mut e = vec![0.0; e_rows * m];
    for (j, (a_j, &b_j)) in a_rows.iter().zip(&b).enumerate() {
        for (i, &a_ij) in a_j.iter().enumerate() {
            e[i * m + j] = a_ij;
        }
        e[n * m + j] = b_j;
    }
    let mut f = vec![0.0; e_rows];
    f[n] = 1.0;

    let q = nnls(&e, e_rows, m, &f);

    // Residual r = E q - f decides feasibility and carries the projection.
    let mut r = vec![0.0; e_rows];
    for i in 0..e_rows {
        let mut acc = -f[i];
        for (j, &qj) in q.iter().enumerate() {
            acc += e[i * m + j] * qj;
        }
        r[i] = acc;
    }
    let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r_last = r[n];
    if r_norm <= FEAS_TOL || r_last.abs() <= 1e-12 {
        return QpOutcome::Infeasible;
    }
    let z: Vec<f64> = (0..n).map(|j| z_unc[j] + (-r[j] / r_last) / sqrt_d[j]).collect();
    QpOutcome::Optimal(z)
}

/// Lawson-Hanson non-negative least squares: `min || E q - f ||, q >= 0`.
/// `e` is row-major `rows x cols`.
fn nnls(e: &[f64], rows: usize, cols: usize, f: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; cols];
    let mut passive = vec![false; cols];
    let mut resid = f.to_vec();
    let grad_tol = 1e-11
        * (0..cols)
            .map(|j| (0..rows).map(|i| e[i * cols + j].abs()).fold(0.0, f64::max))
            .fold(1.0, f64::max);

    for _ in 0..3 * cols.max(8) {
        // Most negative-gradient candidate outside the passive set.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..cols {
            if passive[j] {
                continue;
            }
            let g: f64 = (0..rows).map(|i| e[i * cols + j] * resid[i]).sum();
            if g > grad_tol && best.map_or(true, |(_, bg)| g > bg) {
                best = Some((j, g));
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        // Inner loop: restrict to the passive set until the subproblem
        // solution is strictly positive.
        loop {
            let members: Vec<usize> =
                (0..cols).filter(|&j| passive[j]).collect();
            let s = least_squares_subset(e, rows, cols, f, &members);
            if s.iter().all(|&v| v > 0.0) {
                for (idx, &j) in members.iter().enumerate() {
                    q[j] = s[idx];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (idx, &j) in members.iter().enumerate() {
                if s[idx] <= 0.0 {
                    let step = q[j] / (q[j] - s[idx]);
                    alpha = alpha.min(step);
                }
            }
            for (idx, &j) in members.iter().enumerate() {
                q[j] += alpha * (s[idx] - q[j]);
                if q[j] <= 1e-14 {
                    q[j] = 0.0;
                    passive[j] = false;
                }
            }
        }

        for i in 0..rows {
            let mut acc = f[i];
            for (j, &qj) in q.iter().enumerate() {
                acc -= e[i * cols + j] * qj;
            }
            resid[i] = acc;
        }
    }
    q
}

/// Least squares `min || E[:, members] s - f ||` via Householder QR.
fn least_squares_subset(
    e: &[f64],
    rows: usize,
    cols: usize,
    f: &[f64],
    members: &[usize],
) -> Vec<f64> {
    let p = members.len();
    let mut a = vec![0.0; rows * p];
    for (k, &j) in members.iter().enumerate() {
        for i in 0..rows {
            a[i * p + k] = e[i * cols + j];
        }
    }
    let mut rhs = f.to_vec();

    for k in 0..p.min(rows) {
        // Householder reflector clearing column k below the diagonal.
        let mut norm: f64 = 0.0;
        for i in k..rows {
            norm += a[i * p + k] * a[i * p + k];
        }
        let norm = norm.sqrt();
        if norm <= 1e-300 {
            continue;
        }
        let alpha = if a[k * p + k] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; rows - k];
        v[0] = a[k * p + k] - alpha;
        for i in (k + 1)..rows {
            v[i - k] = a[i * p + k];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv <= 1e-300 {
            continue;
        }
        for col in k..p {
            let dot: f64 = (k..rows).map(|i| v[i - k] * a[i * p + col]).sum();
            let scale = 2.0 * dot / vtv;
            for i in k..rows {
                a[i * p + col] -= scale * v[i - k];
            }
        }
        let dot: f64 = (k..rows).map(|i| v[i - k] * rhs[i]).sum();
        let scale = 2.0 * dot / vtv;
        for i in k..rows {
            rhs[i] -= scale * v[i - k];
        }
    }

    // Back substitution on the triangular factor.
    let mut s = vec![0.0; p];
    for k in (0..p.min(rows)).rev() {
        let mut acc = rhs[k];
        for col in (k + 1)..p {
            acc -= a[k * p + col] * s[col];
        }
        let pivot = a[k * p + k];
        s[k] = if pivot.abs() > 1e-300 { acc / pivot } else { 0.0 };
    }
    s
}
