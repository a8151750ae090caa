//! Euclidean projection onto one quadric `{p : p^T D p - 2 d^T p = α}`.
//!
//! Stationarity gives `p(μ) = (I + μD)⁻¹(ζ + μd)`. In the eigenbasis of `D` the
//! constraint becomes a scalar secular equation in `μ` with poles at `-1/λ_i`.
//! Every interval between consecutive poles is scanned for sign changes, each
//! bracket is bisected and then Newton-polished, and the candidate closest to
//! `ζ` wins. Removable poles (the "hard case") contribute extra candidates.

use nalgebra::{DMatrix, DVector};

use crate::error::{OparcError, Result};

const ZERO_EIGEN_REL: f64 = 1e-12;
const SAMPLES_PER_SIDE: usize = 96;

/// Quadric constraint with a cached eigendecomposition of `D`.
#[derive(Debug, Clone)]
pub struct Quadric {
    pub d_mat: DMatrix<f64>,
    pub d_vec: DVector<f64>,
    pub alpha: f64,
    eigvals: Vec<f64>,
    eigvecs: DMatrix<f64>,
    d_hat: DVector<f64>,
}

impl Quadric {
    pub fn new(d_mat: DMatrix<f64>, d_vec: DVector<f64>, alpha: f64) -> Result<Self> {
        let n = d_vec.len();
        if d_mat.nrows() != n || d_mat.ncols() != n {
            return Err(OparcError::Dimension(format!("D is {}x{}, d has {n} entries", d_mat.nrows(), d_mat.ncols())));
        }
        let eig = d_mat.clone().symmetric_eigen();
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eigvals = eig
            .eigenvalues
            .iter()
            .map(|&l| if l.abs() <= ZERO_EIGEN_REL * scale { 0.0 } else { l })
            .collect();
        let d_hat = eig.eigenvectors.transpose() * &d_vec;
        Ok(Self { d_mat, d_vec, alpha, eigvals, eigvecs: eig.eigenvectors, d_hat })
    }

    /// `p^T D p - 2 d^T p - α`.
    pub fn residual(&self, p: &DVector<f64>) -> f64 {
        p.dot(&(&self.d_mat * p)) - 2.0 * self.d_vec.dot(p) - self.alpha
    }

    pub fn tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.alpha.abs())
    }

    /// Closest point of the quadric to `zeta`.
    pub fn project(&self, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        if zeta.len() != self.d_vec.len() {
            return Err(OparcError::Dimension("projection point has wrong length".into()));
        }
        if self.residual(zeta).abs() <= 1e-12 * (1.0 + self.alpha.abs()) {
            return Ok(zeta.clone());
        }
        let z_hat = self.eigvecs.transpose() * zeta;
        let sec = Secular { lam: &self.eigvals, z: z_hat.as_slice(), d: self.d_hat.as_slice(), alpha: self.alpha };

        let mut candidates: Vec<DVector<f64>> = Vec::new();
        for mu in sec.roots() {
            candidates.push(sec.point(mu));
        }
        candidates.extend(sec.hard_case_points());

        let mut best: Option<(f64, DVector<f64>)> = None;
        for p_hat in candidates {
            let p = &self.eigvecs * &p_hat;
            if !p.iter().all(|v| v.is_finite()) || self.residual(&p).abs() > self.tolerance() {
                continue;
            }
            let dist = (&p - zeta).norm_squared();
            if best.as_ref().map_or(true, |(b, _)| dist < *b) {
                best = Some((dist, p));
            }
        }
        best.map(|(_, p)| p).ok_or(OparcError::ProjectionInfeasible)
    }
}

/// Secular function in the eigenbasis.
struct Secular<'a> {
    lam: &'a [f64],
    z: &'a [f64],
    d: &'a [f64],
    alpha: f64,
}

impl Secular<'_> {
    fn point(&self, mu: f64) -> DVector<f64> {
        DVector::from_iterator(self.lam.len(), (0..self.lam.len()).map(|i| (self.z[i] + mu * self.d[i]) / (1.0 + mu * self.lam[i])))
    }

    fn value(&self, mu: f64) -> f64 {
        let mut f = -self.alpha;
        for i in 0..self.lam.len() {
            let p = (self.z[i] + mu * self.d[i]) / (1.0 + mu * self.lam[i]);
            f += self.lam[i] * p * p - 2.0 * self.d[i] * p;
        }
        f
    }

    fn derivative(&self, mu: f64) -> f64 {
        // dφ/dμ = -2 Σ (d_i - λ_i z_i)² / (1 + μ λ_i)³
        let mut g = 0.0;
        for i in 0..self.lam.len() {
            let num = self.d[i] - self.lam[i] * self.z[i];
            let den = 1.0 + mu * self.lam[i];
            g -= 2.0 * num * num / (den * den * den);
        }
        g
    }

    fn poles(&self) -> Vec<f64> {
        let mut poles: Vec<f64> = self.lam.iter().filter(|&&l| l != 0.0).map(|&l| -1.0 / l).collect();
        poles.sort_by(f64::total_cmp);
        poles.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()));
        poles
    }

    /// Sample abscissae strictly inside `(lo, hi)`, geometrically clustered at both ends.
    fn samples(lo: f64, hi: f64, scale: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let exps = |k: usize| -16.0 + 32.0 * k as f64 / (SAMPLES_PER_SIDE - 1) as f64;
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => {
                let half = 0.5 * (hi - lo);
                for k in 0..SAMPLES_PER_SIDE {
                    let e = -16.0 + 16.0 * k as f64 / (SAMPLES_PER_SIDE - 1) as f64;
                    out.push(lo + half * 10f64.powf(e));
                }
                for k in (0..SAMPLES_PER_SIDE - 1).rev() {
                    let e = -16.0 + 16.0 * k as f64 / (SAMPLES_PER_SIDE - 1) as f64;
                    out.push(hi - half * 10f64.powf(e));
                }
            }
            (true, false) => {
                for k in 0..SAMPLES_PER_SIDE {
                    out.push(lo + scale * 10f64.powf(exps(k)));
                }
            }
            (false, true) => {
                for k in (0..SAMPLES_PER_SIDE).rev() {
                    out.push(hi - scale * 10f64.powf(exps(k)));
                }
            }
            (false, false) => {
                for k in (0..SAMPLES_PER_SIDE).rev() {
                    out.push(-scale * 10f64.powf(exps(k)));
                }
                out.push(0.0);
                for k in 0..SAMPLES_PER_SIDE {
                    out.push(scale * 10f64.powf(exps(k)));
                }
            }
        }
        out.retain(|&m| m > lo && m < hi);
        out.dedup();
        out
    }

    fn roots(&self) -> Vec<f64> {
        let poles = self.poles();
        let scale = self.lam.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let scale = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        let mut bounds = vec![f64::NEG_INFINITY];
        bounds.extend(poles.iter().copied());
        bounds.push(f64::INFINITY);

        let mut roots = Vec::new();
        for w in bounds.windows(2) {
            let anchor = match (w[0].is_finite(), w[1].is_finite()) {
                (true, _) => w[0].abs(),
                (false, true) => w[1].abs(),
                (false, false) => 0.0,
            };
            let xs = Self::samples(w[0], w[1], scale.max(anchor));
            let fs: Vec<f64> = xs.iter().map(|&m| self.value(m)).collect();
            for i in 0..xs.len() {
                if fs[i] == 0.0 {
                    roots.push(xs[i]);
                }
                if i + 1 < xs.len() && fs[i].is_finite() && fs[i + 1].is_finite() && fs[i] * fs[i + 1] < 0.0 {
                    roots.push(self.refine(xs[i], xs[i + 1], fs[i]));
                }
            }
        }
        roots
    }

    /// Bisection to ~1e-12 relative width, then guarded Newton steps.
    fn refine(&self, mut a: f64, mut b: f64, fa: f64) -> f64 {
        let mut fa = fa;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if (b - a).abs() <= 1e-12 * m.abs().max(1e-300) {
                break;
            }
            let fm = self.value(m);
            if fm == 0.0 {
                return m;
            }
            if fa * fm < 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
        }
        let mut mu = 0.5 * (a + b);
        for _ in 0..8 {
            let f = self.value(mu);
            let g = self.derivative(mu);
            if f == 0.0 || g == 0.0 || !g.is_finite() {
                break;
            }
            let next = mu - f / g;
            if !(next >= a && next <= b) {
                break;
            }
            if next == mu {
                break;
            }
            mu = next;
        }
        mu
    }

    /// Points at removable poles, where the components of that eigenspace are free.
    fn hard_case_points(&self) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        let scale = self.lam.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(1e-300);
        for pole in self.poles() {
            let group: Vec<usize> = (0..self.lam.len())
                .filter(|&i| self.lam[i] != 0.0 && ((-1.0 / self.lam[i]) - pole).abs() <= 1e-12 * pole.abs())
                .collect();
            let removable = group.iter().all(|&i| {
                let num = self.lam[i] * self.z[i] - self.d[i];
                num.abs() <= 1e-12 * (scale * self.z[i].abs() + self.d[i].abs() + 1e-300)
            });
            if !removable {
                continue;
            }
            let lam = self.lam[group[0]];
            let mut base = DVector::zeros(self.lam.len());
            let mut rest = 0.0;
            for i in 0..self.lam.len() {
                if group.contains(&i) {
                    continue;
                }
                let p = (self.z[i] + pole * self.d[i]) / (1.0 + pole * self.lam[i]);
                base[i] = p;
                rest += self.lam[i] * p * p - 2.0 * self.d[i] * p;
            }
            // λ Σ_G [(p_j - z_j)² - z_j²] = α - rest
            let r2 = (self.alpha - rest) / lam + group.iter().map(|&j| self.z[j] * self.z[j]).sum::<f64>();
            if r2 < 0.0 {
                continue;
            }
            let r = r2.sqrt();
            for sign in [1.0, -1.0] {
                let mut p = base.clone();
                for &j in &group {
                    p[j] = self.z[j];
                }
                p[group[0]] += sign * r;
                out.push(p);
            }
        }
        out
    }
}

/// Closest point to `zeta` on `{p : p^T D p - 2 d^T p = α}`.
pub fn project_qcqp1(zeta: &DVector<f64>, d_mat: &DMatrix<f64>, d_vec: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    Quadric::new(d_mat.clone(), d_vec.clone(), alpha)?.project(zeta)
}
