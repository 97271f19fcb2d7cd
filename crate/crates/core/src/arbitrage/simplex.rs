//! Dense two-phase simplex for small linear programs
//! `max c'x  s.t.  A x <= b, x >= 0`, using Bland's rule.

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpResult {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

/// Reusable tableau storage.
#[derive(Default)]
pub(crate) struct Simplex {
    tab: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Simplex {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.tab[r * self.width + c]
    }

    fn pivot(&mut self, rows: usize, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.tab[pr * w + pc];
        for c in 0..w {
            self.tab[pr * w + c] /= p;
        }
        for r in 0..rows {
            if r == pr {
                continue;
            }
            let f = self.tab[r * w + pc];
            if f.abs() > 0.0 {
                for c in 0..w {
                    self.tab[r * w + c] -= f * self.tab[pr * w + c];
                }
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs Bland's rule on objective row `obj` over columns `0..cols`.
    /// Returns false when unbounded.
    fn optimize(&mut self, m: usize, obj: usize, cols: usize) -> bool {
        let rhs = self.width - 1;
        loop {
            // objective row stores reduced costs of a minimization of -z
            let Some(pc) = (0..cols).find(|&c| self.at(obj, c) < -EPS) else {
                return true;
            };
            let mut best: Option<(f64, usize)> = None;
            for r in 0..m {
                let a = self.at(r, pc);
                if a > EPS {
                    let ratio = self.at(r, rhs) / a;
                    best = match best {
                        None => Some((ratio, r)),
                        Some((br, bi)) => {
                            if ratio < br - EPS
                                || (ratio <= br + EPS && self.basis[r] < self.basis[bi])
                            {
                                Some((ratio, r))
                            } else {
                                Some((br, bi))
                            }
                        }
                    }
                }
            }
            let Some((_, pr)) = best else { return false };
            self.pivot(m + 2, pr, pc);
        }
    }

    /// `a` is row-major `m x n`.
    pub(crate) fn solve(&mut self, c: &[f64], a: &[f64], b: &[f64]) -> LpResult {
        let (m, n) = (b.len(), c.len());
        debug_assert_eq!(a.len(), m * n);
        let n_art = b.iter().filter(|&&v| v < 0.0).count();
        let cols = n + m + n_art;
        self.width = cols + 1;
        let w = self.width;
        let rows = m + 2; // constraints, phase-2 objective, phase-1 objective
        self.tab.clear();
        self.tab.resize(rows * w, 0.0);
        self.basis.clear();
        self.basis.resize(m, 0);
        let (obj2, obj1) = (m, m + 1);
        let mut art = n + m;
        for i in 0..m {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                self.tab[i * w + j] = sign * a[i * n + j];
            }
            self.tab[i * w + n + i] = sign;
            self.tab[i * w + cols] = sign * b[i];
            if b[i] < 0.0 {
                self.tab[i * w + art] = 1.0;
                self.basis[i] = art;
                // phase-1 objective: minimize the sum of artificials
                for j in 0..w {
                    if j < n + m || j == cols {
                        self.tab[obj1 * w + j] -= self.tab[i * w + j];
                    }
                }
                art += 1;
            } else {
                self.basis[i] = n + i;
            }
        }
        for j in 0..n {
            self.tab[obj2 * w + j] = -c[j];
        }
        if n_art > 0 {
            self.optimize(m, obj1, n + m);
            if self.at(obj1, cols) < -1e-8 * (1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()))) {
                return LpResult::Infeasible;
            }
            // drive remaining artificials out of the basis
            for r in 0..m {
                if self.basis[r] >= n + m {
                    if let Some(pc) = (0..n + m).find(|&c| self.at(r, c).abs() > EPS) {
                        self.pivot(m + 2, r, pc);
                    }
                }
            }
        }
        if !self.optimize(m, obj2, n + m) {
            return LpResult::Unbounded;
        }
        let mut x = vec![0.0; n];
        for r in 0..m {
            if self.basis[r] < n {
                x[self.basis[r]] = self.at(r, cols);
            }
        }
        let value = c.iter().zip(&x).map(|(c, x)| c * x).sum();
        LpResult::Optimal { x, value }
    }
}
