//! Upper-semicontinuous piecewise-linear functions on `[0, hi]`.
//!
//! Value functions of the storage level are built from three operations:
//! sliding-window maxima (a charge or discharge moves the level by at most a
//! converter-limited amount), adding a linear price term, and the pointwise
//! maximum over actions. All three are computed exactly on a refined partition
//! of the breakpoints. Segments may jump at shared endpoints; the value at such a
//! point is the larger of the two sides.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Line {
    pub m: f64,
    pub c: f64,
}

impl Line {
    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        self.m * x + self.c
    }

    fn constant(c: f64) -> Self {
        Line { m: 0.0, c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Seg {
    x0: f64,
    x1: f64,
    line: Line,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pwl {
    segs: Vec<Seg>,
}

#[inline]
fn x_eps(scale: f64) -> f64 {
    1e-11 * scale.max(1.0)
}

fn same_line(a: &Line, b: &Line, x: f64) -> bool {
    let dm = (a.m - b.m).abs();
    let va = a.at(x);
    let dv = (va - b.at(x)).abs();
    dm <= 1e-12 * a.m.abs().max(1.0) && dv <= 1e-10 * va.abs().max(1.0)
}

fn push_seg(out: &mut Vec<Seg>, seg: Seg) {
    if seg.x1 <= seg.x0 {
        return;
    }
    if let Some(last) = out.last_mut() {
        if same_line(&last.line, &seg.line, seg.x0) {
            last.x1 = seg.x1;
            return;
        }
    }
    out.push(seg);
}

/// Upper envelope of `lines` over `[l, r]`, appended to `out`.
///
/// Pairwise crossings split the interval; on each piece the line that is
/// highest at the midpoint wins.
fn envelope_into(out: &mut Vec<Seg>, l: f64, r: f64, lines: &[Line]) {
    debug_assert!(!lines.is_empty());
    if lines.len() == 1 {
        push_seg(
            out,
            Seg {
                x0: l,
                x1: r,
                line: lines[0],
            },
        );
        return;
    }
    let eps = x_eps(r.abs());
    let mut cuts = [0.0f64; 32];
    let mut n = 0;
    cuts[n] = l;
    n += 1;
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let dm = lines[i].m - lines[j].m;
            if dm != 0.0 {
                let xc = (lines[j].c - lines[i].c) / dm;
                if xc > l + eps && xc < r - eps && n < cuts.len() - 1 {
                    cuts[n] = xc;
                    n += 1;
                }
            }
        }
    }
    cuts[n] = r;
    n += 1;
    let cuts = &mut cuts[..n];
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut a = l;
    for &b in cuts.iter().skip(1) {
        if b - a <= eps && b < r {
            continue;
        }
        let m = 0.5 * (a + b);
        let best = lines
            .iter()
            .copied()
            .fold(None::<Line>, |acc, ln| match acc {
                Some(cur) if cur.at(m) >= ln.at(m) => Some(cur),
                _ => Some(ln),
            })
            .expect("non-empty");
        push_seg(
            out,
            Seg {
                x0: a,
                x1: b,
                line: best,
            },
        );
        a = b;
    }
}

/// Sorted, de-duplicated partition of `[0, hi]` containing `pts`.
fn partition(mut pts: Vec<f64>, hi: f64) -> Vec<f64> {
    let eps = x_eps(hi);
    pts.retain(|x| *x > eps && *x < hi - eps);
    pts.push(0.0);
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for x in pts {
        match out.last() {
            Some(&p) if x - p <= eps => {
                if x == hi {
                    *out.last_mut().unwrap() = hi;
                }
            }
            _ => out.push(x),
        }
    }
    out
}

/// Walks segments left to right, returning the line of the segment containing `x`.
struct Cursor<'a> {
    segs: &'a [Seg],
    i: usize,
}

impl<'a> Cursor<'a> {
    fn new(f: &'a Pwl) -> Self {
        Cursor {
            segs: &f.segs,
            i: 0,
        }
    }

    fn line_at(&mut self, x: f64) -> Line {
        while self.i + 1 < self.segs.len() && self.segs[self.i].x1 < x {
            self.i += 1;
        }
        self.segs[self.i].line
    }
}

/// Running maximum over breakpoints inside a window whose ends move right.
struct SlidingMax<'a> {
    xs: &'a [f64],
    vs: &'a [f64],
    dq: VecDeque<usize>,
    next: usize,
}

impl<'a> SlidingMax<'a> {
    fn new(xs: &'a [f64], vs: &'a [f64]) -> Self {
        SlidingMax {
            xs,
            vs,
            dq: VecDeque::new(),
            next: 0,
        }
    }

    fn query(&mut self, lo: f64, hi: f64) -> Option<f64> {
        while self.next < self.xs.len() && self.xs[self.next] <= hi {
            let v = self.vs[self.next];
            while matches!(self.dq.back(), Some(&b) if self.vs[b] <= v) {
                self.dq.pop_back();
            }
            self.dq.push_back(self.next);
            self.next += 1;
        }
        while matches!(self.dq.front(), Some(&f) if self.xs[f] < lo) {
            self.dq.pop_front();
        }
        self.dq.front().map(|&f| self.vs[f])
    }
}

impl Pwl {
    pub fn constant(value: f64, hi: f64) -> Self {
        Pwl {
            segs: vec![Seg {
                x0: 0.0,
                x1: hi.max(0.0),
                line: Line::constant(value),
            }],
        }
    }

    pub fn hi(&self) -> f64 {
        self.segs.last().expect("non-empty").x1
    }

    fn is_point(&self) -> bool {
        self.hi() <= x_eps(0.0)
    }

    /// Breakpoints with their (upper-semicontinuous) values.
    fn breakpoints(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.segs.len();
        let mut xs = Vec::with_capacity(n + 1);
        let mut vs = Vec::with_capacity(n + 1);
        for (i, s) in self.segs.iter().enumerate() {
            let mut v = s.line.at(s.x0);
            if i > 0 {
                v = v.max(self.segs[i - 1].line.at(s.x0));
            }
            xs.push(s.x0);
            vs.push(v);
        }
        let last = self.segs[n - 1];
        if last.x1 > last.x0 {
            xs.push(last.x1);
            vs.push(last.line.at(last.x1));
        }
        (xs, vs)
    }

    /// Value at `x`, or `None` outside the domain.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let eps = x_eps(self.hi());
        if x < -eps || x > self.hi() + eps {
            return None;
        }
        let i = self.segs.partition_point(|s| s.x1 < x - eps);
        let mut best = f64::NEG_INFINITY;
        for s in &self.segs[i.min(self.segs.len() - 1)..] {
            if s.x0 > x + eps {
                break;
            }
            best = best.max(s.line.at(x.clamp(s.x0, s.x1)));
        }
        Some(best)
    }

    /// Adds `slope * x`.
    pub fn add_linear(&mut self, slope: f64) {
        for s in &mut self.segs {
            s.line.m += slope;
        }
    }

    /// Restriction to `[0, cap]`; `None` if `cap` is negative.
    pub fn restrict(&self, cap: f64) -> Option<Pwl> {
        let eps = x_eps(cap.abs());
        if cap < -eps {
            return None;
        }
        if cap >= self.hi() - eps {
            return Some(self.clone());
        }
        let cap = cap.max(0.0);
        let mut segs: Vec<Seg> = self
            .segs
            .iter()
            .copied()
            .filter(|s| s.x0 < cap - eps)
            .collect();
        match segs.last_mut() {
            Some(last) => last.x1 = cap,
            None => {
                let v = self.eval(0.0).expect("0 in domain");
                segs.push(Seg {
                    x0: 0.0,
                    x1: 0.0,
                    line: Line::constant(v),
                });
            }
        }
        Some(Pwl { segs })
    }

    /// `M(L) = max { f(x) : L <= x <= min(L + width, hi) }` on `[0, hi]`.
    pub fn forward_window_max(&self, width: f64) -> Pwl {
        if self.is_point() {
            return self.clone();
        }
        let h = self.hi();
        let (xs, vs) = self.breakpoints();
        let mut pts = xs.clone();
        pts.extend(xs.iter().map(|x| x - width));
        let grid = partition(pts, h);
        let mut here = Cursor::new(self);
        let mut ahead = Cursor::new(self);
        let mut window = SlidingMax::new(&xs, &vs);
        let mut out = Vec::with_capacity(grid.len());
        let mut lines = Vec::with_capacity(3);
        for w in grid.windows(2) {
            let (l, r) = (w[0], w[1]);
            let m = 0.5 * (l + r);
            lines.clear();
            lines.push(here.line_at(m));
            if m + width < h {
                let s = ahead.line_at(m + width);
                lines.push(Line {
                    m: s.m,
                    c: s.c + s.m * width,
                });
            }
            if let Some(v) = window.query(m, m + width) {
                lines.push(Line::constant(v));
            }
            envelope_into(&mut out, l, r, &lines);
        }
        Pwl { segs: out }
    }

    /// `M(L) = max { f(x) : max(0, L - width) <= x <= min(L, hi) }` on
    /// `[0, min(hi + width, cap)]`; `None` if `cap` is negative.
    pub fn backward_window_max(&self, width: f64, cap: f64) -> Option<Pwl> {
        let h = self.hi();
        let top = (h + width).min(cap);
        if top < -x_eps(cap.abs()) {
            return None;
        }
        if top <= x_eps(0.0) {
            let v = self.eval(0.0).expect("0 in domain");
            return Some(Pwl {
                segs: vec![Seg {
                    x0: 0.0,
                    x1: 0.0,
                    line: Line::constant(v),
                }],
            });
        }
        let (xs, vs) = self.breakpoints();
        let mut pts = xs.clone();
        pts.extend(xs.iter().map(|x| x + width));
        let grid = partition(pts, top);
        let mut here = Cursor::new(self);
        let mut behind = Cursor::new(self);
        let mut window = SlidingMax::new(&xs, &vs);
        let mut out = Vec::with_capacity(grid.len());
        let mut lines = Vec::with_capacity(3);
        for w in grid.windows(2) {
            let (l, r) = (w[0], w[1]);
            let m = 0.5 * (l + r);
            lines.clear();
            if m < h {
                lines.push(here.line_at(m));
            }
            if m - width > 0.0 {
                let s = behind.line_at(m - width);
                lines.push(Line {
                    m: s.m,
                    c: s.c - s.m * width,
                });
            }
            if let Some(v) = window.query(m - width, m) {
                lines.push(Line::constant(v));
            }
            envelope_into(&mut out, l, r, &lines);
        }
        Some(Pwl { segs: out })
    }

    /// Pointwise maximum; the domain is the widest input domain.
    pub fn max_of(fs: &[&Pwl]) -> Pwl {
        assert!(!fs.is_empty());
        let h = fs.iter().map(|f| f.hi()).fold(0.0, f64::max);
        if h <= x_eps(0.0) {
            let v = fs
                .iter()
                .filter_map(|f| f.eval(0.0))
                .fold(f64::NEG_INFINITY, f64::max);
            return Pwl {
                segs: vec![Seg {
                    x0: 0.0,
                    x1: 0.0,
                    line: Line::constant(v),
                }],
            };
        }
        let mut pts = Vec::new();
        for f in fs {
            pts.extend(f.segs.iter().map(|s| s.x0));
            pts.push(f.hi());
        }
        let grid = partition(pts, h);
        let mut cursors: Vec<Cursor> = fs.iter().map(|f| Cursor::new(f)).collect();
        let mut out = Vec::with_capacity(grid.len());
        let mut lines = Vec::with_capacity(fs.len());
        for w in grid.windows(2) {
            let (l, r) = (w[0], w[1]);
            let m = 0.5 * (l + r);
            lines.clear();
            for (f, c) in fs.iter().zip(cursors.iter_mut()) {
                if f.hi() >= m {
                    lines.push(c.line_at(m));
                }
            }
            envelope_into(&mut out, l, r, &lines);
        }
        // points where a narrower function ends keep its value (closed domains)
        let mut g = Pwl { segs: out };
        for f in fs {
            let x = f.hi();
            if x < h {
                if let Some(v) = f.eval(x) {
                    g.raise_point(x, v);
                }
            }
        }
        g
    }

    /// Ensures the value at `x` is at least `v` by splitting in a zero-width
    /// segment when needed.
    fn raise_point(&mut self, x: f64, v: f64) {
        let cur = self.eval(x).unwrap_or(f64::NEG_INFINITY);
        if cur >= v - 1e-12 * v.abs().max(1.0) {
            return;
        }
        // Only reachable when a function ends strictly inside the domain with a
        // value above every other candidate there; split the covering segment.
        let i = self.segs.partition_point(|s| s.x1 < x);
        let s = self.segs[i];
        let left = Seg {
            x0: s.x0,
            x1: x,
            line: s.line,
        };
        let mid = Seg {
            x0: x,
            x1: x,
            line: Line::constant(v),
        };
        let right = Seg {
            x0: x,
            x1: s.x1,
            line: s.line,
        };
        let mut repl = Vec::with_capacity(3);
        if left.x1 > left.x0 {
            repl.push(left);
        }
        repl.push(mid);
        if right.x1 > right.x0 {
            repl.push(right);
        }
        self.segs.splice(i..=i, repl);
    }

    /// Maximizer of `f(x) + slope * x` over `[lo, hi]` intersected with the
    /// domain. Ties go to the candidate nearest `anchor`.
    pub fn argmax_in(&self, lo: f64, hi: f64, slope: f64, anchor: f64) -> Option<(f64, f64)> {
        let eps = x_eps(self.hi());
        let lo = lo.max(0.0);
        let hi = hi.min(self.hi());
        if hi < lo - eps {
            return None;
        }
        let hi = hi.max(lo);
        let mut cands = vec![lo, hi];
        for s in &self.segs {
            if s.x0 > lo && s.x0 < hi {
                cands.push(s.x0);
            }
        }
        let mut best: Option<(f64, f64)> = None;
        for x in cands {
            let v = self.eval(x)? + slope * x;
            let tol = 1e-9 * v.abs().max(1.0);
            best = match best {
                None => Some((x, v)),
                Some((bx, bv)) => {
                    if v > bv + tol || (v >= bv - tol && (x - anchor).abs() < (bx - anchor).abs()) {
                        Some((x, v.max(bv)))
                    } else {
                        Some((bx, bv))
                    }
                }
            };
        }
        best
    }
}
