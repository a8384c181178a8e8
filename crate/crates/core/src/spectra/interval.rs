use serde::{Deserialize, Serialize};

/// Closed interval `[lo, hi]`, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self::new(lo, hi)
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    /// Endpoints are swapped if given in the wrong order.
    pub fn new(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            Self { lo, hi }
        } else {
            Self { lo: hi, hi: lo }
        }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn distance_to(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }

    pub fn fattened(&self, tau: f64) -> Self {
        Self {
            lo: self.lo - tau,
            hi: self.hi + tau,
        }
    }
}

/// Sorts by `lo` and merges any two intervals whose gap is `≤ gap_tol`.
pub fn merge_intervals(raw: &[Interval], gap_tol: f64) -> Vec<Interval> {
    let mut sorted: Vec<Interval> = raw.to_vec();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
    let mut out: Vec<Interval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(last) if iv.lo - last.hi <= gap_tol => last.hi = last.hi.max(iv.hi),
            _ => out.push(iv),
        }
    }
    out
}

/// Distance from `x` to a union of intervals.
pub fn distance_to_set(set: &[Interval], x: f64) -> f64 {
    set.iter()
        .map(|iv| iv.distance_to(x))
        .fold(f64::INFINITY, f64::min)
}

/// `sup_{x ∈ a} dist(x, b)`. The distance function is piecewise linear, so
/// the sup over each interval of `a` sits at an endpoint or at a midpoint of
/// a gap of `b`.
pub fn directed_hausdorff(a: &[Interval], b: &[Interval]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if b.is_empty() {
        return f64::INFINITY;
    }
    let merged = merge_intervals(b, 0.0);
    let mut worst = 0.0_f64;
    for iv in a {
        let mut candidates = vec![iv.lo, iv.hi];
        for w in merged.windows(2) {
            let mid = 0.5 * (w[0].hi + w[1].lo);
            if iv.contains(mid) {
                candidates.push(mid);
            }
        }
        for x in candidates {
            worst = worst.max(distance_to_set(&merged, x));
        }
    }
    worst
}

pub fn hausdorff(a: &[Interval], b: &[Interval]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

/// `a ⊆ b` fattened by `tau`.
pub fn contained_in_fattened(a: &[Interval], b: &[Interval], tau: f64) -> bool {
    directed_hausdorff(a, b) <= tau
}
