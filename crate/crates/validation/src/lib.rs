//! Slow, obviously-correct reference computations.
//!
//! Everything here counts integers, loops over pairs or perturbs inputs
//! one coordinate at a time. None of it calls into `fairaudit`, so the
//! checks in `tests/` compare two independent code paths.

/// Integer confusion counts of one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub n: usize,
    pub positive: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Counts for `[unprivileged, privileged]`.
pub fn counts(preds: &[u8], groups: &[u8], y: &[u8]) -> [Counts; 2] {
    let mut out = [Counts::default(); 2];
    for i in 0..preds.len() {
        let c = &mut out[groups[i] as usize];
        c.n += 1;
        match (preds[i], y[i]) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
        if preds[i] == 1 {
            c.positive += 1;
        }
    }
    out
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn diff(p: Option<f64>, u: Option<f64>) -> Option<f64> {
    Some(p? - u?)
}

pub fn dp(c: &[Counts; 2]) -> Option<f64> {
    diff(ratio(c[1].positive, c[1].n), ratio(c[0].positive, c[0].n))
}

pub fn di(c: &[Counts; 2]) -> Option<f64> {
    let rp = ratio(c[1].positive, c[1].n)?;
    let ru = ratio(c[0].positive, c[0].n)?;
    (c[1].positive > 0).then(|| ru / rp)
}

fn tpr(c: &Counts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

fn fpr(c: &Counts) -> Option<f64> {
    ratio(c.fp, c.fp + c.tn)
}

pub fn eopp(c: &[Counts; 2]) -> Option<f64> {
    diff(tpr(&c[1]), tpr(&c[0]))
}

/// `(tpr_diff, fpr_diff, scalar)`; the scalar is the larger-magnitude
/// component, TPR on ties.
pub fn eo(c: &[Counts; 2]) -> Option<(f64, f64, f64)> {
    let t = diff(tpr(&c[1]), tpr(&c[0]))?;
    let f = diff(fpr(&c[1]), fpr(&c[0]))?;
    Some((t, f, if f.abs() > t.abs() { f } else { t }))
}

pub fn pp(c: &[Counts; 2]) -> Option<f64> {
    diff(ratio(c[1].tp, c[1].tp + c[1].fp), ratio(c[0].tp, c[0].tp + c[0].fp))
}

/// Per-stratum dp in ascending stratum order, then the size-weighted mean
/// and the max of |dp| over strata holding both groups.
pub fn cdp(preds: &[u8], groups: &[u8], strata: &[u32]) -> (Vec<(u32, usize, Option<f64>)>, Option<(f64, f64)>) {
    let mut ids: Vec<u32> = strata.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut per = Vec::new();
    let (mut weighted, mut total, mut max) = (0.0, 0usize, 0.0f64);
    for s in ids {
        let rows: Vec<usize> = (0..preds.len()).filter(|&i| strata[i] == s).collect();
        let p: Vec<u8> = rows.iter().map(|&i| preds[i]).collect();
        let g: Vec<u8> = rows.iter().map(|&i| groups[i]).collect();
        let d = dp(&counts(&p, &g, &vec![0; p.len()]));
        if let Some(d) = d {
            weighted += rows.len() as f64 * d.abs();
            total += rows.len();
            max = max.max(d.abs());
        }
        per.push((s, rows.len(), d));
    }
    let agg = (total > 0).then(|| (weighted / total as f64, max));
    (per, agg)
}

/// `(accuracy, precision, recall, f1)`; precision is 0 with no predicted
/// positives, and nothing is defined without actual positives.
pub fn performance(preds: &[u8], y: &[u8]) -> Option<(f64, f64, f64, f64)> {
    let mut c = Counts::default();
    for (&p, &l) in preds.iter().zip(y) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    if preds.is_empty() || c.tp + c.fn_ == 0 {
        return None;
    }
    let accuracy = (c.tp + c.tn) as f64 / preds.len() as f64;
    let precision = ratio(c.tp, c.tp + c.fp).unwrap_or(0.0);
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Some((accuracy, precision, recall, f1))
}

/// Share of (positive, negative) pairs ranked correctly, ties counting ½.
pub fn auroc_pairs(scores: &[f64], y: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for i in 0..scores.len() {
        if y[i] != 1 {
            continue;
        }
        for j in 0..scores.len() {
            if y[j] != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Central differences of `f` at `x` with step `h`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let gap: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        gap
    } else {
        gap / scale
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64), tol: f64) -> bool {
    let area = cross(a, b, c);
    if area.abs() <= tol {
        // degenerate: p must sit on one of the three segments
        return [(a, b), (b, c), (a, c)].iter().any(|&(s, t)| on_segment(p, s, t, tol));
    }
    let s = area.signum();
    s * cross(a, b, p) >= -tol && s * cross(b, c, p) >= -tol && s * cross(c, a, p) >= -tol
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
    cross(a, b, p).abs() <= tol
        && p.0 >= a.0.min(b.0) - tol
        && p.0 <= a.0.max(b.0) + tol
        && p.1 >= a.1.min(b.1) - tol
        && p.1 <= a.1.max(b.1) + tol
}

/// Whether `p` lies in the convex hull of `points`, by trying every
/// triangle of them.
pub fn in_hull(points: &[(f64, f64)], p: (f64, f64), tol: f64) -> bool {
    let n = points.len();
    if n == 1 {
        return (points[0].0 - p.0).abs() <= tol && (points[0].1 - p.1).abs() <= tol;
    }
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                if in_triangle(p, points[i], points[j], points[k], tol) {
                    return true;
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_split_the_confusion_matrix() {
        let c = counts(&[1, 0, 1, 1], &[0, 0, 1, 1], &[1, 1, 0, 1]);
        assert_eq!(c[0], Counts { n: 2, positive: 1, tp: 1, fp: 0, tn: 0, fn_: 1 });
        assert_eq!(c[1], Counts { n: 2, positive: 2, tp: 1, fp: 1, tn: 0, fn_: 0 });
        assert_eq!(dp(&c), Some(0.5));
        assert_eq!(eo(&c), None);
    }

    #[test]
    fn pairwise_auroc_counts_ties_half() {
        assert_eq!(auroc_pairs(&[0.2, 0.2, 0.9], &[1, 0, 0]), Some(0.25));
        assert_eq!(auroc_pairs(&[0.1], &[1]), None);
    }

    #[test]
    fn finite_difference_of_a_quadratic() {
        let g = finite_difference(|p| p[0] * p[0] + 3.0 * p[1], &[2.0, 1.0], 1e-4);
        assert!(relative_error(&g, &[4.0, 3.0]) < 1e-9);
    }
}
