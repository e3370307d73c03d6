//! Two-objective dominance, crowding distance and hypervolume.
//!
//! Points are `(up, down)` pairs: the first objective is maximised, the
//! second minimised.

use std::cmp::Ordering;

/// `a` dominates `b`: no worse in both objectives and strictly better in one.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1)
}

/// Indices (ascending) of the non-dominated points. Identical points are all kept.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1))
    });
    let mut keep = Vec::new();
    let mut best_down = f64::INFINITY;
    let mut g = 0;
    while g < order.len() {
        let up = points[order[g]].0;
        let mut end = g;
        while end < order.len() && points[order[end]].0 == up {
            end += 1;
        }
        // within a group of equal `up`, only the minimal `down` can survive
        let low = points[order[g]].1;
        if low < best_down {
            keep.extend(order[g..end].iter().copied().filter(|&i| points[i].1 == low));
            best_down = low;
        }
        g = end;
    }
    keep.sort_unstable();
    keep
}

/// Crowding distance of each point within `points` (assumed mutually non-dominated).
/// Boundary points get infinity.
pub fn crowding_distance(points: &[(f64, f64)]) -> Vec<f64> {
    let n = points.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for objective in 0..2 {
        let get = |i: usize| if objective == 0 { points[i].0 } else { points[i].1 };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| get(i).total_cmp(&get(j)).then(i.cmp(&j)));
        let range = get(order[n - 1]) - get(order[0]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if range <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            dist[order[k]] += (get(order[k + 1]) - get(order[k - 1])) / range;
        }
    }
    dist
}

/// Keeps at most `cap` of `front` by descending crowding distance, ties
/// broken by position. Returned indices refer to `front` and are ascending.
pub fn truncate_by_crowding(front: &[(f64, f64)], cap: usize) -> Vec<usize> {
    if front.len() <= cap {
        return (0..front.len()).collect();
    }
    let dist = crowding_distance(front);
    let mut order: Vec<usize> = (0..front.len()).collect();
    order.sort_by(|&i, &j| match dist[j].partial_cmp(&dist[i]) {
        Some(Ordering::Equal) | None => i.cmp(&j),
        Some(o) => o,
    });
    order.truncate(cap);
    order.sort_unstable();
    order
}

/// Area dominated by `points` above the origin, both coordinates maximised.
/// Coordinates below zero contribute nothing.
pub fn hypervolume_max(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.max(0.0), y.max(0.0))).collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut hv = 0.0;
    let mut y_max = 0.0;
    for (x, y) in pts {
        if y > y_max {
            hv += x * (y - y_max);
            y_max = y;
        }
    }
    hv
}

/// Hypervolume of `(accuracy, params)` points normalised to
/// `(accuracy, 1 - params / base_params)` with reference `(0, 0)`.
pub fn hypervolume(points: &[(f64, f64)], base_params: f64) -> f64 {
    let normalized: Vec<(f64, f64)> = points.iter().map(|&(a, p)| (a, 1.0 - p / base_params)).collect();
    hypervolume_max(&normalized)
}
