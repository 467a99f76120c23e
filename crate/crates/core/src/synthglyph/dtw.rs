//! Dynamic time warping between 2-D point sequences.

pub type Point = [f64; 2];

/// DTW with Euclidean point cost and (↑, →, ↗) steps, normalized by the
/// longer of the two lengths.
pub fn dtw_distance(a: &[Point], b: &[Point]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return f64::INFINITY;
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for pa in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let pb = b[j - 1];
            let cost = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            cur[j] = cost + prev[j].min(cur[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m] / n.max(m) as f64
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// Subtracts the centroid.
pub fn center(points: &[Point]) -> Vec<Point> {
    let c = centroid(points);
    points.iter().map(|p| [p[0] - c[0], p[1] - c[1]]).collect()
}

/// Centers and scales to unit RMS radius.
pub fn normalize_rms(points: &[Point]) -> Vec<Point> {
    let c = center(points);
    let rms = (c.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / c.len() as f64).sqrt();
    if rms == 0.0 {
        return c;
    }
    c.iter().map(|p| [p[0] / rms, p[1] / rms]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_have_zero_distance() {
        let a = [[0.0, 0.0], [1.0, 0.5], [2.0, 2.0]];
        assert_eq!(dtw_distance(&a, &a), 0.0);
    }

    #[test]
    fn repeated_points_are_absorbed_by_warping() {
        let a = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let b = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert_eq!(dtw_distance(&a, &b), 0.0);
    }

    #[test]
    fn matches_brute_force_recursion() {
        fn rec(a: &[Point], b: &[Point], i: usize, j: usize) -> f64 {
            let c = ((a[i][0] - b[j][0]).powi(2) + (a[i][1] - b[j][1]).powi(2)).sqrt();
            match (i, j) {
                (0, 0) => c,
                (0, _) => c + rec(a, b, 0, j - 1),
                (_, 0) => c + rec(a, b, i - 1, 0),
                _ => c + rec(a, b, i - 1, j).min(rec(a, b, i, j - 1)).min(rec(a, b, i - 1, j - 1)),
            }
        }
        let a = [[0.0, 0.1], [0.4, 0.9], [1.3, 0.2], [0.7, 0.7]];
        let b = [[0.2, 0.0], [1.0, 1.0], [0.5, 0.5]];
        let expected = rec(&a, &b, 3, 2) / 4.0;
        assert!((dtw_distance(&a, &b) - expected).abs() < 1e-12);
    }
}
