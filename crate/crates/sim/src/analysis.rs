//! Small numeric helpers for sweep post-processing.

/// Least-squares line fit with its coefficient of determination.
#[derive(Clone, Copy, Debug)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Fit {
    let n = points.len() as f64;
    assert!(points.len() >= 2, "fit needs at least two points");
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let e = p.1 - (slope * p.0 + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Fit {
        slope,
        intercept,
        r2,
    }
}

/// Fit y = a·log2(n) + b over (n, y) samples.
pub fn fit_log2(points: &[(usize, f64)]) -> Fit {
    let xs: Vec<(f64, f64)> = points
        .iter()
        .map(|(n, y)| ((*n as f64).log2(), *y))
        .collect();
    linear_fit(&xs)
}

/// Quantile of an unsorted sample by nearest-rank; `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
