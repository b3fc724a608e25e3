/// Euclidean projection onto `{x : x ≥ 0, Σ x ≤ budget}`.
///
/// If clipping at zero already satisfies the budget that is the answer;
/// otherwise the point is projected onto the face `Σ x = budget` with the
/// sort-based threshold rule, `x = max(v - τ, 0)`.
pub fn project_feasible(v: &[f64], budget: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= budget {
        return clipped;
    }
    let tau = simplex_threshold(v, budget);
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Threshold `τ` with `Σ max(v - τ, 0) = budget`.
fn simplex_threshold(v: &[f64], budget: f64) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let candidate = (cumsum - budget) / (j + 1) as f64;
        if x - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    tau
}
