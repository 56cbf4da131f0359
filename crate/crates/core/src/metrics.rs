//! Evaluation: Harrell's concordance index, the Kaplan–Meier estimator, the
//! K-sample log-rank test, and clustering agreement.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{DcsmError, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CIndexResult {
    pub value: f64,
    pub comparable_pairs: u64,
    pub concordant: u64,
    pub tied_risk: u64,
}

/// Harrell's C. A pair `(i, j)` is comparable when `t_i < t_j` and `i` had
/// the event; it is concordant when `risk_i > risk_j`, and a risk tie counts
/// one half. Equal observed times are never comparable.
pub fn concordance_index(times: &[f64], events: &[bool], risks: &[f64]) -> Result<CIndexResult> {
    concordance_index_with(Execution::default(), times, events, risks)
}

pub fn concordance_index_with(
    exec: Execution,
    times: &[f64],
    events: &[bool],
    risks: &[f64],
) -> Result<CIndexResult> {
    let n = times.len();
    if events.len() != n || risks.len() != n {
        return Err(DcsmError::InvalidData(format!(
            "length mismatch: {} times, {} events, {} risks",
            n,
            events.len(),
            risks.len()
        )));
    }
    let per_anchor = exec.map_range(n, |i| {
        let (mut pairs, mut conc, mut ties) = (0u64, 0u64, 0u64);
        if events[i] {
            for j in 0..n {
                if times[i] < times[j] {
                    pairs += 1;
                    if risks[i] > risks[j] {
                        conc += 1;
                    } else if risks[i] == risks[j] {
                        ties += 1;
                    }
                }
            }
        }
        (pairs, conc, ties)
    });
    let (pairs, conc, ties) = per_anchor
        .into_iter()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    if pairs == 0 {
        return Err(DcsmError::NoComparablePairs);
    }
    Ok(CIndexResult {
        value: (conc as f64 + 0.5 * ties as f64) / pairs as f64,
        comparable_pairs: pairs,
        concordant: conc,
        tied_risk: ties,
    })
}

/// Product-limit survival curve, stepping only at event times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMCurve {
    pub event_times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KMCurve {
    /// `S(t)`: the value after the last event time `≤ t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.event_times.iter().rposition(|&et| et <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }
}

fn sorted_order(times: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    order
}

/// Kaplan–Meier estimate. Tied instances all count in the risk set at their
/// time; censored ones leave it afterwards without a drop.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KMCurve> {
    if times.is_empty() || times.len() != events.len() {
        return Err(DcsmError::InvalidData(
            "Kaplan-Meier needs nonempty, equal-length times and events".into(),
        ));
    }
    let order = sorted_order(times);
    let mut curve = KMCurve {
        event_times: vec![],
        survival: vec![],
        at_risk: vec![],
        events: vec![],
    };
    let mut s = 1.0;
    let mut remaining = times.len();
    let mut pos = 0;
    while pos < order.len() {
        let t = times[order[pos]];
        let mut end = pos;
        let mut d = 0;
        while end < order.len() && times[order[end]] == t {
            d += events[order[end]] as usize;
            end += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / remaining as f64;
            curve.event_times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(remaining);
            curve.events.push(d);
        }
        remaining -= end - pos;
        pos = end;
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRankResult {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

/// K-sample log-rank test over groups labelled `0..K`, every label used.
///
/// The statistic is `zᵀ V⁺ z` over the first `K − 1` groups, with
/// `z = O − E` and the hypergeometric covariance `V`; event times with a
/// single subject at risk add no variance.
pub fn logrank_test(times: &[f64], events: &[bool], groups: &[usize]) -> Result<LogRankResult> {
    let n = times.len();
    if events.len() != n || groups.len() != n {
        return Err(DcsmError::InvalidData(
            "length mismatch in log-rank input".into(),
        ));
    }
    let k = groups.iter().max().map(|&g| g + 1).unwrap_or(0);
    if k < 2 {
        return Err(DcsmError::InvalidData(
            "log-rank test needs at least 2 groups".into(),
        ));
    }
    let mut at_risk = vec![0usize; k];
    for &g in groups {
        at_risk[g] += 1;
    }
    if let Some(g) = at_risk.iter().position(|&c| c == 0) {
        return Err(DcsmError::InvalidData(format!("group {g} is empty")));
    }
    if !events.iter().any(|&e| e) {
        return Err(DcsmError::InvalidData(
            "log-rank test needs at least one event".into(),
        ));
    }

    let order = sorted_order(times);
    let mut observed = vec![0.0; k];
    let mut expected = vec![0.0; k];
    let mut var = DMatrix::<f64>::zeros(k - 1, k - 1);
    let mut d_g = vec![0usize; k];
    let mut leaving = vec![0usize; k];
    let mut total_at_risk = n;
    let mut pos = 0;
    while pos < n {
        let t = times[order[pos]];
        d_g.iter_mut().for_each(|v| *v = 0);
        leaving.iter_mut().for_each(|v| *v = 0);
        let mut end = pos;
        while end < n && times[order[end]] == t {
            let i = order[end];
            leaving[groups[i]] += 1;
            if events[i] {
                d_g[groups[i]] += 1;
            }
            end += 1;
        }
        let d: usize = d_g.iter().sum();
        if d > 0 {
            let nj = total_at_risk as f64;
            let dj = d as f64;
            for g in 0..k {
                observed[g] += d_g[g] as f64;
                expected[g] += dj * at_risk[g] as f64 / nj;
            }
            if total_at_risk > 1 {
                let factor = dj * (nj - dj) / (nj - 1.0);
                for a in 0..k - 1 {
                    let pa = at_risk[a] as f64 / nj;
                    for b in 0..k - 1 {
                        let pb = at_risk[b] as f64 / nj;
                        let delta = if a == b { 1.0 } else { 0.0 };
                        var[(a, b)] += factor * pa * (delta - pb);
                    }
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
        total_at_risk -= end - pos;
        pos = end;
    }

    let z = DVector::from_iterator(k - 1, (0..k - 1).map(|g| observed[g] - expected[g]));
    let chi2 = quadratic_form_pinv(&var, &z).max(0.0);
    Ok(LogRankResult {
        chi2,
        dof: k - 1,
        p_value: chi2_sf(chi2, k - 1),
        observed,
        expected,
    })
}

/// `zᵀ V⁺ z` for symmetric positive semidefinite `V`, dropping eigenvalues
/// below `1e-10` of the largest.
fn quadratic_form_pinv(v: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    if v.nrows() == 1 {
        let s = v[(0, 0)];
        return if s > 0.0 { z[0] * z[0] / s } else { 0.0 };
    }
    let eig = SymmetricEigen::new(v.clone());
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max_ev <= 0.0 {
        return 0.0;
    }
    let proj = eig.eigenvectors.transpose() * z;
    eig.eigenvalues
        .iter()
        .zip(proj.iter())
        .filter(|(&ev, _)| ev > 1e-10 * max_ev)
        .map(|(ev, p)| p * p / ev)
        .sum()
}

/// Upper tail of the chi-square distribution, `Q(dof/2, x/2)`.
pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// Relabel used labels to `0..m` in order of first appearance of the
/// sorted distinct values. Returns the new labels and the original label of
/// each new one.
pub fn compact_labels(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut used: Vec<usize> = labels.to_vec();
    used.sort_unstable();
    used.dedup();
    let relabelled = labels
        .iter()
        .map(|l| used.binary_search(l).expect("present"))
        .collect();
    (relabelled, used)
}

/// Post-hoc stratification: `groups` near-even strata by ascending risk.
pub fn stratify_by_risk(risks: &[f64], groups: usize) -> Vec<usize> {
    let n = risks.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * groups / n;
    }
    labels
}

/// Fraction of instances matched under the best one-to-one relabelling of
/// predicted clusters onto true ones (exact, bitmask assignment). `None` when
/// more than 20 labels are involved.
pub fn clustering_accuracy(predicted: &[usize], truth: &[usize]) -> Option<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return None;
    }
    let m = predicted
        .iter()
        .chain(truth)
        .max()
        .map(|&v| v + 1)
        .unwrap_or(1);
    if m > 20 {
        return None;
    }
    let mut table = vec![vec![0usize; m]; m];
    for (&p, &t) in predicted.iter().zip(truth) {
        table[p][t] += 1;
    }
    // best[mask]: max matches assigning predicted labels 0..popcount(mask)
    // to the true labels in mask
    let full = 1usize << m;
    let mut best = vec![0usize; full];
    for mask in 1..full {
        let p = mask.count_ones() as usize - 1;
        let mut b = 0;
        let mut bits = mask;
        while bits != 0 {
            let t = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            b = b.max(best[mask ^ (1 << t)] + table[p][t]);
        }
        best[mask] = b;
    }
    Some(best[full - 1] as f64 / predicted.len() as f64)
}
