//! Within transformation for firm and year effects by alternating demeaning.

use serde::{Deserialize, Serialize};

use super::RegressionError;

pub const DEFAULT_TOLERANCE: f64 = 1e-14;
pub const DEFAULT_MAX_SWEEPS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffectsSpec {
    pub absorb_firm: bool,
    pub absorb_year: bool,
}

impl FixedEffectsSpec {
    pub const TWO_WAY: Self = Self {
        absorb_firm: true,
        absorb_year: true,
    };
    pub const NONE: Self = Self {
        absorb_firm: false,
        absorb_year: false,
    };
}

impl Default for FixedEffectsSpec {
    fn default() -> Self {
        Self::TWO_WAY
    }
}

/// Dense group codes for each observation.
#[derive(Debug, Clone)]
pub struct FeGroups {
    pub firm: Vec<usize>,
    pub n_firms: usize,
    pub year: Vec<usize>,
    pub n_years: usize,
}

impl FeGroups {
    /// Encodes arbitrary labels as `0..levels` in order of first appearance
    /// after sorting, so codes are deterministic.
    pub fn from_labels<F: Ord + Clone, Y: Ord + Clone>(firms: &[F], years: &[Y]) -> Self {
        let (firm, n_firms) = encode(firms);
        let (year, n_years) = encode(years);
        Self {
            firm,
            n_firms,
            year,
            n_years,
        }
    }

    /// Number of connected components of the bipartite firm-year graph.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_firms + self.n_years).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (&f, &y) in self.firm.iter().zip(&self.year) {
            let a = find(&mut parent, f);
            let b = find(&mut parent, self.n_firms + y);
            if a != b {
                parent[a] = b;
            }
        }
        (0..parent.len())
            .filter(|&i| find(&mut parent, i) == i)
            .count()
    }
}

pub(crate) fn encode<T: Ord + Clone>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut levels: Vec<T> = labels.to_vec();
    levels.sort();
    levels.dedup();
    let codes = labels
        .iter()
        .map(|l| levels.binary_search(l).expect("label present"))
        .collect();
    (codes, levels.len())
}

/// What absorption did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorbInfo {
    pub sweeps: usize,
    pub final_delta: f64,
    pub firm_levels: usize,
    pub year_levels: usize,
    /// Rank of the fixed-effect span, intercept included: 1 with no effects,
    /// `F` or `T` with one, `F + T - C` with both (`C` connected components).
    pub fe_rank: usize,
}

fn demean_by(
    col: &mut [f64],
    groups: &[usize],
    n_groups: usize,
    sums: &mut [f64],
    counts: &mut [f64],
) -> f64 {
    sums[..n_groups].iter_mut().for_each(|s| *s = 0.0);
    counts[..n_groups].iter_mut().for_each(|c| *c = 0.0);
    for (&g, &v) in groups.iter().zip(col.iter()) {
        sums[g] += v;
        counts[g] += 1.0;
    }
    for g in 0..n_groups {
        if counts[g] > 0.0 {
            sums[g] /= counts[g];
        }
    }
    let mut delta = 0.0f64;
    for (&g, v) in groups.iter().zip(col.iter_mut()) {
        *v -= sums[g];
        delta = delta.max(sums[g].abs());
    }
    delta
}

/// Removes the requested group means from every column in place.
///
/// With both effects the firm and year demeaning alternate until the largest
/// adjustment in a sweep is below `tolerance` times the column's largest
/// absolute value (at least 1).
pub fn absorb_fixed_effects(
    columns: &mut [Vec<f64>],
    groups: &FeGroups,
    spec: FixedEffectsSpec,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<AbsorbInfo, RegressionError> {
    let n_levels = groups.n_firms.max(groups.n_years);
    let mut sums = vec![0.0; n_levels];
    let mut counts = vec![0.0; n_levels];
    let fe_rank = match (spec.absorb_firm, spec.absorb_year) {
        (false, false) => 1,
        (true, false) => groups.n_firms,
        (false, true) => groups.n_years,
        (true, true) => groups.n_firms + groups.n_years - groups.connected_components(),
    };
    let mut info = AbsorbInfo {
        sweeps: 0,
        final_delta: 0.0,
        firm_levels: if spec.absorb_firm { groups.n_firms } else { 0 },
        year_levels: if spec.absorb_year { groups.n_years } else { 0 },
        fe_rank,
    };
    match (spec.absorb_firm, spec.absorb_year) {
        (false, false) => {}
        (true, false) | (false, true) => {
            let (g, n) = if spec.absorb_firm {
                (&groups.firm, groups.n_firms)
            } else {
                (&groups.year, groups.n_years)
            };
            for col in columns.iter_mut() {
                demean_by(col, g, n, &mut sums, &mut counts);
            }
            info.sweeps = 1;
        }
        (true, true) => {
            for col in columns.iter_mut() {
                let threshold = tolerance * col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let mut converged = false;
                let mut delta = f64::INFINITY;
                for sweep in 1..=max_sweeps {
                    let d1 = demean_by(col, &groups.firm, groups.n_firms, &mut sums, &mut counts);
                    let d2 = demean_by(col, &groups.year, groups.n_years, &mut sums, &mut counts);
                    delta = d1.max(d2);
                    info.sweeps = info.sweeps.max(sweep);
                    // the first sweep always moves a non-centred column; the
                    // second confirms a one-pass (balanced) solution
                    if sweep > 1 && delta < threshold {
                        converged = true;
                        break;
                    }
                }
                info.final_delta = info.final_delta.max(delta);
                if !converged {
                    return Err(RegressionError::NonConvergence {
                        sweeps: max_sweeps,
                        delta,
                    });
                }
            }
        }
    }
    Ok(info)
}
