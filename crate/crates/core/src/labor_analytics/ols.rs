//! Least squares with absorbed fixed effects.
//!
//! Fixed effects are removed by alternating weighted within-group demeaning.
//! The demeaned system is solved by QR; its residuals equal those of the
//! explicit dummy-variable model, so R² is reported for the full model and
//! the degrees of freedom account for the absorbed levels.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::table::DataTable;

pub const INTERCEPT: &str = "(intercept)";
const DEMEAN_TOL: f64 = 1e-10;
const DEMEAN_MAX_ITER: usize = 10_000;
/// A column whose norm shrinks below this fraction of its pre-projection
/// norm is treated as linearly dependent on earlier columns or the
/// absorbed effects.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSpec {
    pub id: String,
    pub dependent: String,
    pub regressors: Vec<String>,
    #[serde(default)]
    pub fixed_effects: Vec<String>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub weights: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OlsError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{0}' must be numeric")]
    NotNumeric(String),
    #[error("at most 2 fixed-effect groups are supported, got {0}")]
    TooManyFixedEffects(usize),
    #[error("no regressors given")]
    NoRegressors,
    #[error("rank deficient design; collinear column(s): {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("{n} usable observations leave no residual degrees of freedom")]
    NoDegreesOfFreedom { n: usize },
    #[error("cluster-robust errors need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("demeaning did not converge in {0} iterations")]
    NotConverged(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub se_cluster: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub spec_id: String,
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub within_r_squared: Option<f64>,
    pub n_observations: usize,
    pub n_dropped: usize,
    pub n_groups_absorbed: Vec<usize>,
    pub n_clusters: Option<usize>,
    pub df_resid: usize,
    /// Residuals on the weighted, demeaned scale, in row order of the used
    /// observations.
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub demeaned_design: DMatrix<f64>,
}

impl RegressionResult {
    pub fn coefficient(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }
}

/// Dense group ids for the non-missing keys; `None` where the key is missing.
fn group_ids(keys: Vec<Option<String>>) -> (Vec<Option<usize>>, usize) {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let ids = keys
        .into_iter()
        .map(|k| {
            k.map(|k| {
                let next = index.len();
                *index.entry(k).or_insert(next)
            })
        })
        .collect();
    (ids, index.len())
}

fn compact(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let out = ids
        .iter()
        .map(|&g| {
            let next = map.len();
            *map.entry(g).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Subtracts weighted group means for each grouping in turn until no
/// group mean exceeds the tolerance.
fn demean(col: &mut [f64], w: &[f64], groups: &[(Vec<usize>, usize)]) -> Result<(), OlsError> {
    if groups.is_empty() {
        return Ok(());
    }
    for _ in 0..DEMEAN_MAX_ITER {
        let mut max_change: f64 = 0.0;
        for (ids, g) in groups {
            let mut num = vec![0.0; *g];
            let mut den = vec![0.0; *g];
            for i in 0..col.len() {
                num[ids[i]] += w[i] * col[i];
                den[ids[i]] += w[i];
            }
            let means: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n / d).collect();
            for i in 0..col.len() {
                col[i] -= means[ids[i]];
            }
            max_change = means.iter().fold(max_change, |m, v| m.max(v.abs()));
        }
        if max_change < DEMEAN_TOL {
            return Ok(());
        }
        if groups.len() == 1 {
            // one projection is exact
            return Ok(());
        }
    }
    Err(OlsError::NotConverged(DEMEAN_MAX_ITER))
}

/// Number of connected components of the bipartite graph linking the
/// levels of two groupings through shared observations.
fn components(a: &[usize], ga: usize, b: &[usize], gb: usize) -> usize {
    let mut parent: Vec<usize> = (0..ga + gb).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (&i, &j) in a.iter().zip(b) {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, ga + j));
        if ri != rj {
            parent[ri] = rj;
        }
    }
    (0..ga + gb).filter(|&x| find(&mut parent, x) == x).count()
}

fn numeric_col<'a>(table: &'a DataTable, name: &str) -> Result<&'a [Option<f64>], OlsError> {
    match table.column(name) {
        None => Err(OlsError::UnknownColumn(name.into())),
        Some(_) => table.numeric(name).ok_or_else(|| OlsError::NotNumeric(name.into())),
    }
}

fn key_col(table: &DataTable, name: &str) -> Result<Vec<Option<String>>, OlsError> {
    let col = table.column(name).ok_or_else(|| OlsError::UnknownColumn(name.into()))?;
    Ok((0..table.n_rows()).map(|i| col.key(i)).collect())
}

pub fn ols_fit(table: &DataTable, spec: &RegressionSpec) -> Result<RegressionResult, OlsError> {
    if spec.regressors.is_empty() {
        return Err(OlsError::NoRegressors);
    }
    if spec.fixed_effects.len() > 2 {
        return Err(OlsError::TooManyFixedEffects(spec.fixed_effects.len()));
    }
    let y_col = numeric_col(table, &spec.dependent)?;
    let x_cols = spec
        .regressors
        .iter()
        .map(|r| numeric_col(table, r))
        .collect::<Result<Vec<_>, _>>()?;
    let w_col = spec.weights.as_deref().map(|w| numeric_col(table, w)).transpose()?;
    let fe_keys = spec
        .fixed_effects
        .iter()
        .map(|f| key_col(table, f))
        .collect::<Result<Vec<_>, _>>()?;
    let cl_keys = spec.cluster.as_deref().map(|c| key_col(table, c)).transpose()?;

    let fe_ids: Vec<Vec<Option<usize>>> = fe_keys.into_iter().map(|k| group_ids(k).0).collect();
    let cl_ids = cl_keys.map(|k| group_ids(k).0);

    let ok = |v: Option<f64>| v.filter(|x| x.is_finite());
    let rows: Vec<usize> = (0..table.n_rows())
        .filter(|&i| {
            ok(y_col[i]).is_some()
                && x_cols.iter().all(|c| ok(c[i]).is_some())
                && w_col.is_none_or(|w| ok(w[i]).is_some_and(|v| v > 0.0))
                && fe_ids.iter().all(|f| f[i].is_some())
                && cl_ids.as_ref().is_none_or(|c| c[i].is_some())
        })
        .collect();
    let n = rows.len();
    let n_dropped = table.n_rows() - n;

    let weights: Vec<f64> = rows.iter().map(|&i| w_col.map_or(1.0, |w| w[i].unwrap())).collect();
    let groups: Vec<(Vec<usize>, usize)> = fe_ids
        .iter()
        .map(|f| compact(&rows.iter().map(|&i| f[i].unwrap()).collect::<Vec<_>>()))
        .collect();

    let mut names = Vec::new();
    let mut raw_cols: Vec<Vec<f64>> = Vec::new();
    if groups.is_empty() {
        names.push(INTERCEPT.to_string());
        raw_cols.push(vec![1.0; n]);
    }
    for (name, c) in spec.regressors.iter().zip(&x_cols) {
        names.push(name.clone());
        raw_cols.push(rows.iter().map(|&i| c[i].unwrap()).collect());
    }
    let k = names.len();
    let y_raw: Vec<f64> = rows.iter().map(|&i| y_col[i].unwrap()).collect();

    let mut y = y_raw.clone();
    demean(&mut y, &weights, &groups)?;
    let mut cols = raw_cols.clone();
    for c in cols.iter_mut() {
        demean(c, &weights, &groups)?;
    }

    let absorbed = match groups.as_slice() {
        [] => 0,
        [(_, g)] => *g,
        [(a, ga), (b, gb)] => ga + gb - components(a, *ga, b, *gb),
        _ => unreachable!(),
    };
    if n <= k + absorbed {
        return Err(OlsError::NoDegreesOfFreedom { n });
    }
    let df_resid = n - k - absorbed;

    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i] * sw[i]);
    let ys = DVector::from_iterator(n, y.iter().zip(&sw).map(|(v, s)| v * s));

    // Gram-Schmidt pass to name the columns that add no new direction.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for j in 0..k {
        let before = DVector::from_iterator(n, raw_cols[j].iter().zip(&sw).map(|(v, s)| v * s)).norm();
        let mut v = x.column(j).into_owned();
        for q in &basis {
            let d = q.dot(&v);
            v -= q * d;
        }
        let norm = v.norm();
        if norm <= RANK_TOL * before.max(f64::MIN_POSITIVE) {
            collinear.push(names[j].clone());
        } else {
            basis.push(v / norm);
        }
    }
    if !collinear.is_empty() {
        return Err(OlsError::RankDeficient(collinear));
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &ys;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| OlsError::RankDeficient(names.clone()))?;
    let e = &ys - &x * &beta;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| OlsError::RankDeficient(names.clone()))?;
    let bread = &r_inv * r_inv.transpose();

    let ssr = e.norm_squared();
    let sigma2 = ssr / df_resid as f64;
    let se: Vec<f64> = (0..k).map(|j| (sigma2 * bread[(j, j)]).sqrt()).collect();

    let mut n_clusters = None;
    let mut se_cluster: Option<Vec<f64>> = None;
    if let Some(cl) = &cl_ids {
        let (ids, g) = compact(&rows.iter().map(|&i| cl[i].unwrap()).collect::<Vec<_>>());
        if g < 2 {
            return Err(OlsError::TooFewClusters(g));
        }
        let mut scores = DMatrix::<f64>::zeros(g, k);
        for i in 0..n {
            for j in 0..k {
                scores[(ids[i], j)] += x[(i, j)] * e[i];
            }
        }
        let meat = scores.transpose() * &scores;
        let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
        let v = &bread * meat * &bread * c;
        n_clusters = Some(g);
        se_cluster = Some((0..k).map(|j| v[(j, j)].max(0.0).sqrt()).collect());
    }

    let wsum: f64 = weights.iter().sum();
    let ybar = y_raw.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let tss: f64 = y_raw.iter().zip(&weights).map(|(v, w)| w * (v - ybar).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - ssr / tss } else { 1.0 };
    let within_r_squared = (!groups.is_empty()).then(|| {
        let tss_w = ys.norm_squared();
        if tss_w > 0.0 {
            1.0 - ssr / tss_w
        } else {
            1.0
        }
    });

    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, term)| Coefficient {
            term,
            estimate: beta[j],
            se: se[j],
            se_cluster: se_cluster.as_ref().map(|s| s[j]),
        })
        .collect();
    Ok(RegressionResult {
        spec_id: spec.id.clone(),
        coefficients,
        r_squared,
        within_r_squared,
        n_observations: n,
        n_dropped,
        n_groups_absorbed: groups.iter().map(|(_, g)| *g).collect(),
        n_clusters,
        df_resid,
        residuals: e.iter().copied().collect(),
        demeaned_design: x,
    })
}
