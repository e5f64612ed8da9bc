//! Bandwidth grid, the penalized comparison-to-overfitting rule (SPCO),
//! least-squares cross-validation (CV2), and the oracle selector.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimator::{loo_pair_sums, mixed_pair_sums, self_pair_sums, FittedEstimator, Sample};
use crate::geometry::dot;
use crate::kernel::KernelProfile;
use crate::targets::TargetDensity;

/// `{1/m : 1 ≤ m ≤ m_max}` sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    n: usize,
    d: usize,
    kernel: String,
    m_max: usize,
    bandwidths: Vec<f64>,
}

/// Largest `m` with `m^p ≤ bound`, found with exact integer powers.
fn integer_root_floor(bound: f64, p: u32) -> usize {
    if !(bound >= 1.0) {
        return 0;
    }
    let pow = |m: usize| (m as f64).powi(p as i32);
    let mut m = bound.powf(1.0 / p as f64).floor() as usize;
    while m > 0 && pow(m) > bound {
        m -= 1;
    }
    while pow(m + 1) <= bound {
        m += 1;
    }
    m
}

/// `m_max = ⌊(n R₀ / ‖K‖_∞)^{1/(d-1)}⌋`.
pub fn build_grid(n: usize, d: usize, kernel: &KernelProfile) -> Result<BandwidthGrid> {
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let r0 = kernel.constants(d)?.r0;
    let sup = kernel.sup_norm();
    let m_max = integer_root_floor(n as f64 * r0 / sup, (d - 1) as u32);
    if m_max == 0 {
        return Err(Error::EmptyGrid { n, min_n: sup / r0 });
    }
    Ok(BandwidthGrid {
        n,
        d,
        kernel: kernel.name().to_string(),
        m_max,
        bandwidths: (1..=m_max).rev().map(|m| 1.0 / m as f64).collect(),
    })
}

impl BandwidthGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kernel(&self) -> &str {
        &self.kernel
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn h_min(&self) -> f64 {
        self.bandwidths[0]
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }

    /// Position of `h` in [`bandwidths`](Self::bandwidths).
    pub fn index_of(&self, h: f64) -> Result<usize> {
        let m = (1.0 / h).round();
        if !(m >= 1.0 && m <= self.m_max as f64) || (1.0 / m - h).abs() > 1e-12 * h {
            return domain(format!("h = {h} is not in the grid {{1/m : 1 <= m <= {}}}", self.m_max));
        }
        Ok(self.m_max - m as usize)
    }
}

/// `pen_λ(h) = λ c₀²(h)c₂(h)/n - c₀²(h)c₂(h)/n - c₀²(h_min)c₂(h_min)/n
///            + 2 c₀(h)c₀(h_min)⟨K_h, K_{h_min}⟩/n`.
pub fn penalty(h: f64, grid: &BandwidthGrid, lambda: f64, kernel: &KernelProfile) -> Result<f64> {
    grid.index_of(h)?;
    let (d, n) = (grid.d, grid.n as f64);
    let hm = grid.h_min();
    let variance = kernel.c0(h, d)?.powi(2) * kernel.c2(h, d)? / n;
    let floor = kernel.c0(hm, d)?.powi(2) * kernel.c2(hm, d)? / n;
    let cross = 2.0 * kernel.c0(h, d)? * kernel.c0(hm, d)? * kernel.cross_inner(h, hm, d)? / n;
    Ok((lambda - 1.0) * variance - floor + cross)
}

/// Per-sample quantities shared by every selector on the grid.
#[derive(Clone, Debug)]
pub struct GridTerms<'a> {
    sample: &'a Sample,
    kernel: KernelProfile,
    grid: BandwidthGrid,
    c0: Vec<f64>,
    /// `c₀²(h)c₂(h)/n`.
    variance: Vec<f64>,
    /// `pen_0(h)`.
    pen0: Vec<f64>,
    sq_norm: Vec<f64>,
    /// `‖f̂_h - f̂_{h_min}‖²`.
    diff_to_min: Vec<f64>,
    /// `Σ_{i≠j} K((1 - XᵢᵀXⱼ)/h²)`, present when requested.
    loo: Option<Vec<f64>>,
}

impl<'a> GridTerms<'a> {
    /// Builds the grid for `sample` and evaluates all terms on it. Set
    /// `with_loo` to make CV2 available.
    pub fn compute(sample: &'a Sample, kernel: &KernelProfile, with_loo: bool) -> Result<Self> {
        let grid = build_grid(sample.len(), sample.dim(), kernel)?;
        Self::on_grid(sample, kernel, grid, with_loo)
    }

    pub fn on_grid(
        sample: &'a Sample,
        kernel: &KernelProfile,
        grid: BandwidthGrid,
        with_loo: bool,
    ) -> Result<Self> {
        if grid.n != sample.len() || grid.d != sample.dim() || grid.kernel != kernel.name() {
            return domain("grid was built for a different sample or kernel");
        }
        let (d, n) = (sample.dim(), sample.len() as f64);
        let hs = grid.bandwidths();
        let hm = grid.h_min();
        let c0 = hs.iter().map(|&h| kernel.c0(h, d)).collect::<Result<Vec<_>>>()?;
        let c2 = hs.iter().map(|&h| kernel.c2(h, d)).collect::<Result<Vec<_>>>()?;
        let cross = hs
            .iter()
            .map(|&h| kernel.cross_inner(h, hm, d))
            .collect::<Result<Vec<_>>>()?;
        let variance: Vec<f64> = c0.iter().zip(&c2).map(|(c, q)| c * c * q / n).collect();
        let floor = variance[0];
        let pen0: Vec<f64> = (0..hs.len())
            .map(|k| -variance[k] - floor + 2.0 * c0[k] * c0[0] * cross[k] / n)
            .collect();

        let (sq_norm, inner_min, loo) = if kernel.is_von_mises_s2(d) {
            // Pair sums want inverse squared bandwidths ascending, i.e. h descending.
            let a: Vec<f64> = hs.iter().rev().map(|&h| 1.0 / (h * h)).collect();
            let a_min = 1.0 / (hm * hm);
            let scale = 4.0 * PI / (n * n);
            let mut sq: Vec<f64> = self_pair_sums(sample, &a);
            sq.reverse();
            let mut mixed = mixed_pair_sums(sample, &a, a_min);
            mixed.reverse();
            for k in 0..hs.len() {
                sq[k] *= scale * c0[k] * c0[k];
                mixed[k] *= scale * c0[k] * c0[0];
            }
            let loo = with_loo.then(|| {
                let mut l = loo_pair_sums(sample, &a);
                l.reverse();
                l
            });
            (sq, mixed, loo)
        } else {
            let fits = hs
                .iter()
                .map(|&h| FittedEstimator::fit(sample, kernel, h))
                .collect::<Result<Vec<_>>>()?;
            let sq = fits.iter().map(|e| e.sq_norm()).collect::<Result<Vec<_>>>()?;
            let mixed = fits.iter().map(|e| e.inner(&fits[0])).collect::<Result<Vec<_>>>()?;
            let loo = with_loo.then(|| generic_loo_sums(sample, kernel, hs));
            (sq, mixed, loo)
        };
        let diff_to_min = (0..hs.len())
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    (sq_norm[k] + sq_norm[0] - 2.0 * inner_min[k]).max(0.0)
                }
            })
            .collect();
        Ok(Self {
            sample,
            kernel: kernel.clone(),
            grid,
            c0,
            variance,
            pen0,
            sq_norm,
            diff_to_min,
            loo,
        })
    }

    pub fn sample(&self) -> &'a Sample {
        self.sample
    }

    pub fn kernel(&self) -> &KernelProfile {
        &self.kernel
    }

    pub fn grid(&self) -> &BandwidthGrid {
        &self.grid
    }

    pub fn sq_norms(&self) -> &[f64] {
        &self.sq_norm
    }

    pub fn diff_to_min(&self) -> &[f64] {
        &self.diff_to_min
    }

    pub fn penalties(&self, lambda: f64) -> Vec<f64> {
        self.pen0
            .iter()
            .zip(&self.variance)
            .map(|(p, v)| lambda * v + p)
            .collect()
    }

    /// `‖f̂_h - f̂_{h_min}‖² + pen_λ(h)` over the grid.
    pub fn spco_criterion(&self, lambda: f64) -> Vec<f64> {
        self.penalties(lambda)
            .iter()
            .zip(&self.diff_to_min)
            .map(|(p, diff)| diff + p)
            .collect()
    }

    /// `‖f̂_h‖² - (2/n) Σᵢ f̂_{h,i}(Xᵢ)` over the grid.
    pub fn cv2_criterion(&self) -> Result<Vec<f64>> {
        let n = self.sample.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let loo = self
            .loo
            .as_ref()
            .ok_or_else(|| Error::Config("leave-one-out sums were not computed".into()))?;
        let n = n as f64;
        Ok((0..self.sq_norm.len())
            .map(|k| self.sq_norm[k] - 2.0 / n * self.c0[k] / (n - 1.0) * loo[k])
            .collect())
    }

    /// `‖f̂_h - f‖²` over the grid.
    pub fn oracle_risk<T: OracleTarget + ?Sized>(&self, target: &T) -> Result<Vec<f64>> {
        let f_sq = target.sq_norm()?;
        self.grid
            .bandwidths()
            .iter()
            .zip(&self.sq_norm)
            .map(|(&h, sq)| {
                let est = FittedEstimator::fit(self.sample, &self.kernel, h)?;
                Ok(sq - 2.0 * target.inner_with(&est)? + f_sq)
            })
            .collect()
    }

    pub fn spco(&self, lambda: f64) -> SelectionReport {
        let criterion = self.spco_criterion(lambda);
        let mut report = self.report(Method::Spco, Some(lambda), criterion);
        report.diagnostics.penalty = Some(self.penalties(lambda));
        report.diagnostics.diff_to_h_min = Some(self.diff_to_min.clone());
        report
    }

    pub fn cv2(&self) -> Result<SelectionReport> {
        Ok(self.report(Method::Cv2, None, self.cv2_criterion()?))
    }

    pub fn oracle<T: OracleTarget + ?Sized>(&self, target: &T) -> Result<SelectionReport> {
        let risk = self.oracle_risk(target)?;
        let f_sq = target.sq_norm()?;
        let mut report = self.report(Method::Oracle, None, risk);
        report.diagnostics.shifted_risk =
            Some(report.table.iter().map(|row| row.criterion - f_sq).collect());
        report.diagnostics.target_sq_norm = Some(f_sq);
        Ok(report)
    }

    fn report(&self, method: Method, lambda: Option<f64>, criterion: Vec<f64>) -> SelectionReport {
        let index = argmin_prefer_larger(&criterion);
        SelectionReport {
            method,
            lambda,
            kernel: self.kernel.name().to_string(),
            n: self.sample.len(),
            h_min: self.grid.h_min(),
            chosen_h: self.grid.bandwidths()[index],
            chosen_index: index,
            table: self
                .grid
                .bandwidths()
                .iter()
                .zip(criterion)
                .map(|(&h, criterion)| TableRow { h, criterion })
                .collect(),
            diagnostics: Diagnostics::default(),
        }
    }
}

fn generic_loo_sums(sample: &Sample, kernel: &KernelProfile, hs: &[f64]) -> Vec<f64> {
    let pts = sample.points();
    hs.iter()
        .map(|&h| {
            let inv_h2 = 1.0 / (h * h);
            let mut total = 0.0;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    total += kernel.eval((1.0 - dot(pts[i].coords(), pts[j].coords())) * inv_h2);
                }
            }
            2.0 * total
        })
        .collect()
}

/// Index of the smallest value; among equal minima the last one, which on an
/// ascending grid is the largest bandwidth. NaN entries never win.
pub fn argmin_prefer_larger(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v <= values[best] || values[best].is_nan() {
            best = k;
        }
    }
    best
}

/// Something the oracle can measure risk against.
pub trait OracleTarget {
    fn sq_norm(&self) -> Result<f64>;
    fn inner_with(&self, est: &FittedEstimator<'_>) -> Result<f64>;
}

impl OracleTarget for TargetDensity {
    fn sq_norm(&self) -> Result<f64> {
        Ok(self.exact_sq_norm())
    }

    fn inner_with(&self, est: &FittedEstimator<'_>) -> Result<f64> {
        self.exact_inner(est)
    }
}

impl OracleTarget for FittedEstimator<'_> {
    fn sq_norm(&self) -> Result<f64> {
        FittedEstimator::sq_norm(self)
    }

    fn inner_with(&self, est: &FittedEstimator<'_>) -> Result<f64> {
        est.inner(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SPCO", alias = "spco")]
    Spco,
    #[serde(rename = "CV2", alias = "cv2")]
    Cv2,
    #[serde(rename = "Oracle", alias = "oracle")]
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Spco => "SPCO",
            Method::Cv2 => "CV2",
            Method::Oracle => "Oracle",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spco" => Ok(Method::Spco),
            "cv2" => Ok(Method::Cv2),
            "oracle" => Ok(Method::Oracle),
            _ => Err(Error::Config(format!("unknown method '{s}' (expected spco, cv2 or oracle)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub h: f64,
    pub criterion: f64,
}

/// Per-h side values aligned with the report table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub penalty: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diff_to_h_min: Option<Vec<f64>>,
    /// Oracle risk minus `‖f‖²`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shifted_risk: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_sq_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    pub kernel: String,
    pub n: usize,
    pub h_min: f64,
    pub chosen_h: f64,
    pub chosen_index: usize,
    pub table: Vec<TableRow>,
    pub diagnostics: Diagnostics,
}

impl SelectionReport {
    pub fn criterion(&self) -> Vec<f64> {
        self.table.iter().map(|r| r.criterion).collect()
    }
}

pub fn spco_select(sample: &Sample, kernel: &KernelProfile, lambda: f64) -> Result<SelectionReport> {
    if !lambda.is_finite() {
        return domain(format!("lambda must be finite, got {lambda}"));
    }
    Ok(GridTerms::compute(sample, kernel, false)?.spco(lambda))
}

pub fn cv2_select(sample: &Sample, kernel: &KernelProfile) -> Result<SelectionReport> {
    if sample.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: sample.len() });
    }
    GridTerms::compute(sample, kernel, true)?.cv2()
}

pub fn oracle_select<T: OracleTarget + ?Sized>(
    sample: &Sample,
    kernel: &KernelProfile,
    target: &T,
) -> Result<SelectionReport> {
    GridTerms::compute(sample, kernel, false)?.oracle(target)
}
