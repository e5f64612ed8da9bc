//! Monte-Carlo harness: MISE tables, λ sweeps and per-h risk curves.
//!
//! Replication `r` draws its sample with seed `base_seed + r`. Replications
//! run on the ambient rayon pool and are reduced in index order, so reports
//! do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FittedEstimator;
use crate::geometry::{product_quadrature_s2, quadrature_for_bandwidth, SphereQuadrature};
use crate::kernel::KernelProfile;
use crate::selectors::{argmin_prefer_larger, GridTerms, Method};
use crate::targets::{ComponentSpec, TargetDensity};

pub const REPORT_SCHEMA: &str = "spherekde-report/1";

/// λ values swept when the config gives none.
pub const DEFAULT_LAMBDA_GRID: [f64; 10] = [-1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    #[default]
    Mise,
    LambdaSweep,
    RiskCurves,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureResolution {
    pub n_theta: usize,
    pub n_phi: usize,
}

fn default_reps() -> usize {
    100
}

fn default_methods() -> Vec<Method> {
    vec![Method::Oracle, Method::Spco, Method::Cv2]
}

fn default_lambda() -> f64 {
    1.0
}

fn default_kernel() -> String {
    "vonmises".into()
}

fn default_true() -> bool {
    true
}

/// Experiment description, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub mode: BenchMode,
    /// Built-in target name, or the label of an inline `target`.
    pub target_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<ComponentSpec>>,
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// SPCO weight in `mise` and `risk-curves` modes.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    /// Fixed rule for the spot check; the bandwidth-adapted rule otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureResolution>,
    /// Seed of the single draw in `risk-curves` mode; `base_seed` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_seed: Option<u64>,
    #[serde(default = "default_true")]
    pub spot_check: bool,
}

impl BenchConfig {
    pub fn new(target_id: impl Into<String>, n: usize, reps: usize) -> Self {
        Self {
            mode: BenchMode::Mise,
            target_id: target_id.into(),
            target: None,
            n,
            reps,
            methods: default_methods(),
            lambda: 1.0,
            lambda_grid: None,
            base_seed: 0,
            kernel: default_kernel(),
            quadrature: None,
            single_seed: None,
            spot_check: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method {m} is listed twice"));
            }
        }
        if self.methods.contains(&Method::Cv2) && self.n < 2 {
            return bad("CV2 needs n >= 2".into());
        }
        if !self.lambda.is_finite() {
            return bad("lambda must be finite".into());
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return bad("lambda_grid must not be empty".into());
            }
            if grid.iter().any(|l| !l.is_finite()) {
                return bad("lambda_grid entries must be finite".into());
            }
        }
        if let Some(q) = self.quadrature {
            if q.n_theta < 2 || q.n_phi < 2 {
                return bad("quadrature resolution must be at least 2 x 2".into());
            }
        }
        Ok(())
    }

    pub fn resolve_target(&self) -> Result<TargetDensity> {
        match &self.target {
            Some(specs) => TargetDensity::from_specs(self.target_id.clone(), specs),
            None => TargetDensity::builtin(&self.target_id),
        }
    }

    pub fn lambda_values(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec())
    }

    pub fn seed(&self, rep: usize) -> u64 {
        self.base_seed.wrapping_add(rep as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_mise: f64,
    pub std_error: f64,
    pub risks: Vec<f64>,
    pub chosen_h: Vec<f64>,
}

/// Exact risk of one selected estimator against a quadrature evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub rep: usize,
    pub method: Method,
    pub h: f64,
    pub exact_risk: f64,
    pub quadrature_risk: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiseReport {
    pub schema: String,
    pub mode: BenchMode,
    pub config: BenchConfig,
    pub h_min: f64,
    pub grid_size: usize,
    pub methods: Vec<MethodSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spot_checks: Vec<SpotCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl MiseReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// One row per (method, rep): `method,rep,seed,chosen_h,risk`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rep,seed,chosen_h,risk\n");
        for s in &self.methods {
            for (rep, (h, risk)) in s.chosen_h.iter().zip(&s.risks).enumerate() {
                let seed = self.config.seed(rep);
                out.push_str(&format!("{},{rep},{seed},{h},{risk}\n", s.method));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_risk: f64,
    pub std_error: f64,
    pub mean_chosen_h: f64,
    pub median_chosen_h: f64,
    /// Fraction of replications with `ĥ ≤ 2 h_min`.
    pub frac_below_2h_min: f64,
    pub risks: Vec<f64>,
    pub chosen_h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub mode: BenchMode,
    pub config: BenchConfig,
    pub h_min: f64,
    pub grid_size: usize,
    pub rows: Vec<SweepRow>,
    pub min_mean_risk: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl SweepReport {
    pub fn row(&self, lambda: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.lambda == lambda)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,rep,seed,chosen_h,risk\n");
        for row in &self.rows {
            for (rep, (h, risk)) in row.chosen_h.iter().zip(&row.risks).enumerate() {
                let seed = self.config.seed(rep);
                out.push_str(&format!("{},{rep},{seed},{h},{risk}\n", row.lambda));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub h: f64,
    /// `‖f̂_h - f‖² - ‖f‖²`.
    pub r_oracle: f64,
    pub risk: f64,
    pub r_spco: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurveReport {
    pub schema: String,
    pub mode: BenchMode,
    pub config: BenchConfig,
    pub seed: u64,
    pub h_min: f64,
    pub target_sq_norm: f64,
    pub rows: Vec<CurveRow>,
    pub h_oracle: f64,
    pub h_spco: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_cv2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl RiskCurveReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,r_oracle,risk,r_spco,cv2\n");
        for r in &self.rows {
            let cv2 = r.cv2.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{cv2}\n", r.h, r.r_oracle, r.risk, r.r_spco));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BenchReport {
    Mise(MiseReport),
    LambdaSweep(SweepReport),
    RiskCurves(RiskCurveReport),
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing report: {e}")))
    }

    pub fn to_csv(&self) -> String {
        match self {
            BenchReport::Mise(r) => r.to_csv(),
            BenchReport::LambdaSweep(r) => r.to_csv(),
            BenchReport::RiskCurves(r) => r.to_csv(),
        }
    }

    pub fn set_wall_clock(&mut self, seconds: f64) {
        let slot = match self {
            BenchReport::Mise(r) => &mut r.wall_clock_seconds,
            BenchReport::LambdaSweep(r) => &mut r.wall_clock_seconds,
            BenchReport::RiskCurves(r) => &mut r.wall_clock_seconds,
        };
        *slot = Some(seconds);
    }
}

/// Dispatches on `config.mode`.
pub fn run(config: &BenchConfig) -> Result<BenchReport> {
    Ok(match config.mode {
        BenchMode::Mise => BenchReport::Mise(run_mise(config)?),
        BenchMode::LambdaSweep => BenchReport::LambdaSweep(lambda_sweep(config)?),
        BenchMode::RiskCurves => {
            let seed = config.single_seed.unwrap_or(config.base_seed);
            BenchReport::RiskCurves(risk_curves(config, seed)?)
        }
    })
}

/// [`run`] on a dedicated pool of `threads` workers.
pub fn run_with_threads(config: &BenchConfig, threads: usize) -> Result<BenchReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(config))
}

struct Setup {
    target: TargetDensity,
    kernel: KernelProfile,
}

fn setup(config: &BenchConfig) -> Result<Setup> {
    config.validate()?;
    Ok(Setup {
        target: config.resolve_target()?,
        kernel: KernelProfile::by_name(&config.kernel)?,
    })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

struct RepOutcome {
    h_min: f64,
    grid_size: usize,
    /// Per requested entry (method or λ): grid index chosen and its risk.
    picks: Vec<(f64, f64)>,
}

fn spot_quadrature(config: &BenchConfig, h: f64) -> Result<SphereQuadrature> {
    match config.quadrature {
        Some(q) => product_quadrature_s2(q.n_theta, q.n_phi),
        None => quadrature_for_bandwidth(h),
    }
}

/// `∫ (f̂_h - f)²` by quadrature.
fn quadrature_risk(est: &FittedEstimator<'_>, target: &TargetDensity, quad: &SphereQuadrature) -> Result<f64> {
    let f = |x: &crate::geometry::UnitVector| target.density(x).unwrap_or(0.0);
    let sq = est.sq_norm_with(quad)?;
    let cross = est.inner_with_fn(f, quad)?;
    let f_sq = quad.integrate(|x| f(x).powi(2));
    Ok(sq - 2.0 * cross + f_sq)
}

/// MISE of each configured selector.
pub fn run_mise(config: &BenchConfig) -> Result<MiseReport> {
    let Setup { target, kernel } = setup(config)?;
    let with_loo = config.methods.contains(&Method::Cv2);
    let outcomes = (0..config.reps)
        .into_par_iter()
        .map(|rep| -> Result<RepOutcome> {
            let sample = target.sample(config.n, config.seed(rep))?;
            let terms = GridTerms::compute(&sample, &kernel, with_loo)?;
            let risk = terms.oracle_risk(&target)?;
            let hs = terms.grid().bandwidths();
            let picks = config
                .methods
                .iter()
                .map(|m| {
                    let idx = match m {
                        Method::Oracle => argmin_prefer_larger(&risk),
                        Method::Spco => argmin_prefer_larger(&terms.spco_criterion(config.lambda)),
                        Method::Cv2 => argmin_prefer_larger(&terms.cv2_criterion()?),
                    };
                    Ok((hs[idx], risk[idx]))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RepOutcome { h_min: terms.grid().h_min(), grid_size: hs.len(), picks })
        })
        .collect::<Result<Vec<_>>>()?;

    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let risks: Vec<f64> = outcomes.iter().map(|o| o.picks[j].1).collect();
            let chosen_h = outcomes.iter().map(|o| o.picks[j].0).collect();
            let (mean_mise, std_error) = mean_and_se(&risks);
            MethodSummary { method, mean_mise, std_error, risks, chosen_h }
        })
        .collect::<Vec<_>>();

    let mut spot_checks = Vec::new();
    if config.spot_check {
        let sample = target.sample(config.n, config.seed(0))?;
        for s in &methods {
            let est = FittedEstimator::fit(&sample, &kernel, s.chosen_h[0])?;
            let quad = spot_quadrature(config, s.chosen_h[0])?;
            let q = quadrature_risk(&est, &target, &quad)?;
            let exact = s.risks[0];
            spot_checks.push(SpotCheck {
                rep: 0,
                method: s.method,
                h: s.chosen_h[0],
                exact_risk: exact,
                quadrature_risk: q,
                rel_error: (q - exact).abs() / exact.abs().max(f64::MIN_POSITIVE),
            });
        }
    }

    Ok(MiseReport {
        schema: REPORT_SCHEMA.into(),
        mode: BenchMode::Mise,
        config: config.clone(),
        h_min: outcomes[0].h_min,
        grid_size: outcomes[0].grid_size,
        methods,
        spot_checks,
        wall_clock_seconds: None,
    })
}

/// Mean SPCO risk and bandwidth for each λ, on shared replications.
pub fn lambda_sweep(config: &BenchConfig) -> Result<SweepReport> {
    let Setup { target, kernel } = setup(config)?;
    let lambdas = config.lambda_values();
    let outcomes = (0..config.reps)
        .into_par_iter()
        .map(|rep| -> Result<RepOutcome> {
            let sample = target.sample(config.n, config.seed(rep))?;
            let terms = GridTerms::compute(&sample, &kernel, false)?;
            let risk = terms.oracle_risk(&target)?;
            let hs = terms.grid().bandwidths();
            let picks = lambdas
                .iter()
                .map(|&l| {
                    let idx = argmin_prefer_larger(&terms.spco_criterion(l));
                    (hs[idx], risk[idx])
                })
                .collect();
            Ok(RepOutcome { h_min: terms.grid().h_min(), grid_size: hs.len(), picks })
        })
        .collect::<Result<Vec<_>>>()?;

    let h_min = outcomes[0].h_min;
    let rows: Vec<SweepRow> = lambdas
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let risks: Vec<f64> = outcomes.iter().map(|o| o.picks[j].1).collect();
            let chosen_h: Vec<f64> = outcomes.iter().map(|o| o.picks[j].0).collect();
            let (mean_risk, std_error) = mean_and_se(&risks);
            let below = chosen_h.iter().filter(|&&h| h <= 2.0 * h_min).count();
            SweepRow {
                lambda,
                mean_risk,
                std_error,
                mean_chosen_h: chosen_h.iter().sum::<f64>() / chosen_h.len() as f64,
                median_chosen_h: median(&chosen_h),
                frac_below_2h_min: below as f64 / chosen_h.len() as f64,
                risks,
                chosen_h,
            }
        })
        .collect();
    let min_mean_risk = rows.iter().map(|r| r.mean_risk).fold(f64::INFINITY, f64::min);
    Ok(SweepReport {
        schema: REPORT_SCHEMA.into(),
        mode: BenchMode::LambdaSweep,
        config: config.clone(),
        h_min,
        grid_size: outcomes[0].grid_size,
        rows,
        min_mean_risk,
        wall_clock_seconds: None,
    })
}

/// All three criteria over the grid for one draw.
pub fn risk_curves(config: &BenchConfig, single_seed: u64) -> Result<RiskCurveReport> {
    let Setup { target, kernel } = setup(config)?;
    let sample = target.sample(config.n, single_seed)?;
    let with_cv2 = sample.len() >= 2;
    let terms = GridTerms::compute(&sample, &kernel, with_cv2)?;
    let risk = terms.oracle_risk(&target)?;
    let spco = terms.spco_criterion(config.lambda);
    let cv2 = if with_cv2 { Some(terms.cv2_criterion()?) } else { None };
    let f_sq = target.exact_sq_norm();
    let hs = terms.grid().bandwidths();
    let rows = hs
        .iter()
        .enumerate()
        .map(|(k, &h)| CurveRow {
            h,
            r_oracle: risk[k] - f_sq,
            risk: risk[k],
            r_spco: spco[k],
            cv2: cv2.as_ref().map(|c| c[k]),
        })
        .collect();
    Ok(RiskCurveReport {
        schema: REPORT_SCHEMA.into(),
        mode: BenchMode::RiskCurves,
        config: config.clone(),
        seed: single_seed,
        h_min: terms.grid().h_min(),
        target_sq_norm: f_sq,
        rows,
        h_oracle: hs[argmin_prefer_larger(&risk)],
        h_spco: hs[argmin_prefer_larger(&spco)],
        h_cv2: cv2.as_ref().map(|c| hs[argmin_prefer_larger(c)]),
        wall_clock_seconds: None,
    })
}
