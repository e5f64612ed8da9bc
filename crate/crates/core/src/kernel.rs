//! Kernel profiles `K: [0, ∞) → [0, ∞)` and the bandwidth-dependent constants
//! derived from them.
//!
//! With `t = xᵀy`, every integral over the sphere of a function of `xᵀy`
//! collapses to `σ_{d-2} ∫_{-1}^{1} g(t) (1 - t²)^{(d-3)/2} dt`. The generic path
//! evaluates that integral after substituting `t = 1 - h² u`, which keeps the
//! integrand's mass near `u = 0` however small `h` gets. The von Mises kernel
//! on S² additionally has closed forms, written with nonpositive exponents.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::surface_area;
use crate::quadrature::{integrate_adaptive, AdaptiveOptions};
use crate::special::one_minus_exp_neg;

/// Which closed-form shortcuts apply to a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedForm {
    VonMises,
    Generic,
}

type ProfileFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A kernel profile together with the metadata the estimators need.
#[derive(Clone)]
pub struct KernelProfile {
    name: String,
    profile: Arc<ProfileFn>,
    sup_norm: f64,
    tail_cutoff: f64,
    closed_form: ClosedForm,
}

impl fmt::Debug for KernelProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelProfile")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .field("tail_cutoff", &self.tail_cutoff)
            .field("closed_form", &self.closed_form)
            .finish()
    }
}

/// Integrated-moment constants of a kernel in dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub d: usize,
    pub alpha0: f64,
    /// `2^{(d-3)/2} σ_{d-2} α₀(K)`, the leading coefficient of `c₀⁻¹(h) / h^{d-1}`.
    pub r0: f64,
    /// `2^{(d-3)/2} σ_{d-2} ∫ x^{(d-3)/2} K²(x) dx`, the same for `c₂(h)`.
    pub r1: f64,
}

impl KernelConstants {
    /// `R₁ / R₀²`, the leading coefficient of `c₀²(h) c₂(h) h^{d-1}`.
    pub fn r_ratio(&self) -> f64 {
        self.r1 / (self.r0 * self.r0)
    }
}

const TAIL_RELATIVE: f64 = 1e-16;
const PROBE_POINTS: usize = 512;

fn quad_opts() -> AdaptiveOptions {
    AdaptiveOptions {
        abs_tol: 1e-12,
        rel_tol: 1e-13,
        max_intervals: 4000,
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0 && h <= 1.0) {
        return domain(format!("bandwidth must lie in (0, 1], got {h}"));
    }
    Ok(())
}

fn check_dim(d: usize) -> Result<()> {
    if d < 3 {
        return domain(format!("dimension must be at least 3, got {d}"));
    }
    Ok(())
}

impl KernelProfile {
    /// `K(x) = e^{-x}`.
    pub fn von_mises() -> Self {
        Self {
            name: "vonmises".to_string(),
            profile: Arc::new(|x: f64| (-x).exp()),
            sup_norm: 1.0,
            tail_cutoff: 16.0 * 10f64.ln() + 1.0,
            closed_form: ClosedForm::VonMises,
        }
    }

    /// Resolves a kernel name given on the command line.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "vonmises" | "von-mises" | "vmf" => Ok(Self::von_mises()),
            other if other.starts_with("generic") => Err(Error::Unsupported(
                "generic kernels can only be constructed programmatically".to_string(),
            )),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }

    /// Wraps an arbitrary profile.
    ///
    /// The profile is probed for nonnegativity, `sup_norm` defaults to the
    /// probed maximum, and `α₀` (in d = 3) must be finite and positive.
    pub fn generic<F>(name: impl Into<String>, profile: F, sup_norm: Option<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let probe_max = probe_grid()
            .map(|x| {
                let v = profile(x);
                if v.is_finite() && v >= 0.0 {
                    Ok(v)
                } else {
                    domain(format!("kernel profile must be finite and nonnegative, K({x}) = {v}"))
                }
            })
            .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))?;
        let sup_norm = match sup_norm {
            Some(s) if s.is_finite() && s >= probe_max && s > 0.0 => s,
            Some(s) => {
                return domain(format!("sup_norm {s} is below the probed maximum {probe_max}"))
            }
            None if probe_max > 0.0 => probe_max,
            None => return domain("kernel profile vanishes on the probe grid"),
        };
        let threshold = TAIL_RELATIVE * sup_norm;
        let mut x = 1.0;
        while profile(x) >= threshold {
            x *= 2.0;
            if x > 1e12 {
                return Err(Error::Moment("kernel does not decay; no tail cutoff found".into()));
            }
        }
        let kernel = Self {
            name: name.into(),
            profile: Arc::new(profile),
            sup_norm,
            tail_cutoff: x,
            closed_form: ClosedForm::Generic,
        };
        let alpha0 = kernel.alpha_moment(0, 3)?;
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::Moment(format!("alpha_0 must be positive and finite, got {alpha0}")));
        }
        Ok(kernel)
    }

    /// The same profile with closed-form shortcuts disabled.
    pub fn as_generic(&self) -> Self {
        Self {
            closed_form: ClosedForm::Generic,
            ..self.clone()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn tail_cutoff(&self) -> f64 {
        self.tail_cutoff
    }

    pub fn closed_form(&self) -> ClosedForm {
        self.closed_form
    }

    pub(crate) fn is_von_mises_s2(&self, d: usize) -> bool {
        self.closed_form == ClosedForm::VonMises && d == 3
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.profile)(x)
    }

    /// `∫₀^∞ x^{p} g(x) dx` over `[0, tail_cutoff]` plus a tail estimate.
    ///
    /// The tail assumes power-law decay fitted at `T/2` and `T`; that bounds
    /// exponentially decaying profiles from above and flags divergent moments.
    fn weighted_moment<G: Fn(f64) -> f64>(&self, g: G, p: f64) -> Result<f64> {
        let t = self.tail_cutoff;
        let breaks: Vec<f64> = (0..64)
            .map(|k| t / 2f64.powi(k))
            .take_while(|&b| b > 1e-6)
            .collect();
        let body = integrate_adaptive(|x| x.powf(p) * g(x), 0.0, t, &breaks, quad_opts())
            .map_err(|e| Error::Moment(format!("moment of order {p} did not converge: {e}")))?;
        let at_cut = g(t);
        if at_cut == 0.0 {
            return Ok(body);
        }
        let at_half = g(0.5 * t);
        let decay = (at_half / at_cut).ln() / 2f64.ln();
        if !(decay > p + 1.0) {
            return Err(Error::Moment(format!("moment of order {p} appears divergent")));
        }
        Ok(body + at_cut * t.powf(p + 1.0) / (decay - p - 1.0))
    }

    /// `α_i(K) = ∫₀^∞ x^{(i+d-3)/2} K(x) dx`.
    pub fn alpha_moment(&self, i: usize, d: usize) -> Result<f64> {
        check_dim(d)?;
        let p = (i + d - 3) as f64 / 2.0;
        if self.closed_form == ClosedForm::VonMises {
            return Ok(libm::tgamma(p + 1.0));
        }
        self.weighted_moment(|x| self.eval(x), p)
    }

    pub fn constants(&self, d: usize) -> Result<KernelConstants> {
        check_dim(d)?;
        let alpha0 = self.alpha_moment(0, d)?;
        let p = (d - 3) as f64 / 2.0;
        let squared = if self.closed_form == ClosedForm::VonMises {
            // ∫ x^p e^{-2x} dx
            libm::tgamma(p + 1.0) / 2f64.powf(p + 1.0)
        } else {
            self.weighted_moment(|x| self.eval(x).powi(2), p)?
        };
        let scale = 2f64.powf(p) * surface_area(d - 1)?;
        Ok(KernelConstants {
            d,
            alpha0,
            r0: scale * alpha0,
            r1: scale * squared,
        })
    }

    /// `σ_{d-2} ∫_{-1}^{1} K((1-t)/h²) K((1-t)/h2²) (1-t²)^{(d-3)/2} dt` by quadrature,
    /// or the single-kernel integral when `h2` is `None`.
    fn zonal_quadrature(&self, h: f64, h2: Option<f64>, d: usize) -> Result<f64> {
        let (hs, ratio) = match h2 {
            Some(h2) if h2 < h => (h2, Some((h2 / h).powi(2))),
            Some(h2) => (h, Some((h / h2).powi(2))),
            None => (h, None),
        };
        let hs2 = hs * hs;
        let upper = (2.0 / hs2).min(self.tail_cutoff);
        let p = (d - 3) as f64 / 2.0;
        let integrand = |u: f64| {
            let mut v = self.eval(u);
            if let Some(r) = ratio {
                v *= self.eval(u * r);
            }
            if d > 3 {
                v *= (hs2 * u * (2.0 - hs2 * u)).max(0.0).powf(p);
            }
            v
        };
        let breaks: Vec<f64> = (0..64)
            .map(|k| upper / 2f64.powi(k))
            .take_while(|&b| b > 1e-6)
            .collect();
        let integral = integrate_adaptive(integrand, 0.0, upper, &breaks, quad_opts())?;
        Ok(surface_area(d - 1)? * hs2 * integral)
    }

    /// `c₀⁻¹(h) = ∫ K((1 - xᵀy)/h²) ω(dy)`.
    pub fn c0_inv(&self, h: f64, d: usize) -> Result<f64> {
        check_bandwidth(h)?;
        check_dim(d)?;
        if self.is_von_mises_s2(d) {
            let a = 1.0 / (h * h);
            return Ok(2.0 * PI * h * h * one_minus_exp_neg(2.0 * a));
        }
        self.zonal_quadrature(h, None, d)
    }

    /// Normalizing constant making the estimator integrate to one.
    pub fn c0(&self, h: f64, d: usize) -> Result<f64> {
        Ok(1.0 / self.c0_inv(h, d)?)
    }

    /// `c₂(h) = ∫ K²((1 - xᵀy)/h²) ω(dy)`.
    pub fn c2(&self, h: f64, d: usize) -> Result<f64> {
        self.cross_inner(h, h, d)
    }

    /// `⟨K_{h²}(x, ·), K_{h2²}(x, ·)⟩`, without the `c₀` factors.
    pub fn cross_inner(&self, h: f64, h2: f64, d: usize) -> Result<f64> {
        check_bandwidth(h)?;
        check_bandwidth(h2)?;
        check_dim(d)?;
        if self.is_von_mises_s2(d) {
            let s = 1.0 / (h * h) + 1.0 / (h2 * h2);
            return Ok(2.0 * PI * one_minus_exp_neg(2.0 * s) / s);
        }
        self.zonal_quadrature(h, Some(h2), d)
    }
}

fn probe_grid() -> impl Iterator<Item = f64> {
    let linear = (0..=PROBE_POINTS).map(|k| 8.0 * k as f64 / PROBE_POINTS as f64);
    let geometric = (-30..=30).map(|k| 2f64.powi(k));
    linear.chain(geometric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic_exp() -> KernelProfile {
        KernelProfile::generic("exp", |x: f64| (-x).exp(), None).unwrap()
    }

    #[test]
    fn alpha_moments_of_exponential_profile() {
        let k = generic_exp();
        assert!((k.alpha_moment(0, 3).unwrap() - 1.0).abs() < 1e-10);
        assert!((k.alpha_moment(2, 3).unwrap() - 1.0).abs() < 1e-10);
        let half_root_pi = PI.sqrt() / 2.0;
        assert!((k.alpha_moment(0, 4).unwrap() - half_root_pi).abs() < 1e-9);
        let vm = KernelProfile::von_mises();
        assert!((vm.alpha_moment(0, 4).unwrap() - half_root_pi).abs() < 1e-14);
        assert!((vm.alpha_moment(2, 3).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn divergent_or_invalid_profiles_are_rejected() {
        assert!(KernelProfile::generic("neg", |x: f64| 1.0 - x, None).is_err());
        assert!(KernelProfile::generic("flat", |_x: f64| 1.0, None).is_err());
        assert!(KernelProfile::generic("zero", |_x: f64| 0.0, None).is_err());
        assert!(KernelProfile::generic("exp", |x: f64| (-x).exp(), Some(0.5)).is_err());
        // x^{-1.5} tail: α₀ is finite in d = 3, α₂ is not
        let heavy =
            KernelProfile::generic("heavy", |x: f64| if x < 1.0 { 1.0 } else { x.powf(-1.5) }, None)
                .unwrap();
        assert!((heavy.alpha_moment(0, 3).unwrap() - 3.0).abs() < 1e-3);
        assert!(matches!(heavy.alpha_moment(2, 3), Err(Error::Moment(_))));
    }

    #[test]
    fn compact_support_kernel() {
        let k = KernelProfile::generic("box", |x: f64| if x <= 1.0 { 1.0 } else { 0.0 }, None).unwrap();
        assert_eq!(k.tail_cutoff(), 2.0);
        assert!((k.alpha_moment(0, 3).unwrap() - 1.0).abs() < 1e-10);
        // box kernel on S²: c₀⁻¹(h) = 2π h² for h ≤ 1/√2
        let v = k.c0_inv(0.5, 3).unwrap();
        assert!((v - 2.0 * PI * 0.25).abs() < 1e-9);
    }

    #[test]
    fn von_mises_constants_in_three_dimensions() {
        let c = KernelProfile::von_mises().constants(3).unwrap();
        assert!((c.r0 - 2.0 * PI).abs() < 1e-13);
        assert!((c.r1 - PI).abs() < 1e-13);
        let g = generic_exp().constants(3).unwrap();
        assert!((g.r0 - c.r0).abs() < 1e-9);
        assert!((g.r1 - c.r1).abs() < 1e-9);
    }

    #[test]
    fn closed_forms_at_unit_bandwidth() {
        let vm = KernelProfile::von_mises();
        let c0 = vm.c0(1.0, 3).unwrap();
        let expected = 1.0 / (2.0 * PI * (1.0 - (-2.0f64).exp()));
        assert!((c0 - expected).abs() < 1e-15);
        assert!((c0 - 0.184_065_5).abs() < 1e-7);
        // literal form 4π e^{-1/h²} h² sinh(1/h²)
        let literal = 1.0 / (4.0 * PI * (-1.0f64).exp() * 1.0f64.sinh());
        assert!((c0 - literal).abs() < 1e-14);
        let c2 = vm.c2(1.0, 3).unwrap();
        assert!((c2 - PI * (1.0 - (-4.0f64).exp())).abs() < 1e-14);
        assert!((c2 - 3.084_052_4).abs() < 1e-7);
        let x = vm.cross_inner(0.5, 0.25, 3).unwrap();
        assert!((x - 2.0 * PI * (1.0 - (-40.0f64).exp()) / 20.0).abs() < 1e-15);
        assert!((x - 0.314_159_3).abs() < 1e-7);
    }

    #[test]
    fn small_bandwidth_closed_forms() {
        let vm = KernelProfile::von_mises();
        let h = 0.05;
        let ratio = vm.c0_inv(h, 3).unwrap() / (2.0 * PI * h * h);
        assert_eq!(ratio, 1.0);
        for &h in &[1e-3, 2e-3, 0.01] {
            for v in [vm.c0(h, 3).unwrap(), vm.c2(h, 3).unwrap(), vm.cross_inner(h, 0.7, 3).unwrap()] {
                assert!(v.is_finite() && v > 0.0, "h={h}");
            }
        }
    }

    #[test]
    fn closed_forms_agree_with_quadrature() {
        let vm = KernelProfile::von_mises();
        let quad = vm.as_generic();
        for m in 1..=20 {
            let h = 1.0 / (3 * m) as f64;
            let pairs = [
                (vm.c0(h, 3).unwrap(), quad.c0(h, 3).unwrap()),
                (vm.c2(h, 3).unwrap(), quad.c2(h, 3).unwrap()),
                (vm.cross_inner(h, 0.4, 3).unwrap(), quad.cross_inner(h, 0.4, 3).unwrap()),
            ];
            for (closed, numeric) in pairs {
                assert!((closed - numeric).abs() / closed < 1e-10, "h={h} {closed} {numeric}");
            }
        }
    }

    #[test]
    fn asymptotic_constants_small_h() {
        let vm = KernelProfile::von_mises();
        let k = vm.constants(3).unwrap();
        for &h in &[0.05, 0.03, 0.01] {
            let lead = vm.c0_inv(h, 3).unwrap() / (k.r0 * h * h);
            assert!((0.999..=1.001).contains(&lead));
            let c0 = vm.c0(h, 3).unwrap();
            let prod = c0 * c0 * vm.c2(h, 3).unwrap() * h * h / k.r_ratio();
            assert!((0.99..=1.01).contains(&prod));
        }
    }

    #[test]
    fn higher_dimension_quadrature_matches_leading_order() {
        // for small h the generic path should approach R₀ h^{d-1}
        let vm = KernelProfile::von_mises();
        for d in [4usize, 5] {
            let k = vm.constants(d).unwrap();
            let h: f64 = 0.02;
            let lead = vm.c0_inv(h, d).unwrap() / (k.r0 * h.powi(d as i32 - 1));
            assert!((lead - 1.0).abs() < 1e-3, "d={d} lead={lead}");
        }
    }

    #[test]
    fn c0_nonincreasing_in_h() {
        let vm = KernelProfile::von_mises();
        let vals: Vec<f64> = (1..=56).map(|m| vm.c0(1.0 / m as f64, 3).unwrap()).collect();
        // vals indexed by m, so c₀ must grow with m
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bandwidth_domain() {
        let vm = KernelProfile::von_mises();
        assert!(vm.c0(0.0, 3).is_err());
        assert!(vm.c0(1.5, 3).is_err());
        assert!(vm.c2(-0.1, 3).is_err());
        assert!(vm.cross_inner(0.5, f64::NAN, 3).is_err());
        assert!(vm.c0(0.5, 2).is_err());
    }

    #[test]
    fn kernel_lookup() {
        assert_eq!(KernelProfile::by_name("vonmises").unwrap().closed_form(), ClosedForm::VonMises);
        assert!(matches!(KernelProfile::by_name("generic:x^2"), Err(Error::Unsupported(_))));
        assert!(matches!(KernelProfile::by_name("epanechnikov"), Err(Error::Config(_))));
    }
}
