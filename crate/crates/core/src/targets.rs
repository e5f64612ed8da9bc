//! von Mises–Fisher densities and mixtures on S², their exact samplers, and
//! closed-form L² functionals.
//!
//! All closed forms rest on `∫_{S²} e^{vᵀx} ω(dx) = 4π sinh|v| / |v|`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimator::{FittedEstimator, Sample};
use crate::geometry::{dot, quadrature_for_bandwidth, rotation_onto, Rotation, UnitVector};
use crate::special::{exp_sinhc_gap, one_minus_exp_neg};

/// One vMF component `w · C_κ e^{κ xᵀμ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct VmfComponent {
    kappa: f64,
    mu: UnitVector,
    weight: f64,
    /// `C_κ e^{κ} = κ / (2π (1 - e^{-2κ}))`, finite for every κ > 0.
    scaled_normalizer: f64,
}

impl VmfComponent {
    pub fn new(kappa: f64, mu: UnitVector, weight: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return domain(format!("concentration must be positive, got {kappa}"));
        }
        if !(weight > 0.0 && weight <= 1.0) {
            return domain(format!("component weight must lie in (0, 1], got {weight}"));
        }
        if mu.dim() != 3 {
            return domain(format!("vMF targets live on S², got mean direction in d = {}", mu.dim()));
        }
        Ok(Self {
            kappa,
            mu,
            weight,
            scaled_normalizer: kappa / (2.0 * PI * one_minus_exp_neg(2.0 * kappa)),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mu(&self) -> &UnitVector {
        &self.mu
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `C_κ = κ / (2π (e^κ - e^{-κ}))`.
    pub fn normalizer(&self) -> f64 {
        self.scaled_normalizer * (-self.kappa).exp()
    }

    fn unweighted_density(&self, x: &[f64]) -> f64 {
        self.scaled_normalizer * (self.kappa * (dot(x, self.mu.coords()) - 1.0)).exp()
    }
}

/// Serialized form of a component: `{"kappa": .., "mu": [x, y, z], "weight": ..}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub kappa: f64,
    pub mu: [f64; 3],
    pub weight: f64,
}

/// A finite vMF mixture on S².
#[derive(Clone, Debug)]
pub struct TargetDensity {
    name: String,
    components: Vec<VmfComponent>,
    rotations: Vec<Rotation>,
}

impl TargetDensity {
    pub fn new(name: impl Into<String>, components: Vec<VmfComponent>) -> Result<Self> {
        if components.is_empty() {
            return domain("a target needs at least one component");
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("component weights must sum to 1, got {total}"));
        }
        let rotations = components.iter().map(|c| rotation_onto(&c.mu)).collect();
        Ok(Self {
            name: name.into(),
            components,
            rotations,
        })
    }

    pub fn from_specs(name: impl Into<String>, specs: &[ComponentSpec]) -> Result<Self> {
        let components = specs
            .iter()
            .map(|s| VmfComponent::new(s.kappa, UnitVector::new(&s.mu)?, s.weight))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, components)
    }

    /// Parses a JSON list of components.
    pub fn from_json(name: impl Into<String>, json: &str) -> Result<Self> {
        let specs: Vec<ComponentSpec> =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("target spec: {e}")))?;
        Self::from_specs(name, &specs)
    }

    /// Single vMF with κ = 2 and μ = (1, 0, 0).
    pub fn f1vm() -> Self {
        let spec = [ComponentSpec { kappa: 2.0, mu: [1.0, 0.0, 0.0], weight: 1.0 }];
        Self::from_specs("f1vm", &spec).expect("built-in target is valid")
    }

    /// `4/5 · vMF(2, (1,0,0)) + 1/5 · vMF(0.7, (-1,0,0))`.
    pub fn f2vm() -> Self {
        let spec = [
            ComponentSpec { kappa: 2.0, mu: [1.0, 0.0, 0.0], weight: 0.8 },
            ComponentSpec { kappa: 0.7, mu: [-1.0, 0.0, 0.0], weight: 0.2 },
        ];
        Self::from_specs("f2vm", &spec).expect("built-in target is valid")
    }

    pub fn builtin(id: &str) -> Result<Self> {
        match id {
            "f1vm" => Ok(Self::f1vm()),
            "f2vm" => Ok(Self::f2vm()),
            other => Err(Error::UnknownTarget(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn components(&self) -> &[VmfComponent] {
        &self.components
    }

    pub fn specs(&self) -> Vec<ComponentSpec> {
        self.components
            .iter()
            .map(|c| {
                let m = c.mu.coords();
                ComponentSpec { kappa: c.kappa, mu: [m[0], m[1], m[2]], weight: c.weight }
            })
            .collect()
    }

    pub fn density(&self, x: &UnitVector) -> Result<f64> {
        if x.dim() != 3 {
            return domain(format!("vMF targets live on S², got a point in d = {}", x.dim()));
        }
        Ok(self.density_raw(x.coords()))
    }

    pub(crate) fn density_raw(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.unweighted_density(x))
            .sum()
    }

    /// `n` i.i.d. draws from a ChaCha8 stream seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    /// Picks a component by weight, draws `w = xᵀμ` by inverting its CDF on
    /// `[-1, 1]`, draws the azimuth uniformly, and rotates onto μ.
    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        if n == 0 {
            return domain("sample size must be positive");
        }
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let k = if self.components.len() == 1 {
                0
            } else {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = self.components.len() - 1;
                for (i, c) in self.components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            };
            let kappa = self.components[k].kappa;
            let u: f64 = rng.random();
            // w = 1 + log(u + (1 - u) e^{-2κ}) / κ
            let w = (1.0 + ((1.0 - u) * (-2.0 * kappa).exp_m1()).ln_1p() / kappa).clamp(-1.0, 1.0);
            let phi = 2.0 * PI * rng.random::<f64>();
            let radial = (1.0 - w * w).max(0.0).sqrt();
            let local = [radial * phi.cos(), radial * phi.sin(), w];
            points.push(UnitVector::new(&self.rotations[k].apply_raw(&local))?);
        }
        Sample::new(points)
    }

    /// `‖f‖²`.
    pub fn exact_sq_norm(&self) -> f64 {
        let mut total = 0.0;
        for a in &self.components {
            for b in &self.components {
                let (ka, kb) = (a.kappa, b.kappa);
                let gap_sq: f64 = a
                    .mu
                    .coords()
                    .iter()
                    .zip(b.mu.coords())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let sum = ka + kb;
                let norm = (sum * sum - ka * kb * gap_sq).max(0.0).sqrt();
                let gap = -ka * kb * gap_sq / (norm + sum);
                total += a.weight * b.weight * a.scaled_normalizer * b.scaled_normalizer
                    * 4.0
                    * PI
                    * exp_sinhc_gap(norm, gap);
            }
        }
        total
    }

    /// `⟨f̂_h, f⟩`; closed form for the von Mises kernel, quadrature otherwise.
    pub fn exact_inner(&self, est: &FittedEstimator<'_>) -> Result<f64> {
        let sample = est.sample();
        if sample.dim() != 3 {
            return domain(format!("vMF targets live on S², sample has d = {}", sample.dim()));
        }
        if !est.kernel().is_von_mises_s2(3) {
            let quad = quadrature_for_bandwidth(est.bandwidth())?;
            return est.inner_with_fn(|x| self.density_raw(x.coords()), &quad);
        }
        let a = 1.0 / (est.bandwidth() * est.bandwidth());
        let mut total = 0.0;
        for x in sample.points() {
            for c in &self.components {
                let gap_sq: f64 = x
                    .coords()
                    .iter()
                    .zip(c.mu.coords())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                let sum = a + c.kappa;
                let norm = (sum * sum - a * c.kappa * gap_sq).max(0.0).sqrt();
                let gap = -a * c.kappa * gap_sq / (norm + sum);
                total += c.weight * c.scaled_normalizer * exp_sinhc_gap(norm, gap);
            }
        }
        Ok(4.0 * PI * est.c0() / sample.len() as f64 * total)
    }

    /// `‖f̂_h - f‖²` assembled from exact functionals.
    pub fn l2_risk(&self, est: &FittedEstimator<'_>) -> Result<f64> {
        Ok(est.sq_norm()? - 2.0 * self.exact_inner(est)? + self.exact_sq_norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::product_quadrature_s2;

    #[test]
    fn density_values() {
        let f1 = TargetDensity::f1vm();
        let mu = UnitVector::new(&[1.0, 0.0, 0.0]).unwrap();
        let at_mode = f1.density(&mu).unwrap();
        let c2 = 2.0 / (2.0 * PI * (2.0f64.exp() - (-2.0f64).exp()));
        assert!((at_mode - c2 * 2.0f64.exp()).abs() < 1e-14);
        assert!((at_mode - 0.324_248_7).abs() < 1e-7);
        assert!((f1.components()[0].normalizer() - c2).abs() < 1e-16);

        let flat = TargetDensity::from_specs(
            "flat",
            &[ComponentSpec { kappa: 1e-6, mu: [0.0, 0.0, 1.0], weight: 1.0 }],
        )
        .unwrap();
        for x in [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.3, 0.3, 0.9]] {
            let v = flat.density(&UnitVector::new(&x).unwrap()).unwrap();
            assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-6);
        }
        assert!(f1.density(&UnitVector::north_pole(4).unwrap()).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        let q = product_quadrature_s2(64, 64).unwrap();
        for target in [TargetDensity::f1vm(), TargetDensity::f2vm()] {
            let mass = q.integrate(|x| target.density(x).unwrap());
            assert!((mass - 1.0).abs() < 1e-8, "{}", target.name());
        }
    }

    #[test]
    fn sq_norm_closed_form() {
        let f1 = TargetDensity::f1vm();
        let c2 = 2.0 / (2.0 * PI * (2.0f64.exp() - (-2.0f64).exp()));
        let expected = c2 * c2 * 4.0 * PI * 4.0f64.sinh() / 4.0;
        assert!((f1.exact_sq_norm() - expected).abs() / expected < 1e-14);
        assert!((f1.exact_sq_norm() - 0.165_093_8).abs() < 1e-7);
        let q = product_quadrature_s2(64, 64).unwrap();
        for target in [TargetDensity::f1vm(), TargetDensity::f2vm()] {
            let numeric = q.integrate(|x| target.density(x).unwrap().powi(2));
            let closed = target.exact_sq_norm();
            assert!((numeric - closed).abs() / closed < 1e-8, "{}", target.name());
        }
        let flat = TargetDensity::from_specs(
            "flat",
            &[ComponentSpec { kappa: 1e-9, mu: [0.0, 0.0, 1.0], weight: 1.0 }],
        )
        .unwrap();
        assert!((flat.exact_sq_norm() - 1.0 / (4.0 * PI)).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        let mu = UnitVector::new(&[0.0, 0.0, 1.0]).unwrap();
        assert!(VmfComponent::new(0.0, mu.clone(), 1.0).is_err());
        assert!(VmfComponent::new(1.0, mu.clone(), 0.0).is_err());
        assert!(VmfComponent::new(1.0, mu.clone(), 1.5).is_err());
        let half = VmfComponent::new(1.0, mu, 0.5).unwrap();
        assert!(TargetDensity::new("bad", vec![half]).is_err());
        assert!(matches!(TargetDensity::builtin("f3vm"), Err(Error::UnknownTarget(_))));
        assert!(TargetDensity::f1vm().sample(0, 1).is_err());
        let parsed =
            TargetDensity::from_json("j", r#"[{"kappa": 2.0, "mu": [2, 0, 0], "weight": 1.0}]"#)
                .unwrap();
        assert_eq!(parsed.specs()[0].mu, [1.0, 0.0, 0.0]);
        assert!(TargetDensity::from_json("j", r#"[{"kappa": 2.0}]"#).is_err());
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let f2 = TargetDensity::f2vm();
        let a = f2.sample(50, 42).unwrap();
        let b = f2.sample(50, 42).unwrap();
        let c = f2.sample(50, 43).unwrap();
        assert_eq!(a.points(), b.points());
        assert_ne!(a.points(), c.points());
    }
}
