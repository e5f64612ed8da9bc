//! The directional kernel density estimator
//! `f̂_h(x) = c₀(h)/n Σ K((1 - xᵀXᵢ)/h²)` and its exact L² geometry.
//!
//! For the von Mises kernel on S² every L² quantity is a double sum over
//! pairs of `4π e^{-A} sinh(|v|)/|v|` with `|v| <= A`; the pair geometry
//! `|Xᵢ + Xⱼ|` and `|Xᵢ - Xⱼ|²` is cached once per sample and reused for
//! every bandwidth. Other kernels fall back to sphere quadrature on S².

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::geometry::{dot, quadrature_for_bandwidth, SphereQuadrature, UnitVector};
use crate::kernel::KernelProfile;
use crate::special::{exp_sinhc_gap, negligible_gap};

/// Packed upper-triangle pair geometry, row-major over `i < j`.
#[derive(Clone, Debug)]
struct PairCache {
    sum_norm: Vec<f64>,
    diff_sq: Vec<f64>,
}

/// A dataset `X₁ … X_n` on S^{d-1}.
#[derive(Clone, Debug)]
pub struct Sample {
    d: usize,
    points: Vec<UnitVector>,
    pairs: Option<PairCache>,
}

impl Sample {
    pub fn new(points: Vec<UnitVector>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        };
        let d = first.dim();
        if let Some(bad) = points.iter().find(|p| p.dim() != d) {
            return domain(format!("mixed dimensions in sample: {d} and {}", bad.dim()));
        }
        Ok(Self { d, points, pairs: None })
    }

    /// Normalizes each row onto the sphere.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let points = rows
            .iter()
            .map(|r| UnitVector::new(r.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    /// Precomputes `|Xᵢ + Xⱼ|` and `|Xᵢ - Xⱼ|²` for all pairs (O(n²) memory).
    pub fn with_pair_cache(mut self) -> Self {
        let n = self.points.len();
        let mut sum_norm = Vec::with_capacity(n * (n - 1) / 2);
        let mut diff_sq = Vec::with_capacity(n * (n - 1) / 2);
        self.for_each_pair_uncached(|r, q| {
            sum_norm.push(r);
            diff_sq.push(q);
        });
        self.pairs = Some(PairCache { sum_norm, diff_sq });
        self
    }

    pub fn has_pair_cache(&self) -> bool {
        self.pairs.is_some()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn points(&self) -> &[UnitVector] {
        &self.points
    }

    /// `|Xᵢ + Xⱼ|`, in `[0, 2]`.
    pub fn pair_sum_norm(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 2.0;
        }
        let (a, b) = (self.points[i].coords(), self.points[j].coords());
        a.iter().zip(b).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt()
    }

    fn for_each_pair_uncached<F: FnMut(f64, f64)>(&self, mut f: F) {
        for (i, xi) in self.points.iter().enumerate() {
            for xj in &self.points[i + 1..] {
                let (mut plus, mut minus) = (0.0, 0.0);
                for (a, b) in xi.coords().iter().zip(xj.coords()) {
                    plus += (a + b) * (a + b);
                    minus += (a - b) * (a - b);
                }
                f(plus.sqrt(), minus);
            }
        }
    }

    /// Visits `(|Xᵢ + Xⱼ|, |Xᵢ - Xⱼ|²)` for every `i < j`, in a fixed order.
    fn for_each_pair<F: FnMut(f64, f64)>(&self, mut f: F) {
        match &self.pairs {
            Some(cache) => {
                for (&r, &q) in cache.sum_norm.iter().zip(&cache.diff_sq) {
                    f(r, q);
                }
            }
            None => self.for_each_pair_uncached(f),
        }
    }

    /// Rotates every point, dropping any pair cache.
    pub fn rotated(&self, rotation: &crate::geometry::Rotation) -> Result<Self> {
        let points = self
            .points
            .iter()
            .map(|p| rotation.apply(p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }
}

fn check_ascending(values: &[f64]) {
    assert!(
        values.windows(2).all(|w| w[0] <= w[1]),
        "inverse squared bandwidths must be ascending"
    );
}

/// `Σ_{i,j} e^{-2a} sinh(a|Xᵢ+Xⱼ|) / (a|Xᵢ+Xⱼ|)` for each `a` (ascending).
pub(crate) fn self_pair_sums(sample: &Sample, a_values: &[f64]) -> Vec<f64> {
    check_ascending(a_values);
    let n = sample.len() as f64;
    // each term is at most e^{gap}; the diagonal is n / (4a)
    let cut: Vec<f64> = a_values.iter().map(|&a| negligible_gap(4.0 * a * n)).collect();
    let mut acc = vec![0.0; a_values.len()];
    sample.for_each_pair(|r, q| {
        let shrink = q / (r + 2.0);
        for ((slot, &a), &c) in acc.iter_mut().zip(a_values).zip(&cut) {
            let gap = -a * shrink;
            if gap < c {
                break;
            }
            *slot += exp_sinhc_gap(r * a, gap);
        }
    });
    acc.iter()
        .zip(a_values)
        .map(|(off, &a)| 2.0 * off + n * exp_sinhc_gap(2.0 * a, 0.0))
        .collect()
}

/// `Σ_{i,j} e^{-(a+b)} sinh|aXᵢ + bXⱼ| / |aXᵢ + bXⱼ|` for each `a` (ascending).
pub(crate) fn mixed_pair_sums(sample: &Sample, a_values: &[f64], b: f64) -> Vec<f64> {
    check_ascending(a_values);
    let n = sample.len() as f64;
    // The diagonal is n / (2(a + b)) ≥ n / (4 max(a, b)). The gap decreases
    // in a, so a cut that does not depend on a lets the loop stop early.
    let top = a_values.last().map_or(b, |&a| a.max(b));
    let cut = negligible_gap(4.0 * top * n);
    let mut acc = vec![0.0; a_values.len()];
    sample.for_each_pair(|_, q| {
        for (slot, &a) in acc.iter_mut().zip(a_values) {
            let total = a + b;
            let norm = (total * total - a * b * q).max(0.0).sqrt();
            let gap = -a * b * q / (norm + total);
            if gap < cut {
                break;
            }
            *slot += exp_sinhc_gap(norm, gap);
        }
    });
    acc.iter()
        .zip(a_values)
        .map(|(off, &a)| 2.0 * off + n * exp_sinhc_gap(a + b, 0.0))
        .collect()
}

/// `Σ_{i≠j} e^{-a(1 - XᵢᵀXⱼ)}` for each `a` (ascending).
pub(crate) fn loo_pair_sums(sample: &Sample, a_values: &[f64]) -> Vec<f64> {
    check_ascending(a_values);
    // compared against the self-norm, whose diagonal is n / (4a) with weight c₀² / n²
    let n = sample.len() as f64;
    let cut = negligible_gap(4.0 * n);
    let mut acc = vec![0.0; a_values.len()];
    sample.for_each_pair(|_, q| {
        for (slot, &a) in acc.iter_mut().zip(a_values) {
            let expo = -0.5 * a * q;
            if expo < cut {
                break;
            }
            *slot += expo.exp();
        }
    });
    acc.into_iter().map(|s| 2.0 * s).collect()
}

/// `f̂_h` fitted on a sample.
#[derive(Clone, Debug)]
pub struct FittedEstimator<'a> {
    sample: &'a Sample,
    kernel: KernelProfile,
    h: f64,
    c0_h: f64,
}

impl<'a> FittedEstimator<'a> {
    pub fn fit(sample: &'a Sample, kernel: &KernelProfile, h: f64) -> Result<Self> {
        let c0_h = kernel.c0(h, sample.dim())?;
        Ok(Self {
            sample,
            kernel: kernel.clone(),
            h,
            c0_h,
        })
    }

    pub fn sample(&self) -> &'a Sample {
        self.sample
    }

    pub fn kernel(&self) -> &KernelProfile {
        &self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn c0(&self) -> f64 {
        self.c0_h
    }

    fn closed_form(&self) -> bool {
        self.kernel.is_von_mises_s2(self.sample.dim())
    }

    fn check_point(&self, x: &UnitVector) -> Result<()> {
        if x.dim() != self.sample.dim() {
            return domain(format!(
                "point has dimension {}, sample has {}",
                x.dim(),
                self.sample.dim()
            ));
        }
        Ok(())
    }

    fn kernel_sum<'p>(&self, x: &UnitVector, points: impl Iterator<Item = &'p UnitVector>) -> f64 {
        let inv_h2 = 1.0 / (self.h * self.h);
        points
            .map(|p| self.kernel.eval((1.0 - dot(x.coords(), p.coords())) * inv_h2))
            .sum()
    }

    pub fn evaluate(&self, x: &UnitVector) -> Result<f64> {
        self.check_point(x)?;
        let n = self.sample.len() as f64;
        Ok(self.c0_h / n * self.kernel_sum(x, self.sample.points().iter()))
    }

    /// The estimate at `x` computed without `Xᵢ`.
    pub fn loo_evaluate(&self, i: usize, x: &UnitVector) -> Result<f64> {
        self.check_point(x)?;
        let n = self.sample.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        if i >= n {
            return domain(format!("leave-one-out index {i} out of range for n = {n}"));
        }
        let points = self.sample.points();
        let rest = points[..i].iter().chain(&points[i + 1..]);
        Ok(self.c0_h / (n - 1) as f64 * self.kernel_sum(x, rest))
    }

    /// `‖f̂_h‖²`.
    pub fn sq_norm(&self) -> Result<f64> {
        if self.closed_form() {
            let n = self.sample.len() as f64;
            let a = 1.0 / (self.h * self.h);
            let pairs = self_pair_sums(self.sample, &[a])[0];
            return Ok(4.0 * PI * self.c0_h * self.c0_h / (n * n) * pairs);
        }
        self.sq_norm_with(&fallback_quadrature(self.sample.dim(), self.h)?)
    }

    pub fn sq_norm_with(&self, quad: &SphereQuadrature) -> Result<f64> {
        self.inner_with(self, quad)
    }

    /// Estimator values at the nodes of `quad`, visiting for each sample point
    /// only the nodes where its kernel exceeds `1e-16 ‖K‖_∞`.
    pub fn node_values(&self, quad: &SphereQuadrature) -> Result<NodeValues> {
        if quad.nodes().first().is_some_and(|x| x.dim() != self.sample.dim()) {
            return domain("quadrature and sample live on different spheres");
        }
        let inv_h2 = 1.0 / (self.h * self.h);
        let reach = 2.0 * self.kernel.tail_cutoff() * self.h * self.h;
        let mut values = vec![0.0; quad.len()];
        let mut seen = vec![false; quad.len()];
        let mut touched = Vec::new();
        let nodes = quad.nodes();
        for p in self.sample.points() {
            quad.for_each_node_within(p.coords(), reach, |k| {
                values[k] += self.kernel.eval((1.0 - dot(nodes[k].coords(), p.coords())) * inv_h2);
                if !seen[k] {
                    seen[k] = true;
                    touched.push(k);
                }
            });
        }
        touched.sort_unstable();
        let scale = self.c0_h / self.sample.len() as f64;
        for &k in &touched {
            values[k] *= scale;
        }
        Ok(NodeValues { values, touched })
    }

    /// `∫ f̂_h` under `quad`.
    pub fn integrate_with(&self, quad: &SphereQuadrature) -> Result<f64> {
        let nv = self.node_values(quad)?;
        Ok(nv.touched.iter().map(|&k| quad.weights()[k] * nv.values[k]).sum())
    }

    fn check_same_sample(&self, other: &FittedEstimator<'_>) -> Result<()> {
        let same = std::ptr::eq(self.sample, other.sample)
            || self.sample.points() == other.sample.points();
        if !same {
            return domain("estimators were fitted on different samples");
        }
        if self.kernel.name() != other.kernel.name()
            || self.kernel.closed_form() != other.kernel.closed_form()
        {
            return domain("estimators use different kernels");
        }
        Ok(())
    }

    /// `⟨f̂_h, f̂_{h2}⟩` for two estimators on the same sample.
    pub fn inner(&self, other: &FittedEstimator<'_>) -> Result<f64> {
        self.check_same_sample(other)?;
        if self.closed_form() {
            let n = self.sample.len() as f64;
            let (a, b) = (1.0 / (self.h * self.h), 1.0 / (other.h * other.h));
            let pairs = mixed_pair_sums(self.sample, &[a], b)[0];
            return Ok(4.0 * PI * self.c0_h * other.c0_h / (n * n) * pairs);
        }
        let h = self.h.min(other.h);
        self.inner_with(other, &fallback_quadrature(self.sample.dim(), h)?)
    }

    /// `⟨f̂_h, f̂_{h2}⟩` under `quad`, integrating over the support of the
    /// narrower estimator.
    pub fn inner_with(&self, other: &FittedEstimator<'_>, quad: &SphereQuadrature) -> Result<f64> {
        let (narrow, wide) = if other.h < self.h { (other, self) } else { (self, other) };
        let nv = narrow.node_values(quad)?;
        let same = narrow.h == wide.h && std::ptr::eq(narrow.sample, wide.sample);
        let mut total = 0.0;
        for &k in &nv.touched {
            let g = if same { nv.values[k] } else { wide.evaluate(&quad.nodes()[k])? };
            total += quad.weights()[k] * nv.values[k] * g;
        }
        Ok(total)
    }

    /// `∫ f̂_h g` under `quad` for an arbitrary function `g`.
    pub fn inner_with_fn<G: FnMut(&UnitVector) -> f64>(
        &self,
        mut g: G,
        quad: &SphereQuadrature,
    ) -> Result<f64> {
        let nv = self.node_values(quad)?;
        Ok(nv
            .touched
            .iter()
            .map(|&k| quad.weights()[k] * nv.values[k] * g(&quad.nodes()[k]))
            .sum())
    }

    /// `‖f̂_h - f̂_{h2}‖²`.
    pub fn diff_sq_norm(&self, other: &FittedEstimator<'_>) -> Result<f64> {
        self.check_same_sample(other)?;
        if self.h == other.h {
            return Ok(0.0);
        }
        let value = self.sq_norm()? + other.sq_norm()? - 2.0 * self.inner(other)?;
        Ok(value.max(0.0))
    }
}

/// Estimator values on a quadrature rule; zero off `touched`.
#[derive(Clone, Debug)]
pub struct NodeValues {
    pub values: Vec<f64>,
    /// Ascending indices of nodes inside the kernel support of some point.
    pub touched: Vec<usize>,
}

/// Reference rule for kernels without closed forms, S² only.
pub(crate) fn fallback_quadrature(d: usize, h: f64) -> Result<SphereQuadrature> {
    if d != 3 {
        return Err(Error::Unsupported(format!(
            "sphere quadrature fallback is only available on S², got d = {d}"
        )));
    }
    quadrature_for_bandwidth(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(n: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        Sample::from_rows(&rows).unwrap()
    }

    #[test]
    fn sample_validation() {
        assert!(matches!(Sample::new(vec![]), Err(Error::InsufficientData { .. })));
        let mixed = vec![
            UnitVector::new(&[1.0, 0.0, 0.0]).unwrap(),
            UnitVector::new(&[1.0, 0.0, 0.0, 0.0]).unwrap(),
        ];
        assert!(Sample::new(mixed).is_err());
    }

    #[test]
    fn pair_cache_matches_direct_geometry() {
        let s = random_sample(12, 3);
        let cached = s.clone().with_pair_cache();
        let mut direct = Vec::new();
        s.for_each_pair(|r, q| direct.push((r, q)));
        let mut via_cache = Vec::new();
        cached.for_each_pair(|r, q| via_cache.push((r, q)));
        assert_eq!(direct, via_cache);
        for &(r, q) in &direct {
            assert!((0.0..=2.0).contains(&r));
            assert!((r * r + q - 4.0).abs() < 1e-14);
        }
        assert_eq!(s.pair_sum_norm(4, 4), 2.0);
    }

    #[test]
    fn single_point_evaluation() {
        let vm = KernelProfile::von_mises();
        let x = UnitVector::new(&[0.0, 0.0, 1.0]).unwrap();
        let s = Sample::new(vec![x.clone()]).unwrap();
        let est = FittedEstimator::fit(&s, &vm, 0.3).unwrap();
        assert_eq!(est.evaluate(&x).unwrap(), est.c0());
        let est1 = FittedEstimator::fit(&s, &vm, 1.0).unwrap();
        let v = est1.evaluate(&x.neg()).unwrap();
        assert!((v - 0.184_065_5 * (-2.0f64).exp()).abs() < 1e-7);
        assert!((v - 0.024_910_6).abs() < 1e-7);
        let wrong = UnitVector::new(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(est.evaluate(&wrong).is_err());
    }

    #[test]
    fn leave_one_out_cases() {
        let vm = KernelProfile::von_mises();
        let s = random_sample(3, 11);
        let est = FittedEstimator::fit(&s, &vm, 0.4).unwrap();
        let x = UnitVector::new(&[0.3, -0.2, 0.9]).unwrap();
        let sub = Sample::new(vec![s.points()[0].clone(), s.points()[2].clone()]).unwrap();
        let sub_est = FittedEstimator::fit(&sub, &vm, 0.4).unwrap();
        let loo = est.loo_evaluate(1, &x).unwrap();
        assert!((loo - sub_est.evaluate(&x).unwrap()).abs() < 1e-14);
        assert!(est.loo_evaluate(3, &x).is_err());

        let two = random_sample(2, 5);
        let e2 = FittedEstimator::fit(&two, &vm, 0.4).unwrap();
        let p1 = two.points()[1].clone();
        assert!((e2.loo_evaluate(0, &p1).unwrap() - e2.c0()).abs() < 1e-14 * e2.c0());

        let one = random_sample(1, 5);
        let e1 = FittedEstimator::fit(&one, &vm, 0.4).unwrap();
        assert!(matches!(e1.loo_evaluate(0, &x), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn single_point_norm_is_c0_squared_c2() {
        let vm = KernelProfile::von_mises();
        let s = random_sample(1, 2);
        for &h in &[1.0, 0.5, 0.1, 0.02] {
            let est = FittedEstimator::fit(&s, &vm, h).unwrap();
            let expected = est.c0().powi(2) * vm.c2(h, 3).unwrap();
            assert!((est.sq_norm().unwrap() - expected).abs() / expected < 1e-13, "h={h}");
        }
    }

    #[test]
    fn identical_bandwidths_have_zero_difference() {
        let vm = KernelProfile::von_mises();
        let s = random_sample(20, 8);
        let a = FittedEstimator::fit(&s, &vm, 0.3).unwrap();
        let b = FittedEstimator::fit(&s, &vm, 0.3).unwrap();
        assert_eq!(a.diff_sq_norm(&b).unwrap(), 0.0);
        let other = random_sample(20, 9);
        let c = FittedEstimator::fit(&other, &vm, 0.3).unwrap();
        assert!(a.diff_sq_norm(&c).is_err());
    }

    #[test]
    fn batched_sums_match_single_evaluations_bitwise() {
        let s = random_sample(40, 1).with_pair_cache();
        let a_values: Vec<f64> = (1..=30).map(|m| (m * m) as f64).collect();
        let batch = self_pair_sums(&s, &a_values);
        let mixed = mixed_pair_sums(&s, &a_values, 900.0);
        let loo = loo_pair_sums(&s, &a_values);
        for (k, &a) in a_values.iter().enumerate() {
            assert_eq!(batch[k], self_pair_sums(&s, &[a])[0]);
            assert_eq!(mixed[k], mixed_pair_sums(&s, &[a], 900.0)[0]);
            assert_eq!(loo[k], loo_pair_sums(&s, &[a])[0]);
        }
    }

    #[test]
    fn dropped_pair_terms_stay_below_roundoff() {
        let s = random_sample(300, 4);
        let pts = s.points();
        let a_values: Vec<f64> = (1..=40).map(|m| (m * m) as f64).collect();
        let b = 1600.0;
        let batch = self_pair_sums(&s, &a_values);
        let mixed = mixed_pair_sums(&s, &a_values, b);
        let loo = loo_pair_sums(&s, &a_values);
        for (k, &a) in a_values.iter().enumerate() {
            let (mut full, mut full_mixed, mut full_loo) = (0.0, 0.0, 0.0);
            for xi in pts {
                for xj in pts {
                    let sum: Vec<f64> = xi.coords().iter().zip(xj.coords()).map(|(p, q)| p + q).collect();
                    let r = dot(&sum, &sum).sqrt();
                    full += exp_sinhc_gap(r * a, (r - 2.0) * a);
                    let v: Vec<f64> = xi.coords().iter().zip(xj.coords()).map(|(p, q)| a * p + b * q).collect();
                    let norm = dot(&v, &v).sqrt();
                    full_mixed += exp_sinhc_gap(norm, (norm - a - b).min(0.0));
                    if !std::ptr::eq(xi, xj) {
                        full_loo += (-a * (1.0 - xi.dot(xj))).exp();
                    }
                }
            }
            assert!((batch[k] - full).abs() <= 1e-12 * full, "a={a}");
            assert!((mixed[k] - full_mixed).abs() <= 1e-12 * full_mixed, "a={a}");
            assert!((loo[k] - full_loo).abs() <= 1e-12 * full_loo.max(1.0 / (4.0 * a)), "a={a}");
        }
    }

    #[test]
    fn node_values_match_pointwise_evaluation() {
        let vm = KernelProfile::von_mises();
        let s = random_sample(15, 21);
        let q = crate::geometry::product_quadrature_s2(48, 48).unwrap();
        for &h in &[1.0, 0.2, 0.05] {
            let est = FittedEstimator::fit(&s, &vm, h).unwrap();
            let nv = est.node_values(&q).unwrap();
            for (k, x) in q.nodes().iter().enumerate() {
                let direct = est.evaluate(x).unwrap();
                assert!((nv.values[k] - direct).abs() <= 1e-15 * est.c0(), "h={h} k={k}");
            }
        }
    }

    #[test]
    fn quadrature_fallback_for_generic_kernels() {
        let generic = KernelProfile::von_mises().as_generic();
        let vm = KernelProfile::von_mises();
        let s = random_sample(6, 4);
        let est_g = FittedEstimator::fit(&s, &generic, 0.6).unwrap();
        let est_v = FittedEstimator::fit(&s, &vm, 0.6).unwrap();
        let (g, v) = (est_g.sq_norm().unwrap(), est_v.sq_norm().unwrap());
        assert!((g - v).abs() / v < 1e-10);

        let s4 = Sample::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
        let est4 = FittedEstimator::fit(&s4, &vm, 0.5).unwrap();
        assert!(est4.evaluate(&UnitVector::north_pole(4).unwrap()).unwrap() > 0.0);
        assert!(matches!(est4.sq_norm(), Err(Error::Unsupported(_))));
    }
}
