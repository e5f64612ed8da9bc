//! Points on the unit sphere, surface areas, rotations, and a product
//! quadrature rule on S² used to check every closed form numerically.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quadrature::gauss_legendre;

/// A point on the unit sphere S^{d-1}, d >= 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector {
    coords: Vec<f64>,
}

impl UnitVector {
    /// Normalizes `raw` onto the sphere.
    pub fn new(raw: &[f64]) -> Result<Self> {
        normalize(raw)
    }

    /// The north pole `e_d` of S^{d-1}.
    pub fn north_pole(d: usize) -> Result<Self> {
        let mut raw = vec![0.0; d];
        if let Some(last) = raw.last_mut() {
            *last = 1.0;
        }
        normalize(&raw)
    }

    /// Point on S² from colatitude `theta` and azimuth `phi` (radians).
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            coords: vec![st * cp, st * sp, ct],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.coords, &other.coords)
    }

    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = crate::Error;
    fn try_from(raw: Vec<f64>) -> Result<Self> {
        normalize(&raw)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.coords
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Area of S^{d-1}: `2 π^{d/2} / Γ(d/2)`.
pub fn surface_area(d: usize) -> Result<f64> {
    if d < 2 {
        return domain(format!("surface area needs d >= 2, got {d}"));
    }
    let half = d as f64 / 2.0;
    Ok(2.0 * PI.powf(half) / libm::tgamma(half))
}

/// Projects `raw` onto the unit sphere.
pub fn normalize(raw: &[f64]) -> Result<UnitVector> {
    if raw.len() < 3 {
        return domain(format!("points must have d >= 3 coordinates, got {}", raw.len()));
    }
    if raw.iter().any(|c| !c.is_finite()) {
        return domain("coordinates must be finite");
    }
    // scale first so the squared norm cannot overflow or underflow
    let scale = raw.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale <= 1e-300 {
        return domain("cannot normalize a zero vector");
    }
    let scaled: Vec<f64> = raw.iter().map(|c| c / scale).collect();
    let norm = dot(&scaled, &scaled).sqrt();
    Ok(UnitVector {
        coords: scaled.into_iter().map(|c| c / norm).collect(),
    })
}

/// A dense orthogonal d×d matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation {
    d: usize,
    data: Vec<f64>,
}

impl Rotation {
    pub fn identity(d: usize) -> Self {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Self { d, data }
    }

    /// Builds from row-major entries; no orthogonality check.
    pub fn from_rows(d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * d {
            return domain(format!("expected {} entries, got {}", d * d, data.len()));
        }
        Ok(Self { d, data })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.d + col]
    }

    pub fn apply_raw(&self, v: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|r| dot(&self.data[r * self.d..(r + 1) * self.d], v))
            .collect()
    }

    pub fn apply(&self, v: &UnitVector) -> Result<UnitVector> {
        if v.dim() != self.d {
            return domain(format!("rotation is {}-dimensional, point is {}", self.d, v.dim()));
        }
        normalize(&self.apply_raw(v.coords()))
    }

    /// `max |RᵀR - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.d;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let s: f64 = (0..d).map(|k| self.entry(k, i) * self.entry(k, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// An orthogonal map sending the north pole `e_d` onto `mu`.
///
/// Uses the Householder reflection across the bisector of `e_d` and `mu`.
pub fn rotation_onto(mu: &UnitVector) -> Rotation {
    let d = mu.dim();
    let mut v: Vec<f64> = mu.coords().iter().map(|c| -c).collect();
    v[d - 1] += 1.0;
    let vv = dot(&v, &v);
    if vv < 1e-30 {
        return Rotation::identity(d);
    }
    let mut r = Rotation::identity(d);
    for i in 0..d {
        for j in 0..d {
            r.data[i * d + j] -= 2.0 * v[i] * v[j] / vv;
        }
    }
    r
}

/// Ring layout of a product rule: node `k * n_phi + j` sits at height
/// `ts[k]` and azimuth `j * 2π / n_phi`.
#[derive(Clone, Debug)]
struct Rings {
    ts: Vec<f64>,
    radii: Vec<f64>,
    n_phi: usize,
}

/// Nodes and weights for integrating over S^{d-1}.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    nodes: Vec<UnitVector>,
    weights: Vec<f64>,
    resolution: (usize, usize),
    rings: Option<Rings>,
}

impl SphereQuadrature {
    pub fn nodes(&self) -> &[UnitVector] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(&UnitVector) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }

    /// Calls `visit(k)` for every node index `k` with `|x_k - center|² <= chord_sq`,
    /// in ascending order of `k`. Product rules skip rings and azimuth ranges
    /// that cannot qualify.
    pub fn for_each_node_within<F: FnMut(usize)>(&self, center: &[f64], chord_sq: f64, mut visit: F) {
        let chord_of = |k: usize| {
            let x = self.nodes[k].coords();
            x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let Some(rings) = &self.rings else {
            for k in 0..self.nodes.len() {
                if chord_of(k) <= chord_sq {
                    visit(k);
                }
            }
            return;
        };
        if center.len() != 3 {
            return;
        }
        let n_phi = rings.n_phi;
        let dphi = 2.0 * PI / n_phi as f64;
        let (cx, cy, cz) = (center[0], center[1], center[2]);
        let c_radius = (cx * cx + cy * cy).sqrt();
        let c_phi = cy.atan2(cx);
        let mut picked: Vec<usize> = Vec::new();
        for (k, (&t, &s)) in rings.ts.iter().zip(&rings.radii).enumerate() {
            let slack = chord_sq - (t - cz).powi(2) - (s - c_radius).powi(2);
            if slack < 0.0 {
                continue;
            }
            let base = k * n_phi;
            let span = 2.0 * s * c_radius;
            // |x - c|² = (t - cz)² + (s - r_c)² + 2 s r_c (1 - cos Δφ)
            let full_ring = span <= 0.0 || slack >= 2.0 * span;
            if full_ring {
                for j in 0..n_phi {
                    if chord_of(base + j) <= chord_sq {
                        visit(base + j);
                    }
                }
                continue;
            }
            let half_width = (1.0 - slack / span).clamp(-1.0, 1.0).acos();
            // one extra node each side absorbs rounding at the boundary
            let lo = ((c_phi - half_width) / dphi).floor() as i64 - 1;
            let hi = ((c_phi + half_width) / dphi).ceil() as i64 + 1;
            picked.clear();
            if hi - lo + 1 >= n_phi as i64 {
                picked.extend(0..n_phi);
            } else {
                picked.extend((lo..=hi).map(|j| j.rem_euclid(n_phi as i64) as usize));
                picked.sort_unstable();
                picked.dedup();
            }
            for &j in &picked {
                if chord_of(base + j) <= chord_sq {
                    visit(base + j);
                }
            }
        }
    }

    /// The same rule with every node mapped through `rotation`.
    pub fn rotated(&self, rotation: &Rotation) -> Result<Self> {
        let nodes = self
            .nodes
            .iter()
            .map(|x| rotation.apply(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nodes,
            weights: self.weights.clone(),
            resolution: self.resolution,
            rings: None,
        })
    }
}

/// Gauss–Legendre in `t = cos θ` times the trapezoid rule in azimuth.
///
/// Integrates `p(t) · trig(φ)` exactly for `deg p <= 2 n_t - 1` and
/// trigonometric degree below `n_phi`.
pub fn product_quadrature_s2(n_t: usize, n_phi: usize) -> Result<SphereQuadrature> {
    if n_t < 2 || n_phi < 2 {
        return domain(format!("quadrature resolution must be at least 2x2, got {n_t}x{n_phi}"));
    }
    let (ts, ws) = gauss_legendre(n_t)?;
    let dphi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(n_t * n_phi);
    let mut weights = Vec::with_capacity(n_t * n_phi);
    let mut radii = Vec::with_capacity(n_t);
    for (&t, &w) in ts.iter().zip(&ws) {
        let s = (1.0 - t * t).max(0.0).sqrt();
        radii.push(s);
        for j in 0..n_phi {
            let (sp, cp) = (j as f64 * dphi).sin_cos();
            nodes.push(UnitVector {
                coords: vec![s * cp, s * sp, t],
            });
            weights.push(w * dphi);
        }
    }
    Ok(SphereQuadrature {
        nodes,
        weights,
        resolution: (n_t, n_phi),
        rings: Some(Rings { ts, radii, n_phi }),
    })
}

/// Default resolution of the reference rule.
pub const DEFAULT_QUADRATURE: (usize, usize) = (64, 64);

/// Nodes per unit of `1/h` needed to resolve a kernel of bandwidth `h`.
pub const NODES_PER_INVERSE_BANDWIDTH: f64 = 12.0;

/// Square resolution resolving kernels of bandwidth `h`: the default 64, or
/// `12/h` nodes per direction once the kernel is narrower than the 64-node
/// spacing allows.
pub fn resolution_for_bandwidth(h: f64) -> usize {
    let wanted = (NODES_PER_INVERSE_BANDWIDTH / h).ceil();
    if wanted.is_finite() {
        (wanted as usize).max(DEFAULT_QUADRATURE.0)
    } else {
        DEFAULT_QUADRATURE.0
    }
}

/// A product rule on S² fine enough for kernels of bandwidth `h`.
pub fn quadrature_for_bandwidth(h: f64) -> Result<SphereQuadrature> {
    let r = resolution_for_bandwidth(h);
    product_quadrature_s2(r, r)
}
