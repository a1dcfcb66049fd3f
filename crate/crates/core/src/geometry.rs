//! Deterministic invariants of the filters.
//!
//! Along every forward trajectory `alpha = 2/(1-z) - x^2/(1-z)^2` obeys
//! `d alpha/dt = gamma (alpha - eta)`, and along every backward effect
//! trajectory `beta = -2/(z+1) + x^2/(z+1)^2` obeys
//! `d beta/ds = gamma (-beta + eta - 2)` in backward time `s = T - t`. Each confines the Bloch vector to a
//! time-dependent ellipse; the retrodicted values then live in the image of
//! the pair of ellipses under the per-axis Moebius combination.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PqsError, Result};
use crate::format::sig17;
use crate::params::SimParams;
use crate::qubit::BlochVector;
use crate::trajectory::retrodicted_bloch;

/// Below this distance from a pole the reciprocal parameter is used.
const POLE_GUARD: f64 = 1e-6;

pub fn alpha_of(x: f64, z: f64) -> Result<f64> {
    let u = 1.0 - z;
    if u == 0.0 {
        return Err(PqsError::SingularPoint(format!("alpha at the ground state (x = {x})")));
    }
    if u.abs() < POLE_GUARD {
        return Ok(1.0 / inverse_alpha_of(x, z)?);
    }
    Ok(2.0 / u - x * x / (u * u))
}

/// `1/alpha = (1-z)^2 / (2(1-z) - x^2)`, finite up to the ground state.
pub fn inverse_alpha_of(x: f64, z: f64) -> Result<f64> {
    let u = 1.0 - z;
    let den = 2.0 * u - x * x;
    if den == 0.0 {
        return Err(PqsError::SingularPoint(format!("1/alpha at (x = {x}, z = {z})")));
    }
    Ok(u * u / den)
}

pub fn beta_of(x: f64, z: f64) -> Result<f64> {
    let u = z + 1.0;
    if u == 0.0 {
        return Err(PqsError::SingularPoint(format!("beta at the excited projector (x = {x})")));
    }
    if u.abs() < POLE_GUARD {
        return Ok(1.0 / inverse_beta_of(x, z)?);
    }
    Ok(-2.0 / u + x * x / (u * u))
}

/// `1/beta = (z+1)^2 / (x^2 - 2(z+1))`.
pub fn inverse_beta_of(x: f64, z: f64) -> Result<f64> {
    let u = z + 1.0;
    let den = x * x - 2.0 * u;
    if den == 0.0 {
        return Err(PqsError::SingularPoint(format!("1/beta at (x = {x}, z = {z})")));
    }
    Ok(u * u / den)
}

/// `alpha(t) = eta + (alpha0 - eta) e^{gamma t}`
pub fn alpha_at_time(alpha0: f64, t: f64, p: &SimParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(PqsError::Domain(format!("alpha_at_time needs t >= 0, got {t}")));
    }
    if alpha0.is_infinite() {
        return Ok(alpha0);
    }
    Ok(p.eta + (alpha0 - p.eta) * (p.gamma * t).exp())
}

/// `beta(t) = eta - 2 + (beta_T - eta + 2) e^{gamma (t - T)}`
pub fn beta_at_time(beta_final: f64, t: f64, horizon: f64, p: &SimParams) -> Result<f64> {
    if t > horizon {
        return Err(PqsError::Domain(format!("beta_at_time needs t <= T = {horizon}, got {t}")));
    }
    if beta_final.is_infinite() {
        return Ok(beta_final);
    }
    Ok(p.eta - 2.0 + (beta_final - p.eta + 2.0) * (p.gamma * (t - horizon)).exp())
}

/// `alpha^2 (1 - z - 1/alpha)^2 + alpha x^2 - 1`
pub fn rho_ellipse_residual(b: &BlochVector, alpha: f64) -> f64 {
    let u = 1.0 - b.z;
    let w = alpha * u - 1.0;
    w * w + alpha * b.x * b.x - 1.0
}

/// `beta^2 (z + 1 + 1/beta)^2 - beta (x^2 + y^2) - 1`
pub fn effect_ellipse_residual(b: &BlochVector, beta: f64) -> f64 {
    let w = beta * (b.z + 1.0) + 1.0;
    w * w - beta * (b.x * b.x + b.y * b.y) - 1.0
}

pub fn on_rho_ellipse(b: &BlochVector, alpha: f64, tol: f64) -> bool {
    rho_ellipse_residual(b, alpha).abs() <= tol
}

pub fn on_effect_ellipse(b: &BlochVector, beta: f64, tol: f64) -> bool {
    effect_ellipse_residual(b, beta).abs() <= tol
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EllipseKind {
    Rho,
    Effect,
}

/// One member of the ellipse family of either filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParam {
    pub value: f64,
    pub kind: EllipseKind,
}

impl EllipseParam {
    /// `alpha > 0`; infinity is the ground-state point.
    pub fn rho(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(PqsError::Domain(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { value: alpha, kind: EllipseKind::Rho })
    }

    /// `beta < 0`; minus infinity is the excited-projector point.
    pub fn effect(beta: f64) -> Result<Self> {
        if !(beta < 0.0) {
            return Err(PqsError::Domain(format!("beta must be negative, got {beta}")));
        }
        Ok(Self { value: beta, kind: EllipseKind::Effect })
    }

    /// `(x, z)` of the center.
    pub fn center(&self) -> (f64, f64) {
        match self.kind {
            EllipseKind::Rho => (0.0, 1.0 - 1.0 / self.value),
            EllipseKind::Effect => (0.0, -1.0 - 1.0 / self.value),
        }
    }

    /// Semi-axes along x and z.
    pub fn semi_axes(&self) -> (f64, f64) {
        let m = self.value.abs();
        (1.0 / m.sqrt(), 1.0 / m)
    }

    /// Point at parameter angle `phi`, measured from +z toward +x.
    pub fn point(&self, phi: f64) -> BlochVector {
        let (cx, cz) = self.center();
        let (ax, az) = self.semi_axes();
        BlochVector::xz(cx + ax * phi.sin(), cz + az * phi.cos())
    }

    pub fn residual(&self, b: &BlochVector) -> f64 {
        match self.kind {
            EllipseKind::Rho => rho_ellipse_residual(b, self.value),
            EllipseKind::Effect => effect_ellipse_residual(b, self.value),
        }
    }

    /// `(x_min, x_max, z_min, z_max)`
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.bounding_box_with_tol(0.0)
    }

    /// Box of the band `|residual| <= tol`, which is the ellipse with its
    /// right-hand side raised to `1 + tol`.
    pub fn bounding_box_with_tol(&self, tol: f64) -> (f64, f64, f64, f64) {
        let s = (1.0 + tol.max(0.0)).sqrt();
        let m = self.value.abs();
        let half_x = s / m.sqrt();
        let (cx, cz) = self.center();
        let half_z = s / m;
        (cx - half_x, cx + half_x, cz - half_z, cz + half_z)
    }
}

/// What the effect side of a retrodiction region is pinned to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectConstraint {
    /// The effect lies on the beta ellipse.
    Ellipse(f64),
    /// No post-selection information: `E = identity/2`.
    Identity,
}

const RASTER_CELLS: usize = 512;
const RASTER_PAD: usize = 2;
/// Image edges longer than this straddle a Moebius pole and are dropped.
const TEAR_LENGTH: f64 = 0.5;

/// Outer boundary of the set of retrodicted `(x, z)` values reachable from a
/// rho ellipse and an effect constraint.
#[derive(Debug, Clone)]
pub struct RetrodictionRegion {
    pub alpha: f64,
    pub effect: EffectConstraint,
    pub grid_n: usize,
    /// Parameter pairs dropped because an axis denominator vanished.
    pub skipped: usize,
    /// Counter-clockwise outer contours, largest first.
    pub polygons: Vec<Vec<(f64, f64)>>,
    mask: Raster,
}

#[derive(Debug, Clone)]
struct Raster {
    n: usize,
    origin: f64,
    cell: f64,
    filled: Vec<bool>,
}

impl Raster {
    fn new() -> Self {
        let cell = 2.0 / RASTER_CELLS as f64;
        let n = RASTER_CELLS + 2 * RASTER_PAD;
        Self {
            n,
            origin: -1.0 - RASTER_PAD as f64 * cell,
            cell,
            filled: vec![false; n * n],
        }
    }

    fn idx(&self, c: usize, r: usize) -> usize {
        r * self.n + c
    }

    fn get(&self, c: isize, r: isize) -> bool {
        if c < 0 || r < 0 || c >= self.n as isize || r >= self.n as isize {
            return false;
        }
        self.filled[self.idx(c as usize, r as usize)]
    }

    fn cell_of(&self, v: f64) -> usize {
        (((v - self.origin) / self.cell).floor().max(0.0) as usize).min(self.n - 1)
    }

    fn mark(&mut self, x: f64, z: f64) {
        let (c, r) = (self.cell_of(x), self.cell_of(z));
        let i = self.idx(c, r);
        self.filled[i] = true;
    }

    fn mark_segment(&mut self, a: (f64, f64), b: (f64, f64)) {
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let steps = (2.0 * len / self.cell).ceil() as usize + 1;
        for k in 0..=steps {
            let s = k as f64 / steps as f64;
            self.mark(a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1));
        }
    }

    fn mark_triangle(&mut self, a: (f64, f64), b: (f64, f64), c: (f64, f64)) {
        self.mark_segment(a, b);
        self.mark_segment(b, c);
        self.mark_segment(c, a);
        let det = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
        if det.abs() < 1e-300 {
            return;
        }
        let c0 = self.cell_of(a.0.min(b.0).min(c.0));
        let c1 = self.cell_of(a.0.max(b.0).max(c.0));
        let r0 = self.cell_of(a.1.min(b.1).min(c.1));
        let r1 = self.cell_of(a.1.max(b.1).max(c.1));
        for r in r0..=r1 {
            let pz = self.origin + (r as f64 + 0.5) * self.cell;
            for col in c0..=c1 {
                let px = self.origin + (col as f64 + 0.5) * self.cell;
                let l1 = ((b.0 - px) * (c.1 - pz) - (c.0 - px) * (b.1 - pz)) / det;
                let l2 = ((c.0 - px) * (a.1 - pz) - (a.0 - px) * (c.1 - pz)) / det;
                let l3 = 1.0 - l1 - l2;
                if l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0 {
                    let i = self.idx(col, r);
                    self.filled[i] = true;
                }
            }
        }
    }

    /// Fill every cell not reachable from the border through empty cells.
    fn fill_holes(&mut self) {
        let n = self.n;
        let mut outside = vec![false; n * n];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for k in 0..n {
            for (c, r) in [(k, 0), (k, n - 1), (0, k), (n - 1, k)] {
                stack.push((c, r));
            }
        }
        while let Some((c, r)) = stack.pop() {
            let i = self.idx(c, r);
            if outside[i] || self.filled[i] {
                continue;
            }
            outside[i] = true;
            if c > 0 {
                stack.push((c - 1, r));
            }
            if c + 1 < n {
                stack.push((c + 1, r));
            }
            if r > 0 {
                stack.push((c, r - 1));
            }
            if r + 1 < n {
                stack.push((c, r + 1));
            }
        }
        for (f, o) in self.filled.iter_mut().zip(&outside) {
            *f = !o;
        }
    }

    /// Counter-clockwise contours along cell edges.
    fn contours(&self) -> Vec<Vec<(f64, f64)>> {
        type Corner = (isize, isize);
        let mut edges: Vec<(Corner, Corner)> = Vec::new();
        for r in 0..self.n as isize {
            for c in 0..self.n as isize {
                if !self.get(c, r) {
                    continue;
                }
                if !self.get(c, r - 1) {
                    edges.push(((c, r), (c + 1, r)));
                }
                if !self.get(c + 1, r) {
                    edges.push(((c + 1, r), (c + 1, r + 1)));
                }
                if !self.get(c, r + 1) {
                    edges.push(((c + 1, r + 1), (c, r + 1)));
                }
                if !self.get(c - 1, r) {
                    edges.push(((c, r + 1), (c, r)));
                }
            }
        }
        let mut outgoing: HashMap<Corner, Vec<usize>> = HashMap::new();
        for (k, e) in edges.iter().enumerate() {
            outgoing.entry(e.0).or_default().push(k);
        }
        let dir = |e: &(Corner, Corner)| (e.1 .0 - e.0 .0, e.1 .1 - e.0 .1);
        let mut used = vec![false; edges.len()];
        let mut loops = Vec::new();
        for first in 0..edges.len() {
            if used[first] {
                continue;
            }
            let mut corners = Vec::new();
            let mut cur = first;
            loop {
                used[cur] = true;
                corners.push(edges[cur].0);
                let (dx, dz) = dir(&edges[cur]);
                // left turn, straight, right turn
                let prefs = [(-dz, dx), (dx, dz), (dz, -dx)];
                let next = outgoing.get(&edges[cur].1).and_then(|cands| {
                    prefs.iter().find_map(|want| {
                        cands.iter().copied().find(|&k| !used[k] && dir(&edges[k]) == *want)
                    })
                });
                match next {
                    Some(k) => cur = k,
                    None => break,
                }
            }
            let simplified = simplify(&corners);
            if signed_area(&simplified) > 0.0 {
                loops.push(
                    simplified
                        .iter()
                        .map(|&(c, r)| {
                            (self.origin + c as f64 * self.cell, self.origin + r as f64 * self.cell)
                        })
                        .collect::<Vec<_>>(),
                );
            }
        }
        loops.sort_by(|a, b| polygon_area(b).total_cmp(&polygon_area(a)));
        loops
    }

    /// Whether any filled cell lies within `tol` of `(x, z)`.
    fn near(&self, x: f64, z: f64, tol: f64) -> bool {
        let lo_c = ((x - tol - self.origin) / self.cell).floor() as isize;
        let hi_c = ((x + tol - self.origin) / self.cell).floor() as isize;
        let lo_r = ((z - tol - self.origin) / self.cell).floor() as isize;
        let hi_r = ((z + tol - self.origin) / self.cell).floor() as isize;
        for r in lo_r..=hi_r {
            for c in lo_c..=hi_c {
                if !self.get(c, r) {
                    continue;
                }
                let x0 = self.origin + c as f64 * self.cell;
                let z0 = self.origin + r as f64 * self.cell;
                let dx = (x0 - x).max(0.0).max(x - x0 - self.cell);
                let dz = (z0 - z).max(0.0).max(z - z0 - self.cell);
                if dx * dx + dz * dz <= tol * tol {
                    return true;
                }
            }
        }
        false
    }
}

fn simplify(corners: &[(isize, isize)]) -> Vec<(isize, isize)> {
    let n = corners.len();
    (0..n)
        .filter(|&k| {
            let a = corners[(k + n - 1) % n];
            let b = corners[k];
            let c = corners[(k + 1) % n];
            (b.0 - a.0) * (c.1 - b.1) != (b.1 - a.1) * (c.0 - b.0)
        })
        .map(|k| corners[k])
        .collect()
}

fn signed_area(poly: &[(isize, isize)]) -> f64 {
    let n = poly.len();
    let twice: isize = (0..n)
        .map(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice as f64 / 2.0
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn edge_len(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Sweep `grid_n` points on each constraint, combine every pair, and trace the
/// outer boundary of the image.
pub fn retrodiction_region(alpha: f64, effect: EffectConstraint, grid_n: usize) -> Result<RetrodictionRegion> {
    if grid_n < 64 {
        return Err(PqsError::Domain(format!("grid_n must be at least 64, got {grid_n}")));
    }
    let rho_pts: Vec<BlochVector> = if alpha.is_infinite() {
        vec![BlochVector::xz(0.0, 1.0)]
    } else {
        let ell = EllipseParam::rho(alpha)?;
        (0..grid_n).map(|i| ell.point(TAU * i as f64 / grid_n as f64)).collect()
    };
    let eff_pts: Vec<BlochVector> = match effect {
        EffectConstraint::Identity => vec![BlochVector::default()],
        EffectConstraint::Ellipse(beta) if beta.is_infinite() => vec![BlochVector::xz(0.0, -1.0)],
        EffectConstraint::Ellipse(beta) => {
            let ell = EllipseParam::effect(beta)?;
            (0..grid_n).map(|j| ell.point(TAU * j as f64 / grid_n as f64)).collect()
        }
    };
    let (nr, ne) = (rho_pts.len(), eff_pts.len());
    let image: Vec<Option<(f64, f64)>> = (0..nr * ne)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / ne, k % ne);
            retrodicted_bloch(&rho_pts[i], &eff_pts[j]).ok().map(|b| (b.x, b.z))
        })
        .collect();
    let skipped = image.iter().filter(|p| p.is_none()).count();
    let at = |i: usize, j: usize| image[(i % nr) * ne + (j % ne)];

    let mut mask = Raster::new();
    let segment = |m: &mut Raster, a: Option<(f64, f64)>, b: Option<(f64, f64)>| {
        if let (Some(a), Some(b)) = (a, b) {
            if edge_len(a, b) <= TEAR_LENGTH {
                m.mark_segment(a, b);
            }
        }
    };
    for i in 0..nr {
        for j in 0..ne {
            let p00 = at(i, j);
            if let Some(p) = p00 {
                mask.mark(p.0, p.1);
            }
            if nr > 1 {
                segment(&mut mask, p00, at(i + 1, j));
            }
            if ne > 1 {
                segment(&mut mask, p00, at(i, j + 1));
            }
            if nr > 1 && ne > 1 {
                let quad = [p00, at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
                for tri in [[0, 1, 2], [0, 2, 3]] {
                    let (Some(a), Some(b), Some(c)) = (quad[tri[0]], quad[tri[1]], quad[tri[2]]) else {
                        continue;
                    };
                    if edge_len(a, b).max(edge_len(b, c)).max(edge_len(c, a)) <= TEAR_LENGTH {
                        mask.mark_triangle(a, b, c);
                    }
                }
            }
        }
    }
    mask.fill_holes();
    let polygons = mask.contours();
    Ok(RetrodictionRegion {
        alpha,
        effect,
        grid_n,
        skipped,
        polygons,
        mask,
    })
}

impl RetrodictionRegion {
    /// Outer boundary of the largest component.
    pub fn boundary(&self) -> &[(f64, f64)] {
        self.polygons.first().map(|p| p.as_slice()).unwrap_or(&[])
    }

    /// Raster cell size; the boundary is resolved to this scale.
    pub fn resolution(&self) -> f64 {
        self.mask.cell
    }

    /// Whether `(x, z)` is inside the region grown by `tol`.
    pub fn contains(&self, x: f64, z: f64, tol: f64) -> bool {
        self.mask.near(x, z, tol.max(0.0))
    }

    pub fn area(&self) -> f64 {
        self.polygons.iter().map(|p| polygon_area(p)).sum()
    }

    /// Largest distance of any boundary vertex from the origin.
    pub fn max_radius(&self) -> f64 {
        self.polygons
            .iter()
            .flatten()
            .map(|&(x, z)| (x * x + z * z).sqrt())
            .fold(0.0, f64::max)
    }

    /// `x,z` vertex list of the outer boundary, closed by repeating the first
    /// vertex.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "z"])?;
        let b = self.boundary();
        for &(x, z) in b.iter().chain(b.first()) {
            out.write_record([sig17(x), sig17(z)])?;
        }
        out.flush()?;
        Ok(())
    }
}
