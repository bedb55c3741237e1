//! Random P1-center baths on a [111]-oriented diamond lattice inside a slab.
//!
//! Occupied sites are drawn cell by cell: space is tiled by fixed cubes, each
//! cube receives a Poisson number of uniform points keyed only by
//! `(seed, cell)`, and every point is snapped to its nearest lattice site. A
//! realization is therefore independent of the region it is cut to, so baths
//! of different radii with the same seed share their inner spins.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::{self, tag};
use crate::spin_algebra::{dipolar_coupling, CouplingTable, PhysicalConstants};
use crate::{Error, Result};

/// Side of the sampling cells, nm.
const CELL_NM: f64 = 20.0;

/// Subgroup probabilities in twelfths: |+1⟩[111], |−1⟩[111], |+1⟩ other axis,
/// |−1⟩ other axis, |0⟩.
pub const SUBGROUP_WEIGHTS: [u32; 5] = [1, 1, 3, 3, 4];

/// Nearest-neighbor |J| above which the subgroup picture breaks down, MHz.
pub const HYPERFINE_THRESHOLD_MHZ: f64 = 28.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperfineMode {
    /// Five subgroups; flip-flops only within a subgroup.
    P1,
    /// Bare electron spins-1/2, one subgroup.
    NoHyperfine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    pub concentration_ppm: f64,
    /// Slab thickness L, nm. The NV sits at mid-depth.
    pub layer_thickness: f64,
    /// Radius r_b of the dynamic sphere, nm.
    pub bath_radius: f64,
    /// Thickness of the static mean-field shell beyond r_b, nm.
    pub shell_thickness: f64,
    pub hyperfine_mode: HyperfineMode,
    pub seed: u64,
}

impl BathSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("concentration_ppm", self.concentration_ppm)?;
        positive("layer_thickness", self.layer_thickness)?;
        positive("bath_radius", self.bath_radius)?;
        if !(self.shell_thickness >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "shell_thickness must be non-negative, got {}",
                self.shell_thickness
            )));
        }
        Ok(())
    }

    pub fn outer_radius(&self) -> f64 {
        self.bath_radius + self.shell_thickness
    }
}

/// Identifier of a diamond lattice site (sublattice and D3 coordinates in
/// units of a/2), packed into a `u64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteKey(pub u64);

impl SiteKey {
    const OFFSET: i64 = 1 << 20;

    fn pack(sub: u8, c: [i64; 3]) -> Self {
        let f = |x: i64| ((x + Self::OFFSET) as u64) & 0x1F_FFFF;
        SiteKey(((sub as u64) << 63) | (f(c[0]) << 42) | (f(c[1]) << 21) | f(c[2]))
    }

    pub fn nv() -> Self {
        Self::pack(0, [0, 0, 0])
    }
}

/// Diamond lattice with the cubic [111] direction along lab z.
#[derive(Debug, Clone, Copy)]
pub struct DiamondLattice {
    half_a: f64,
    /// Columns: crystal x, y, z expressed in the lab frame.
    to_lab: Matrix3<f64>,
}

impl DiamondLattice {
    pub fn new(lattice_constant: f64) -> Self {
        let e1 = Vector3::new(1.0, -1.0, 0.0).normalize();
        let e3 = Vector3::new(1.0, 1.0, 1.0).normalize();
        let e2 = e3.cross(&e1);
        // rows of the crystal→lab rotation are the lab axes in crystal coordinates
        let to_lab = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);
        Self {
            half_a: 0.5 * lattice_constant,
            to_lab,
        }
    }

    /// Lab position of a site given sublattice and D3 coordinates.
    pub fn site_position(&self, sub: u8, c: [i64; 3]) -> Vector3<f64> {
        let shift = if sub == 1 { 0.5 } else { 0.0 };
        let u = Vector3::new(
            c[0] as f64 + shift,
            c[1] as f64 + shift,
            c[2] as f64 + shift,
        );
        self.to_lab * u * self.half_a
    }

    /// Nearest lattice site to a lab-frame point.
    pub fn snap(&self, p: &Vector3<f64>) -> (SiteKey, Vector3<f64>) {
        let u = self.to_lab.transpose() * p / self.half_a;
        let mut best: Option<(f64, u8, [i64; 3])> = None;
        for sub in 0..2u8 {
            let shift = if sub == 1 { 0.5 } else { 0.0 };
            let v = [u.x - shift, u.y - shift, u.z - shift];
            let c = nearest_d3(v);
            let d2: f64 = (0..3).map(|i| (v[i] - c[i] as f64).powi(2)).sum();
            if best.is_none_or(|(bd, _, _)| d2 < bd) {
                best = Some((d2, sub, c));
            }
        }
        let (_, sub, c) = best.expect("two sublattices tried");
        (SiteKey::pack(sub, c), self.site_position(sub, c))
    }

    /// Lab z component of the crystal [111] direction (should be 1).
    pub fn axis_111(&self) -> Vector3<f64> {
        self.to_lab * Vector3::new(1.0, 1.0, 1.0).normalize()
    }
}

/// Nearest point of the face-centered lattice {integer vectors with even sum}.
fn nearest_d3(v: [f64; 3]) -> [i64; 3] {
    let mut f = [
        v[0].round() as i64,
        v[1].round() as i64,
        v[2].round() as i64,
    ];
    if (f[0] + f[1] + f[2]).rem_euclid(2) == 1 {
        let mut worst = 0;
        let mut worst_err = -1.0;
        for i in 0..3 {
            let e = (v[i] - f[i] as f64).abs();
            if e > worst_err {
                worst_err = e;
                worst = i;
            }
        }
        f[worst] += if v[worst] > f[worst] as f64 { 1 } else { -1 };
    }
    f
}

/// Draws one subgroup label with probabilities (1, 1, 3, 3, 4)/12.
pub fn draw_subgroup<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    let mut x = rng.random_range(0..12u32);
    for (g, &w) in SUBGROUP_WEIGHTS.iter().enumerate() {
        if x < w {
            return g as u8;
        }
        x -= w;
    }
    unreachable!("weights sum to 12")
}

/// I.i.d. subgroup labels for `n` spins.
pub fn assign_subgroups<R: Rng + ?Sized>(n: usize, mode: HyperfineMode, rng: &mut R) -> Vec<u8> {
    match mode {
        HyperfineMode::NoHyperfine => vec![0; n],
        HyperfineMode::P1 => (0..n).map(|_| draw_subgroup(rng)).collect(),
    }
}

/// Hyperfine constant (MHz) of a subgroup; metadata only.
pub fn hyperfine_constant(subgroup: u8, mode: HyperfineMode, constants: &PhysicalConstants) -> f64 {
    match (mode, subgroup) {
        (HyperfineMode::NoHyperfine, _) => 0.0,
        (_, 0 | 1) => constants.hyperfine_a_111,
        (_, 2 | 3) => constants.hyperfine_a_other,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSpin {
    pub position: Vector3<f64>,
    pub subgroup: u8,
    pub dynamic: bool,
    pub site: SiteKey,
}

/// A bath realization: spins sorted by distance from the NV at the origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BathRecord", into = "BathRecord")]
pub struct BathSystem {
    pub spec: BathSpec,
    pub constants: PhysicalConstants,
    pub spins: Vec<BathSpin>,
    /// Index 0 = NV, index `i + 1` = `spins[i]`.
    pub couplings: CouplingTable,
    /// Mean nearest-neighbor distance of the dynamic spins, nm (0 if undefined).
    pub l_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BathRecord {
    spec: BathSpec,
    constants: PhysicalConstants,
    spins: Vec<BathSpin>,
}

impl TryFrom<BathRecord> for BathSystem {
    type Error = Error;
    fn try_from(r: BathRecord) -> Result<Self> {
        BathSystem::assemble(r.spec, r.constants, r.spins)
    }
}

impl From<BathSystem> for BathRecord {
    fn from(b: BathSystem) -> Self {
        BathRecord {
            spec: b.spec,
            constants: b.constants,
            spins: b.spins,
        }
    }
}

impl BathSystem {
    /// Builds a system from explicit spins; couplings and `l_s` are derived.
    pub fn assemble(
        spec: BathSpec,
        constants: PhysicalConstants,
        mut spins: Vec<BathSpin>,
    ) -> Result<Self> {
        spins.sort_by(|a, b| {
            a.position
                .norm()
                .total_cmp(&b.position.norm())
                .then(a.site.cmp(&b.site))
        });
        let positions: Vec<_> = spins.iter().map(|s| s.position).collect();
        let labels: Vec<u8> = spins.iter().map(|s| s.subgroup).collect();
        let couplings = CouplingTable::from_geometry(&positions, &labels, &constants)?;
        let mut sys = Self {
            spec,
            constants,
            spins,
            couplings,
            l_s: 0.0,
        };
        if sys.dynamic_count() >= 2 {
            sys.l_s = mean_nn_distance(&sys)?;
        }
        Ok(sys)
    }

    /// Arbitrary spin positions (all dynamic), e.g. for hand-built benchmarks.
    pub fn from_positions(
        positions: &[Vector3<f64>],
        labels: &[u8],
        constants: PhysicalConstants,
    ) -> Result<Self> {
        let lattice = DiamondLattice::new(constants.lattice_constant_a);
        let spins = positions
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (p, &g))| BathSpin {
                position: *p,
                subgroup: g,
                dynamic: true,
                // hand-built positions need not be lattice sites; keep ids unique
                site: SiteKey(lattice.snap(p).0 .0 ^ rng::mix64(i as u64 + 1)),
            })
            .collect();
        let r_max = positions.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let spec = BathSpec {
            concentration_ppm: 1.0,
            layer_thickness: f64::MAX,
            bath_radius: r_max.max(1e-9),
            shell_thickness: 0.0,
            hyperfine_mode: if labels.iter().all(|&g| g == 0) {
                HyperfineMode::NoHyperfine
            } else {
                HyperfineMode::P1
            },
            seed: 0,
        };
        Self::assemble(spec, constants, spins)
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn dynamic_count(&self) -> usize {
        self.spins.iter().filter(|s| s.dynamic).count()
    }

    /// Indices (into `spins`) of dynamic spins.
    pub fn dynamic_indices(&self) -> Vec<usize> {
        (0..self.spins.len())
            .filter(|&i| self.spins[i].dynamic)
            .collect()
    }

    /// Same geometry with all flip-flop terms disabled.
    pub fn without_flipflops(&self) -> Self {
        Self {
            couplings: self.couplings.without_flipflops(),
            ..self.clone()
        }
    }

    /// Keeps only the `n` dynamic spins closest to the NV and drops the rest.
    pub fn nearest(&self, n: usize) -> Result<Self> {
        let spins: Vec<BathSpin> = self
            .spins
            .iter()
            .filter(|s| s.dynamic)
            .take(n)
            .cloned()
            .collect();
        if spins.len() < n {
            return Err(Error::InvalidInput(format!(
                "bath has only {} dynamic spins, {n} requested",
                spins.len()
            )));
        }
        let mut spec = self.spec.clone();
        spec.shell_thickness = 0.0;
        spec.bath_radius = spins.last().map_or(spec.bath_radius, |s| s.position.norm());
        Self::assemble(spec, self.constants, spins)
    }

    /// Per-subgroup count of dynamic spins.
    pub fn subgroup_counts(&self) -> BTreeMap<u8, usize> {
        let mut m = BTreeMap::new();
        for s in self.spins.iter().filter(|s| s.dynamic) {
            *m.entry(s.subgroup).or_insert(0) += 1;
        }
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Occupied sites inside a ball of `radius` intersected with `|z| ≤ half_thickness`.
fn sample_sites(
    spec: &BathSpec,
    constants: &PhysicalConstants,
    radius: f64,
) -> Vec<(SiteKey, Vector3<f64>)> {
    let lattice = DiamondLattice::new(constants.lattice_constant_a);
    let half_l = 0.5 * spec.layer_thickness;
    let mean = constants.number_density(spec.concentration_ppm) * CELL_NM.powi(3);
    let poisson = Poisson::new(mean).expect("positive Poisson mean");
    let zr = radius.min(half_l);
    let range = |ext: f64| (-(ext / CELL_NM).ceil() as i64)..=((ext / CELL_NM).ceil() as i64);
    let nv = SiteKey::nv();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for cz in range(zr) {
        for cy in range(radius) {
            for cx in range(radius) {
                let cell = [cx, cy, cz];
                // skip cells that cannot touch the region
                let lo = |c: i64| c as f64 * CELL_NM;
                let nearest = |c: i64| {
                    let (a, b) = (lo(c), lo(c) + CELL_NM);
                    if a > 0.0 {
                        a
                    } else if b < 0.0 {
                        -b
                    } else {
                        0.0
                    }
                };
                let d2 = nearest(cx).powi(2) + nearest(cy).powi(2) + nearest(cz).powi(2);
                if d2 > radius * radius || nearest(cz) > half_l {
                    continue;
                }
                let seed = rng::derive(spec.seed, &[tag::CELL, cx as u64, cy as u64, cz as u64]);
                let mut r = rng::stream(seed);
                let count = poisson.sample(&mut r) as usize;
                for _ in 0..count {
                    let p = Vector3::new(
                        lo(cell[0]) + r.random::<f64>() * CELL_NM,
                        lo(cell[1]) + r.random::<f64>() * CELL_NM,
                        lo(cell[2]) + r.random::<f64>() * CELL_NM,
                    );
                    let (key, pos) = lattice.snap(&p);
                    if key == nv || pos.z.abs() > half_l || pos.norm() > radius {
                        continue;
                    }
                    if seen.insert(key) {
                        out.push((key, pos));
                    }
                }
            }
        }
    }
    out
}

fn site_subgroup(seed: u64, site: SiteKey, mode: HyperfineMode) -> u8 {
    match mode {
        HyperfineMode::NoHyperfine => 0,
        HyperfineMode::P1 => draw_subgroup(&mut rng::stream(rng::derive(
            seed,
            &[tag::SUBGROUP, site.0],
        ))),
    }
}

/// Generates a bath realization: dynamic spins within `r_b`, static shell spins
/// in `(r_b, r_b + shell]`, all within the slab.
pub fn generate_bath(spec: &BathSpec) -> Result<BathSystem> {
    generate_bath_with(spec, &PhysicalConstants::default())
}

pub fn generate_bath_with(spec: &BathSpec, constants: &PhysicalConstants) -> Result<BathSystem> {
    spec.validate()?;
    let sites = sample_sites(spec, constants, spec.outer_radius());
    if sites.is_empty() {
        return Err(Error::EmptyBath);
    }
    let spins = sites
        .into_iter()
        .map(|(site, position)| BathSpin {
            position,
            subgroup: site_subgroup(spec.seed, site, spec.hyperfine_mode),
            dynamic: position.norm() <= spec.bath_radius,
            site,
        })
        .collect();
    BathSystem::assemble(spec.clone(), *constants, spins)
}

/// Direct site enumeration: every lattice site in the region is occupied
/// independently with probability `ppm · 1e−6`. Only for small regions.
pub fn enumerate_bath_sites(
    spec: &BathSpec,
    constants: &PhysicalConstants,
) -> Result<Vec<Vector3<f64>>> {
    spec.validate()?;
    let lattice = DiamondLattice::new(constants.lattice_constant_a);
    let r = spec.outer_radius();
    let half_l = 0.5 * spec.layer_thickness;
    let ext = (r / lattice.half_a).ceil() as i64 + 2;
    let p = spec.concentration_ppm * 1e-6;
    let mut rng_ = rng::stream(rng::derive(spec.seed, &[tag::BATH]));
    let mut out = Vec::new();
    for i in -ext..=ext {
        for j in -ext..=ext {
            for k in -ext..=ext {
                if (i + j + k).rem_euclid(2) != 0 {
                    continue;
                }
                for sub in 0..2u8 {
                    let pos = lattice.site_position(sub, [i, j, k]);
                    if pos.norm() > r
                        || pos.z.abs() > half_l
                        || (sub == 0 && i == 0 && j == 0 && k == 0)
                    {
                        continue;
                    }
                    if rng_.random::<f64>() < p {
                        out.push(pos);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Enlarges `r_b` until at least `min_dynamic` spins are dynamic, then pads
/// every subgroup up to a multiple of `k` with its nearest shell spins.
pub fn grow_bath_radius(
    spec: &BathSpec,
    min_dynamic: usize,
    k: usize,
) -> Result<(BathSpec, BathSystem)> {
    grow_bath_radius_with(spec, min_dynamic, k, &PhysicalConstants::default())
}

pub fn grow_bath_radius_with(
    spec: &BathSpec,
    min_dynamic: usize,
    k: usize,
    constants: &PhysicalConstants,
) -> Result<(BathSpec, BathSystem)> {
    spec.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput(
            "partition size K must be at least 1".into(),
        ));
    }
    let mut spec = spec.clone();
    if min_dynamic > 0 {
        let mut probe = spec.bath_radius;
        loop {
            let sites = sample_sites(&spec, constants, probe);
            if sites.len() >= min_dynamic {
                let mut d: Vec<f64> = sites.iter().map(|(_, p)| p.norm()).collect();
                d.sort_by(f64::total_cmp);
                spec.bath_radius = spec.bath_radius.max(d[min_dynamic - 1]);
                break;
            }
            probe *= 1.25;
            if probe > 1e5 {
                return Err(Error::EmptyBath);
            }
        }
    }
    let mut system = generate_bath_with(&spec, constants)?;
    if k > 1 {
        let counts = system.subgroup_counts();
        for (&g, &count) in &counts {
            let needed = (k - count % k) % k;
            let shell: Vec<usize> = (0..system.spins.len())
                .filter(|&i| !system.spins[i].dynamic && system.spins[i].subgroup == g)
                .take(needed)
                .collect();
            if shell.len() < needed {
                return Err(Error::PaddingExhausted {
                    subgroup: g,
                    needed: needed - shell.len(),
                });
            }
            for i in shell {
                system.spins[i].dynamic = true;
            }
        }
        system = BathSystem::assemble(system.spec.clone(), system.constants, system.spins)?;
    }
    Ok((spec, system))
}

/// Next multiple of `k` for each count.
pub fn padded_counts(counts: &[usize], k: usize) -> Vec<usize> {
    counts.iter().map(|&c| c.div_ceil(k) * k).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NnHistogram {
    /// Nearest-neighbor |J| per dynamic spin, MHz.
    pub values: Vec<f64>,
    /// `(lower, upper, count)` with logarithmic bins (10 per decade).
    pub bins: Vec<(f64, f64, usize)>,
    pub threshold_mhz: f64,
    pub fraction_above_threshold: f64,
}

/// Histogram of per-spin nearest-neighbor |J| (nearest by distance).
pub fn nn_coupling_histogram(system: &BathSystem) -> NnHistogram {
    let n = system.spins.len();
    let mut values = Vec::new();
    if n >= 2 {
        for (i, s) in system.spins.iter().enumerate() {
            if !s.dynamic {
                continue;
            }
            let nearest = (0..n)
                .filter(|&k| k != i)
                .min_by(|&a, &b| {
                    let da = (system.spins[a].position - s.position).norm_squared();
                    let db = (system.spins[b].position - s.position).norm_squared();
                    da.total_cmp(&db)
                })
                .expect("at least two spins");
            let r = system.spins[nearest].position - s.position;
            values.push(dipolar_coupling(&r, &system.constants).map_or(f64::INFINITY, f64::abs));
        }
    }
    let mut bins_map: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in &values {
        let b = if v > 0.0 {
            (v.log10() * 10.0).floor() as i64
        } else {
            i64::MIN
        };
        *bins_map.entry(b).or_insert(0) += 1;
    }
    let bins = bins_map
        .into_iter()
        .map(|(b, c)| {
            if b == i64::MIN {
                (0.0, 0.0, c)
            } else {
                (
                    10f64.powf(b as f64 / 10.0),
                    10f64.powf((b + 1) as f64 / 10.0),
                    c,
                )
            }
        })
        .collect();
    let above = values
        .iter()
        .filter(|&&v| v > HYPERFINE_THRESHOLD_MHZ)
        .count();
    let fraction_above_threshold = if values.is_empty() {
        0.0
    } else {
        above as f64 / values.len() as f64
    };
    NnHistogram {
        values,
        bins,
        threshold_mhz: HYPERFINE_THRESHOLD_MHZ,
        fraction_above_threshold,
    }
}

/// Mean distance from each dynamic spin to its nearest other spin, nm.
pub fn mean_nn_distance(system: &BathSystem) -> Result<f64> {
    let dynamic = system.dynamic_indices();
    if dynamic.len() < 2 {
        return Err(Error::InvalidInput(
            "mean nearest-neighbor distance needs two dynamic spins".into(),
        ));
    }
    let n = system.spins.len();
    let total: f64 = dynamic
        .iter()
        .map(|&i| {
            let p = system.spins[i].position;
            (0..n)
                .filter(|&k| k != i)
                .map(|k| (system.spins[k].position - p).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / dynamic.len() as f64)
}
