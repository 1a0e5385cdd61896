//! Synthetic gland scenes with exact instance annotations.
//!
//! Benign glands are perturbed ellipses drawn as a dark epithelial ring around
//! a bright lumen; malignant glands are elongated irregular blobs without a
//! clear lumen. A configurable fraction of glands is placed in abutting pairs
//! whose shared border is split between the two labels.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::augment::Sample;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMask};
use crate::morphology::{connected_components_by_label, dilate, DiskElement};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GlandSceneSpec {
    pub width: usize,
    pub height: usize,
    pub min_glands: usize,
    pub max_glands: usize,
    /// Range of the ellipse semi-axes, pixels.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Range of the epithelial band thickness, pixels.
    pub min_ring: f64,
    pub max_ring: f64,
    pub lumen_intensity: f64,
    pub ring_intensity: f64,
    pub stroma_intensity: f64,
    pub noise_sigma: f64,
    pub touching_fraction: f64,
    pub malignant_mode: bool,
}

impl Default for GlandSceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            min_glands: 2,
            max_glands: 4,
            min_radius: 9.0,
            max_radius: 13.0,
            min_ring: 2.0,
            max_ring: 3.5,
            lumen_intensity: 0.92,
            ring_intensity: 0.35,
            stroma_intensity: 0.7,
            noise_sigma: 0.04,
            touching_fraction: 0.5,
            malignant_mode: false,
        }
    }
}

impl GlandSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = self.width > 0
            && self.height > 0
            && self.min_glands <= self.max_glands
            && self.min_radius > 0.0
            && self.min_radius <= self.max_radius
            && self.min_ring > 0.0
            && self.min_ring <= self.max_ring
            && unit(self.lumen_intensity)
            && unit(self.ring_intensity)
            && unit(self.stroma_intensity)
            && self.noise_sigma >= 0.0
            && self.noise_sigma.is_finite()
            && unit(self.touching_fraction);
        if !ok {
            return Err(Error::Config(format!("invalid gland scene spec: {self:?}")));
        }
        Ok(())
    }
}

/// Stain-like RGB tints multiplied with the scalar intensities.
const STROMA_TINT: [f64; 3] = [1.0, 0.82, 0.9];
const RING_TINT: [f64; 3] = [0.75, 0.55, 1.0];
const LUMEN_TINT: [f64; 3] = [1.0, 0.97, 1.0];

#[derive(Clone, Debug)]
struct GlandShape {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
    /// Fourier perturbation of the boundary radius: (order, amplitude, phase).
    wobble: Vec<(f64, f64, f64)>,
    ring: f64,
    has_lumen: bool,
}

impl GlandShape {
    fn random(spec: &GlandSceneSpec, rng: &mut RngState) -> Self {
        let (mut a, mut b) = (
            rng.uniform_range(spec.min_radius, spec.max_radius),
            rng.uniform_range(spec.min_radius, spec.max_radius),
        );
        let amp = if spec.malignant_mode { 0.22 } else { 0.07 };
        if spec.malignant_mode {
            a *= 1.4;
            b *= 0.7;
        }
        if b > a {
            std::mem::swap(&mut a, &mut b);
        }
        let wobble = (2..=4)
            .map(|k| (k as f64, amp * rng.uniform() / (k as f64 - 1.0), rng.uniform_range(0.0, TAU)))
            .collect();
        Self {
            cy: 0.0,
            cx: 0.0,
            a,
            b,
            angle: rng.uniform_range(0.0, TAU),
            wobble,
            ring: rng.uniform_range(spec.min_ring, spec.max_ring),
            has_lumen: !spec.malignant_mode,
        }
    }

    /// Upper bound of the boundary radius.
    fn extent(&self) -> f64 {
        self.a * (1.0 + self.wobble.iter().map(|w| w.1).sum::<f64>())
    }

    /// Boundary radius along direction `phi` (image frame).
    fn radius_at(&self, phi: f64) -> f64 {
        let t = phi - self.angle;
        let (s, c) = t.sin_cos();
        let base = self.a * self.b / ((self.b * c).powi(2) + (self.a * s).powi(2)).sqrt();
        let w: f64 = self.wobble.iter().map(|&(k, amp, ph)| amp * (k * t + ph).cos()).sum();
        base * (1.0 + w)
    }

    /// `(normalized distance, depth below the boundary)` of a pixel centre.
    fn locate(&self, y: f64, x: f64) -> (f64, f64) {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let d = (dy * dy + dx * dx).sqrt();
        let r = self.radius_at(dy.atan2(dx));
        (d / r, r - d)
    }
}

/// Renders shapes into a label grid. Pixels inside several candidate shapes
/// go to the one they are relatively deepest in; stray fragments are dropped
/// so every label stays a single 4-connected component.
fn rasterize(shapes: &[(u32, GlandShape)], w: usize, h: usize, base: &InstanceMask) -> InstanceMask {
    let mut out = base.clone();
    for y in 0..h {
        for x in 0..w {
            if base.get(y, x) != 0 {
                continue;
            }
            let mut best: Option<(f64, u32)> = None;
            for (id, s) in shapes {
                let (rel, _) = s.locate(y as f64, x as f64);
                if rel <= 1.0 && best.is_none_or(|(b, _)| rel < b) {
                    best = Some((rel, *id));
                }
            }
            if let Some((_, id)) = best {
                out.set(y, x, id);
            }
        }
    }
    keep_largest_fragments(&out)
}

fn keep_largest_fragments(inst: &InstanceMask) -> InstanceMask {
    let comps = connected_components_by_label(inst);
    let sizes = comps.areas();
    let mut best: std::collections::BTreeMap<u32, (usize, u32)> = Default::default();
    for (&l, &c) in inst.labels().iter().zip(comps.labels()) {
        if l == 0 {
            continue;
        }
        let e = best.entry(l).or_insert((0, 0));
        if sizes[&c] > e.0 || (sizes[&c] == e.0 && c < e.1) {
            *e = (sizes[&c], c);
        }
    }
    let labels = inst
        .labels()
        .iter()
        .zip(comps.labels())
        .map(|(&l, &c)| if l != 0 && best[&l].1 == c { l } else { 0 })
        .collect();
    InstanceMask::from_labels(inst.width(), inst.height(), labels).expect("same dims")
}

fn mask_of(inst: &InstanceMask, ids: &[u32]) -> BinaryMask {
    BinaryMask::from_fn(inst.width(), inst.height(), |y, x| ids.contains(&inst.get(y, x)))
}

fn intersects(a: &BinaryMask, b: &BinaryMask) -> bool {
    a.bits().iter().zip(b.bits()).any(|(&p, &q)| p && q)
}

/// True when the two objects are 4-adjacent somewhere.
pub fn objects_touch(inst: &InstanceMask, a: u32, b: u32) -> bool {
    let grown = dilate(&mask_of(inst, &[a]), &DiskElement::new(1));
    intersects(&grown, &mask_of(inst, &[b]))
}

fn inside_image(s: &GlandShape, w: usize, h: usize, margin: f64) -> bool {
    let e = s.extent() + margin;
    s.cy - e >= 0.0 && s.cx - e >= 0.0 && s.cy + e <= (h - 1) as f64 && s.cx + e <= (w - 1) as f64
}

const MAX_ATTEMPTS: usize = 60;

/// Generates one scene; fully determined by `rng`. When a gland cannot be
/// placed within a bounded number of attempts the scene simply has fewer.
pub fn generate_scene(spec: &GlandSceneSpec, rng: &mut RngState) -> Result<Sample> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let count = rng.range_inclusive(spec.min_glands, spec.max_glands);
    let expected_paired = spec.touching_fraction * count as f64 / 2.0;
    let mut pairs = expected_paired.floor() as usize;
    if rng.bernoulli(expected_paired - expected_paired.floor()) {
        pairs += 1;
    }
    pairs = pairs.min(count / 2);
    let singles = count - 2 * pairs;

    let mut inst = InstanceMask::new(w, h);
    let mut shapes: Vec<(u32, GlandShape)> = Vec::new();
    let mut next_id = 1u32;
    let gap = DiskElement::new(2);

    for _ in 0..pairs {
        for _ in 0..MAX_ATTEMPTS {
            let mut s1 = GlandShape::random(spec, rng);
            let mut s2 = GlandShape::random(spec, rng);
            let e1 = s1.extent();
            s1.cy = rng.uniform_range(e1, (h as f64 - 1.0 - e1).max(e1));
            s1.cx = rng.uniform_range(e1, (w as f64 - 1.0 - e1).max(e1));
            let dir = rng.uniform_range(0.0, TAU);
            // centre distance so that the two outlines overlap slightly
            let reach = 0.85 * (s1.radius_at(dir) + s2.radius_at(dir + std::f64::consts::PI));
            s2.cy = s1.cy + reach * dir.sin();
            s2.cx = s1.cx + reach * dir.cos();
            if !inside_image(&s1, w, h, 0.0) || !inside_image(&s2, w, h, 0.0) {
                continue;
            }
            let (id1, id2) = (next_id, next_id + 1);
            let pair = [(id1, s1.clone()), (id2, s2.clone())];
            let trial = rasterize(&pair, w, h, &InstanceMask::new(w, h));
            let areas = trial.areas();
            if areas.len() != 2 || !objects_touch(&trial, id1, id2) {
                continue;
            }
            let new = mask_of(&trial, &[id1, id2]);
            if intersects(&dilate(&new, &gap), &inst.foreground()) {
                continue;
            }
            for (i, &l) in trial.labels().iter().enumerate() {
                if l != 0 {
                    inst.set(i / w, i % w, l);
                }
            }
            shapes.extend(pair);
            next_id += 2;
            break;
        }
    }
    for _ in 0..singles {
        for _ in 0..MAX_ATTEMPTS {
            let mut s = GlandShape::random(spec, rng);
            let e = s.extent();
            s.cy = rng.uniform_range(e, (h as f64 - 1.0 - e).max(e));
            s.cx = rng.uniform_range(e, (w as f64 - 1.0 - e).max(e));
            if !inside_image(&s, w, h, 0.0) {
                continue;
            }
            let trial = rasterize(&[(next_id, s.clone())], w, h, &InstanceMask::new(w, h));
            if trial.num_objects() != 1 {
                continue;
            }
            if intersects(&dilate(&trial.foreground(), &gap), &inst.foreground()) {
                continue;
            }
            for (i, &l) in trial.labels().iter().enumerate() {
                if l != 0 {
                    inst.set(i / w, i % w, l);
                }
            }
            shapes.push((next_id, s));
            next_id += 1;
            break;
        }
    }

    let image = render(spec, &inst, &shapes, rng);
    Sample::new(image, inst)
}

fn render(spec: &GlandSceneSpec, inst: &InstanceMask, shapes: &[(u32, GlandShape)], rng: &mut RngState) -> Tensor {
    let (w, h) = (spec.width, spec.height);
    let mut image = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let id = inst.get(y, x);
            let (intensity, tint) = match shapes.iter().find(|(sid, _)| *sid == id) {
                None => (spec.stroma_intensity, STROMA_TINT),
                Some((_, s)) => {
                    let (_, depth) = s.locate(y as f64, x as f64);
                    // depth to the nearest labeled border also counts, so
                    // abutting glands each get their own ring
                    let edge = depth.min(distance_to_other(inst, y, x, id, s.ring));
                    if s.has_lumen && edge >= s.ring {
                        (spec.lumen_intensity, LUMEN_TINT)
                    } else {
                        (spec.ring_intensity, RING_TINT)
                    }
                }
            };
            let noise = spec.noise_sigma * rng.normal();
            for (c, t) in tint.iter().enumerate() {
                image.set(0, c, y, x, (intensity * t + noise).clamp(0.0, 1.0));
            }
        }
    }
    image
}

/// Distance (capped at `cap`) from `(y, x)` to the nearest pixel not carrying
/// label `id`.
fn distance_to_other(inst: &InstanceMask, y: usize, x: usize, id: u32, cap: f64) -> f64 {
    let r = cap.ceil() as isize;
    let mut best = cap;
    for dy in -r..=r {
        for dx in -r..=r {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            let d = ((dy * dy + dx * dx) as f64).sqrt();
            if d >= best {
                continue;
            }
            let outside = ny < 0 || nx < 0 || ny >= inst.height() as isize || nx >= inst.width() as isize;
            if outside || inst.get(ny as usize, nx as usize) != id {
                best = d;
            }
        }
    }
    best
}

/// Seeds used to generate each scene of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<(usize, u64)>,
}

impl Manifest {
    /// One `scene_id seed` line per scene.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, seed) in &self.entries {
            writeln!(s, "{id} {seed}").expect("writing to a String");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |v: Option<&str>| -> Result<u64> {
                v.and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format {
                    format: "manifest",
                    msg: format!("line {}: expected `scene_id seed`", i + 1),
                })
            };
            let id = parse(it.next())? as usize;
            let seed = parse(it.next())?;
            entries.push((id, seed));
        }
        Ok(Self { entries })
    }
}

/// `n` independent scenes, each generated from its own recorded seed.
pub fn generate_dataset(spec: &GlandSceneSpec, n: usize, rng: &mut RngState) -> Result<(Vec<Sample>, Manifest)> {
    if n == 0 {
        return Err(Error::Param("dataset size must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for id in 0..n {
        let seed = rng.next_u64();
        samples.push(generate_scene(spec, &mut RngState::new(seed))?);
        entries.push((id, seed));
    }
    Ok((samples, Manifest { entries }))
}

/// Unordered pairs of touching objects.
pub fn touching_pairs(inst: &InstanceMask) -> Vec<(u32, u32)> {
    let (w, h) = (inst.width(), inst.height());
    let mut pairs = std::collections::BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = inst.get(y, x);
            if a == 0 {
                continue;
            }
            for (ny, nx) in [(y + 1, x), (y, x + 1)] {
                if ny < h && nx < w {
                    let b = inst.get(ny, nx);
                    if b != 0 && b != a {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    pairs.into_iter().collect()
}
