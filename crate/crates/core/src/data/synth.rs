//! Synthetic airway scenes: textured pink wall, dark elliptical orifices
//! (optionally nested), and per-image blur, contrast and exposure changes.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arch::MAX_STRIDE;
use crate::exec;
use crate::kv::{self, KvError, KvMap};
use crate::postprocess::BBox;

use super::splits::split_indices;
use super::{save_image, write_label_file, DataError, Domain, Image, Manifest, Sample, Splits};

/// Orifices with less than this fraction of their area inside the frame are
/// rendered but not labeled.
pub const MIN_VISIBLE_FRACTION: f64 = 0.3;

const WALL: [f32; 3] = [0.80, 0.46, 0.42];
const LUMEN: [f32; 3] = [0.10, 0.03, 0.03];

/// Generator parameters. Ranges are inclusive `(lo, hi)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub size: usize,
    /// Top-level orifices per image.
    pub count: (usize, usize),
    /// Probability that a top-level orifice contains a child.
    pub nesting: f32,
    /// Semi-axis lengths as a fraction of the image side.
    pub radius: (f32, f32),
    /// Peak darkening at an orifice center, in `(0, 1]`.
    pub darkness: (f32, f32),
    /// Amplitude of the low-frequency wall texture.
    pub texture: f32,
    /// Motion-blur kernel length in pixels.
    pub blur: (f32, f32),
    /// Contrast factor around the image mean; 1 leaves contrast unchanged.
    pub contrast: (f32, f32),
    /// Vignette and specular highlight strength.
    pub exposure: (f32, f32),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 160,
            count: (1, 3),
            nesting: 0.3,
            radius: (0.06, 0.18),
            darkness: (0.6, 0.9),
            texture: 0.1,
            blur: (0.0, 2.0),
            contrast: (0.8, 1.0),
            exposure: (0.0, 0.3),
            seed: 7,
        }
    }
}

fn take_range<T: std::str::FromStr + Copy>(kv: &mut KvMap, key: &str, slot: &mut (T, T)) -> Result<(), KvError> {
    if let Some(v) = kv.take_list::<T>(key)? {
        match v[..] {
            [lo, hi] => *slot = (lo, hi),
            [x] => *slot = (x, x),
            _ => {
                return Err(KvError::Value {
                    key: key.to_string(),
                    value: format!("{} values (expected lo,hi)", v.len()),
                })
            }
        }
    }
    Ok(())
}

impl SynthSpec {
    /// A harder domain: heavier blur, lower contrast, stronger exposure
    /// artifacts and fainter orifices. Stands in for a cross-domain test set.
    pub fn shifted(&self) -> Self {
        Self {
            darkness: (0.4, 0.7),
            texture: self.texture * 2.0,
            blur: (3.0, 7.0),
            contrast: (0.5, 0.75),
            exposure: (0.3, 0.5),
            seed: self.seed ^ 0x5eed_0f_d0_a1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |key: &str, msg: String| Err(DataError::Spec(format!("`{key}`: {msg}")));
        if self.size == 0 || self.size % MAX_STRIDE != 0 {
            return bad("size", format!("{} is not a positive multiple of {MAX_STRIDE}", self.size));
        }
        if self.count.0 == 0 || self.count.0 > self.count.1 {
            return bad("count", format!("range {:?} must satisfy 1 <= lo <= hi", self.count));
        }
        if !(0.0..=1.0).contains(&self.nesting) {
            return bad("nesting", format!("probability {} outside [0, 1]", self.nesting));
        }
        let ranges = [
            ("radius", self.radius, 0.0, 0.5),
            ("darkness", self.darkness, 0.0, 1.0),
            ("blur", self.blur, 0.0, 64.0),
            ("contrast", self.contrast, 0.0, 1.0),
            ("exposure", self.exposure, 0.0, 1.0),
        ];
        for (key, (lo, hi), min, max) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min && hi <= max) {
                return bad(key, format!("range ({lo}, {hi}) must be ordered within [{min}, {max}]"));
            }
        }
        if self.radius.0 * (self.size as f32) < 4.0 {
            return bad("radius", "smallest orifice would be under 4 px across".into());
        }
        if self.darkness.0 <= 0.0 || self.contrast.0 <= 0.0 {
            return bad("darkness/contrast", "lower bounds must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.texture) {
            return bad("texture", format!("{} outside [0, 1]", self.texture));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let r = |(a, b): (f32, f32)| format!("{a},{b}");
        kv::render([
            ("size", self.size.to_string()),
            ("count", format!("{},{}", self.count.0, self.count.1)),
            ("nesting", self.nesting.to_string()),
            ("radius", r(self.radius)),
            ("darkness", r(self.darkness)),
            ("texture", self.texture.to_string()),
            ("blur", r(self.blur)),
            ("contrast", r(self.contrast)),
            ("exposure", r(self.exposure)),
            ("seed", self.seed.to_string()),
        ])
    }

    /// Parse `key=value` text; absent keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut kv = KvMap::parse(text)?;
        let mut s = Self::default();
        kv.take_into("size", &mut s.size)?;
        take_range(&mut kv, "count", &mut s.count)?;
        kv.take_into("nesting", &mut s.nesting)?;
        take_range(&mut kv, "radius", &mut s.radius)?;
        take_range(&mut kv, "darkness", &mut s.darkness)?;
        kv.take_into("texture", &mut s.texture)?;
        take_range(&mut kv, "blur", &mut s.blur)?;
        take_range(&mut kv, "contrast", &mut s.contrast)?;
        take_range(&mut kv, "exposure", &mut s.exposure)?;
        kv.take_into("seed", &mut s.seed)?;
        kv.finish()?;
        s.validate()?;
        Ok(s)
    }
}

/// A rotated ellipse in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub darkness: f64,
    /// Index of the enclosing orifice for nested children.
    pub parent: Option<usize>,
}

impl Ellipse {
    /// Squared normalized radius of point `(x, y)`; below 1 means inside.
    pub fn rho2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    /// Half extents of the analytic bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt(),
            ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt(),
        )
    }

    /// Bounding box of the pixels whose centers fall inside, and their count.
    pub fn raster(&self, width: usize, height: usize) -> Option<(BBox, usize)> {
        let (hx, hy) = self.half_extents();
        let x0 = (self.cx - hx - 1.0).floor().max(0.0) as usize;
        let y0 = (self.cy - hy - 1.0).floor().max(0.0) as usize;
        let x1 = ((self.cx + hx + 1.0).ceil().max(0.0) as usize).min(width);
        let y1 = ((self.cy + hy + 1.0).ceil().max(0.0) as usize).min(height);
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        let mut count = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                if self.rho2(x as f64 + 0.5, y as f64 + 0.5) < 1.0 {
                    count += 1;
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb.map(|(a, b, c, d)| {
            (
                BBox::new(a as f32, b as f32, (c + 1) as f32, (d + 1) as f32),
                count,
            )
        })
    }
}

/// Geometry and labels of one generated image.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<Ellipse>,
    /// `(object index, pixel box)` for every labeled orifice.
    pub labels: Vec<(usize, BBox)>,
}

impl Scene {
    pub fn boxes(&self) -> Vec<BBox> {
        self.labels.iter().map(|l| l.1).collect()
    }
}

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)) -> f64 {
    if hi > lo {
        rng.gen_range(lo as f64..=hi as f64)
    } else {
        lo as f64
    }
}

fn place_objects(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Ellipse> {
    let size = spec.size as f64;
    let n = rng.gen_range(spec.count.0..=spec.count.1);
    let mut objects: Vec<Ellipse> = Vec::new();
    for _ in 0..n {
        for _attempt in 0..50 {
            let a = uniform(rng, spec.radius) * size;
            let b = a * rng.gen_range(0.6..=1.0);
            let theta = rng.gen_range(0.0..PI);
            let nested = rng.gen::<f32>() < spec.nesting;
            let mut e = Ellipse {
                cx: 0.0,
                cy: 0.0,
                a,
                b,
                theta,
                darkness: uniform(rng, spec.darkness),
                parent: None,
            };
            let (hx, hy) = e.half_extents();
            // nested parents stay fully in frame so the child box is strictly inside
            let (mx, my) = if nested {
                (hx + 2.0, hy + 2.0)
            } else {
                (0.08 * size, 0.08 * size)
            };
            if 2.0 * mx >= size || 2.0 * my >= size {
                continue;
            }
            e.cx = rng.gen_range(mx..size - mx);
            e.cy = rng.gen_range(my..size - my);
            let clear = objects.iter().filter(|o| o.parent.is_none()).all(|o| {
                let d = ((o.cx - e.cx).powi(2) + (o.cy - e.cy).powi(2)).sqrt();
                d > 1.05 * (o.a.max(o.b) + e.a.max(e.b))
            });
            if !clear {
                continue;
            }
            let parent = objects.len();
            if nested {
                // lighter parent so the child reads as a deeper opening
                e.darkness *= 0.6;
            }
            objects.push(e);
            if nested {
                let (sa, sb) = (rng.gen_range(0.35..=0.55), rng.gen_range(0.35..=0.55));
                let (ca, cb) = ((a * sa).max(2.5), (b * sb).max(2.5));
                let ou = rng.gen_range(-1.0..=1.0) * (a - ca) * 0.5;
                let ov = rng.gen_range(-1.0..=1.0) * (b - cb) * 0.5;
                let (s, c) = theta.sin_cos();
                objects.push(Ellipse {
                    cx: e.cx + ou * c - ov * s,
                    cy: e.cy + ou * s + ov * c,
                    a: ca,
                    b: cb,
                    theta,
                    darkness: rng.gen_range(0.9..=1.0),
                    parent: Some(parent),
                });
            }
            break;
        }
    }
    objects
}

fn render(spec: &SynthSpec, objects: &[Ellipse], rng: &mut ChaCha8Rng) -> Image {
    let n = spec.size;
    let size = n as f64;
    let mut img = Image::new(n, n);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.05..=0.05));
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let freq = rng.gen_range(1.0..4.0) * 2.0 * PI / size;
            let dir = rng.gen_range(0.0..2.0 * PI);
            (freq * dir.cos(), freq * dir.sin(), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0))
        })
        .collect();
    let amp_norm: f64 = waves.iter().map(|w| w.3).sum();
    let exposure = uniform(rng, spec.exposure);
    let (hx, hy) = (rng.gen_range(0.2..0.8) * size, rng.gen_range(0.2..0.8) * size);
    let hsigma = 0.08 * size;
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t: f64 = waves.iter().map(|&(kx, ky, ph, amp)| amp * (kx * px + ky * py + ph).sin()).sum::<f64>() / amp_norm;
            let shade = 1.0 + spec.texture as f64 * t;
            let mut rgb: [f64; 3] = std::array::from_fn(|c| (WALL[c] as f64 + tint[c]) * shade);
            for o in objects {
                let r2 = o.rho2(px, py);
                if r2 < 1.0 {
                    let f = o.darkness * (1.0 - r2).powf(0.35);
                    for (c, v) in rgb.iter_mut().enumerate() {
                        *v = *v * (1.0 - f) + LUMEN[c] as f64 * f;
                    }
                }
            }
            let r = ((px - size / 2.0).powi(2) + (py - size / 2.0).powi(2)) / (size * size / 2.0);
            let vignette = 1.0 - exposure * r;
            let highlight = 0.6 * exposure * (-((px - hx).powi(2) + (py - hy).powi(2)) / (2.0 * hsigma * hsigma)).exp();
            for (c, v) in rgb.iter().enumerate() {
                img.set(c, y, x, (v * vignette + highlight) as f32);
            }
        }
    }
    let len = uniform(rng, spec.blur);
    let angle = rng.gen_range(0.0..PI);
    if len >= 1.0 {
        img = motion_blur(&img, len, angle);
    }
    let contrast = uniform(rng, spec.contrast) as f32;
    for c in 0..3 {
        let plane = n * n;
        let chan = &mut img.data[c * plane..(c + 1) * plane];
        let mean = chan.iter().map(|&v| v as f64).sum::<f64>() as f32 / plane as f32;
        for v in chan.iter_mut() {
            *v = mean + contrast * (*v - mean);
        }
    }
    for v in img.data.iter_mut() {
        *v = (*v + 0.01 * rng.sample::<f32, _>(StandardNormal)).clamp(0.0, 1.0);
    }
    img
}

/// Average along a line of `len` pixels at `angle`, nearest-pixel sampling
/// with edge clamping.
fn motion_blur(img: &Image, len: f64, angle: f64) -> Image {
    let taps = len.ceil() as usize + 1;
    let (dx, dy) = (angle.cos(), angle.sin());
    let offsets: Vec<(isize, isize)> = (0..taps)
        .map(|i| {
            let t = -len / 2.0 + len * i as f64 / (taps - 1) as f64;
            ((t * dx).round() as isize, (t * dy).round() as isize)
        })
        .collect();
    let (w, h) = (img.width as isize, img.height as isize);
    let mut out = Image::new(img.width, img.height);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let sum: f32 = offsets
                    .iter()
                    .map(|&(ox, oy)| img.get(c, (y + oy).clamp(0, h - 1) as usize, (x + ox).clamp(0, w - 1) as usize))
                    .sum();
                out.set(c, y as usize, x as usize, sum / taps as f32);
            }
        }
    }
    out
}

/// Render image `index` of the stream defined by `spec`.
pub fn synth_scene(spec: &SynthSpec, index: usize) -> Result<(Image, Scene), DataError> {
    spec.validate()?;
    let mut rng = image_rng(spec.seed, index);
    let objects = place_objects(spec, &mut rng);
    let img = render(spec, &objects, &mut rng);
    let mut labels = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        if let Some((bbox, count)) = o.raster(spec.size, spec.size) {
            if count as f64 >= MIN_VISIBLE_FRACTION * PI * o.a * o.b {
                labels.push((i, bbox));
            }
        }
    }
    Ok((img, Scene { objects, labels }))
}

fn write_sample(
    dir: &Path,
    index: usize,
    img: &Image,
    scene: &Scene,
    domain: Domain,
) -> Result<Sample, DataError> {
    let image = dir.join("images").join(format!("{index:05}.ppm"));
    let label = dir.join("labels").join(format!("{index:05}.txt"));
    save_image(img, &image)?;
    let boxes: Vec<(usize, BBox)> = scene.labels.iter().map(|&(_, b)| (0, b)).collect();
    std::fs::write(&label, write_label_file(&boxes, img.width, img.height))
        .map_err(|e| DataError::io(&label, e))?;
    Ok(Sample { image, label, domain })
}

fn create_dirs(dir: &Path) -> Result<(), DataError> {
    for sub in ["images", "labels"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| DataError::io(&p, e))?;
    }
    Ok(())
}

/// Write `n` images with labels under `dir` and return their manifest.
pub fn synth_generate(spec: &SynthSpec, n: usize, dir: &Path, domain: Domain) -> Result<Manifest, DataError> {
    if n == 0 {
        return Err(DataError::TooFew("n_images must be at least 1".into()));
    }
    spec.validate()?;
    create_dirs(dir)?;
    let samples = exec::map_indexed(n, |i| {
        let (img, scene) = synth_scene(spec, i)?;
        write_sample(dir, i, &img, &scene, domain)
    });
    Ok(Manifest {
        samples: samples.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Generate `count` images and split them by `fractions`. Images landing in
/// test2 are rendered from [`SynthSpec::shifted`] and tagged as phantom.
/// Writes `all.tsv` and one manifest per split under `dir`.
pub fn generate_dataset(
    spec: &SynthSpec,
    count: usize,
    fractions: [f64; 4],
    dir: &Path,
) -> Result<Splits, DataError> {
    spec.validate()?;
    let [train, val, test1, test2] = split_indices(count, fractions, spec.seed)?;
    let mut which = vec![None; count];
    for (k, ids) in [train, val, test1, test2].iter().enumerate() {
        for &i in ids {
            which[i] = Some(k);
        }
    }
    let shifted = spec.shifted();
    create_dirs(dir)?;
    let samples = exec::map_indexed(count, |i| {
        let (s, domain) = if which[i] == Some(3) {
            (&shifted, Domain::Phantom)
        } else {
            (spec, Domain::Synthetic)
        };
        let (img, scene) = synth_scene(s, i)?;
        write_sample(dir, i, &img, &scene, domain)
    });
    let samples: Vec<Sample> = samples.into_iter().collect::<Result<_, _>>()?;
    let all = Manifest {
        samples: samples.clone(),
    };
    all.save(&dir.join("all.tsv"))?;
    let mut splits = Splits::default();
    for (i, s) in samples.into_iter().enumerate() {
        if let Some(k) = which[i] {
            splits.get_mut(super::Split::ALL[k]).samples.push(s);
        }
    }
    for split in super::Split::ALL {
        splits.get(split).save(&dir.join(format!("{split}.tsv")))?;
    }
    Ok(splits)
}
