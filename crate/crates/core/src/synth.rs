//! Procedural two-path scenes: a top-down grid with axis-aligned box
//! obstacles, a direct path with per-obstacle blockage loss, and the
//! strongest single-bounce image-source reflection.
//!
//! Pixel `(row, col)` sits at `(x, y) = (col·s, row·s)` metres; the scene is
//! bounded by walls half a pixel outside the outermost centres. The array
//! axis is `+x`, so a UE straight along `±y` from the BS is at broadside
//! (90°). Occlusion is tested in 2D; heights only lengthen paths.

use std::path::Path;

use rand::Rng as _;

use crate::error::{CkmError, Result};
use crate::kv::KvDoc;
use crate::map::{
    is_angle_sentinel, read_tensor, write_tensor, ChannelKind, CkmTensor, SceneMeta,
    ANGLE_SENTINEL_DEG, GAIN_MAX_DB, GAIN_MIN_DB, GAIN_SENTINEL_DB,
};
use crate::priors::friis_gain_db;
use crate::rng::rng_from_seed;

/// Axis-aligned box, in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub height_m: f64,
}

impl Obstacle {
    /// Box covering pixel rows `r0..=r1` and columns `c0..=c1` exactly.
    pub fn from_pixels(
        r0: usize,
        c0: usize,
        r1: usize,
        c1: usize,
        spacing: f64,
        height_m: f64,
    ) -> Self {
        Self {
            x0: (c0 as f64 - 0.5) * spacing,
            y0: (r0 as f64 - 0.5) * spacing,
            x1: (c1 as f64 + 0.5) * spacing,
            y1: (r1 as f64 + 0.5) * spacing,
            height_m,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    /// Whether segment `a → b` passes through the interior with positive length.
    pub fn crossed_by(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let d = (b.0 - a.0, b.1 - a.1);
        for (p, q) in [
            (-d.0, a.0 - self.x0),
            (d.0, self.x1 - a.0),
            (-d.1, a.1 - self.y0),
            (d.1, self.y1 - a.1),
        ] {
            if p == 0.0 {
                if q <= 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        t1 - t0 > 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing_m: f64,
    pub carrier_hz: f64,
    /// BS position `(x, y)` in metres.
    pub bs_pos_m: (f64, f64),
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    pub obstacles: Vec<Obstacle>,
    pub reflection_loss_db: f64,
    pub blockage_db: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Obstacle-free scene with the BS at pixel `bs`.
    pub fn open(width: usize, height: usize, pixel_spacing_m: f64, bs: (usize, usize)) -> Self {
        Self {
            width,
            height,
            pixel_spacing_m,
            carrier_hz: 28e9,
            bs_pos_m: (bs.1 as f64 * pixel_spacing_m, bs.0 as f64 * pixel_spacing_m),
            bs_height_m: 25.0,
            ue_height_m: 1.5,
            obstacles: Vec::new(),
            reflection_loss_db: 6.0,
            blockage_db: 25.0,
            seed: 0,
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let s = self.pixel_spacing_m;
        (
            -0.5 * s,
            -0.5 * s,
            (self.width as f64 - 0.5) * s,
            (self.height as f64 - 0.5) * s,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(CkmError::invalid("scene grid must be non-empty"));
        }
        if !(self.pixel_spacing_m > 0.0 && self.pixel_spacing_m.is_finite()) {
            return Err(CkmError::invalid("pixel spacing must be positive"));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(CkmError::invalid("carrier frequency must be positive"));
        }
        if !(self.reflection_loss_db >= 0.0 && self.blockage_db >= 0.0) {
            return Err(CkmError::invalid("losses must be non-negative"));
        }
        let (bx0, by0, bx1, by1) = self.bounds();
        let eps = 1e-9 * self.pixel_spacing_m;
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.x0 < o.x1 && o.y0 < o.y1)
                || o.x0 < bx0 - eps
                || o.y0 < by0 - eps
                || o.x1 > bx1 + eps
                || o.y1 > by1 + eps
            {
                return Err(CkmError::invalid(format!(
                    "obstacle {i} is empty or leaves the grid"
                )));
            }
        }
        let (x, y) = self.bs_pos_m;
        if !(bx0..=bx1).contains(&x) || !(by0..=by1).contains(&y) {
            return Err(CkmError::invalid("BS lies outside the grid"));
        }
        if let Some(i) = self.obstacles.iter().position(|o| o.contains(x, y)) {
            return Err(CkmError::invalid(format!("BS lies inside obstacle {i}")));
        }
        SceneMeta::new(self.bs_height_m, self.ue_height_m, self.carrier_hz)?;
        Ok(())
    }

    /// Nearest pixel to the BS.
    pub fn bs_pixel(&self) -> (usize, usize) {
        let s = self.pixel_spacing_m;
        let r = (self.bs_pos_m.1 / s)
            .round()
            .clamp(0.0, (self.height - 1) as f64) as usize;
        let c = (self.bs_pos_m.0 / s)
            .round()
            .clamp(0.0, (self.width - 1) as f64) as usize;
        (r, c)
    }

    pub fn meta(&self) -> SceneMeta {
        SceneMeta {
            bs_height_m: self.bs_height_m,
            ue_height_m: self.ue_height_m,
            carrier_hz: self.carrier_hz,
            bs_pixel: Some(self.bs_pixel()),
        }
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = self.meta().to_kv();
        d.set("width", self.width);
        d.set("height", self.height);
        d.set("pixel_spacing_m", self.pixel_spacing_m);
        d.set("bs_x_m", self.bs_pos_m.0);
        d.set("bs_y_m", self.bs_pos_m.1);
        d.set("reflection_loss_db", self.reflection_loss_db);
        d.set("blockage_db", self.blockage_db);
        d.set("seed", self.seed);
        d.set("obstacles", self.obstacles.len());
        for (i, o) in self.obstacles.iter().enumerate() {
            d.set(
                &format!("obstacle.{i}"),
                format!("{},{},{},{},{}", o.x0, o.y0, o.x1, o.y1, o.height_m),
            );
        }
        d
    }

    pub fn from_kv(d: &KvDoc) -> Result<Self> {
        let n: usize = d.require("obstacles")?;
        let mut obstacles = Vec::with_capacity(n);
        for i in 0..n {
            let key = format!("obstacle.{i}");
            let raw: String = d.require(&key)?;
            let v: Vec<f64> = raw
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CkmError::invalid(format!("`{key}` needs five numbers")))?;
            let [x0, y0, x1, y1, height_m] = v[..] else {
                return Err(CkmError::invalid(format!("`{key}` needs five numbers")));
            };
            obstacles.push(Obstacle {
                x0,
                y0,
                x1,
                y1,
                height_m,
            });
        }
        let spec = Self {
            width: d.require("width")?,
            height: d.require("height")?,
            pixel_spacing_m: d.require("pixel_spacing_m")?,
            carrier_hz: d.require("carrier_hz")?,
            bs_pos_m: (d.require("bs_x_m")?, d.require("bs_y_m")?),
            bs_height_m: d.require("bs_height")?,
            ue_height_m: d.require("ue_height")?,
            obstacles,
            reflection_loss_db: d.require("reflection_loss_db")?,
            blockage_db: d.require("blockage_db")?,
            seed: d.require("seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Ground truth for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMaps {
    pub pgm1: CkmTensor,
    pub pam1: CkmTensor,
    pub pgm2: CkmTensor,
    pub pam2: CkmTensor,
    pub meta: SceneMeta,
    /// Gains pushed back into `[−250, −50]` dB.
    pub clamp_count: usize,
}

impl SceneMaps {
    /// `(pgm, pam)` of path 1 or 2.
    pub fn path(&self, path: usize) -> Result<(&CkmTensor, &CkmTensor)> {
        match path {
            1 => Ok((&self.pgm1, &self.pam1)),
            2 => Ok((&self.pgm2, &self.pam2)),
            p => Err(CkmError::invalid(format!("path must be 1 or 2, got {p}"))),
        }
    }

    /// Writes `pgm1.ckmt`, `pam1.ckmt`, `pgm2.ckmt`, `pam2.ckmt` and `meta.txt`.
    pub fn write_dir(&self, dir: &Path, extra_meta: &KvDoc) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CkmError::io(dir, e))?;
        for (name, t) in self.named() {
            write_tensor(t, dir.join(format!("{name}.ckmt")))?;
        }
        let mut meta = extra_meta.clone();
        for key in self.meta.to_kv().keys() {
            meta.set(key, self.meta.to_kv().get(key).unwrap_or_default());
        }
        meta.set("pixel_spacing_m", self.pgm1.pixel_spacing_m());
        meta.set("clamp_count", self.clamp_count);
        let path = dir.join("meta.txt");
        std::fs::write(&path, meta.to_text()).map_err(|e| CkmError::io(path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| CkmError::io(&path, e))?;
        let doc = KvDoc::parse(&text)?;
        let meta = SceneMeta::from_kv(&doc)?;
        let load = |name: &str, kind: ChannelKind| -> Result<CkmTensor> {
            let t = read_tensor(dir.join(format!("{name}.ckmt")))?;
            if t.channels() != [kind] {
                return Err(CkmError::format(
                    16,
                    format!("{name}.ckmt must hold one {} channel", kind.name()),
                ));
            }
            Ok(t)
        };
        let maps = Self {
            pgm1: load("pgm1", ChannelKind::GainDb)?,
            pam1: load("pam1", ChannelKind::AngleDeg)?,
            pgm2: load("pgm2", ChannelKind::GainDb)?,
            pam2: load("pam2", ChannelKind::AngleDeg)?,
            meta,
            clamp_count: doc.parse_value("clamp_count")?.unwrap_or(0),
        };
        let first = &maps.pgm1;
        if maps.named().iter().any(|(_, t)| !t.same_grid(first)) {
            return Err(CkmError::invalid(format!(
                "{}: maps differ in grid",
                dir.display()
            )));
        }
        Ok(maps)
    }

    pub fn named(&self) -> [(&'static str, &CkmTensor); 4] {
        [
            ("pgm1", &self.pgm1),
            ("pam1", &self.pam1),
            ("pgm2", &self.pgm2),
            ("pam2", &self.pam2),
        ]
    }

    /// The scene reflected across the horizontal and/or vertical centre line.
    ///
    /// Both reflections map a valid scene to a valid scene: gains are
    /// unchanged, a column flip sends `θ` to `180° − θ`, a row flip leaves
    /// angles alone.
    pub fn mirrored(&self, flip_rows: bool, flip_cols: bool) -> Result<Self> {
        let (w, h) = (self.pgm1.width(), self.pgm1.height());
        let mirror = |t: &CkmTensor| -> Result<CkmTensor> {
            let planes = t
                .planes()
                .into_iter()
                .map(|(kind, plane)| {
                    let mut out = Vec::with_capacity(plane.len());
                    for r in 0..h {
                        let sr = if flip_rows { h - 1 - r } else { r };
                        for c in 0..w {
                            let sc = if flip_cols { w - 1 - c } else { c };
                            let v = plane[sr * w + sc];
                            let angle =
                                kind == ChannelKind::AngleDeg && !is_angle_sentinel(v as f64);
                            out.push(if angle && flip_cols { 180.0 - v } else { v });
                        }
                    }
                    (kind, out)
                })
                .collect();
            CkmTensor::from_planes(w, h, planes, t.pixel_spacing_m())
        };
        let bs_pixel = self.meta.bs_pixel.map(|(r, c)| {
            (
                if flip_rows { h - 1 - r } else { r },
                if flip_cols { w - 1 - c } else { c },
            )
        });
        Ok(Self {
            pgm1: mirror(&self.pgm1)?,
            pam1: mirror(&self.pam1)?,
            pgm2: mirror(&self.pgm2)?,
            pam2: mirror(&self.pam2)?,
            meta: SceneMeta {
                bs_pixel,
                ..self.meta
            },
            clamp_count: self.clamp_count,
        })
    }
}

/// `atan2` direction of `to − from`, folded into `[0°, 180°]` about the array axis.
pub fn arrival_angle_deg(from: (f64, f64), to: (f64, f64)) -> f64 {
    (to.1 - from.1).atan2(to.0 - from.0).to_degrees().abs()
}

/// A reflecting segment on the line `axis = c`, spanning `[lo, hi]` along the
/// other axis. Both endpoints of a valid bounce lie on the `side` of the line.
#[derive(Debug, Clone, Copy)]
struct Face {
    vertical: bool,
    c: f64,
    lo: f64,
    hi: f64,
    side: f64,
    owner: Option<usize>,
}

fn faces(spec: &SceneSpec) -> Vec<Face> {
    let (bx0, by0, bx1, by1) = spec.bounds();
    let mut out = vec![
        Face {
            vertical: true,
            c: bx0,
            lo: by0,
            hi: by1,
            side: 1.0,
            owner: None,
        },
        Face {
            vertical: true,
            c: bx1,
            lo: by0,
            hi: by1,
            side: -1.0,
            owner: None,
        },
        Face {
            vertical: false,
            c: by0,
            lo: bx0,
            hi: bx1,
            side: 1.0,
            owner: None,
        },
        Face {
            vertical: false,
            c: by1,
            lo: bx0,
            hi: bx1,
            side: -1.0,
            owner: None,
        },
    ];
    for (i, o) in spec.obstacles.iter().enumerate() {
        let owner = Some(i);
        out.push(Face {
            vertical: true,
            c: o.x0,
            lo: o.y0,
            hi: o.y1,
            side: -1.0,
            owner,
        });
        out.push(Face {
            vertical: true,
            c: o.x1,
            lo: o.y0,
            hi: o.y1,
            side: 1.0,
            owner,
        });
        out.push(Face {
            vertical: false,
            c: o.y0,
            lo: o.x0,
            hi: o.x1,
            side: -1.0,
            owner,
        });
        out.push(Face {
            vertical: false,
            c: o.y1,
            lo: o.x0,
            hi: o.x1,
            side: 1.0,
            owner,
        });
    }
    out
}

/// A single-bounce path: the image of the BS, the reflection point, and
/// the 2D unfolded length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounce {
    pub image: (f64, f64),
    pub point: (f64, f64),
    pub length_2d: f64,
    pub blockers: usize,
}

fn bounce(spec: &SceneSpec, f: &Face, bs: (f64, f64), ue: (f64, f64)) -> Option<Bounce> {
    // (coordinate across the face line, coordinate along it)
    let split = |p: (f64, f64)| if f.vertical { (p.0, p.1) } else { (p.1, p.0) };
    let (ba, bc) = split(bs);
    let (ua, uc) = split(ue);
    if (ba - f.c) * f.side <= 0.0 || (ua - f.c) * f.side <= 0.0 {
        return None;
    }
    let ia = 2.0 * f.c - ba;
    let t = (f.c - ia) / (ua - ia);
    let rc = bc + t * (uc - bc);
    if rc < f.lo || rc > f.hi {
        return None;
    }
    let unmap = |a: f64, c: f64| if f.vertical { (a, c) } else { (c, a) };
    let image = unmap(ia, bc);
    let point = unmap(f.c, rc);
    let blockers = spec
        .obstacles
        .iter()
        .enumerate()
        .filter(|&(i, o)| {
            Some(i) != f.owner && (o.crossed_by(bs, point) || o.crossed_by(point, ue))
        })
        .count();
    let length_2d = ((ue.0 - image.0).powi(2) + (ue.1 - image.1).powi(2)).sqrt();
    Some(Bounce {
        image,
        point,
        length_2d,
        blockers,
    })
}

/// Strongest single bounce reaching `ue`, with its gain in dB (before clamping).
pub fn strongest_bounce(spec: &SceneSpec, ue: (f64, f64)) -> Result<Option<(Bounce, f64)>> {
    let dh = spec.bs_height_m - spec.ue_height_m;
    let mut best: Option<(Bounce, f64)> = None;
    for f in faces(spec) {
        let Some(b) = bounce(spec, &f, spec.bs_pos_m, ue) else {
            continue;
        };
        let d3 = (b.length_2d.powi(2) + dh * dh).sqrt();
        let g = friis_gain_db(d3, spec.carrier_hz)?
            - spec.reflection_loss_db
            - spec.blockage_db * b.blockers as f64;
        if best.is_none_or(|(_, bg)| g > bg) {
            best = Some((b, g));
        }
    }
    Ok(best)
}

fn clamp_gain(g: f64, count: &mut usize) -> f64 {
    if g < GAIN_MIN_DB || g > GAIN_MAX_DB {
        *count += 1;
    }
    g.clamp(GAIN_MIN_DB, GAIN_MAX_DB)
}

/// Renders both paths over the grid. Deterministic in `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneMaps> {
    spec.validate()?;
    let (w, h, s) = (spec.width, spec.height, spec.pixel_spacing_m);
    let bs = spec.bs_pos_m;
    let dh = spec.bs_height_m - spec.ue_height_m;
    let mut planes = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    let mut clamps = 0;
    for row in 0..h {
        for col in 0..w {
            let ue = (col as f64 * s, row as f64 * s);
            if spec.obstacles.iter().any(|o| o.contains(ue.0, ue.1)) {
                planes[0].push(GAIN_SENTINEL_DB);
                planes[1].push(ANGLE_SENTINEL_DEG);
                planes[2].push(GAIN_SENTINEL_DB);
                planes[3].push(ANGLE_SENTINEL_DEG);
                continue;
            }
            let d2 = ((ue.0 - bs.0).powi(2) + (ue.1 - bs.1).powi(2)).sqrt();
            let d3 = (d2 * d2 + dh * dh).sqrt().max(1e-3);
            let blocked = spec
                .obstacles
                .iter()
                .filter(|o| o.crossed_by(bs, ue))
                .count();
            let g1 = friis_gain_db(d3, spec.carrier_hz)? - spec.blockage_db * blocked as f64;
            planes[0].push(clamp_gain(g1, &mut clamps));
            planes[1].push(if d2 == 0.0 {
                90.0
            } else {
                arrival_angle_deg(bs, ue)
            });
            match strongest_bounce(spec, ue)? {
                Some((b, g2)) => {
                    planes[2].push(clamp_gain(g2, &mut clamps));
                    planes[3].push(arrival_angle_deg(bs, b.point));
                }
                None => {
                    planes[2].push(GAIN_SENTINEL_DB);
                    planes[3].push(ANGLE_SENTINEL_DEG);
                }
            }
        }
    }
    let mk =
        |kind, v: &[f64]| CkmTensor::single(w, h, kind, v.iter().map(|&x| x as f32).collect(), s);
    Ok(SceneMaps {
        pgm1: mk(ChannelKind::GainDb, &planes[0])?,
        pam1: mk(ChannelKind::AngleDeg, &planes[1])?,
        pgm2: mk(ChannelKind::GainDb, &planes[2])?,
        pam2: mk(ChannelKind::AngleDeg, &planes[3])?,
        meta: spec.meta(),
        clamp_count: clamps,
    })
}

/// Distribution of random scenes for desk-scale datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFamily {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing_m: f64,
    pub carrier_hz: f64,
    pub bs_height_m: (f64, f64),
    pub ue_height_m: f64,
    pub n_obstacles: (usize, usize),
    /// Obstacle side length range, in pixels.
    pub obstacle_px: (usize, usize),
    pub obstacle_height_m: (f64, f64),
    pub reflection_loss_db: f64,
    pub blockage_db: f64,
    /// BS pixels are multiples of this lattice step, so a matching sampling
    /// stride always observes the BS.
    pub bs_lattice: usize,
}

impl Default for SceneFamily {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            pixel_spacing_m: 2.0,
            carrier_hz: 28e9,
            bs_height_m: (20.0, 30.0),
            ue_height_m: 1.5,
            n_obstacles: (2, 5),
            obstacle_px: (4, 14),
            obstacle_height_m: (10.0, 40.0),
            reflection_loss_db: 6.0,
            blockage_db: 25.0,
            bs_lattice: 2,
        }
    }
}

impl SceneFamily {
    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::default();
        d.set("width", self.width);
        d.set("height", self.height);
        d.set("pixel_spacing_m", self.pixel_spacing_m);
        d.set("carrier_hz", self.carrier_hz);
        d.set("bs_height_min", self.bs_height_m.0);
        d.set("bs_height_max", self.bs_height_m.1);
        d.set("ue_height", self.ue_height_m);
        d.set("obstacles_min", self.n_obstacles.0);
        d.set("obstacles_max", self.n_obstacles.1);
        d.set("obstacle_px_min", self.obstacle_px.0);
        d.set("obstacle_px_max", self.obstacle_px.1);
        d.set("obstacle_height_min", self.obstacle_height_m.0);
        d.set("obstacle_height_max", self.obstacle_height_m.1);
        d.set("reflection_loss_db", self.reflection_loss_db);
        d.set("blockage_db", self.blockage_db);
        d.set("bs_lattice", self.bs_lattice);
        d
    }

    /// Reads a family; absent keys keep their defaults.
    pub fn from_kv(d: &KvDoc) -> Result<Self> {
        let mut f = Self::default();
        macro_rules! opt {
            ($field:expr, $key:literal) => {
                if let Some(v) = d.parse_value($key)? {
                    $field = v;
                }
            };
        }
        opt!(f.width, "width");
        opt!(f.height, "height");
        opt!(f.pixel_spacing_m, "pixel_spacing_m");
        opt!(f.carrier_hz, "carrier_hz");
        opt!(f.bs_height_m.0, "bs_height_min");
        opt!(f.bs_height_m.1, "bs_height_max");
        opt!(f.ue_height_m, "ue_height");
        opt!(f.n_obstacles.0, "obstacles_min");
        opt!(f.n_obstacles.1, "obstacles_max");
        opt!(f.obstacle_px.0, "obstacle_px_min");
        opt!(f.obstacle_px.1, "obstacle_px_max");
        opt!(f.obstacle_height_m.0, "obstacle_height_min");
        opt!(f.obstacle_height_m.1, "obstacle_height_max");
        opt!(f.reflection_loss_db, "reflection_loss_db");
        opt!(f.blockage_db, "blockage_db");
        opt!(f.bs_lattice, "bs_lattice");
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width >= 8
            && self.height >= 8
            && self.bs_height_m.0 <= self.bs_height_m.1
            && self.n_obstacles.0 <= self.n_obstacles.1
            && 1 <= self.obstacle_px.0
            && self.obstacle_px.0 <= self.obstacle_px.1
            && self.obstacle_px.1 < self.width.min(self.height)
            && self.obstacle_height_m.0 <= self.obstacle_height_m.1
            && self.bs_lattice >= 1;
        if !ok {
            return Err(CkmError::invalid("scene family ranges are inconsistent"));
        }
        Ok(())
    }

    /// Draws one scene. Obstacles keep a one-pixel gap from each other and
    /// the BS sits on a lattice pixel outside every obstacle.
    pub fn sample(&self, seed: u64) -> Result<SceneSpec> {
        self.validate()?;
        let mut rng = rng_from_seed(seed);
        let s = self.pixel_spacing_m;
        let n = rng.random_range(self.n_obstacles.0..=self.n_obstacles.1);
        let mut boxes: Vec<(usize, usize, usize, usize)> = Vec::new();
        for _ in 0..n {
            for _attempt in 0..100 {
                let bh = rng.random_range(self.obstacle_px.0..=self.obstacle_px.1);
                let bw = rng.random_range(self.obstacle_px.0..=self.obstacle_px.1);
                let r0 = rng.random_range(0..=self.height - bh);
                let c0 = rng.random_range(0..=self.width - bw);
                let (r1, c1) = (r0 + bh - 1, c0 + bw - 1);
                let clear = boxes.iter().all(|&(a0, b0, a1, b1)| {
                    r1 + 2 <= a0 || a1 + 2 <= r0 || c1 + 2 <= b0 || b1 + 2 <= c0
                });
                if clear {
                    boxes.push((r0, c0, r1, c1));
                    break;
                }
            }
        }
        let obstacles: Vec<Obstacle> = boxes
            .iter()
            .map(|&(r0, c0, r1, c1)| {
                let h = rng.random_range(self.obstacle_height_m.0..=self.obstacle_height_m.1);
                Obstacle::from_pixels(r0, c0, r1, c1, s, h)
            })
            .collect();
        let lat = self.bs_lattice;
        let free: Vec<(usize, usize)> = (0..self.height)
            .step_by(lat)
            .flat_map(|r| (0..self.width).step_by(lat).map(move |c| (r, c)))
            .filter(|&(r, c)| {
                !boxes.iter().any(|&(r0, c0, r1, c1)| {
                    r + 1 >= r0 && r <= r1 + 1 && c + 1 >= c0 && c <= c1 + 1
                })
            })
            .collect();
        if free.is_empty() {
            return Err(CkmError::invalid("obstacles leave no free BS position"));
        }
        let (br, bc) = free[rng.random_range(0..free.len())];
        let spec = SceneSpec {
            width: self.width,
            height: self.height,
            pixel_spacing_m: s,
            carrier_hz: self.carrier_hz,
            bs_pos_m: (bc as f64 * s, br as f64 * s),
            bs_height_m: rng.random_range(self.bs_height_m.0..=self.bs_height_m.1),
            ue_height_m: self.ue_height_m,
            obstacles,
            reflection_loss_db: self.reflection_loss_db,
            blockage_db: self.blockage_db,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}
