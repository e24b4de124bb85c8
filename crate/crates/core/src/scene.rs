//! Synthetic lane-based street scenes around a roadside unit.

use crate::error::{Error, Result};
use crate::features::{GridSpec, NormBounds};
use crate::format::{self, expect_magic};
use crate::geometry::{footprints_overlap, Aabb, OrientedBox, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::{Read, Write};

pub const SCENE_MAGIC: &[u8; 4] = b"BGSC";
pub const SCENE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    /// Center in RSU coordinates; `center.z` is always `height / 2`.
    pub center: Vec3,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Heading in `[0, 2π)`, measured from +X_R toward +Y_R.
    pub azimuth: f64,
    pub is_ms: bool,
}

impl Vehicle {
    pub fn new(x: f64, y: f64, length: f64, width: f64, height: f64, azimuth: f64) -> Self {
        Self {
            center: Vec3::new(x, y, height / 2.0),
            length,
            width,
            height,
            azimuth: wrap_angle(azimuth),
            is_ms: false,
        }
    }

    pub fn with_ms(mut self, is_ms: bool) -> Self {
        self.is_ms = is_ms;
        self
    }

    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.center, self.length, self.width, self.height, self.azimuth)
    }

    pub fn roof_center(&self) -> Vec3 {
        self.center + Vec3::new(0.0, 0.0, self.height / 2.0)
    }

    /// Unit heading vector on the ground plane.
    pub fn heading(&self) -> Vec3 {
        let (s, c) = self.azimuth.sin_cos();
        Vec3::new(c, s, 0.0)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub vehicles: Vec<Vehicle>,
    pub rsu_position: Vec3,
    pub coverage: Aabb,
    pub frame_id: u64,
    pub rng_seed: u64,
}

impl Scene {
    pub fn ms_index(&self) -> Option<usize> {
        self.vehicles.iter().position(|v| v.is_ms)
    }

    pub fn ms(&self) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.is_ms)
    }

    /// Boxes of every vehicle except the mobile station.
    pub fn obstacles(&self) -> impl Iterator<Item = (usize, OrientedBox)> + '_ {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_ms)
            .map(|(i, v)| (i, v.bbox()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Car,
    Truck,
    Bus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionRange {
    pub length: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDimensions {
    pub car: DimensionRange,
    pub truck: DimensionRange,
    pub bus: DimensionRange,
}

impl Default for ClassDimensions {
    fn default() -> Self {
        Self {
            car: DimensionRange { length: [3.8, 4.9], width: [1.7, 1.9], height: [1.4, 1.7] },
            truck: DimensionRange { length: [6.0, 9.0], width: [2.2, 2.5], height: [3.0, 3.8] },
            bus: DimensionRange { length: [10.0, 12.0], width: [2.5, 2.6], height: [3.0, 3.5] },
        }
    }
}

impl ClassDimensions {
    pub fn range(&self, class: VehicleClass) -> &DimensionRange {
        match class {
            VehicleClass::Car => &self.car,
            VehicleClass::Truck => &self.truck,
            VehicleClass::Bus => &self.bus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsSelection {
    /// Car whose ground-plane center is nearest the coverage center.
    #[default]
    NearestCenter,
    /// Uniformly drawn car.
    Random,
}

/// Where the RSU pole stands relative to the coverage box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsuPlacement {
    /// Beside the road on the -X_R side, level with the coverage center.
    #[default]
    Side,
    /// On the road axis before the -Y_R end, looking down the lanes.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub lane_count: usize,
    pub lane_width: f64,
    pub vehicle_count_range: [usize; 2],
    pub dimensions: ClassDimensions,
    /// Probability that a generated vehicle is a tall class (truck or bus).
    pub blocker_density: f64,
    /// Share of tall vehicles that are buses.
    pub bus_share: f64,
    pub ms_selection: MsSelection,
    pub rsu_placement: RsuPlacement,
    /// RSU distance outside the coverage box.
    pub rsu_setback: f64,
    pub rsu_height: f64,
    pub heading_jitter: f64,
    pub lateral_jitter: f64,
    /// Minimum free space kept around every footprint.
    pub min_gap: f64,
    pub placement_attempts: usize,
    pub grid: GridSpec,
    pub bounds: NormBounds,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            lane_count: 6,
            lane_width: 3.5,
            vehicle_count_range: [6, 14],
            dimensions: ClassDimensions::default(),
            blocker_density: 0.3,
            bus_share: 0.3,
            ms_selection: MsSelection::NearestCenter,
            rsu_placement: RsuPlacement::Side,
            rsu_setback: 3.0,
            rsu_height: 4.0,
            heading_jitter: 0.05,
            lateral_jitter: 0.2,
            min_gap: 0.5,
            placement_attempts: 200,
            grid: GridSpec::default(),
            bounds: NormBounds::default(),
        }
    }
}

impl SceneConfig {
    pub fn coverage(&self) -> Aabb {
        self.grid.coverage()
    }

    pub fn rsu_position(&self) -> Vec3 {
        let c = self.coverage();
        match self.rsu_placement {
            RsuPlacement::Side => Vec3::new(c.min.x - self.rsu_setback, (c.min.y + c.max.y) / 2.0, self.rsu_height),
            RsuPlacement::End => Vec3::new((c.min.x + c.max.x) / 2.0, c.min.y - self.rsu_setback, self.rsu_height),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.lane_count == 0 || self.lane_width <= 0.0 {
            return bad("need at least one lane with positive width".into());
        }
        let [lo, hi] = self.vehicle_count_range;
        if lo == 0 || lo > hi {
            return bad(format!("vehicle_count_range {lo}..{hi} must be non-empty and start at 1"));
        }
        if !(0.0..=1.0).contains(&self.blocker_density) || !(0.0..=1.0).contains(&self.bus_share) {
            return bad("blocker_density and bus_share must lie in [0, 1]".into());
        }
        self.grid.validate()?;
        self.bounds.validate()?;
        let extent = self.coverage().extent();
        if self.lane_count as f64 * self.lane_width > extent.x {
            return bad(format!(
                "{} lanes of {} m do not fit in {} m of coverage",
                self.lane_count, self.lane_width, extent.x
            ));
        }
        for class in [VehicleClass::Car, VehicleClass::Truck, VehicleClass::Bus] {
            let r = self.dimensions.range(class);
            for (name, range, bound) in [
                ("length", r.length, self.bounds.l_max),
                ("width", r.width, self.bounds.w_max),
                ("height", r.height, self.bounds.h_max),
            ] {
                if !(range[0] > 0.0 && range[0] <= range[1]) {
                    return bad(format!("{class:?} {name} range {range:?} is empty"));
                }
                if range[1] > bound {
                    return bad(format!("{class:?} {name} max {} exceeds bound {bound}", range[1]));
                }
            }
            if r.length[1] >= extent.y {
                return bad(format!("{class:?} is longer than the coverage"));
            }
        }
        Ok(())
    }

    /// Lane center on X_R and the lane's nominal heading.
    fn lane(&self, index: usize) -> (f64, f64) {
        let c = self.coverage();
        let road = self.lane_count as f64 * self.lane_width;
        let x0 = (c.min.x + c.max.x) / 2.0 - road / 2.0;
        let x = x0 + (index as f64 + 0.5) * self.lane_width;
        let heading = if self.lane_count == 1 || index < self.lane_count / 2 {
            FRAC_PI_2
        } else {
            3.0 * FRAC_PI_2
        };
        (x, heading)
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Places vehicles on lanes without footprint overlap and marks one car as
/// the mobile station. Pure function of `(config, seed)`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coverage = config.coverage();
    let [lo, hi] = config.vehicle_count_range;
    let count = rng.random_range(lo..=hi);

    let mut vehicles: Vec<Vehicle> = Vec::with_capacity(count);
    let mut classes = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while vehicles.len() < count {
        // The first vehicle is always a car so a mobile station exists.
        let class = if vehicles.is_empty() || !rng.random_bool(config.blocker_density) {
            VehicleClass::Car
        } else if rng.random_bool(config.bus_share) {
            VehicleClass::Bus
        } else {
            VehicleClass::Truck
        };
        let dims = config.dimensions.range(class);
        let length = uniform(&mut rng, dims.length);
        let width = uniform(&mut rng, dims.width);
        let height = uniform(&mut rng, dims.height);
        let mut placed = false;
        for _ in 0..config.placement_attempts {
            attempts += 1;
            let (lane_x, lane_heading) = config.lane(rng.random_range(0..config.lane_count));
            let x = lane_x + uniform(&mut rng, [-config.lateral_jitter, config.lateral_jitter]);
            let y = uniform(&mut rng, [coverage.min.y + length / 2.0, coverage.max.y - length / 2.0]);
            let azimuth = lane_heading + uniform(&mut rng, [-config.heading_jitter, config.heading_jitter]);
            let candidate = Vehicle::new(x, y, length, width, height, azimuth);
            if !coverage.contains(candidate.center) {
                continue;
            }
            let bbox = candidate.bbox();
            if vehicles.iter().any(|v| footprints_overlap(&v.bbox(), &bbox, config.min_gap / 2.0)) {
                continue;
            }
            vehicles.push(candidate);
            classes.push(class);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::PlacementFailure { requested: count, attempts });
        }
    }

    let cars: Vec<usize> = (0..vehicles.len()).filter(|&i| classes[i] == VehicleClass::Car).collect();
    let ms = match config.ms_selection {
        MsSelection::Random => cars[rng.random_range(0..cars.len())],
        MsSelection::NearestCenter => {
            let c = coverage.center();
            let dist = |i: usize| {
                let p = vehicles[i].center;
                (p.x - c.x).hypot(p.y - c.y)
            };
            cars.iter()
                .copied()
                .min_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)))
                .expect("first vehicle is a car")
        }
    };
    vehicles[ms].is_ms = true;

    Ok(Scene {
        vehicles,
        rsu_position: config.rsu_position(),
        coverage,
        frame_id: 0,
        rng_seed: seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    #[default]
    AllVehicles,
    MsOnly,
}

/// Adds independent `N(0, sigma_c²)` noise to the X_R and Y_R center
/// coordinates of every vehicle.
pub fn perturb_locations(scene: &Scene, sigma_c: f64, seed: u64) -> Scene {
    perturb_locations_with(scene, sigma_c, seed, PerturbTarget::AllVehicles)
}

pub fn perturb_locations_with(scene: &Scene, sigma_c: f64, seed: u64, target: PerturbTarget) -> Scene {
    assert!(sigma_c >= 0.0, "sigma_c must be non-negative");
    let mut out = scene.clone();
    if sigma_c == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma_c).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.vehicles {
        // Draw for every vehicle so the MS noise does not depend on the mode.
        let dx = normal.sample(&mut rng);
        let dy = normal.sample(&mut rng);
        if target == PerturbTarget::AllVehicles || v.is_ms {
            v.center.x += dx;
            v.center.y += dy;
        }
    }
    out
}

/// Moves every vehicle `step` meters along its heading per frame.
pub fn trajectory(scene: &Scene, frames: usize, step: f64) -> Vec<Scene> {
    (0..frames)
        .map(|k| {
            let mut s = scene.clone();
            s.frame_id = scene.frame_id + k as u64;
            for v in &mut s.vehicles {
                let h = v.heading();
                v.center.x += h.x * step * k as f64;
                v.center.y += h.y * step * k as f64;
            }
            s
        })
        .collect()
}

/// For each frame, the number of immediately following frames that keep the
/// same optimal beam pair, clipped to `clip`.
pub fn label_beam_coherence<F>(frames: &[Scene], mut optimal_pair: F, clip: usize) -> Result<Vec<usize>>
where
    F: FnMut(&Scene) -> Result<usize>,
{
    if frames.len() < 2 {
        return Err(Error::InsufficientFrames(frames.len()));
    }
    let best: Vec<usize> = frames.iter().map(&mut optimal_pair).collect::<Result<_>>()?;
    let mut labels = vec![0usize; best.len()];
    for i in (0..best.len().saturating_sub(1)).rev() {
        if best[i + 1] == best[i] {
            labels[i] = labels[i + 1] + 1;
        }
    }
    Ok(labels.into_iter().map(|l| l.min(clip)).collect())
}

/// Writes the `BGSC` stream header followed by one length-prefixed record
/// per scene.
pub fn write_scenes<W: Write>(w: &mut W, scenes: &[Scene]) -> Result<()> {
    w.write_all(SCENE_MAGIC)?;
    format::write_u16(w, SCENE_VERSION)?;
    format::write_u32(w, scenes.len() as u32)?;
    for scene in scenes {
        let mut rec = Vec::new();
        format::write_u64(&mut rec, scene.frame_id)?;
        format::write_u64(&mut rec, scene.rng_seed)?;
        for v in [scene.rsu_position, scene.coverage.min, scene.coverage.max] {
            for c in v.to_array() {
                format::write_f32(&mut rec, c as f32)?;
            }
        }
        format::write_u32(&mut rec, scene.vehicles.len() as u32)?;
        for v in &scene.vehicles {
            let fields = [
                v.center.x,
                v.center.y,
                v.center.z,
                v.length,
                v.width,
                v.height,
                v.azimuth,
                if v.is_ms { 1.0 } else { 0.0 },
            ];
            for f in fields {
                format::write_f32(&mut rec, f as f32)?;
            }
        }
        format::write_u32(w, rec.len() as u32)?;
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_scenes<R: Read>(r: &mut R) -> Result<Vec<Scene>> {
    expect_magic(r, SCENE_MAGIC, "BGSC scene stream")?;
    let version = format::read_u16(r)?;
    if version != SCENE_VERSION {
        return Err(Error::Format { what: "BGSC scene stream", detail: format!("unsupported version {version}") });
    }
    let count = format::read_u32(r)? as usize;
    let mut scenes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = format::read_u32(r)? as usize;
        let mut rec = vec![0u8; len];
        r.read_exact(&mut rec)?;
        let mut p = rec.as_slice();
        let frame_id = format::read_u64(&mut p)?;
        let rng_seed = format::read_u64(&mut p)?;
        let vec3 = |p: &mut &[u8]| -> Result<Vec3> {
            Ok(Vec3::new(
                format::read_f32(p)? as f64,
                format::read_f32(p)? as f64,
                format::read_f32(p)? as f64,
            ))
        };
        let rsu_position = vec3(&mut p)?;
        let coverage = Aabb { min: vec3(&mut p)?, max: vec3(&mut p)? };
        let n = format::read_u32(&mut p)? as usize;
        if p.len() != n * 32 {
            return Err(Error::Format {
                what: "BGSC scene stream",
                detail: format!("record declares {n} vehicles but holds {} bytes", p.len()),
            });
        }
        let mut vehicles = Vec::with_capacity(n);
        for _ in 0..n {
            let mut f = [0f64; 8];
            for slot in &mut f {
                *slot = format::read_f32(&mut p)? as f64;
            }
            vehicles.push(Vehicle {
                center: Vec3::new(f[0], f[1], f[2]),
                length: f[3],
                width: f[4],
                height: f[5],
                azimuth: f[6],
                is_ms: f[7] != 0.0,
            });
        }
        scenes.push(Scene { vehicles, rsu_position, coverage, frame_id, rng_seed });
    }
    Ok(scenes)
}

/// Angle of `v` on the ground plane, in `[0, 2π)`.
pub fn ground_azimuth(v: Vec3) -> f64 {
    wrap_angle(v.y.atan2(v.x))
}
