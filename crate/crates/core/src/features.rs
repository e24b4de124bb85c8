//! Vehicle distribution feature (VDF) and LIDAR point-cloud feature (PCF).

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::scene::Scene;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::TAU;

/// Number of entries in one VDF row.
pub const VDF_ROW: usize = 7;

/// 3D partition of the RSU coverage box. Pitch is `(W_G, L_G, H_G)` along
/// `(X_R, Y_R, Z_R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub pitch: [f64; 3],
    pub origin: Vec3,
}

impl Default for GridSpec {
    /// 14 x 6 x 6 grids of 2 m x 6 m x 1 m.
    fn default() -> Self {
        Self { dims: [14, 6, 6], pitch: [2.0, 6.0, 1.0], origin: Vec3::ZERO }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.pitch.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Config(format!(
                "grid dims {:?} must be >= 1 and pitch {:?} > 0",
                self.dims, self.pitch
            )));
        }
        Ok(())
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::new(
            self.dims[0] as f64 * self.pitch[0],
            self.dims[1] as f64 * self.pitch[1],
            self.dims[2] as f64 * self.pitch[2],
        )
    }

    pub fn coverage(&self) -> Aabb {
        Aabb { min: self.origin, max: self.origin + self.extent() }
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn flat(&self, g: [usize; 3]) -> usize {
        (g[0] * self.dims[1] + g[1]) * self.dims[2] + g[2]
    }
}

/// Maximum vehicle width, length and height used to normalize VDF rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub w_max: f64,
    pub l_max: f64,
    pub h_max: f64,
}

impl Default for NormBounds {
    fn default() -> Self {
        Self { w_max: 3.0, l_max: 12.0, h_max: 4.0 }
    }
}

impl NormBounds {
    pub fn validate(&self) -> Result<()> {
        if [self.w_max, self.l_max, self.h_max].iter().all(|&b| b > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("normalization bounds {self:?} must be positive")))
        }
    }
}

/// Half-open cell lookup shared by the VDF grid and the PCF voxels.
///
/// The floor estimate is nudged so that membership agrees exactly with the
/// cell vertex `origin + index * pitch`.
fn cell_of(p: [f64; 3], origin: [f64; 3], pitch: [f64; 3], dims: [usize; 3]) -> Option<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let rel = (p[a] - origin[a]) / pitch[a];
        if !rel.is_finite() {
            return None;
        }
        let mut g = rel.floor();
        if p[a] < origin[a] + g * pitch[a] {
            g -= 1.0;
        } else if p[a] >= origin[a] + (g + 1.0) * pitch[a] {
            g += 1.0;
        }
        if g < 0.0 || g >= dims[a] as f64 {
            return None;
        }
        out[a] = g as usize;
    }
    Some(out)
}

/// Grid containing `center`, or `None` outside the coverage box. Cells are
/// half-open `[lo, hi)` on every axis.
pub fn grid_index(center: Vec3, spec: &GridSpec) -> Option<[usize; 3]> {
    cell_of(center.to_array(), spec.origin.to_array(), spec.pitch, spec.dims)
}

/// Minimum-corner vertex of grid `g`, the origin of its local frame.
pub fn lcs_origin(g: [usize; 3], spec: &GridSpec) -> Result<Vec3> {
    if (0..3).any(|a| g[a] >= spec.dims[a]) {
        return Err(Error::IndexOutOfRange { index: g, dims: spec.dims });
    }
    Ok(Vec3::new(
        spec.origin.x + g[0] as f64 * spec.pitch[0],
        spec.origin.y + g[1] as f64 * spec.pitch[1],
        spec.origin.z + g[2] as f64 * spec.pitch[2],
    ))
}

/// Dense `(G_X, G_Y, G_Z, 7)` tensor, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VdfTensor {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    /// Grids holding at least one vehicle center. Zero rows are legal
    /// occupied values, so occupancy is tracked separately.
    pub occupied: Vec<bool>,
}

impl VdfTensor {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let cells = dims.iter().product::<usize>();
        Self { dims, data: vec![0.0; cells * VDF_ROW], occupied: vec![false; cells] }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.dims[0], self.dims[1], self.dims[2], VDF_ROW]
    }

    fn flat(&self, g: [usize; 3]) -> usize {
        (g[0] * self.dims[1] + g[1]) * self.dims[2] + g[2]
    }

    pub fn row(&self, g: [usize; 3]) -> &[f64] {
        let i = self.flat(g) * VDF_ROW;
        &self.data[i..i + VDF_ROW]
    }

    pub fn is_occupied(&self, g: [usize; 3]) -> bool {
        self.occupied[self.flat(g)]
    }

    /// Channels-first copy `(7, G_X, G_Y, G_Z)`, the layout fed to 3D convolutions.
    pub fn to_channels_first(&self) -> Vec<f64> {
        let cells = self.occupied.len();
        let mut out = vec![0.0; cells * VDF_ROW];
        for cell in 0..cells {
            for ch in 0..VDF_ROW {
                out[ch * cells + cell] = self.data[cell * VDF_ROW + ch];
            }
        }
        out
    }
}

/// Per-vehicle values averaged inside a grid: center, width, length, height, azimuth.
type Member = [f64; 7];

fn canonical_sum(members: &mut [Member]) -> Member {
    // Summing in a canonical order makes the result independent of the
    // vehicle list order, bit for bit.
    members.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let mut acc = [0.0; 7];
    for m in members.iter() {
        for (a, v) in acc.iter_mut().zip(m) {
            *a += v;
        }
    }
    acc
}

/// Builds the corrected VDF. Row `g` of an occupied grid is
/// `[x_L/W_G, y_L/L_G, z_L/H_G, w/W_max, l/L_max, h/H_max, θ/2π]` of the
/// averaged vehicle, with the center expressed in the grid's local frame.
pub fn build_vdf(scene: &Scene, spec: &GridSpec, bounds: &NormBounds) -> Result<VdfTensor> {
    spec.validate()?;
    for (index, v) in scene.vehicles.iter().enumerate() {
        for (dimension, value, bound) in [
            ("width", v.width, bounds.w_max),
            ("length", v.length, bounds.l_max),
            ("height", v.height, bounds.h_max),
        ] {
            if value > bound {
                return Err(Error::BoundsViolation { index, dimension, value, bound });
            }
        }
    }

    let mut buckets: Vec<Vec<Member>> = vec![Vec::new(); spec.cell_count()];
    for v in &scene.vehicles {
        if let Some(g) = grid_index(v.center, spec) {
            buckets[spec.flat(g)].push([v.center.x, v.center.y, v.center.z, v.width, v.length, v.height, v.azimuth]);
        }
    }

    let mut vdf = VdfTensor::zeros(spec.dims);
    for gx in 0..spec.dims[0] {
        for gy in 0..spec.dims[1] {
            for gz in 0..spec.dims[2] {
                let g = [gx, gy, gz];
                let cell = spec.flat(g);
                let members = &mut buckets[cell];
                if members.is_empty() {
                    continue;
                }
                let n = members.len() as f64;
                let sum = canonical_sum(members);
                let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
                let o = lcs_origin(g, spec)?;
                let row = [
                    (mean[0] - o.x) / spec.pitch[0],
                    (mean[1] - o.y) / spec.pitch[1],
                    (mean[2] - o.z) / spec.pitch[2],
                    mean[3] / bounds.w_max,
                    mean[4] / bounds.l_max,
                    mean[5] / bounds.h_max,
                    mean[6] / TAU,
                ];
                vdf.data[cell * VDF_ROW..(cell + 1) * VDF_ROW].copy_from_slice(&row);
                vdf.occupied[cell] = true;
            }
        }
    }
    Ok(vdf)
}

/// MS side input: `[x, y]` normalized over the coverage box and `θ/2π`.
pub fn ms_location_vector(scene: &Scene, spec: &GridSpec) -> Result<Vec<f64>> {
    let ms = scene.ms().ok_or(Error::NoMs)?;
    let e = spec.extent();
    Ok(vec![
        (ms.center.x - spec.origin.x) / e.x,
        (ms.center.y - spec.origin.y) / e.y,
        ms.azimuth / TAU,
    ])
}

/// Flat situational-awareness input: the MS vector followed by up to
/// `max_vehicles` other vehicles (nearest first), zero padded.
pub fn situational_vector(scene: &Scene, spec: &GridSpec, bounds: &NormBounds, max_vehicles: usize) -> Result<Vec<f64>> {
    let mut out = ms_location_vector(scene, spec)?;
    let ms = scene.ms().ok_or(Error::NoMs)?.center;
    let e = spec.extent();
    let mut others: Vec<_> = scene.vehicles.iter().filter(|v| !v.is_ms).collect();
    others.sort_by(|a, b| {
        let da = (a.center - ms).norm();
        let db = (b.center - ms).norm();
        da.total_cmp(&db)
            .then(a.center.x.total_cmp(&b.center.x))
            .then(a.center.y.total_cmp(&b.center.y))
    });
    for slot in 0..max_vehicles {
        match others.get(slot) {
            Some(v) => out.extend([
                (v.center.x - spec.origin.x) / e.x,
                (v.center.y - spec.origin.y) / e.y,
                (v.center.z - spec.origin.z) / e.z,
                v.width / bounds.w_max,
                v.length / bounds.l_max,
                v.height / bounds.h_max,
                v.azimuth / TAU,
            ]),
            None => out.extend([0.0; VDF_ROW]),
        }
    }
    Ok(out)
}

pub fn situational_width(max_vehicles: usize) -> usize {
    3 + VDF_ROW * max_vehicles
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    /// Azimuth samples per revolution.
    pub rays_per_scan: usize,
    /// Elevation angles of the beam fan, radians.
    pub elevations: Vec<f64>,
    pub max_range: f64,
    /// Sensor height above the roof center.
    pub mount_height: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        let channels = 16;
        let (lo, hi) = (-25f64.to_radians(), 5f64.to_radians());
        Self {
            rays_per_scan: 360,
            elevations: (0..channels).map(|k| lo + (hi - lo) * k as f64 / (channels - 1) as f64).collect(),
            max_range: 60.0,
            mount_height: 1.0,
        }
    }
}

pub fn lidar_origin(scene: &Scene, config: &LidarConfig) -> Result<Vec3> {
    let ms = scene.ms().ok_or(Error::NoMs)?;
    Ok(ms.roof_center() + Vec3::new(0.0, 0.0, config.mount_height))
}

/// Casts the azimuth/elevation fan from above the MS roof and keeps the
/// nearest hit per ray on any other vehicle's box.
pub fn simulate_lidar(scene: &Scene, config: &LidarConfig) -> Result<Vec<Vec3>> {
    let origin = lidar_origin(scene, config)?;
    let boxes: Vec<_> = scene.obstacles().map(|(_, b)| b).collect();
    let mut points = Vec::new();
    if boxes.is_empty() {
        return Ok(points);
    }
    for &el in &config.elevations {
        let (se, ce) = el.sin_cos();
        for k in 0..config.rays_per_scan {
            let az = TAU * k as f64 / config.rays_per_scan as f64;
            let (sa, ca) = az.sin_cos();
            let dir = Vec3::new(ce * ca, ce * sa, se);
            let nearest = boxes
                .iter()
                .filter_map(|b| b.ray_hit(origin, dir))
                .filter(|&t| t <= config.max_range)
                .min_by(f64::total_cmp);
            if let Some(t) = nearest {
                points.push(origin + dir * t);
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcfMode {
    #[default]
    Binary,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcfSpec {
    pub voxel: [f64; 3],
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub mode: PcfMode,
}

impl PcfSpec {
    /// 0.1 m x 0.15 m x 0.5 m voxels, 256 x 256 x 12, centered on the
    /// coverage box of `grid`.
    pub fn centered_on(grid: &GridSpec) -> Self {
        let voxel = [0.1, 0.15, 0.5];
        let dims = [256, 256, 12];
        let half = Vec3::new(
            voxel[0] * dims[0] as f64 / 2.0,
            voxel[1] * dims[1] as f64 / 2.0,
            voxel[2] * dims[2] as f64 / 2.0,
        );
        Self { voxel, dims, origin: grid.coverage().center() - half, mode: PcfMode::Binary }
    }
}

impl Default for PcfSpec {
    fn default() -> Self {
        Self::centered_on(&GridSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcfGrid {
    pub dims: [usize; 3],
    pub data: Vec<u32>,
    /// Points that fell outside the voxel box.
    pub dropped: usize,
}

impl PcfGrid {
    pub fn get(&self, i: [usize; 3]) -> u32 {
        self.data[(i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]]
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }
}

pub fn voxelize_pcf(points: &[Vec3], spec: &PcfSpec) -> PcfGrid {
    let mut grid = PcfGrid { dims: spec.dims, data: vec![0; spec.dims.iter().product()], dropped: 0 };
    for p in points {
        match cell_of(p.to_array(), spec.origin.to_array(), spec.voxel, spec.dims) {
            Some(i) => {
                let cell = &mut grid.data[(i[0] * spec.dims[1] + i[1]) * spec.dims[2] + i[2]];
                match spec.mode {
                    PcfMode::Binary => *cell = 1,
                    PcfMode::Count => *cell += 1,
                }
            }
            None => grid.dropped += 1,
        }
    }
    grid
}
