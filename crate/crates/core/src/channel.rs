//! Geometric mmWave channel between the RSU and the MS, DFT codebooks and
//! beam-pair gain tables.

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Vec3};
use crate::scene::Scene;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub element_count: usize,
    pub beams: Vec<Vec<Complex64>>,
}

impl Codebook {
    pub fn beam_count(&self) -> usize {
        self.beams.len()
    }
}

/// `n` beams; element `m` of beam `k` is `exp(j·2π·k·m/n)/√n`.
pub fn dft_codebook(n: usize) -> Codebook {
    assert!(n >= 1, "codebook needs at least one element");
    let scale = 1.0 / (n as f64).sqrt();
    let beams = (0..n)
        .map(|k| {
            (0..n)
                .map(|m| Complex64::from_polar(scale, 2.0 * PI * ((k * m) % n) as f64 / n as f64))
                .collect()
        })
        .collect();
    Codebook { element_count: n, beams }
}

/// Half-wavelength uniform linear array steering vector for a unit
/// direction `dir`; the spatial frequency is `dir · axis`.
pub fn steering_vector(n: usize, axis: Vec3, dir: Vec3) -> Vec<Complex64> {
    let s = dir.dot(axis);
    let scale = 1.0 / (n as f64).sqrt();
    (0..n).map(|m| Complex64::from_polar(scale, PI * m as f64 * s)).collect()
}

/// DFT beam index whose main lobe matches spatial frequency `s`.
pub fn nearest_dft_beam(n: usize, s: f64) -> usize {
    let k = (n as f64 * s / 2.0).round() as i64;
    k.rem_euclid(n as i64) as usize
}

/// Complex `n_rx x n_tx` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub n_rx: usize,
    pub n_tx: usize,
    pub data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn zeros(n_rx: usize, n_tx: usize) -> Self {
        Self { n_rx, n_tx, data: vec![Complex64::new(0.0, 0.0); n_rx * n_tx] }
    }

    pub fn get(&self, r: usize, t: usize) -> Complex64 {
        self.data[r * self.n_tx + t]
    }

    /// Adds `amplitude · a_rx · a_txᴴ`.
    pub fn add_path(&mut self, amplitude: Complex64, a_rx: &[Complex64], a_tx: &[Complex64]) {
        for (r, ar) in a_rx.iter().enumerate() {
            for (t, at) in a_tx.iter().enumerate() {
                self.data[r * self.n_tx + t] += amplitude * ar * at.conj();
            }
        }
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n_rx)
            .map(|r| self.data[r * self.n_tx..(r + 1) * self.n_tx].iter().zip(x).map(|(h, v)| h * v).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Linear power gain of pair `(i, j)` at `i * n_rx + j`.
    pub gains: Vec<f64>,
    pub los: bool,
    pub noise_power: f64,
}

impl GainMatrix {
    pub fn get(&self, tx: usize, rx: usize) -> f64 {
        self.gains[tx * self.n_rx + rx]
    }

    pub fn pair_count(&self) -> usize {
        self.gains.len()
    }

    pub fn max_gain(&self) -> f64 {
        self.gains.iter().copied().fold(0.0, f64::max)
    }

    /// Rounds every gain to `f32` precision, the on-disk resolution.
    pub fn quantized(&self) -> Self {
        Self {
            gains: self.gains.iter().map(|&g| g as f32 as f64).collect(),
            noise_power: self.noise_power as f32 as f64,
            ..self.clone()
        }
    }
}

/// `gains[i][j] = |w_rx_jᴴ · H · w_tx_i|²`.
pub fn beam_pair_gains(h: &ChannelMatrix, tx_cb: &Codebook, rx_cb: &Codebook) -> Result<GainMatrix> {
    if tx_cb.element_count != h.n_tx || rx_cb.element_count != h.n_rx {
        return Err(Error::DimensionMismatch(format!(
            "channel is {}x{} but codebooks have {} rx and {} tx elements",
            h.n_rx, h.n_tx, rx_cb.element_count, tx_cb.element_count
        )));
    }
    let mut gains = Vec::with_capacity(tx_cb.beam_count() * rx_cb.beam_count());
    for w_tx in &tx_cb.beams {
        let y = h.mul_vec(w_tx);
        for w_rx in &rx_cb.beams {
            let z: Complex64 = w_rx.iter().zip(&y).map(|(w, v)| w.conj() * v).sum();
            gains.push(z.norm_sqr());
        }
    }
    Ok(GainMatrix {
        n_tx: tx_cb.beam_count(),
        n_rx: rx_cb.beam_count(),
        gains,
        los: false,
        noise_power: 1.0,
    })
}

/// Flat index `i * n_rx + j` of the strongest pair; ties go to the lowest index.
pub fn optimal_pair(g: &GainMatrix) -> usize {
    assert!(!g.gains.is_empty(), "gain table is empty");
    let mut best = 0;
    for (i, &v) in g.gains.iter().enumerate() {
        if v > g.gains[best] {
            best = i;
        }
    }
    best
}

/// True iff the open segment `tx -> rx` misses every non-MS vehicle box.
pub fn is_los(scene: &Scene, tx: Vec3, rx: Vec3) -> bool {
    scene.obstacles().all(|(_, b)| !b.blocks_segment(tx, rx))
}

fn segment_clear(scene: &Scene, a: Vec3, b: Vec3, skip: usize) -> bool {
    scene.obstacles().filter(|&(i, _)| i != skip).all(|(_, bx)| !bx.blocks_segment(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Amplitude factor applied to every first-order reflection.
    pub reflection_coeff: f64,
    /// Keep at most this many reflections (shortest first); 0 keeps all.
    pub max_reflections: usize,
    /// Noise is set so a perfectly aligned free-space link at
    /// `reference_distance` sees `reference_snr_db`.
    pub reference_distance: f64,
    pub reference_snr_db: f64,
    /// Global amplitude multiplier on every path.
    pub amplitude_scale: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            wavelength: 299_792_458.0 / 28e9,
            reflection_coeff: 0.3,
            max_reflections: 0,
            reference_distance: 30.0,
            reference_snr_db: 10.0,
            amplitude_scale: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn free_space_amplitude(&self, distance: f64) -> f64 {
        self.amplitude_scale * self.wavelength / (4.0 * PI * distance)
    }

    pub fn noise_power(&self) -> f64 {
        let a = self.free_space_amplitude(self.reference_distance);
        a * a / 10f64.powf(self.reference_snr_db / 10.0)
    }

    fn path_gain(&self, distance: f64, coeff: f64) -> Complex64 {
        Complex64::from_polar(coeff * self.free_space_amplitude(distance), -2.0 * PI * distance / self.wavelength)
    }
}

/// Antenna arrays at both ends of the link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayPair {
    pub n_tx: usize,
    pub tx_axis: Vec3,
    pub n_rx: usize,
    pub rx_axis: Vec3,
}

impl ArrayPair {
    /// RSU array horizontal and broadside to the coverage center (+Y_R for
    /// a pole on the -X_R side), MS array along its heading.
    pub fn for_scene(scene: &Scene, n_tx: usize, n_rx: usize) -> Result<Self> {
        let ms = scene.ms().ok_or(Error::NoMs)?;
        Ok(Self { n_tx, tx_axis: rsu_array_axis(scene), n_rx, rx_axis: ms.heading() })
    }
}

pub fn rsu_array_axis(scene: &Scene) -> Vec3 {
    let d = scene.coverage.center() - scene.rsu_position;
    let h = Vec3::new(-d.y, d.x, 0.0);
    if h.norm() < 1e-12 {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        h.normalized()
    }
}

/// One propagation path: departure direction at the RSU, arrival direction
/// at the MS (pointing back toward the last interaction), total length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub departure: Vec3,
    pub arrival: Vec3,
    pub length: f64,
    pub coeff: f64,
}

/// RSU antenna and MS antenna (the MS roof center).
pub fn link_endpoints(scene: &Scene) -> Result<(Vec3, Vec3)> {
    let ms = scene.ms().ok_or(Error::NoMs)?;
    Ok((scene.rsu_position, ms.roof_center()))
}

/// Specular bounce points off the vertical faces of `b`, or none.
fn face_reflections(b: &OrientedBox, tx: Vec3, rx: Vec3) -> Vec<Vec3> {
    let (u, v) = b.axes();
    let faces = [(u, b.half.x, v, b.half.y), (-u, b.half.x, v, b.half.y), (v, b.half.y, u, b.half.x), (-v, b.half.y, u, b.half.x)];
    let mut out = Vec::new();
    for (n, offset, tangent, half_t) in faces {
        let c = b.center + n * offset;
        let dt = (tx - c).dot(n);
        let dr = (rx - c).dot(n);
        if dt <= 0.0 || dr <= 0.0 {
            continue;
        }
        let mirrored = rx - n * (2.0 * dr);
        let t = dt / (dt + dr);
        let p = tx + (mirrored - tx) * t;
        let rel = p - c;
        if rel.dot(tangent).abs() <= half_t && rel.z.abs() <= b.half.z {
            out.push(p);
        }
    }
    out
}

/// LOS path (if unblocked) plus first-order specular reflections off the
/// vertical faces of non-MS vehicles with both legs unblocked.
pub fn propagation_paths(scene: &Scene, params: &ChannelParams) -> Result<Vec<Path>> {
    let (tx, rx) = link_endpoints(scene)?;
    let mut paths = Vec::new();
    if is_los(scene, tx, rx) {
        let d = rx - tx;
        paths.push(Path { departure: d.normalized(), arrival: (-d).normalized(), length: d.norm(), coeff: 1.0 });
    }
    let mut reflections = Vec::new();
    for (i, b) in scene.obstacles() {
        for p in face_reflections(&b, tx, rx) {
            if segment_clear(scene, tx, p, i) && segment_clear(scene, p, rx, i) {
                let d1 = p - tx;
                let d2 = p - rx;
                reflections.push(Path {
                    departure: d1.normalized(),
                    arrival: d2.normalized(),
                    length: d1.norm() + d2.norm(),
                    coeff: params.reflection_coeff,
                });
            }
        }
    }
    reflections.sort_by(|a, b| a.length.total_cmp(&b.length));
    if params.max_reflections > 0 {
        reflections.truncate(params.max_reflections);
    }
    paths.extend(reflections);
    Ok(paths)
}

/// Sum of path contributions `α · a_rx(arrival) · a_tx(departure)ᴴ`.
pub fn channel_from_paths(paths: &[Path], arrays: &ArrayPair, params: &ChannelParams) -> ChannelMatrix {
    let mut h = ChannelMatrix::zeros(arrays.n_rx, arrays.n_tx);
    for p in paths {
        let a_tx = steering_vector(arrays.n_tx, arrays.tx_axis, p.departure);
        let a_rx = steering_vector(arrays.n_rx, arrays.rx_axis, p.arrival);
        h.add_path(params.path_gain(p.length, p.coeff), &a_rx, &a_tx);
    }
    h
}

pub fn geometric_channel(scene: &Scene, arrays: &ArrayPair, params: &ChannelParams) -> Result<ChannelMatrix> {
    let paths = propagation_paths(scene, params)?;
    if paths.is_empty() {
        return Err(Error::NoPath);
    }
    Ok(channel_from_paths(&paths, arrays, params))
}

/// Beam codebook sizes and channel parameters for one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub params: ChannelParams,
}

impl Default for LinkConfig {
    /// 73 RSU beams x 5 MS beams = 365 pairs.
    fn default() -> Self {
        Self { n_tx: 73, n_rx: 5, params: ChannelParams::default() }
    }
}

impl LinkConfig {
    pub fn pair_count(&self) -> usize {
        self.n_tx * self.n_rx
    }
}

/// Codebooks are built once and reused per scene.
#[derive(Debug, Clone)]
pub struct Link {
    pub config: LinkConfig,
    pub tx_codebook: Codebook,
    pub rx_codebook: Codebook,
}

impl Link {
    pub fn new(config: LinkConfig) -> Self {
        Self { config, tx_codebook: dft_codebook(config.n_tx), rx_codebook: dft_codebook(config.n_rx) }
    }

    /// Gain table with LOS flag and noise power for one scene.
    pub fn evaluate(&self, scene: &Scene) -> Result<GainMatrix> {
        let arrays = ArrayPair::for_scene(scene, self.config.n_tx, self.config.n_rx)?;
        let (tx, rx) = link_endpoints(scene)?;
        let h = geometric_channel(scene, &arrays, &self.config.params)?;
        let mut g = beam_pair_gains(&h, &self.tx_codebook, &self.rx_codebook)?;
        g.los = is_los(scene, tx, rx);
        g.noise_power = self.config.params.noise_power();
        Ok(g)
    }

    pub fn optimal_pair(&self, scene: &Scene) -> Result<usize> {
        Ok(optimal_pair(&self.evaluate(scene)?))
    }
}
