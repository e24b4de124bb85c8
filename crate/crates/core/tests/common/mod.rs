#![allow(dead_code)]

use beamgrid::features::{GridSpec, NormBounds, VDF_ROW};
use beamgrid::geometry::Vec3;
use beamgrid::nn::{Gradients, LayerSpec, Network};
use beamgrid::scene::{Scene, Vehicle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

pub fn scene_with(vehicles: Vec<Vehicle>) -> Scene {
    Scene { vehicles, rsu_position: Vec3::new(-3.0, 18.0, 5.0), coverage: GridSpec::default().coverage(), frame_id: 0, rng_seed: 0 }
}

/// Random vehicles scattered over (and slightly beyond) the coverage box,
/// deliberately crowding a few grids.
pub fn crowded_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..40);
    let vehicles = (0..n)
        .map(|i| {
            let (x, y) = if i % 3 == 0 {
                (rng.random_range(4.0..8.0), rng.random_range(6.0..18.0))
            } else {
                (rng.random_range(-1.0..29.0), rng.random_range(-1.0..37.0))
            };
            Vehicle::new(x, y, rng.random_range(3.0..12.0), rng.random_range(1.5..3.0), rng.random_range(1.2..4.0), rng.random_range(0.0..TAU))
                .with_ms(i == 0)
        })
        .collect();
    scene_with(vehicles)
}

/// Independent per-grid evaluation: membership by direct vertex comparison,
/// members summed in lexicographic order of their raw values.
pub fn naive_vdf(scene: &Scene, spec: &GridSpec, b: &NormBounds) -> (Vec<f64>, Vec<bool>) {
    let [gx, gy, gz] = spec.dims;
    let mut data = vec![0.0; gx * gy * gz * VDF_ROW];
    let mut occ = vec![false; gx * gy * gz];
    for i in 0..gx {
        for j in 0..gy {
            for k in 0..gz {
                let lo = [
                    spec.origin.x + i as f64 * spec.pitch[0],
                    spec.origin.y + j as f64 * spec.pitch[1],
                    spec.origin.z + k as f64 * spec.pitch[2],
                ];
                let hi = [
                    spec.origin.x + (i + 1) as f64 * spec.pitch[0],
                    spec.origin.y + (j + 1) as f64 * spec.pitch[1],
                    spec.origin.z + (k + 1) as f64 * spec.pitch[2],
                ];
                let mut members: Vec<[f64; 7]> = scene
                    .vehicles
                    .iter()
                    .filter(|v| {
                        let c = [v.center.x, v.center.y, v.center.z];
                        (0..3).all(|a| c[a] >= lo[a] && c[a] < hi[a])
                    })
                    .map(|v| [v.center.x, v.center.y, v.center.z, v.width, v.length, v.height, v.azimuth])
                    .collect();
                if members.is_empty() {
                    continue;
                }
                members.sort_by(|p, q| p.partial_cmp(q).unwrap());
                let mut s = [0.0; 7];
                for m in &members {
                    for t in 0..7 {
                        s[t] += m[t];
                    }
                }
                let n = members.len() as f64;
                let m: Vec<f64> = s.iter().map(|v| v / n).collect();
                let cell = (i * gy + j) * gz + k;
                occ[cell] = true;
                let row = [
                    (m[0] - lo[0]) / spec.pitch[0],
                    (m[1] - lo[1]) / spec.pitch[1],
                    (m[2] - lo[2]) / spec.pitch[2],
                    m[3] / b.w_max,
                    m[4] / b.l_max,
                    m[5] / b.h_max,
                    m[6] / TAU,
                ];
                data[cell * VDF_ROW..(cell + 1) * VDF_ROW].copy_from_slice(&row);
            }
        }
    }
    (data, occ)
}

/// (kind, output width, kernel) for every parameterized layer.
pub type Row = (&'static str, usize, Option<[usize; 3]>);

pub fn table(net: &Network) -> Vec<Row> {
    net.parameterized_layers()
        .map(|l| match *l {
            LayerSpec::Conv3d { out_channels, kernel, .. } => ("conv3d", out_channels, Some(kernel)),
            LayerSpec::Fc { out_width, .. } => ("fc", out_width, None),
            _ => unreachable!(),
        })
        .collect()
}

pub fn vdban_golden() -> Vec<Row> {
    let conv: [(usize, [usize; 3]); 10] = [
        (6, [5, 5, 5]),
        (6, [5, 5, 5]),
        (8, [5, 5, 3]),
        (8, [5, 5, 3]),
        (16, [5, 3, 3]),
        (16, [5, 3, 3]),
        (32, [3, 3, 3]),
        (32, [3, 3, 3]),
        (64, [3, 3, 3]),
        (64, [3, 3, 3]),
    ];
    let mut rows: Vec<Row> = conv.iter().map(|&(f, k)| ("conv3d", f, Some(k))).collect();
    rows.extend([512, 256, 128, 64, 512, 1024, 365].iter().map(|&w| ("fc", w, None)));
    rows
}

pub fn randomize(net: &mut Network, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params.iter_mut().flatten() {
        p.weight.iter_mut().chain(p.bias.iter_mut()).for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Zero-padded "same" convolution, one loop per index.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(x: &[f64], ci: usize, d: [usize; 3], co: usize, k: [usize; 3], w: &[f64], b: &[f64]) -> Vec<f64> {
    let vol = d[0] * d[1] * d[2];
    let mut out = vec![0.0; co * vol];
    for o in 0..co {
        for px in 0..d[0] {
            for py in 0..d[1] {
                for pz in 0..d[2] {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for i in 0..k[0] {
                            for j in 0..k[1] {
                                for l in 0..k[2] {
                                    let ix = px as i64 + i as i64 - (k[0] / 2) as i64;
                                    let iy = py as i64 + j as i64 - (k[1] / 2) as i64;
                                    let iz = pz as i64 + l as i64 - (k[2] / 2) as i64;
                                    if ix < 0 || iy < 0 || iz < 0 || ix >= d[0] as i64 || iy >= d[1] as i64 || iz >= d[2] as i64 {
                                        continue;
                                    }
                                    let xv = x[c * vol + (ix as usize * d[1] + iy as usize) * d[2] + iz as usize];
                                    acc += w[(((o * ci + c) * k[0] + i) * k[1] + j) * k[2] + l] * xv;
                                }
                            }
                        }
                    }
                    out[o * vol + (px * d[1] + py) * d[2] + pz] = acc;
                }
            }
        }
    }
    out
}

pub fn param_mut(net: &mut Network, k: usize, which: usize, i: usize) -> &mut f64 {
    let q = net.params[k].as_mut().unwrap();
    if which == 0 {
        &mut q.weight[i]
    } else {
        &mut q.bias[i]
    }
}

/// Worst relative error between every analytic parameter gradient and its
/// central difference at eps = 1e-3.
pub fn gradient_error(net: &mut Network, x: &[f64], aux: &[f64], label: usize) -> f64 {
    let mut grads = Gradients::zeros_like(net);
    net.loss_and_grad(x, aux, label, &mut grads).unwrap();
    let eps = 1e-3;
    let mut checked = 0;
    let mut worst = 0.0f64;
    for k in 0..net.params.len() {
        let Some(p) = net.params[k].clone() else { continue };
        let g = grads.layers[k].as_ref().unwrap().clone();
        for (which, len) in [(0, p.weight.len()), (1, p.bias.len())] {
            for i in 0..len {
                let orig = *param_mut(net, k, which, i);
                *param_mut(net, k, which, i) = orig + eps;
                let up = net.loss(x, aux, label).unwrap();
                *param_mut(net, k, which, i) = orig - eps;
                let down = net.loss(x, aux, label).unwrap();
                *param_mut(net, k, which, i) = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = if which == 0 { g.weight[i] } else { g.bias[i] };
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                worst = worst.max((numeric - analytic).abs() / denom);
                checked += 1;
            }
        }
    }
    assert_eq!(checked, net.param_count());
    worst
}
