//! Vectors, vehicle boxes and the slab-method ray tests shared by the
//! LIDAR simulator and the blockage test.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::from_array(a)
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

/// Axis-aligned box with half-open membership `[min, max)` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p.component(a) >= self.min.component(a) && p.component(a) < self.max.component(a))
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Box rotated by `heading` about the vertical axis through its center.
/// Local x runs along the length, local y along the width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    pub half: Vec3,
    pub heading: f64,
}

impl OrientedBox {
    pub fn new(center: Vec3, length: f64, width: f64, height: f64, heading: f64) -> Self {
        Self {
            center,
            half: Vec3::new(length / 2.0, width / 2.0, height / 2.0),
            heading,
        }
    }

    /// Unit vectors of the local x (length) and y (width) axes in world frame.
    pub fn axes(&self) -> (Vec3, Vec3) {
        let (s, c) = self.heading.sin_cos();
        (Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0))
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let (u, v) = self.axes();
        let d = p - self.center;
        Vec3::new(d.dot(u), d.dot(v), d.z)
    }

    pub fn dir_to_local(&self, d: Vec3) -> Vec3 {
        let (u, v) = self.axes();
        Vec3::new(d.dot(u), d.dot(v), d.z)
    }

    pub fn from_local(&self, p: Vec3) -> Vec3 {
        let (u, v) = self.axes();
        self.center + u * p.x + v * p.y + Vec3::new(0.0, 0.0, p.z)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y && l.z.abs() <= self.half.z
    }

    /// Euclidean distance from `p` to the closed box (0 inside).
    pub fn distance(&self, p: Vec3) -> f64 {
        let l = self.to_local(p);
        let dx = (l.x.abs() - self.half.x).max(0.0);
        let dy = (l.y.abs() - self.half.y).max(0.0);
        let dz = (l.z.abs() - self.half.z).max(0.0);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Parameter interval `[t_in, t_out]` over which `origin + t*dir` lies in
    /// the box, or `None` when the line misses it.
    pub fn slab_interval(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let o = self.to_local(origin).to_array();
        let d = self.dir_to_local(dir).to_array();
        let h = self.half.to_array();
        let mut t_in = f64::NEG_INFINITY;
        let mut t_out = f64::INFINITY;
        for axis in 0..3 {
            if d[axis].abs() < 1e-15 {
                if o[axis].abs() > h[axis] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[axis];
            let mut t0 = (-h[axis] - o[axis]) * inv;
            let mut t1 = (h[axis] - o[axis]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_in = t_in.max(t0);
            t_out = t_out.min(t1);
            if t_in > t_out {
                return None;
            }
        }
        Some((t_in, t_out))
    }

    /// True when the open segment `a -> b` passes through the box.
    pub fn blocks_segment(&self, a: Vec3, b: Vec3) -> bool {
        match self.slab_interval(a, b - a) {
            Some((t_in, t_out)) => t_out > 0.0 && t_in < 1.0,
            None => false,
        }
    }

    /// Distance along the unit ray to the first surface hit from outside.
    pub fn ray_hit(&self, origin: Vec3, unit_dir: Vec3) -> Option<f64> {
        let (t_in, t_out) = self.slab_interval(origin, unit_dir)?;
        if t_in >= 0.0 && t_in <= t_out {
            Some(t_in)
        } else {
            None
        }
    }

    /// Footprint corners on the ground plane, counter-clockwise.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let (u, v) = self.axes();
        let (hl, hw) = (self.half.x, self.half.y);
        let c = self.center;
        let corner = |a: f64, b: f64| (c.x + u.x * a + v.x * b, c.y + u.y * a + v.y * b);
        [corner(hl, hw), corner(-hl, hw), corner(-hl, -hw), corner(hl, -hw)]
    }
}

/// Separating-axis test for two ground-plane footprints, inflated by `gap`
/// on every side.
pub fn footprints_overlap(a: &OrientedBox, b: &OrientedBox, gap: f64) -> bool {
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    let d = b.center - a.center;
    let d = Vec3::new(d.x, d.y, 0.0);
    let ha = (a.half.x + gap, a.half.y + gap);
    let hb = (b.half.x + gap, b.half.y + gap);
    for axis in [au, av, bu, bv] {
        let ra = ha.0 * au.dot(axis).abs() + ha.1 * av.dot(axis).abs();
        let rb = hb.0 * bu.dot(axis).abs() + hb.1 * bv.dot(axis).abs();
        if d.dot(axis).abs() > ra + rb {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn axis_aligned_slab_hit() {
        let b = OrientedBox::new(Vec3::new(10.0, 0.0, 1.0), 4.0, 2.0, 2.0, 0.0);
        let t = b.ray_hit(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((t - 8.0).abs() < 1e-12);
        assert!(b.ray_hit(Vec3::new(0.0, 0.0, 1.0), Vec3::new(-1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn rotated_box_hit() {
        // Length 4 along +Y after a quarter turn, so the near face is 1 m from center in x.
        let b = OrientedBox::new(Vec3::new(10.0, 0.0, 1.0), 4.0, 2.0, 2.0, FRAC_PI_2);
        let t = b.ray_hit(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
    }

    #[test]
    fn segment_stopping_short_is_clear() {
        let b = OrientedBox::new(Vec3::new(10.0, 0.0, 1.0), 4.0, 2.0, 2.0, 0.0);
        assert!(!b.blocks_segment(Vec3::new(0.0, 0.0, 1.0), Vec3::new(7.9, 0.0, 1.0)));
        assert!(b.blocks_segment(Vec3::new(0.0, 0.0, 1.0), Vec3::new(8.1, 0.0, 1.0)));
        assert!(b.blocks_segment(Vec3::new(0.0, 0.0, 1.0), Vec3::new(20.0, 0.0, 1.0)));
    }

    #[test]
    fn footprint_sat() {
        let a = OrientedBox::new(Vec3::ZERO, 4.0, 2.0, 1.0, 0.0);
        let b = OrientedBox::new(Vec3::new(4.1, 0.0, 0.0), 4.0, 2.0, 1.0, 0.0);
        assert!(!footprints_overlap(&a, &b, 0.0));
        assert!(footprints_overlap(&a, &b, 0.1));
        let c = OrientedBox::new(Vec3::new(2.9, 1.9, 0.0), 4.0, 2.0, 1.0, 0.7);
        assert!(footprints_overlap(&a, &c, 0.0));
    }
}
