//! Noiseless BBOB function definitions.
//!
//! Every family is written as `raw(x) + f_opt`; [`Transform`] holds the
//! seeded shift, rotations and any family-specific tables so that `raw` is a
//! pure function of the point.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::FunctionId;

const SCHWEFEL_CONSTANT: f64 = 4.189_828_872_724_339;
const SCHWEFEL_XOPT: f64 = 4.209_687_463_3;
const LUNACEK_MU0: f64 = 2.5;

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    /// Orthogonal matrix from Gram-Schmidt on a Gaussian matrix drawn from `rng`.
    ///
    /// Entries are drawn row by row; the rows are orthonormalized in order.
    pub fn random_rotation(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        for i in 0..n {
            for j in 0..i {
                let proj: f64 = (0..n).map(|k| rows[i][k] * rows[j][k]).sum();
                for k in 0..n {
                    rows[i][k] -= proj * rows[j][k];
                }
            }
            let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in rows[i].iter_mut() {
                *v /= norm;
            }
        }
        Self {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                out[j] += self.data[i * self.n + j] * v[i];
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct GallagherPeaks {
    locations: Vec<Vec<f64>>,
    /// `R y_i`, cached so each evaluation only rotates `x` once.
    rotated_locations: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Diagonal of `C_i` for each peak.
    scales: Vec<Vec<f64>>,
}

/// Seeded instance data for one function family.
#[derive(Clone, Debug)]
pub struct Transform {
    pub id: FunctionId,
    pub dim: usize,
    pub x_opt: Vec<f64>,
    pub f_opt: f64,
    pub rotation_r: SquareMatrix,
    pub rotation_q: SquareMatrix,
    signs: Vec<f64>,
    peaks: Option<GallagherPeaks>,
}

pub(crate) fn tosz(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let xh = x.abs().ln();
    let (c1, c2) = if x > 0.0 { (10.0, 7.9) } else { (5.5, 3.1) };
    x.signum() * (xh + 0.049 * ((c1 * xh).sin() + (c2 * xh).sin())).exp()
}

fn tasy(z: &mut [f64], beta: f64) {
    let d = z.len();
    for (i, v) in z.iter_mut().enumerate() {
        if *v > 0.0 {
            *v = v.powf(1.0 + beta * frac(i, d) * v.sqrt());
        }
    }
}

/// `i / (d - 1)` with zero-based `i`.
fn frac(i: usize, d: usize) -> f64 {
    i as f64 / (d - 1) as f64
}

fn lambda(alpha: f64, i: usize, d: usize) -> f64 {
    alpha.powf(0.5 * frac(i, d))
}

fn scale_lambda(z: &mut [f64], alpha: f64) {
    let d = z.len();
    for (i, v) in z.iter_mut().enumerate() {
        *v *= lambda(alpha, i, d);
    }
}

pub(crate) fn fpen(x: &[f64]) -> f64 {
    x.iter()
        .map(|v| {
            let e = v.abs() - 5.0;
            if e > 0.0 {
                e * e
            } else {
                0.0
            }
        })
        .sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn sum_sq(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

fn rastrigin_core(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    10.0 * (d - z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>()) + sum_sq(z)
}

fn rosenbrock_core(z: &[f64]) -> f64 {
    z.windows(2)
        .map(|w| 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2))
        .sum()
}

fn schaffers_core(z: &[f64]) -> f64 {
    let d = z.len();
    let acc: f64 = z
        .windows(2)
        .map(|w| {
            let s = (w[0] * w[0] + w[1] * w[1]).sqrt();
            let root = s.sqrt();
            root + root * (50.0 * s.powf(0.2)).sin().powi(2)
        })
        .sum();
    (acc / (d - 1) as f64).powi(2)
}

fn weierstrass_f0() -> f64 {
    (0..12)
        .map(|k| 0.5f64.powi(k) * ((2.0 * PI * 3f64.powi(k)) * 0.5).cos())
        .sum()
}

fn random_signs(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 })
        .collect()
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

impl Transform {
    /// Seeding order: `x_opt`, `f_opt`, `R`, `Q`, then family tables.
    pub fn generate(id: FunctionId, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x_opt: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
        let f_opt = (rng.random::<f64>() * 10_000.0).round() / 100.0;
        let rotation_r = SquareMatrix::random_rotation(dim, &mut rng);
        let rotation_q = SquareMatrix::random_rotation(dim, &mut rng);
        let mut signs = Vec::new();
        let mut peaks = None;
        let rosen_scale = (dim as f64).sqrt() / 8.0;
        let rosen_scale = rosen_scale.max(1.0);

        match id {
            FunctionId::BucheRastrigin => {
                for v in x_opt.iter_mut().step_by(2) {
                    *v = v.abs();
                }
            }
            FunctionId::LinearSlope => {
                signs = random_signs(dim, &mut rng);
                x_opt = signs.iter().map(|s| 5.0 * s).collect();
            }
            FunctionId::RosenbrockOriginal => {
                for v in x_opt.iter_mut() {
                    *v *= 0.75;
                }
            }
            FunctionId::RosenbrockRotated | FunctionId::CompositeGriewankRosenbrock => {
                let target = vec![0.5 / rosen_scale; dim];
                x_opt = rotation_r.transpose_mul_vec(&target);
            }
            FunctionId::Schwefel => {
                signs = random_signs(dim, &mut rng);
                x_opt = signs.iter().map(|s| 0.5 * SCHWEFEL_XOPT * s).collect();
            }
            FunctionId::LunacekBiRastrigin => {
                signs = random_signs(dim, &mut rng);
                x_opt = signs.iter().map(|s| 0.5 * LUNACEK_MU0 * s).collect();
            }
            FunctionId::Gallagher101 | FunctionId::Gallagher21 => {
                let g = GallagherPeaks::generate(id, dim, &rotation_r, &mut rng);
                x_opt = g.locations[0].clone();
                peaks = Some(g);
            }
            _ => {}
        }

        Self {
            id,
            dim,
            x_opt,
            f_opt,
            rotation_r,
            rotation_q,
            signs,
            peaks,
        }
    }

    pub fn without_shift(mut self) -> Option<Self> {
        if !self.id.has_free_shift() {
            return None;
        }
        self.x_opt = vec![0.0; self.dim];
        Some(self)
    }

    /// Objective value without the `f_opt` offset.
    pub fn raw(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let r = &self.rotation_r;
        let q = &self.rotation_q;
        match self.id {
            FunctionId::Sphere => sum_sq(&sub(x, &self.x_opt)),
            FunctionId::EllipsoidalSeparable => {
                let z: Vec<f64> = sub(x, &self.x_opt).into_iter().map(tosz).collect();
                ellipsoid(&z)
            }
            FunctionId::RastriginSeparable => {
                let mut z: Vec<f64> = sub(x, &self.x_opt).into_iter().map(tosz).collect();
                tasy(&mut z, 0.2);
                scale_lambda(&mut z, 10.0);
                rastrigin_core(&z)
            }
            FunctionId::BucheRastrigin => {
                let mut z: Vec<f64> = sub(x, &self.x_opt).into_iter().map(tosz).collect();
                for (i, v) in z.iter_mut().enumerate() {
                    let mut s = 10f64.powf(0.5 * frac(i, d));
                    if *v > 0.0 && i % 2 == 0 {
                        s *= 10.0;
                    }
                    *v *= s;
                }
                rastrigin_core(&z) + 100.0 * fpen(x)
            }
            FunctionId::LinearSlope => (0..d)
                .map(|i| {
                    let xo = self.x_opt[i];
                    let z = if xo * x[i] < 25.0 { x[i] } else { xo };
                    let s = self.signs[i] * 10f64.powf(frac(i, d));
                    5.0 * s.abs() - s * z
                })
                .sum(),
            FunctionId::AttractiveSector => {
                let mut z = r.mul_vec(&sub(x, &self.x_opt));
                scale_lambda(&mut z, 10.0);
                let z = q.mul_vec(&z);
                let acc: f64 = z
                    .iter()
                    .zip(&self.x_opt)
                    .map(|(zi, xo)| {
                        let s = if zi * xo > 0.0 { 100.0 } else { 1.0 };
                        (s * zi).powi(2)
                    })
                    .sum();
                tosz(acc).powf(0.9)
            }
            FunctionId::StepEllipsoidal => {
                let mut zh = r.mul_vec(&sub(x, &self.x_opt));
                scale_lambda(&mut zh, 10.0);
                let zt: Vec<f64> = zh
                    .iter()
                    .map(|v| {
                        if v.abs() > 0.5 {
                            (0.5 + v).floor()
                        } else {
                            (0.5 + 10.0 * v).floor() / 10.0
                        }
                    })
                    .collect();
                let z = q.mul_vec(&zt);
                let ell: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(i, v)| 10f64.powf(2.0 * frac(i, d)) * v * v)
                    .sum();
                0.1 * (zh[0].abs() / 1e4).max(ell) + fpen(x)
            }
            FunctionId::RosenbrockOriginal => {
                let c = rosen_scale(d);
                let z: Vec<f64> = sub(x, &self.x_opt).iter().map(|v| c * v + 1.0).collect();
                rosenbrock_core(&z)
            }
            FunctionId::RosenbrockRotated => {
                let c = rosen_scale(d);
                let z: Vec<f64> = r.mul_vec(x).iter().map(|v| c * v + 0.5).collect();
                rosenbrock_core(&z)
            }
            FunctionId::EllipsoidalHighCond => {
                let z: Vec<f64> = r.mul_vec(&sub(x, &self.x_opt)).into_iter().map(tosz).collect();
                ellipsoid(&z)
            }
            FunctionId::Discus => {
                let z: Vec<f64> = r.mul_vec(&sub(x, &self.x_opt)).into_iter().map(tosz).collect();
                1e6 * z[0] * z[0] + sum_sq(&z[1..])
            }
            FunctionId::BentCigar => {
                let mut z = r.mul_vec(&sub(x, &self.x_opt));
                tasy(&mut z, 0.5);
                let z = r.mul_vec(&z);
                z[0] * z[0] + 1e6 * sum_sq(&z[1..])
            }
            FunctionId::SharpRidge => {
                let mut z = r.mul_vec(&sub(x, &self.x_opt));
                scale_lambda(&mut z, 10.0);
                let z = q.mul_vec(&z);
                z[0] * z[0] + 100.0 * sum_sq(&z[1..]).sqrt()
            }
            FunctionId::DifferentPowers => {
                let z = r.mul_vec(&sub(x, &self.x_opt));
                z.iter()
                    .enumerate()
                    .map(|(i, v)| v.abs().powf(2.0 + 4.0 * frac(i, d)))
                    .sum::<f64>()
                    .sqrt()
            }
            FunctionId::RastriginMultimodal => {
                let mut z: Vec<f64> = r.mul_vec(&sub(x, &self.x_opt)).into_iter().map(tosz).collect();
                tasy(&mut z, 0.2);
                let mut z = q.mul_vec(&z);
                scale_lambda(&mut z, 10.0);
                let z = r.mul_vec(&z);
                rastrigin_core(&z)
            }
            FunctionId::Weierstrass => {
                let z: Vec<f64> = r.mul_vec(&sub(x, &self.x_opt)).into_iter().map(tosz).collect();
                let mut z = q.mul_vec(&z);
                scale_lambda(&mut z, 0.01);
                let z = r.mul_vec(&z);
                let f0 = weierstrass_f0();
                let acc: f64 = z
                    .iter()
                    .map(|zi| {
                        (0..12)
                            .map(|k| 0.5f64.powi(k) * ((2.0 * PI * 3f64.powi(k)) * (zi + 0.5)).cos())
                            .sum::<f64>()
                    })
                    .sum();
                10.0 * (acc / d as f64 - f0).powi(3) + 10.0 / d as f64 * fpen(x)
            }
            FunctionId::SchaffersF7 | FunctionId::SchaffersHighCond => {
                let alpha = if self.id == FunctionId::SchaffersF7 { 10.0 } else { 1000.0 };
                let mut z = r.mul_vec(&sub(x, &self.x_opt));
                tasy(&mut z, 0.5);
                let mut z = q.mul_vec(&z);
                scale_lambda(&mut z, alpha);
                schaffers_core(&z) + 10.0 * fpen(x)
            }
            FunctionId::CompositeGriewankRosenbrock => {
                let c = rosen_scale(d);
                let z: Vec<f64> = r.mul_vec(x).iter().map(|v| c * v + 0.5).collect();
                let acc: f64 = z
                    .windows(2)
                    .map(|w| {
                        let s = 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2);
                        s / 4000.0 - s.cos()
                    })
                    .sum();
                10.0 / (d - 1) as f64 * acc + 10.0
            }
            FunctionId::Schwefel => self.schwefel(x),
            FunctionId::Gallagher101 | FunctionId::Gallagher21 => self.gallagher(x),
            FunctionId::Katsuura => {
                let mut z = r.mul_vec(&sub(x, &self.x_opt));
                scale_lambda(&mut z, 100.0);
                let z = q.mul_vec(&z);
                let df = d as f64;
                let exponent = 10.0 / df.powf(1.2);
                let prod: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(i, zi)| {
                        let inner: f64 = (1..=32)
                            .map(|j| {
                                let p = 2f64.powi(j);
                                (p * zi - (p * zi).round()).abs() / p
                            })
                            .sum();
                        (1.0 + (i + 1) as f64 * inner).powf(exponent)
                    })
                    .product();
                10.0 / (df * df) * prod - 10.0 / (df * df) + fpen(x)
            }
            FunctionId::LunacekBiRastrigin => {
                let df = d as f64;
                let s = 1.0 - 1.0 / (2.0 * (df + 20.0).sqrt() - 8.2);
                let mu1 = -((LUNACEK_MU0 * LUNACEK_MU0 - 1.0) / s).sqrt();
                let xh: Vec<f64> = x.iter().zip(&self.signs).map(|(v, sg)| 2.0 * sg * v).collect();
                let first: f64 = xh.iter().map(|v| (v - LUNACEK_MU0).powi(2)).sum();
                let second: f64 = df + s * xh.iter().map(|v| (v - mu1).powi(2)).sum::<f64>();
                let mut z = r.mul_vec(&xh.iter().map(|v| v - LUNACEK_MU0).collect::<Vec<_>>());
                scale_lambda(&mut z, 100.0);
                let z = q.mul_vec(&z);
                let cosines: f64 = z.iter().map(|v| (2.0 * PI * v).cos()).sum();
                first.min(second) + 10.0 * (df - cosines) + 1e4 * fpen(x)
            }
        }
    }

    fn schwefel(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let xh: Vec<f64> = x.iter().zip(&self.signs).map(|(v, s)| 2.0 * s * v).collect();
        let two_abs: Vec<f64> = self.x_opt.iter().map(|v| 2.0 * v.abs()).collect();
        let mut zh = xh.clone();
        for i in 1..d {
            zh[i] = xh[i] + 0.25 * (xh[i - 1] - two_abs[i - 1]);
        }
        let mut shifted: Vec<f64> = zh.iter().zip(&two_abs).map(|(a, b)| a - b).collect();
        scale_lambda(&mut shifted, 10.0);
        let z: Vec<f64> = shifted
            .iter()
            .zip(&two_abs)
            .map(|(a, b)| 100.0 * (a + b))
            .collect();
        let acc: f64 = z.iter().map(|v| v * v.abs().sqrt().sin()).sum();
        let scaled: Vec<f64> = z.iter().map(|v| v / 100.0).collect();
        -acc / (100.0 * d as f64) + SCHWEFEL_CONSTANT + 100.0 * fpen(&scaled)
    }

    fn gallagher(&self, x: &[f64]) -> f64 {
        let peaks = self.peaks.as_ref().expect("gallagher instance carries peaks");
        let d = self.dim as f64;
        let rx = self.rotation_r.mul_vec(x);
        let best = peaks
            .rotated_locations
            .iter()
            .zip(&peaks.weights)
            .zip(&peaks.scales)
            .map(|((ry, w), c)| {
                let quad: f64 = rx
                    .iter()
                    .zip(ry)
                    .zip(c)
                    .map(|((a, b), ci)| ci * (a - b) * (a - b))
                    .sum();
                w * (-quad / (2.0 * d)).exp()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        tosz(10.0 - best).powi(2) + fpen(x)
    }
}

fn rosen_scale(d: usize) -> f64 {
    ((d as f64).sqrt() / 8.0).max(1.0)
}

fn ellipsoid(z: &[f64]) -> f64 {
    let d = z.len();
    z.iter()
        .enumerate()
        .map(|(i, v)| 10f64.powf(6.0 * frac(i, d)) * v * v)
        .sum()
}

impl GallagherPeaks {
    fn generate(id: FunctionId, dim: usize, rotation: &SquareMatrix, rng: &mut ChaCha8Rng) -> Self {
        let (count, half_width, first_alpha) = match id {
            FunctionId::Gallagher101 => (101usize, 5.0, 1000.0),
            _ => (21usize, 4.9, 1e6),
        };
        let mut alphas: Vec<f64> = (0..count - 1)
            .map(|j| 1000f64.powf(2.0 * j as f64 / (count - 2) as f64))
            .collect();
        shuffle(&mut alphas, rng);
        alphas.insert(0, first_alpha);

        let weights: Vec<f64> = (0..count)
            .map(|i| {
                if i == 0 {
                    10.0
                } else {
                    1.1 + 8.0 * (i - 1) as f64 / (count - 2) as f64
                }
            })
            .collect();

        let locations: Vec<Vec<f64>> = (0..count)
            .map(|i| {
                let factor = if i == 0 { 0.8 } else { 1.0 };
                (0..dim)
                    .map(|_| factor * rng.random_range(-half_width..half_width))
                    .collect()
            })
            .collect();

        let scales: Vec<Vec<f64>> = alphas
            .iter()
            .map(|&alpha| {
                let mut diag: Vec<f64> = (0..dim).map(|i| alpha.powf(frac(i, dim) - 0.5)).collect();
                shuffle(&mut diag, rng);
                diag
            })
            .collect();

        let rotated_locations = locations.iter().map(|y| rotation.mul_vec(y)).collect();
        Self {
            locations,
            rotated_locations,
            weights,
            scales,
        }
    }
}
