//! Seeded randomness.
//!
//! Every random draw descends from one 64-bit seed through SplitMix64.
//! Independent streams are derived per (stream tag, trial index), so trial
//! `i` of a suite sees the same numbers no matter how trials are sharded.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::hgroup::Point;
use crate::linalg::{Sym2, Sym3, Vec3};

pub type SuiteRng = SplitMix64;

/// Mix a seed, stream tag and trial index into a fresh generator.
pub fn trial_rng(seed: u64, stream: &str, trial: u64) -> SuiteRng {
    // FNV-1a over the tag keeps streams stable across builds.
    let mut tag: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        tag ^= u64::from(b);
        tag = tag.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut mixer = SplitMix64::seed_from_u64(seed ^ tag.rotate_left(17));
    let base: u64 = mixer.gen();
    SplitMix64::seed_from_u64(base.wrapping_add(trial.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

pub fn uniform_point<R: Rng>(rng: &mut R, half_width: f64) -> Point {
    Point::new(
        rng.gen_range(-half_width..=half_width),
        rng.gen_range(-half_width..=half_width),
        rng.gen_range(-half_width..=half_width),
    )
}

pub fn unit_vec3<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.scale(1.0 / n);
        }
    }
}

/// Symmetric matrix with independent entries uniform in `[-scale, scale]`.
pub fn sym3<R: Rng>(rng: &mut R, scale: f64) -> Sym3 {
    Sym3(std::array::from_fn(|_| rng.gen_range(-scale..=scale)))
}

pub fn sym2<R: Rng>(rng: &mut R, scale: f64) -> Sym2 {
    Sym2::new(
        rng.gen_range(-scale..=scale),
        rng.gen_range(-scale..=scale),
        rng.gen_range(-scale..=scale),
    )
}

/// Random rotation of `diag(d)` in ℝ³, from an orthonormalized Gaussian-ish
/// frame.
pub fn rotated_diag3<R: Rng>(rng: &mut R, d: [f64; 3]) -> Sym3 {
    let u = unit_vec3(rng);
    let mut w = unit_vec3(rng);
    w = w - u.scale(u.dot(&w));
    while w.norm() < 1e-6 {
        w = unit_vec3(rng);
        w = w - u.scale(u.dot(&w));
    }
    let w = w.scale(1.0 / w.norm());
    let z = Vec3::new(
        u.0[1] * w.0[2] - u.0[2] * w.0[1],
        u.0[2] * w.0[0] - u.0[0] * w.0[2],
        u.0[0] * w.0[1] - u.0[1] * w.0[0],
    );
    Sym3::outer(&u).scale(d[0]) + Sym3::outer(&w).scale(d[1]) + Sym3::outer(&z).scale(d[2])
}

/// Log-uniform draw in `[lo, hi]`.
pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}
