//! BBOB-style benchmark problems and the fixed train/test suite split.

mod bbob;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bbob::SquareMatrix;
use bbob::Transform;

use crate::seeding::mix_seed;

pub const DEFAULT_DIMENSION: usize = 10;
pub const MAX_DIMENSION: usize = 50;
pub const LOWER_BOUND: f64 = -5.0;
pub const UPPER_BOUND: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("point has {got} coordinates but the instance has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension must be in 2..={MAX_DIMENSION}, got {0}")]
    InvalidDimension(usize),
    #[error("{0} has no free shift to remove")]
    NoFreeShift(FunctionId),
}

/// The 24 noiseless BBOB families, numbered as in the benchmark definition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionId {
    Sphere,
    EllipsoidalSeparable,
    RastriginSeparable,
    BucheRastrigin,
    LinearSlope,
    AttractiveSector,
    StepEllipsoidal,
    RosenbrockOriginal,
    RosenbrockRotated,
    EllipsoidalHighCond,
    Discus,
    BentCigar,
    SharpRidge,
    DifferentPowers,
    RastriginMultimodal,
    Weierstrass,
    SchaffersF7,
    SchaffersHighCond,
    CompositeGriewankRosenbrock,
    Schwefel,
    Gallagher101,
    Gallagher21,
    Katsuura,
    LunacekBiRastrigin,
}

impl FunctionId {
    pub const ALL: [FunctionId; 24] = [
        FunctionId::Sphere,
        FunctionId::EllipsoidalSeparable,
        FunctionId::RastriginSeparable,
        FunctionId::BucheRastrigin,
        FunctionId::LinearSlope,
        FunctionId::AttractiveSector,
        FunctionId::StepEllipsoidal,
        FunctionId::RosenbrockOriginal,
        FunctionId::RosenbrockRotated,
        FunctionId::EllipsoidalHighCond,
        FunctionId::Discus,
        FunctionId::BentCigar,
        FunctionId::SharpRidge,
        FunctionId::DifferentPowers,
        FunctionId::RastriginMultimodal,
        FunctionId::Weierstrass,
        FunctionId::SchaffersF7,
        FunctionId::SchaffersHighCond,
        FunctionId::CompositeGriewankRosenbrock,
        FunctionId::Schwefel,
        FunctionId::Gallagher101,
        FunctionId::Gallagher21,
        FunctionId::Katsuura,
        FunctionId::LunacekBiRastrigin,
    ];

    /// Training families, in suite order.
    pub const TRAIN: [FunctionId; 8] = [
        FunctionId::Sphere,
        FunctionId::EllipsoidalSeparable,
        FunctionId::RastriginSeparable,
        FunctionId::LinearSlope,
        FunctionId::RastriginMultimodal,
        FunctionId::Weierstrass,
        FunctionId::SchaffersF7,
        FunctionId::Gallagher101,
    ];

    /// Held-out families, in suite order.
    pub const TEST: [FunctionId; 16] = [
        FunctionId::AttractiveSector,
        FunctionId::BentCigar,
        FunctionId::BucheRastrigin,
        FunctionId::CompositeGriewankRosenbrock,
        FunctionId::DifferentPowers,
        FunctionId::Discus,
        FunctionId::EllipsoidalHighCond,
        FunctionId::Gallagher21,
        FunctionId::Katsuura,
        FunctionId::LunacekBiRastrigin,
        FunctionId::RosenbrockOriginal,
        FunctionId::RosenbrockRotated,
        FunctionId::SchaffersHighCond,
        FunctionId::Schwefel,
        FunctionId::SharpRidge,
        FunctionId::StepEllipsoidal,
    ];

    /// BBOB function number (1..=24).
    pub fn number(self) -> u32 {
        Self::ALL.iter().position(|f| *f == self).unwrap() as u32 + 1
    }

    pub fn display_name(self) -> &'static str {
        match self {
            FunctionId::Sphere => "Sphere",
            FunctionId::EllipsoidalSeparable => "Ellipsoidal separable",
            FunctionId::RastriginSeparable => "Rastrigin separable",
            FunctionId::BucheRastrigin => "Buche Rastrigin",
            FunctionId::LinearSlope => "Linear Slope",
            FunctionId::AttractiveSector => "Attractive Sector",
            FunctionId::StepEllipsoidal => "Step Ellipsoidal",
            FunctionId::RosenbrockOriginal => "Rosenbrock original",
            FunctionId::RosenbrockRotated => "Rosenbrock rotated",
            FunctionId::EllipsoidalHighCond => "Ellipsoidal high cond",
            FunctionId::Discus => "Discus",
            FunctionId::BentCigar => "Bent Cigar",
            FunctionId::SharpRidge => "Sharp Ridge",
            FunctionId::DifferentPowers => "Different Powers",
            FunctionId::RastriginMultimodal => "Rastrigin multimodal",
            FunctionId::Weierstrass => "Weierstrass",
            FunctionId::SchaffersF7 => "Schaffers F7",
            FunctionId::SchaffersHighCond => "Schaffers high cond",
            FunctionId::CompositeGriewankRosenbrock => "Composite Grie rosen",
            FunctionId::Schwefel => "Schwefel",
            FunctionId::Gallagher101 => "Gallagher 101Peaks",
            FunctionId::Gallagher21 => "Gallagher 21Peaks",
            FunctionId::Katsuura => "Katsuura",
            FunctionId::LunacekBiRastrigin => "Lunacek bi Rastrigin",
        }
    }

    /// Short description of the landscape, used when describing failure cases.
    pub fn characteristics(self) -> &'static str {
        match self {
            FunctionId::Sphere => "separable, unimodal, perfectly conditioned",
            FunctionId::EllipsoidalSeparable => "separable, unimodal, condition number 1e6",
            FunctionId::RastriginSeparable => "separable, highly multimodal with regular structure",
            FunctionId::BucheRastrigin => "separable, multimodal, asymmetric Rastrigin with boundary penalty",
            FunctionId::LinearSlope => "separable, linear, optimum on the domain boundary",
            FunctionId::AttractiveSector => "unimodal, highly asymmetric: only one orthant attracts",
            FunctionId::StepEllipsoidal => "unimodal, ill-conditioned, plateaus everywhere (zero gradient)",
            FunctionId::RosenbrockOriginal => "non-separable, narrow curved valley",
            FunctionId::RosenbrockRotated => "rotated narrow curved valley",
            FunctionId::EllipsoidalHighCond => "rotated, unimodal, condition number 1e6",
            FunctionId::Discus => "rotated, one very sensitive direction (condition 1e6)",
            FunctionId::BentCigar => "rotated, smooth ridge that must be followed",
            FunctionId::SharpRidge => "rotated, non-differentiable sharp ridge",
            FunctionId::DifferentPowers => "rotated, sensitivities differ strongly across variables",
            FunctionId::RastriginMultimodal => "rotated, highly multimodal, adequate global structure",
            FunctionId::Weierstrass => "rugged, highly multimodal, repetitive",
            FunctionId::SchaffersF7 => "multimodal, asymmetric, moderately conditioned",
            FunctionId::SchaffersHighCond => "multimodal, asymmetric, condition 1e3",
            FunctionId::CompositeGriewankRosenbrock => "multimodal composite of Griewank and Rosenbrock",
            FunctionId::Schwefel => "weak global structure, second-best optimum far from the best",
            FunctionId::Gallagher101 => "101 randomly placed Gaussian peaks, weak structure",
            FunctionId::Gallagher21 => "21 randomly placed ill-conditioned peaks, weak structure",
            FunctionId::Katsuura => "highly rugged fractal-like surface, huge number of optima",
            FunctionId::LunacekBiRastrigin => "double-funnel Rastrigin, deceptive global structure",
        }
    }

    /// Families of the form `g(x - x_opt) + f_opt` whose shift can be dropped.
    pub fn has_free_shift(self) -> bool {
        !matches!(
            self,
            FunctionId::LinearSlope
                | FunctionId::RosenbrockRotated
                | FunctionId::CompositeGriewankRosenbrock
                | FunctionId::Schwefel
                | FunctionId::Gallagher101
                | FunctionId::Gallagher21
                | FunctionId::LunacekBiRastrigin
                | FunctionId::BucheRastrigin
        )
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// One seeded benchmark instance. Immutable and cheap to clone.
#[derive(Clone)]
pub struct ProblemInstance {
    transform: Arc<Transform>,
    instance_seed: u64,
    optimum_value: f64,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("function_id", &self.function_id())
            .field("dimension", &self.dimension())
            .field("instance_seed", &self.instance_seed)
            .field("optimum_value", &self.optimum_value)
            .finish()
    }
}

impl PartialEq for ProblemInstance {
    fn eq(&self, other: &Self) -> bool {
        self.function_id() == other.function_id()
            && self.instance_seed == other.instance_seed
            && self.optimum_point() == other.optimum_point()
            && self.optimum_value.to_bits() == other.optimum_value.to_bits()
    }
}

impl ProblemInstance {
    pub fn new(function_id: FunctionId, dimension: usize, instance_seed: u64) -> Result<Self, ProblemError> {
        if !(2..=MAX_DIMENSION).contains(&dimension) {
            return Err(ProblemError::InvalidDimension(dimension));
        }
        let transform = Transform::generate(function_id, dimension, instance_seed);
        Ok(Self::from_transform(transform, instance_seed))
    }

    fn from_transform(transform: Transform, instance_seed: u64) -> Self {
        // f_opt plus whatever rounding residue the family leaves at x_opt,
        // so evaluate(optimum_point) == optimum_value holds bit for bit.
        let optimum_value = transform.f_opt + transform.raw(&transform.x_opt);
        Self {
            transform: Arc::new(transform),
            instance_seed,
            optimum_value,
        }
    }

    /// Same instance with `x_opt` moved to the origin.
    pub fn with_zero_shift(&self) -> Result<Self, ProblemError> {
        let t = (*self.transform)
            .clone()
            .without_shift()
            .ok_or(ProblemError::NoFreeShift(self.function_id()))?;
        Ok(Self::from_transform(t, self.instance_seed))
    }

    /// Same instance with a different additive offset `f_opt`.
    pub fn with_offset(&self, offset: f64) -> Self {
        let mut t = (*self.transform).clone();
        t.f_opt = offset;
        Self::from_transform(t, self.instance_seed)
    }

    pub fn function_id(&self) -> FunctionId {
        self.transform.id
    }

    pub fn dimension(&self) -> usize {
        self.transform.dim
    }

    pub fn instance_seed(&self) -> u64 {
        self.instance_seed
    }

    pub fn lower_bound(&self) -> f64 {
        LOWER_BOUND
    }

    pub fn upper_bound(&self) -> f64 {
        UPPER_BOUND
    }

    pub fn optimum_value(&self) -> f64 {
        self.optimum_value
    }

    pub fn optimum_point(&self) -> &[f64] {
        &self.transform.x_opt
    }

    pub fn optimum(&self) -> (Vec<f64>, f64) {
        (self.transform.x_opt.clone(), self.optimum_value)
    }

    /// Rotation `R` of the instance (identity-free families still carry one).
    pub fn rotation(&self) -> &SquareMatrix {
        &self.transform.rotation_r
    }

    /// Additive offset `f_opt` applied on top of the raw landscape.
    pub fn offset(&self) -> f64 {
        self.transform.f_opt
    }

    /// Stable label, e.g. `f06-attractive-sector`.
    pub fn label(&self) -> String {
        let slug: String = self
            .function_id()
            .display_name()
            .to_ascii_lowercase()
            .replace(' ', "-");
        format!("f{:02}-{}", self.function_id().number(), slug)
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, ProblemError> {
        if point.len() != self.dimension() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dimension(),
                got: point.len(),
            });
        }
        Ok(self.transform.raw(point) + self.transform.f_opt)
    }

    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            function_id: self.function_id(),
            dimension: self.dimension(),
            instance_seed: self.instance_seed,
            optimum_value: self.optimum_value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub function_id: FunctionId,
    pub dimension: usize,
    pub instance_seed: u64,
    pub optimum_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSuite {
    pub train_instances: Vec<ProblemInstance>,
    pub test_instances: Vec<ProblemInstance>,
}

impl ProblemSuite {
    pub fn manifest(&self) -> SuiteManifest {
        SuiteManifest {
            train: self.train_instances.iter().map(|i| i.manifest_entry()).collect(),
            test: self.test_instances.iter().map(|i| i.manifest_entry()).collect(),
        }
    }

    pub fn from_manifest(manifest: &SuiteManifest) -> Result<Self, ProblemError> {
        let build = |entries: &[ManifestEntry]| -> Result<Vec<ProblemInstance>, ProblemError> {
            entries
                .iter()
                .map(|e| ProblemInstance::new(e.function_id, e.dimension, e.instance_seed))
                .collect()
        };
        Ok(Self {
            train_instances: build(&manifest.train)?,
            test_instances: build(&manifest.test)?,
        })
    }

    /// A suite drawn from a single family, e.g. a Sphere-only micro-suite.
    pub fn single_family(
        function_id: FunctionId,
        dimension: usize,
        train_count: usize,
        test_count: usize,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        let make = |offset: u64, count: usize| -> Result<Vec<ProblemInstance>, ProblemError> {
            (0..count)
                .map(|k| {
                    let s = mix_seed(seed, offset + k as u64);
                    ProblemInstance::new(function_id, dimension, s)
                })
                .collect()
        };
        Ok(Self {
            train_instances: make(0, train_count)?,
            test_instances: make(1 << 32, test_count)?,
        })
    }
}

/// The default split: the 8 families absent from the held-out table train,
/// the 16 held-out families test. Per-instance seeds derive from `seed`.
pub fn make_suite(dimension: usize, seed: u64) -> Result<ProblemSuite, ProblemError> {
    let make = |ids: &[FunctionId]| -> Result<Vec<ProblemInstance>, ProblemError> {
        ids.iter()
            .map(|id| ProblemInstance::new(*id, dimension, mix_seed(seed, id.number() as u64)))
            .collect()
    };
    Ok(ProblemSuite {
        train_instances: make(&FunctionId::TRAIN)?,
        test_instances: make(&FunctionId::TEST)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn random_point(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(lo..hi)).collect()
    }

    #[test]
    fn optimum_point_evaluates_to_optimum_value() {
        for dim in [2, 5, 10] {
            for id in FunctionId::ALL {
                for seed in [1u64, 42, 9001] {
                    let inst = ProblemInstance::new(id, dim, seed).unwrap();
                    let (point, value) = inst.optimum();
                    let y = inst.evaluate(&point).unwrap();
                    assert!((y - value).abs() <= 1e-9, "{id} d={dim}: {y} vs {value}");
                    assert!((value - inst.offset()).abs() < 1e-9, "{id}: residue at optimum");
                }
            }
        }
    }

    #[test]
    fn values_are_finite_and_above_optimum_inside_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for id in FunctionId::ALL {
            let inst = ProblemInstance::new(id, 5, 11).unwrap();
            for _ in 0..300 {
                let p = random_point(&mut rng, 5, LOWER_BOUND, UPPER_BOUND);
                let y = inst.evaluate(&p).unwrap();
                assert!(y.is_finite(), "{id}");
                assert!(y >= inst.optimum_value() - 1e-9, "{id}: {y} < {}", inst.optimum_value());
            }
        }
    }

    #[test]
    fn out_of_bounds_penalties_never_undercut_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in FunctionId::ALL {
            let inst = ProblemInstance::new(id, 4, 7).unwrap();
            for _ in 0..100 {
                let p = random_point(&mut rng, 4, -9.0, 9.0);
                let y = inst.evaluate(&p).unwrap();
                assert!(y >= inst.optimum_value() - 1e-9, "{id}: {p:?}");
            }
        }
    }

    #[test]
    fn evaluation_is_bit_reproducible() {
        let a = ProblemInstance::new(FunctionId::Katsuura, 6, 99).unwrap();
        let b = ProblemInstance::new(FunctionId::Katsuura, 6, 99).unwrap();
        let p = vec![0.3, -1.2, 2.2, 0.0, 4.9, -4.9];
        assert_eq!(a.evaluate(&p).unwrap().to_bits(), b.evaluate(&p).unwrap().to_bits());
        assert_eq!(a.evaluate(&p).unwrap().to_bits(), a.evaluate(&p).unwrap().to_bits());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let inst = ProblemInstance::new(FunctionId::Sphere, 3, 0).unwrap();
        assert_eq!(
            inst.evaluate(&[0.0, 1.0]),
            Err(ProblemError::DimensionMismatch { expected: 3, got: 2 })
        );
        assert!(matches!(ProblemInstance::new(FunctionId::Sphere, 1, 0), Err(ProblemError::InvalidDimension(1))));
    }

    #[test]
    fn zero_shift_sphere_is_squared_distance() {
        let inst = ProblemInstance::new(FunctionId::Sphere, 4, 17)
            .unwrap()
            .with_zero_shift()
            .unwrap()
            .with_offset(0.0);
        let p = [0.6, 0.0, -0.8, 0.0];
        assert!((inst.evaluate(&p).unwrap() - 1.0).abs() < 1e-15);
        let r = 2.5;
        let q = [r / 2f64.sqrt(), r / 2f64.sqrt(), 0.0, 0.0];
        assert!((inst.evaluate(&q).unwrap() - r * r).abs() < 1e-12);
    }

    #[test]
    fn sphere_offsets_are_translation_invariant() {
        let d = [0.25, -1.5, 0.75];
        let values: Vec<f64> = [1u64, 2, 3, 4]
            .iter()
            .map(|s| {
                let inst = ProblemInstance::new(FunctionId::Sphere, 3, *s).unwrap().with_offset(0.0);
                let p: Vec<f64> = inst.optimum_point().iter().zip(d).map(|(a, b)| a + b).collect();
                inst.evaluate(&p).unwrap()
            })
            .collect();
        for v in &values {
            assert!((v - values[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn discus_matches_hand_applied_formula() {
        // Independent single-point evaluation: z = T_osz(R e1), f = 1e6 z1^2 + z2^2 + z3^2 + f_opt.
        let inst = ProblemInstance::new(FunctionId::Discus, 3, 2024).unwrap();
        let r = inst.rotation();
        let column: Vec<f64> = (0..3).map(|i| r.get(i, 0)).collect();
        let tosz = |x: f64| -> f64 {
            if x == 0.0 {
                return 0.0;
            }
            let h = x.abs().ln();
            let (c1, c2) = if x > 0.0 { (10.0, 7.9) } else { (5.5, 3.1) };
            x.signum() * (h + 0.049 * ((c1 * h).sin() + (c2 * h).sin())).exp()
        };
        let z: Vec<f64> = column.iter().map(|v| tosz(*v)).collect();
        let expected = 1e6 * z[0] * z[0] + z[1] * z[1] + z[2] * z[2] + inst.offset();
        let mut p = inst.optimum_point().to_vec();
        p[0] += 1.0;
        let got = inst.evaluate(&p).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn rotations_are_orthonormal() {
        let inst = ProblemInstance::new(FunctionId::EllipsoidalHighCond, 7, 3).unwrap();
        let r = inst.rotation();
        for i in 0..7 {
            for j in 0..7 {
                let dot: f64 = (0..7).map(|k| r.get(i, k) * r.get(j, k)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn suite_split_is_deterministic_and_disjoint() {
        let a = make_suite(10, 7).unwrap();
        let b = make_suite(10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_instances.len(), 8);
        assert_eq!(a.test_instances.len(), 16);
        let train: BTreeSet<_> = a.train_instances.iter().map(|i| i.function_id()).collect();
        let test: BTreeSet<_> = a.test_instances.iter().map(|i| i.function_id()).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 24);
        assert!(a.test_instances.iter().any(|i| i.function_id().display_name() == "Step Ellipsoidal"));
    }

    #[test]
    fn distinct_seeds_give_distinct_optima() {
        let mut seen = BTreeSet::new();
        for s in 0..200u64 {
            let inst = ProblemInstance::new(FunctionId::Sphere, 5, s).unwrap();
            let key: Vec<u64> = inst.optimum_point().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key), "seed {s} repeated an optimum");
        }
    }

    #[test]
    fn manifest_round_trips() {
        let suite = make_suite(5, 1).unwrap();
        let json = serde_json::to_string(&suite.manifest()).unwrap();
        let back: SuiteManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(ProblemSuite::from_manifest(&back).unwrap(), suite);
    }
}
