//! Seeded families of test functions used for norm sweeps.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::function_space::{GradedMesh, SplineFunction};

/// Shape family of a corpus member.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    /// Trigonometric polynomial of degree at most 6 with decaying amplitudes.
    Fourier,
    /// `|x-c|^γ` power plus a Gaussian bump centred on the cusp.
    CuspAdapted,
    /// Strictly positive profile `exp(Fourier)`.
    NonNegative,
    /// `g(x) - g(2c - x)`, odd about the cusp.
    OddAboutCusp,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 4] = [
        ProfileKind::Fourier,
        ProfileKind::CuspAdapted,
        ProfileKind::NonNegative,
        ProfileKind::OddAboutCusp,
    ];
}

/// Deterministic generator of C2 spline test functions on one mesh.
#[derive(Clone, Debug)]
pub struct Corpus {
    mesh: Arc<GradedMesh>,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
struct Trig {
    constant: f64,
    modes: Vec<(f64, f64)>,
}

impl Trig {
    fn eval(&self, x: f64) -> f64 {
        self.modes.iter().enumerate().fold(self.constant, |acc, (m, &(a, b))| {
            let w = TAU * (m + 1) as f64 * x;
            acc + a * w.cos() + b * w.sin()
        })
    }
}

impl Corpus {
    pub fn new(mesh: Arc<GradedMesh>, seed: u64) -> Self {
        Self {
            mesh,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mesh(&self) -> &Arc<GradedMesh> {
        &self.mesh
    }

    fn trig(&mut self, max_degree: usize) -> Trig {
        let degree = self.rng.gen_range(1..=max_degree);
        let constant = self.rng.gen_range(-1.0..1.0);
        let modes = (1..=degree)
            .map(|m| {
                let scale = 1.0 / (m * m) as f64;
                (
                    scale * self.rng.gen_range(-1.0..1.0),
                    scale * self.rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        Trig { constant, modes }
    }

    pub fn sample(&mut self, kind: ProfileKind) -> Result<SplineFunction> {
        let c = self.mesh.cusp();
        match kind {
            ProfileKind::Fourier => {
                let t = self.trig(6);
                SplineFunction::from_fn(self.mesh.clone(), |x| t.eval(x))
            }
            ProfileKind::CuspAdapted => {
                let gamma = self.rng.gen_range(1.2..3.0);
                let alpha = self.rng.gen_range(-2.0..2.0);
                let height = self.rng.gen_range(-1.0..1.0);
                let width = self.rng.gen_range(0.03..0.2);
                let tilt = self.rng.gen_range(-1.0..1.0);
                SplineFunction::from_fn(self.mesh.clone(), |x| {
                    let r = x - c;
                    alpha * r.abs().powf(gamma) + height * (-(r / width).powi(2)).exp() + tilt * x
                })
            }
            ProfileKind::NonNegative => {
                let t = self.trig(4);
                SplineFunction::from_fn(self.mesh.clone(), |x| (0.5 * t.eval(x)).exp())
            }
            ProfileKind::OddAboutCusp => {
                let t = self.trig(6);
                SplineFunction::from_fn(self.mesh.clone(), |x| t.eval(x) - t.eval(2.0 * c - x))
            }
        }
    }

    /// `count` functions cycling through every [`ProfileKind`].
    pub fn mixed(&mut self, count: usize) -> Result<Vec<SplineFunction>> {
        (0..count)
            .map(|i| self.sample(ProfileKind::ALL[i % ProfileKind::ALL.len()]))
            .collect()
    }

    pub fn of_kind(&mut self, kind: ProfileKind, count: usize) -> Result<Vec<SplineFunction>> {
        (0..count).map(|_| self.sample(kind)).collect()
    }

    /// Mixed functions projected onto zero mean.
    pub fn mean_zero(&mut self, count: usize) -> Result<Vec<SplineFunction>> {
        Ok(self
            .mixed(count)?
            .iter()
            .map(SplineFunction::mean_zero_project)
            .collect())
    }
}
