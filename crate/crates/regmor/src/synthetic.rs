//! Analytic snapshot manifolds standing in for PDE solutions.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::femesh::{structured_mesh, NodeRefs, ReferenceMesh};
use crate::geometry::{four_element_layout, unit_square, Chart, PolarChart};
use crate::{Error, Result, Vec2};

/// Height of the partitioned front at x₁ = 1.5 for μ = 0.
pub const FRONT_HEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    /// tanh(κ(x₁ − c(μ))) on the unit square, c(μ) = 0.3 + 0.4μ₁.
    SquareFront,
    /// exp(−10‖x − x_μ^c‖²) on the annulus r = 0.2, R = 1.
    AnnulusGaussian,
    /// ½(1 + tanh(κ(x₂ − ℓ_μ(x₁)))) on the four-element box, with the line
    /// ℓ_μ(x₁) = 0.5 + μ₂ + tan(μ₁)(x₁ − 1.5), which stays clear of the
    /// interior chord x₂ = 0.
    PartitionedFront,
}

impl ManifoldKind {
    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::SquareFront => "square_front",
            ManifoldKind::AnnulusGaussian => "annulus_gaussian",
            ManifoldKind::PartitionedFront => "partitioned_front",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "square_front" => Ok(ManifoldKind::SquareFront),
            "annulus_gaussian" => Ok(ManifoldKind::AnnulusGaussian),
            "partitioned_front" => Ok(ManifoldKind::PartitionedFront),
            _ => Err(Error::Input(format!("unknown manifold kind '{s}'"))),
        }
    }
}

/// Parameter box, formula constants and sampling plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Front sharpness κ; unused by the Gaussian.
    pub sharpness: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, n_train: usize, n_test: usize, seed: u64) -> Self {
        let (lo, hi, sharpness) = match kind {
            ManifoldKind::SquareFront => (vec![0.0], vec![1.0], 50.0),
            ManifoldKind::AnnulusGaussian => (vec![0.0, 0.0], vec![1.0, 1.0], 0.0),
            ManifoldKind::PartitionedFront => (vec![-0.1, -0.08], vec![0.1, 0.08], 40.0),
        };
        ManifoldSpec {
            kind,
            lo,
            hi,
            sharpness,
            n_train,
            n_test,
            seed,
        }
    }

    pub fn n_params(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Input("n_train and n_test must be at least 1".into()));
        }
        let expect = ManifoldSpec::new(self.kind, 1, 1, 0).n_params();
        if self.lo.len() != expect || self.hi.len() != expect {
            return Err(Error::Input(format!(
                "{} has {expect} parameters",
                self.kind.name()
            )));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite())
        {
            return Err(Error::Input("parameter box is degenerate".into()));
        }
        if self.kind != ManifoldKind::AnnulusGaussian && !(self.sharpness > 0.0) {
            return Err(Error::Input("front sharpness must be positive".into()));
        }
        Ok(())
    }

    /// Uniform training and test samples drawn from one seeded stream.
    pub fn sample(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    self.lo
                        .iter()
                        .zip(&self.hi)
                        .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                        .collect()
                })
                .collect()
        };
        let train = draw(self.n_train);
        let test = draw(self.n_test);
        Ok((train, test))
    }

    /// Field value at a physical point.
    pub fn field(&self, mu: &[f64], x: &Vec2) -> f64 {
        match self.kind {
            ManifoldKind::SquareFront => (self.sharpness * (x.x - front_position(mu[0]))).tanh(),
            ManifoldKind::AnnulusGaussian => {
                (-10.0 * (x - gaussian_center(mu)).norm_squared()).exp()
            }
            ManifoldKind::PartitionedFront => {
                let line = FRONT_HEIGHT + mu[1] + mu[0].tan() * (x.x - 1.5);
                0.5 * (1.0 + (self.sharpness * (x.y - line)).tanh())
            }
        }
    }

    /// Field values at the given points.
    pub fn values(&self, mu: &[f64], points: &[Vec2]) -> Vec<f64> {
        points.iter().map(|x| self.field(mu, x)).collect()
    }

    /// Snapshot matrix with one column per parameter.
    pub fn snapshots(&self, params: &[Vec<f64>], points: &[Vec2]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(points.len(), params.len());
        for (k, mu) in params.iter().enumerate() {
            for (j, x) in points.iter().enumerate() {
                m[(j, k)] = self.field(mu, x);
            }
        }
        m
    }

    /// Reference geometry of the manifold.
    pub fn chart(&self) -> Box<dyn Chart> {
        match self.kind {
            ManifoldKind::SquareFront => Box::new(unit_square()),
            ManifoldKind::AnnulusGaussian => {
                Box::new(PolarChart::new(0.2, 1.0).expect("annulus radii"))
            }
            ManifoldKind::PartitionedFront => Box::new(four_element_layout()),
        }
    }

    /// Structured mesh with `cells` cells per element side and the node references.
    pub fn mesh(&self, cells: (usize, usize), degree: usize) -> Result<(ReferenceMesh, NodeRefs)> {
        let chart = self.chart();
        let (mesh, refs) = structured_mesh(chart.as_ref(), cells, degree)?;
        Ok((mesh, refs))
    }
}

/// c(μ) = 0.3 + 0.4μ₁.
pub fn front_position(mu1: f64) -> f64 {
    0.3 + 0.4 * mu1
}

/// x_μ^c = (0.5 + 0.1μ₂)[cos 2πμ₁, sin 2πμ₁].
pub fn gaussian_center(mu: &[f64]) -> Vec2 {
    let (s, c) = (TAU * mu[0]).sin_cos();
    (0.5 + 0.1 * mu[1]) * Vec2::new(c, s)
}

pub fn gen_square_front(
    spec: &ManifoldSpec,
    mesh: &ReferenceMesh,
    params: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    generate(spec, ManifoldKind::SquareFront, mesh, params)
}

pub fn gen_annulus_gaussian(
    spec: &ManifoldSpec,
    mesh: &ReferenceMesh,
    params: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    generate(spec, ManifoldKind::AnnulusGaussian, mesh, params)
}

pub fn gen_partitioned_front(
    spec: &ManifoldSpec,
    mesh: &ReferenceMesh,
    params: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    generate(spec, ManifoldKind::PartitionedFront, mesh, params)
}

fn generate(
    spec: &ManifoldSpec,
    kind: ManifoldKind,
    mesh: &ReferenceMesh,
    params: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    if spec.kind != kind {
        return Err(Error::Input(format!(
            "spec is for {}, not {}",
            spec.kind.name(),
            kind.name()
        )));
    }
    spec.validate()?;
    if params.iter().any(|m| m.len() != spec.n_params()) {
        return Err(Error::Input(format!(
            "{} expects {} parameters",
            kind.name(),
            spec.n_params()
        )));
    }
    Ok(spec.snapshots(params, mesh.nodes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_by_name() {
        for k in [
            ManifoldKind::SquareFront,
            ManifoldKind::AnnulusGaussian,
            ManifoldKind::PartitionedFront,
        ] {
            assert_eq!(ManifoldKind::from_name(k.name()).unwrap(), k);
        }
        assert!(ManifoldKind::from_name("nope").is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let s = ManifoldSpec::new(ManifoldKind::PartitionedFront, 5, 3, 7);
        assert_eq!(s.sample().unwrap(), s.sample().unwrap());
        let (tr, te) = s.sample().unwrap();
        assert_eq!((tr.len(), te.len()), (5, 3));
        for m in tr.iter().chain(&te) {
            assert!(m[0] >= -0.1 && m[0] <= 0.1 && m[1] >= -0.08 && m[1] <= 0.08);
        }
    }
}
