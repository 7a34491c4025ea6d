//! Synthetic EEG with a tunable class separability.
//!
//! Class `c` at separability `s` is zero-mean Gaussian with covariance
//! `I + s·α·u_c u_cᵀ`, the `u_c` being four fixed orthonormal directions.
//! At `s = 0` every class (and rest) is white noise, which models streaming
//! from an unworn cap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{covariance_of, MiClass, RiemannError, SpdMatrix, CLASS_COUNT};
use crate::config::EegConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    /// channels × samples
    pub data: DMatrix<f64>,
    pub label: Option<MiClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegSynth {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub alpha: f64,
    basis: Vec<DVector<f64>>,
}

impl EegSynth {
    pub fn new(cfg: &EegConfig) -> Self {
        assert!(cfg.channels >= CLASS_COUNT, "need at least {CLASS_COUNT} channels");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.basis_seed);
        let g = DMatrix::from_fn(cfg.channels, CLASS_COUNT, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let basis = (0..CLASS_COUNT).map(|c| q.column(c).into_owned()).collect();
        Self {
            channels: cfg.channels,
            samples: cfg.window_samples,
            sample_rate: cfg.sample_rate,
            alpha: cfg.alpha,
            basis,
        }
    }

    pub fn direction(&self, class: MiClass) -> &DVector<f64> {
        &self.basis[class.index()]
    }

    /// Population covariance of a class; `None` is rest (identity).
    pub fn class_covariance(&self, class: Option<MiClass>, separability: f64) -> DMatrix<f64> {
        let mut sigma = DMatrix::identity(self.channels, self.channels);
        if let Some(c) = class {
            let u = self.direction(c);
            sigma += u * u.transpose() * (separability * self.alpha);
        }
        sigma
    }

    /// One sample column drawn from the class distribution.
    pub fn sample(&self, class: Option<MiClass>, separability: f64, rng: &mut impl Rng) -> DVector<f64> {
        let mut z = DVector::from_fn(self.channels, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Some(c) = class {
            let u = self.direction(c);
            let gain = (1.0 + separability.max(0.0) * self.alpha).sqrt() - 1.0;
            let proj = u.dot(&z);
            z.axpy(gain * proj, u, 1.0);
        }
        z
    }

    pub fn window(&self, class: Option<MiClass>, separability: f64, rng: &mut impl Rng) -> SignalWindow {
        let mut data = DMatrix::zeros(self.channels, self.samples);
        for j in 0..self.samples {
            data.set_column(j, &self.sample(class, separability, rng));
        }
        SignalWindow { data, label: class }
    }
}

/// Rolling one-window EEG buffer advanced in simulator time.
///
/// The buffer starts full of rest samples so a covariance is always available.
#[derive(Debug, Clone)]
pub struct EegStream {
    synth: EegSynth,
    separability: f64,
    ring: DMatrix<f64>,
    head: usize,
    emitted: u64,
    rng: ChaCha8Rng,
}

impl EegStream {
    pub fn new(synth: EegSynth, separability: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ring = synth.window(None, separability, &mut rng).data;
        Self { synth, separability, ring, head: 0, emitted: 0, rng }
    }

    pub fn separability(&self) -> f64 {
        self.separability
    }

    /// Generates the samples falling in simulated time up to `t`, all drawn
    /// from `class`.
    pub fn advance_to(&mut self, t: f64, class: Option<MiClass>) {
        let target = (t * self.synth.sample_rate).floor().max(0.0) as u64;
        while self.emitted < target {
            let x = self.synth.sample(class, self.separability, &mut self.rng);
            self.ring.set_column(self.head, &x);
            self.head = (self.head + 1) % self.ring.ncols();
            self.emitted += 1;
        }
    }

    /// Covariance of the current window (column order does not matter).
    pub fn covariance(&self, shrinkage: f64) -> Result<SpdMatrix, RiemannError> {
        covariance_of(&self.ring, shrinkage)
    }

    /// The current window in chronological order.
    pub fn window(&self) -> SignalWindow {
        let n = self.ring.ncols();
        let data = DMatrix::from_fn(self.ring.nrows(), n, |i, j| self.ring[(i, (self.head + j) % n)]);
        SignalWindow { data, label: None }
    }
}
