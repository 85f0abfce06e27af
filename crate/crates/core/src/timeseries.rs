//! Stream representation, lag-window maintenance, AR(p) simulation and
//! stability classification.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlsError};

/// Tolerance on the unit circle used by [`classify_stability`].
pub const STABILITY_TOL: f64 = 1e-6;

/// Default burn-in for stable processes.
pub const DEFAULT_STABLE_BURN_IN: usize = 500;

/// One observation of the stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: u64,
    pub value: f64,
}

impl Sample {
    pub fn new(index: u64, value: f64) -> Self {
        Self { index, value }
    }
}

/// Regressor `z_i = [X_{i-1}, ..., X_{i-p}]` for the sample at `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagVector {
    pub entries: Vec<f64>,
    pub index: u64,
}

impl LagVector {
    pub fn order(&self) -> usize {
        self.entries.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }
}

/// Ring buffer over the last `p` samples of a stream.
#[derive(Debug, Clone)]
pub struct LagWindow {
    buf: Vec<f64>,
    // slot of the most recent sample
    head: usize,
    seen: u64,
    last_index: Option<u64>,
}

impl LagWindow {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(SlsError::config("lag window order must be at least 1"));
        }
        Ok(Self {
            buf: vec![0.0; order],
            head: order - 1,
            seen: 0,
            last_index: None,
        })
    }

    pub fn order(&self) -> usize {
        self.buf.len()
    }

    pub fn is_warm(&self) -> bool {
        self.seen >= self.buf.len() as u64
    }

    pub fn samples_seen(&self) -> u64 {
        self.seen
    }

    /// Index the next pushed sample must carry, if any sample has been seen.
    pub fn next_index(&self) -> Option<u64> {
        self.last_index.map(|i| i + 1)
    }

    /// Validates and records `x`. Returns the regressor `z_i` of the pushed
    /// sample (its `p` predecessors, most recent first) once `p` samples
    /// precede it, so the caller sees the regression pair `(z_i, x_i)`.
    pub fn push(&mut self, x: Sample) -> Result<Option<LagVector>> {
        self.check(x)?;
        let z = if self.is_warm() {
            let mut entries = vec![0.0; self.order()];
            self.fill_regressor(&mut entries);
            Some(LagVector {
                entries,
                index: x.index,
            })
        } else {
            None
        };
        self.record(x);
        Ok(z)
    }

    /// Records `x` without materializing a regressor.
    pub fn push_value(&mut self, x: Sample) -> Result<()> {
        self.check(x)?;
        self.record(x);
        Ok(())
    }

    fn check(&self, x: Sample) -> Result<()> {
        if !x.value.is_finite() {
            return Err(SlsError::data(format!(
                "non-finite value {} at index {}",
                x.value, x.index
            )));
        }
        if let Some(last) = self.last_index {
            if x.index != last + 1 {
                return Err(SlsError::data(format!(
                    "sample index {} does not follow {}",
                    x.index, last
                )));
            }
        }
        Ok(())
    }

    fn record(&mut self, x: Sample) {
        self.head = (self.head + 1) % self.buf.len();
        self.buf[self.head] = x.value;
        self.seen += 1;
        self.last_index = Some(x.index);
    }

    /// Writes the regressor of the next sample (most recent lag first) into
    /// `out`. Returns false while the window is still warming up.
    pub fn fill_regressor(&self, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.buf.len());
        if !self.is_warm() {
            return false;
        }
        let p = self.buf.len();
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.buf[(self.head + p - k) % p];
        }
        true
    }

    /// Heap bytes owned by the window.
    pub fn heap_bytes(&self) -> usize {
        self.buf.capacity() * std::mem::size_of::<f64>()
    }
}

/// Innovation distribution of an AR process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Innovation {
    Gaussian {
        sigma: f64,
    },
    /// Student-t draws rescaled to have standard deviation `scale`.
    StudentT {
        df: f64,
        scale: f64,
    },
}

impl Innovation {
    pub fn std_dev(&self) -> f64 {
        match *self {
            Innovation::Gaussian { sigma } => sigma,
            Innovation::StudentT { scale, .. } => scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Innovation::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                SlsError::config(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            Innovation::StudentT { df, scale } if !(df > 2.0 && df.is_finite()) => {
                Err(SlsError::config(format!(
                    "student-t df must exceed 2 (finite variance), got {df}; scale {scale}"
                )))
            }
            Innovation::StudentT { scale, .. } if !(scale > 0.0 && scale.is_finite()) => Err(
                SlsError::config(format!("student-t scale must be positive, got {scale}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Parameters of a simulated AR(p) stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArProcessSpec {
    pub coeffs: Vec<f64>,
    pub innovation: Innovation,
    /// `None` selects the default: 500 for stable processes, 0 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ArProcessSpec {
    pub fn new(coeffs: Vec<f64>, innovation: Innovation, seed: u64) -> Self {
        Self {
            coeffs,
            innovation,
            burn_in: None,
            seed,
        }
    }

    pub fn gaussian(coeffs: Vec<f64>, sigma: f64, seed: u64) -> Self {
        Self::new(coeffs, Innovation::Gaussian { sigma }, seed)
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in
            .unwrap_or_else(|| match classify_stability(&self.coeffs).tag {
                StabilityTag::Stable => DEFAULT_STABLE_BURN_IN,
                _ => 0,
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(SlsError::config("AR order must be at least 1"));
        }
        if let Some(b) = self.coeffs.iter().find(|b| !b.is_finite()) {
            return Err(SlsError::config(format!("non-finite AR coefficient {b}")));
        }
        self.innovation.validate()
    }
}

enum InnovationSampler {
    Gaussian(Normal<f64>),
    StudentT(StudentT<f64>, f64),
}

impl InnovationSampler {
    fn new(innovation: &Innovation) -> Result<Self> {
        innovation.validate()?;
        Ok(match *innovation {
            Innovation::Gaussian { sigma } => InnovationSampler::Gaussian(
                Normal::new(0.0, sigma).map_err(|e| SlsError::config(e.to_string()))?,
            ),
            Innovation::StudentT { df, scale } => {
                let t = StudentT::new(df).map_err(|e| SlsError::config(e.to_string()))?;
                // unit-variance standardization
                InnovationSampler::StudentT(t, scale / (df / (df - 2.0)).sqrt())
            }
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InnovationSampler::Gaussian(n) => n.sample(rng),
            InnovationSampler::StudentT(t, factor) => t.sample(rng) * factor,
        }
    }
}

/// Lazy generator for an AR(p) stream started from a zero state.
pub struct ArSimulator {
    coeffs: Vec<f64>,
    lags: Vec<f64>,
    head: usize,
    rng: ChaCha8Rng,
    innovation: InnovationSampler,
    last_innovation: f64,
}

impl ArSimulator {
    pub fn new(spec: &ArProcessSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.order();
        let mut sim = Self {
            coeffs: spec.coeffs.clone(),
            lags: vec![0.0; p],
            head: p - 1,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            innovation: InnovationSampler::new(&spec.innovation)?,
            last_innovation: 0.0,
        };
        for _ in 0..spec.effective_burn_in() {
            sim.next_value();
        }
        Ok(sim)
    }

    /// Innovation used by the most recent draw.
    pub fn last_innovation(&self) -> f64 {
        self.last_innovation
    }

    pub fn next_value(&mut self) -> f64 {
        let p = self.coeffs.len();
        let mut x = 0.0;
        for (k, b) in self.coeffs.iter().enumerate() {
            x += b * self.lags[(self.head + p - k) % p];
        }
        let eps = self.innovation.draw(&mut self.rng);
        x += eps;
        self.last_innovation = eps;
        self.head = (self.head + 1) % p;
        self.lags[self.head] = x;
        x
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for slot in out {
            *slot = self.next_value();
        }
    }
}

impl Iterator for ArSimulator {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_value())
    }
}

/// Simulates `n` values of the process after discarding the burn-in.
pub fn simulate_ar(spec: &ArProcessSpec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(SlsError::config("simulation length must be at least 1"));
    }
    let mut sim = ArSimulator::new(spec)?;
    let mut out = vec![0.0; n];
    sim.fill(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityTag {
    Stable,
    UnitRoot,
    Explosive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityClass {
    pub tag: StabilityTag,
    pub max_root_modulus: f64,
}

/// Classifies the roots of `z^p - b1 z^(p-1) - ... - bp` against the unit
/// circle using the companion-matrix eigenvalues.
pub fn classify_stability(coeffs: &[f64]) -> StabilityClass {
    let modulus = max_root_modulus(coeffs);
    let tag = if modulus < 1.0 - STABILITY_TOL {
        StabilityTag::Stable
    } else if modulus <= 1.0 + STABILITY_TOL {
        StabilityTag::UnitRoot
    } else {
        StabilityTag::Explosive
    };
    StabilityClass {
        tag,
        max_root_modulus: modulus,
    }
}

fn max_root_modulus(coeffs: &[f64]) -> f64 {
    match coeffs.len() {
        0 => 0.0,
        1 => coeffs[0].abs(),
        p => {
            let mut companion = DMatrix::<f64>::zeros(p, p);
            for (j, b) in coeffs.iter().enumerate() {
                companion[(0, j)] = *b;
            }
            for i in 1..p {
                companion[(i, i - 1)] = 1.0;
            }
            companion
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max)
        }
    }
}
