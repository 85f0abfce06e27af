//! Block-by-block deviation monitoring against the pilot model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlsError};
use crate::estimation::{block_ls, pivot_chi2};
use crate::linalg::quad_form_slice;
use crate::pilot::{PilotModel, VarianceConvention};
use crate::sampler::{EventKind, Sampler, SamplerConfig, SamplerEvent, StartRule};
use crate::special::chi2_quantile;
use crate::timeseries::{LagWindow, Sample};

pub const DEFAULT_ALPHA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub start: u64,
    pub stop: u64,
    pub chi2: f64,
    pub threshold: f64,
    pub alarm: bool,
    pub beta_hat: Vec<f64>,
    pub degenerate: bool,
    pub acc_info: f64,
}

/// Output of one monitored sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorStep {
    pub index: u64,
    pub leverage: f64,
    pub verdict: Option<MonitorVerdict>,
    pub aborted: bool,
}

/// Runs the sampler in its restart loop and scores every completed block
/// with `(β̂ − β̂₀)ᵀ ΓᵀΓ (β̂ − β̂₀) / σ̂₀²`.
pub struct Monitor {
    sampler: Sampler,
    threshold: f64,
    alpha: f64,
    blocks: u64,
    alarms: u64,
    aborts: u64,
}

impl Monitor {
    pub fn new(pilot: Arc<PilotModel>, cfg: SamplerConfig, alpha: f64) -> Result<Self> {
        Self::with_rule(pilot, cfg, StartRule::Leverage, alpha)
    }

    pub fn with_rule(
        pilot: Arc<PilotModel>,
        cfg: SamplerConfig,
        rule: StartRule,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SlsError::config(format!("alpha {alpha} outside (0, 1)")));
        }
        let threshold = chi2_quantile(pilot.order() as u32, 1.0 - alpha)?;
        Ok(Self {
            sampler: Sampler::new(pilot, cfg, rule)?,
            threshold,
            alpha,
            blocks: 0,
            alarms: 0,
            aborts: 0,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    pub fn blocks(&self) -> u64 {
        self.blocks
    }

    pub fn alarms(&self) -> u64 {
        self.alarms
    }

    pub fn aborts(&self) -> u64 {
        self.aborts
    }

    pub fn prime(&mut self, x: Sample) -> Result<()> {
        self.sampler.prime(x)
    }

    pub fn step(&mut self, x: Sample) -> Result<Option<MonitorStep>> {
        let Some(SamplerEvent {
            index,
            leverage,
            kind,
        }) = self.sampler.step(x)?
        else {
            return Ok(None);
        };
        let mut out = MonitorStep {
            index,
            leverage,
            verdict: None,
            aborted: false,
        };
        match kind {
            EventKind::BlockCompleted(block) => {
                let verdict = self.score(&block)?;
                self.blocks += 1;
                self.alarms += verdict.alarm as u64;
                out.verdict = Some(verdict);
            }
            EventKind::SafeguardAbort { .. } => {
                self.aborts += 1;
                out.aborted = true;
            }
            _ => {}
        }
        Ok(Some(out))
    }

    fn score(&self, block: &crate::sampler::SlsBlock) -> Result<MonitorVerdict> {
        let pilot = self.sampler.pilot();
        let est = block_ls(block, VarianceConvention::default());
        let chi2 = pivot_chi2(&est, pilot.beta0().as_slice(), pilot.sigma0_sq())?;
        Ok(MonitorVerdict {
            start: block.start,
            stop: block.stop,
            chi2,
            threshold: self.threshold,
            alarm: !est.degenerate && chi2 > self.threshold,
            beta_hat: est.beta_hat.iter().copied().collect(),
            degenerate: est.degenerate,
            acc_info: block.acc_info,
        })
    }
}

/// Monitors a finite stream; samples before `pilot.n0()` only prime the lags.
pub fn monitor_stream(
    stream: impl IntoIterator<Item = Sample>,
    pilot: Arc<PilotModel>,
    cfg: SamplerConfig,
    alpha: f64,
) -> Result<Vec<MonitorVerdict>> {
    let n0 = pilot.n0() as u64;
    let mut m = Monitor::new(pilot, cfg, alpha)?;
    let mut verdicts = Vec::new();
    for x in stream {
        if x.index < n0 {
            m.prime(x)?;
        } else if let Some(MonitorStep {
            verdict: Some(v), ..
        }) = m.step(x)?
        {
            verdicts.push(v);
        }
    }
    Ok(verdicts)
}

/// Per-sample streaming leverage `(index, h̃)` for every sample with a full
/// lag history.
pub fn leverage_trace(
    stream: impl IntoIterator<Item = Sample>,
    pilot: &PilotModel,
    scale: f64,
) -> Result<Vec<(u64, f64)>> {
    let p = pilot.order();
    let mut lags = LagWindow::new(p)?;
    let mut z = vec![0.0; p];
    let mut out = Vec::new();
    for x in stream {
        if lags.fill_regressor(&mut z) {
            lags.push_value(x)?;
            let h = scale * quad_form_slice(pilot.precision_row_major(), &z).max(0.0);
            out.push((x.index, h));
        } else {
            lags.push_value(x)?;
        }
    }
    Ok(out)
}
