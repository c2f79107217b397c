//! Alpha-beta-gamma cost model: closed-form collective costs and the
//! per-phase ledger.
//!
//! `T = alpha * C1 + beta * C2 + gamma * C3` with `C1` communication
//! rounds, `C2` words on the critical path, and `C3` flops. The model time
//! is the sum of per-collective closed forms, not wall-clock. All `log p`
//! terms use the base-2 ceiling, matching binary tree collectives.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Latency, per-word, and per-flop cost coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn ceil_log2(p: usize) -> u32 {
    assert!(p >= 1, "log of zero group");
    (p as f64).log2().ceil() as u32
}

/// `T_broadcast(p, w) = (sqrt(alpha (ceil(log p) - 1)) + sqrt(beta w))^2`.
/// A group of one is a no-op.
pub fn t_broadcast(p: usize, words: f64, c: &CostParams) -> f64 {
    if p <= 1 {
        return 0.0;
    }
    let rounds = (ceil_log2(p) - 1) as f64;
    let s = (c.alpha * rounds).sqrt() + (c.beta * words).sqrt();
    s * s
}

/// `T_reduce(p, w) = 2 alpha log p + 2 beta (p-1)/p w + gamma (p-1)/p w`.
pub fn t_reduce(p: usize, words: f64, c: &CostParams) -> f64 {
    if p <= 1 {
        return 0.0;
    }
    let frac = (p as f64 - 1.0) / p as f64;
    2.0 * c.alpha * ceil_log2(p) as f64 + 2.0 * c.beta * frac * words + c.gamma * frac * words
}

/// All-reduce shares the reduce closed form.
pub fn t_allreduce(p: usize, words: f64, c: &CostParams) -> f64 {
    t_reduce(p, words, c)
}

/// Linear-combination reduce over `p` contributors to a separate
/// destination: a reduce over `p + 1` ranks plus the local scalings.
pub fn t_lincomb(p: usize, words: f64, c: &CostParams) -> f64 {
    t_reduce(p + 1, words, c) + c.gamma * words
}

/// Simulation phases tracked by the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Qr,
    Enc,
    Recov,
    Post,
    Comp,
}

pub const ALL_PHASES: [Phase; 5] = [Phase::Qr, Phase::Enc, Phase::Recov, Phase::Post, Phase::Comp];

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Phase::Qr => "qr",
            Phase::Enc => "enc",
            Phase::Recov => "recov",
            Phase::Post => "post",
            Phase::Comp => "comp",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    /// Latency rounds on the critical path.
    pub alpha_count: f64,
    /// Words moved on the critical path.
    pub beta_words: f64,
    /// Flops on the critical path.
    pub gamma_flops: f64,
    /// Sum of the closed-form costs charged to this phase.
    pub model_time: f64,
}

/// Accumulated model costs, one accumulator per phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub params: CostParams,
    phases: [PhaseCost; 5],
}

impl CostLedger {
    pub fn new(params: CostParams) -> Self {
        CostLedger { params, phases: [PhaseCost::default(); 5] }
    }

    fn slot(&mut self, phase: Phase) -> &mut PhaseCost {
        &mut self.phases[ALL_PHASES.iter().position(|&p| p == phase).unwrap()]
    }

    pub fn phase(&self, phase: Phase) -> &PhaseCost {
        &self.phases[ALL_PHASES.iter().position(|&p| p == phase).unwrap()]
    }

    pub fn total_time(&self) -> f64 {
        self.phases.iter().map(|p| p.model_time).sum()
    }

    /// One broadcast over `p` ranks. The closed form carries a latency x
    /// bandwidth cross term, so `model_time` exceeds the linear
    /// recombination of the bookkeeping counts for this charge.
    pub fn charge_broadcast(&mut self, phase: Phase, p: usize, words: f64) {
        let time = t_broadcast(p, words, &self.params);
        let rounds = if p <= 1 { 0.0 } else { (ceil_log2(p) - 1) as f64 };
        let slot = self.slot(phase);
        slot.alpha_count += rounds;
        slot.beta_words += words;
        slot.model_time += time;
    }

    pub fn charge_reduce(&mut self, phase: Phase, p: usize, words: f64) {
        let time = t_reduce(p, words, &self.params);
        let frac = if p <= 1 { 0.0 } else { (p as f64 - 1.0) / p as f64 };
        let slot = self.slot(phase);
        slot.alpha_count += 2.0 * ceil_log2(p.max(1)) as f64;
        slot.beta_words += 2.0 * frac * words;
        slot.gamma_flops += frac * words;
        slot.model_time += time;
    }

    pub fn charge_allreduce(&mut self, phase: Phase, p: usize, words: f64) {
        self.charge_reduce(phase, p, words);
    }

    /// `count` identical linear-combination reduces charged as a batch, so
    /// the phase total composes exactly like the closed-form overhead
    /// expressions.
    pub fn charge_lincomb_batch(&mut self, phase: Phase, count: usize, p: usize, words: f64) {
        if count == 0 {
            return;
        }
        let n = count as f64;
        let time = n * t_reduce(p + 1, words, &self.params) + self.params.gamma * (n * words);
        let frac = p as f64 / (p as f64 + 1.0);
        let slot = self.slot(phase);
        slot.alpha_count += n * 2.0 * ceil_log2(p + 1) as f64;
        slot.beta_words += n * 2.0 * frac * words;
        slot.gamma_flops += n * (frac * words) + n * words;
        slot.model_time += time;
    }

    /// `count` identical broadcasts charged as a batch.
    pub fn charge_broadcast_batch(&mut self, phase: Phase, count: usize, p: usize, words: f64) {
        if count == 0 {
            return;
        }
        let n = count as f64;
        let time = n * t_broadcast(p, words, &self.params);
        let rounds = if p <= 1 { 0.0 } else { (ceil_log2(p) - 1) as f64 };
        let slot = self.slot(phase);
        slot.alpha_count += n * rounds;
        slot.beta_words += n * words;
        slot.model_time += time;
    }

    /// `count` identical reduces charged as a batch.
    pub fn charge_reduce_batch(&mut self, phase: Phase, count: usize, p: usize, words: f64) {
        if count == 0 {
            return;
        }
        let n = count as f64;
        let time = n * t_reduce(p, words, &self.params);
        let frac = if p <= 1 { 0.0 } else { (p as f64 - 1.0) / p as f64 };
        let slot = self.slot(phase);
        slot.alpha_count += n * 2.0 * ceil_log2(p.max(1)) as f64;
        slot.beta_words += n * 2.0 * frac * words;
        slot.gamma_flops += n * frac * words;
        slot.model_time += time;
    }

    pub fn charge_flops(&mut self, phase: Phase, flops: f64) {
        let time = self.params.gamma * flops;
        let slot = self.slot(phase);
        slot.gamma_flops += flops;
        slot.model_time += time;
    }

    /// CSV rows `phase,alpha_count,beta_words,gamma_flops,model_time`.
    pub fn csv_rows(&self) -> Vec<[String; 5]> {
        ALL_PHASES
            .iter()
            .map(|&ph| {
                let c = self.phase(ph);
                [
                    ph.to_string(),
                    crate::io::format_f64(c.alpha_count),
                    crate::io::format_f64(c.beta_words),
                    crate::io::format_f64(c.gamma_flops),
                    crate::io::format_f64(c.model_time),
                ]
            })
            .collect()
    }
}
