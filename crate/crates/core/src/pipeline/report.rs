//! Evaluation reports and the mode × scenario ablation grid.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::{assemble_dataset, Dataset, DatasetConfig, DecisionBuilder, Mode};
use super::train::{evaluate, train, Confusion, TrainConfig};
use crate::codec::ChannelConfig;
use crate::error::{Error, Result};
use crate::hgat::{forward, GraphInput, ModelParams};
use crate::scenario::{Episode, ScenarioKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub mode: Mode,
    pub instances: usize,
    pub ad: f64,
    pub ear: f64,
    pub majority_rate: f64,
    pub confusion: Confusion,
    pub packets_sent: usize,
    pub packets_lost: usize,
    pub ps_mean_bytes: f64,
    pub ps_max_bytes: usize,
}

impl ScenarioReport {
    pub fn new(scenario: ScenarioKind, mode: Mode, data: &Dataset, params: &ModelParams) -> Self {
        let c = evaluate(&data.samples, params);
        ScenarioReport {
            scenario,
            mode,
            instances: data.len(),
            ad: c.ad(),
            ear: c.ear(),
            majority_rate: c.majority_rate(),
            confusion: c,
            packets_sent: data.packets.sent,
            packets_lost: data.packets.lost,
            ps_mean_bytes: data.packets.mean_bytes(),
            ps_max_bytes: data.packets.max_bytes,
        }
    }
}

/// Wall-clock cost of single decisions. Kept out of [`EvalReport`] so that
/// reports are reproducible byte for byte.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub decisions: usize,
    pub mean_nodes: f64,
    pub max_nodes: usize,
    pub build_ms_mean: f64,
    pub merge_ms_mean: f64,
    pub forward_ms_mean: f64,
    pub total_ms_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenarios: Vec<ScenarioReport>,
}

impl EvalReport {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.scenarios {
            s.push_str(&serde_json::to_string(r).expect("report serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let scenarios = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Input(format!("bad report line: {e}"))))
            .collect::<Result<_>>()?;
        Ok(EvalReport { scenarios })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<6} {:>9} {:>6} {:>6} {:>6} {:>9} {:>8}",
            "scenario", "mode", "instances", "AD", "EAR", "major", "PS mean", "PS max"
        );
        for r in &self.scenarios {
            let _ = writeln!(
                s,
                "{:<16} {:<6} {:>9} {:>6.3} {:>6.3} {:>6.3} {:>9.1} {:>8}",
                r.scenario.name(),
                r.mode.name(),
                r.instances,
                r.ad,
                r.ear,
                r.majority_rate,
                r.ps_mean_bytes,
                r.ps_max_bytes
            );
        }
        s
    }
}

/// Times graph building, merging and the forward pass for the decisions of
/// `episodes`, visiting at most `limit` decisions per episode.
pub fn measure_latency(
    episodes: &[Episode],
    mode: Mode,
    channel: &ChannelConfig,
    config: &DatasetConfig,
    params: &ModelParams,
    limit: usize,
) -> Result<LatencyStats> {
    let mut st = LatencyStats::default();
    let (mut build, mut merge_t, mut fwd, mut nodes) = (0.0, 0.0, 0.0, 0usize);
    for ep in episodes {
        let b = DecisionBuilder {
            episode: ep,
            mode,
            channel,
            config,
        };
        let mut rngs = b.link_rngs();
        for step in b.steps().take(limit) {
            let mut packets = Default::default();
            let (m, t) = b.merged(step, &mut rngs, &mut packets)?;
            let t0 = Instant::now();
            let g = GraphInput::from_merged(&m, ep.command, &config.scale);
            let _ = forward(&g, params);
            let f = t0.elapsed().as_secs_f64() * 1e3;
            st.decisions += 1;
            build += t.build_ms;
            merge_t += t.merge_ms;
            fwd += f;
            nodes += t.nodes;
            st.max_nodes = st.max_nodes.max(t.nodes);
            st.total_ms_max = st.total_ms_max.max(t.build_ms + t.merge_ms + f);
        }
    }
    if st.decisions > 0 {
        let n = st.decisions as f64;
        st.build_ms_mean = build / n;
        st.merge_ms_mean = merge_t / n;
        st.forward_ms_mean = fwd / n;
        st.mean_nodes = nodes as f64 / n;
    }
    Ok(st)
}

/// One trained model of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub scenario: ScenarioKind,
    pub mode: Mode,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub report: ScenarioReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            modes: Mode::ALL.to_vec(),
            seeds: (0..5).collect(),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationReport {
    pub fn cells_of(&self, scenario: ScenarioKind, mode: Mode) -> impl Iterator<Item = &AblationCell> {
        self.cells
            .iter()
            .filter(move |c| c.scenario == scenario && c.mode == mode)
    }

    pub fn median_ad(&self, scenario: ScenarioKind, mode: Mode) -> f64 {
        median(self.cells_of(scenario, mode).map(|c| c.report.ad).collect())
    }

    pub fn median_ear(&self, scenario: ScenarioKind, mode: Mode) -> f64 {
        median(self.cells_of(scenario, mode).map(|c| c.report.ear).collect())
    }

    pub fn scenarios(&self) -> Vec<ScenarioKind> {
        let mut s: Vec<_> = self.cells.iter().map(|c| c.scenario).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn modes(&self) -> Vec<Mode> {
        let mut m: Vec<_> = self.cells.iter().map(|c| c.mode).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            s.push_str(&serde_json::to_string(c).expect("cell serializes"));
            s.push('\n');
        }
        s
    }

    /// Median AD / EAR over seeds, one row per mode.
    pub fn to_table(&self) -> String {
        let scenarios = self.scenarios();
        let mut s = format!("{:<6}", "mode");
        for k in &scenarios {
            let _ = write!(s, " | {:^17}", k.name());
        }
        s.push('\n');
        let _ = write!(s, "{:<6}", "");
        for _ in &scenarios {
            let _ = write!(s, " | {:>8} {:>8}", "AD", "EAR");
        }
        s.push('\n');
        for m in self.modes() {
            let _ = write!(s, "{:<6}", m.name());
            for &k in &scenarios {
                let _ = write!(s, " | {:>8.3} {:>8.3}", self.median_ad(k, m), self.median_ear(k, m));
            }
            s.push('\n');
        }
        s
    }
}

/// Trains and evaluates every mode × seed for each scenario split.
pub fn run_ablation_matrix(
    splits: &[(ScenarioKind, Vec<Episode>, Vec<Episode>)],
    channel: &ChannelConfig,
    config: &AblationConfig,
) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for (kind, train_eps, test_eps) in splits {
        for &mode in &config.modes {
            let train_set = assemble_dataset(train_eps, mode, channel, &config.dataset)?;
            let test_set = assemble_dataset(test_eps, mode, channel, &config.dataset)?;
            for &seed in &config.seeds {
                let tc = TrainConfig {
                    seed,
                    ..config.train.clone()
                };
                let out = train(&train_set.samples, &tc)?;
                let r = ScenarioReport::new(*kind, mode, &test_set, &out.params);
                log::info!(
                    "{kind} {mode} seed {seed}: loss {:.4} -> {:.4}, AD {:.3}, EAR {:.3}",
                    out.initial_loss,
                    out.epoch_losses.last().copied().unwrap_or(f64::NAN),
                    r.ad,
                    r.ear
                );
                report.cells.push(AblationCell {
                    scenario: *kind,
                    mode,
                    seed,
                    initial_loss: out.initial_loss,
                    final_loss: *out.epoch_losses.last().unwrap(),
                    report: r,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
