//! The two-bandwidth generalization-gap experiment.
//!
//! Two networks with one hidden KAF layer are trained on the same synthetic data from the same
//! initial parameters; only `gamma` differs. Per-step mini-batch risks are recorded for both.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{self, Dataset, DEFAULT_CLASS_SEP, DEFAULT_CLUSTER_STD};
use crate::error::{KafError, Result};
use crate::net::Network;
use crate::train::{gap_ratio, init_network, run_training, GapSeries, NetSpec, Optimizer, TrainConfig};
use crate::train::{AdamHyper, DEFAULT_MIXING_STD};

pub const DEFAULT_SEED: u64 = 0;
pub const SMOOTHING_WINDOW: usize = 25;
/// Smoothed training risk both arms must reach ...
pub const TRAIN_RISK_TARGET: f64 = 0.15;
/// ... within this many steps.
pub const TRAIN_RISK_HORIZON: usize = 500;
/// Required ratio of tail gaps, small gamma over large gamma.
pub const GAP_RATIO_TARGET: f64 = 1.3;
/// Ceiling on the large-gamma smoothed gap ...
pub const EARLY_GAP_CEILING: f64 = 1.25;
/// ... over this many initial steps.
pub const EARLY_HORIZON: usize = 200;
/// Fraction of final steps averaged for the tail gap.
pub const TAIL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub class_sep: f64,
    pub cluster_std: f64,
    pub hidden: usize,
    pub d: usize,
    pub r: f64,
    /// Large gamma first, small gamma second.
    pub gammas: [f64; 2],
    pub mixing_std: f64,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub t_steps: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            n_train: 1000,
            n_test: 1000,
            class_sep: DEFAULT_CLASS_SEP,
            cluster_std: DEFAULT_CLUSTER_STD,
            hidden: 10,
            d: 20,
            r: 3.0,
            gammas: [1.0, 0.005],
            mixing_std: DEFAULT_MIXING_STD,
            optimizer: Optimizer::Adam,
            lr: 0.001,
            t_steps: 2000,
            batch_size: 32,
            eval_batch_size: 32,
            window: SMOOTHING_WINDOW,
        }
    }
}

impl ExperimentConfig {
    pub fn net_spec(&self, gamma: f64) -> NetSpec {
        NetSpec {
            input_dim: data::INFORMATIVE_DIMS + data::NOISE_DIMS,
            hidden: vec![self.hidden],
            classes: 2,
            d: self.d,
            r: self.r,
            gamma,
            mixing_std: self.mixing_std,
        }
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            optimizer: self.optimizer,
            c: self.lr,
            t_steps: self.t_steps,
            batch_size: self.batch_size,
            eval_batch_size: self.eval_batch_size,
            seed: self.seed,
            adam: AdamHyper::default(),
            project_to: None,
        }
    }

    pub fn datasets(&self) -> Result<(Dataset<f64>, Dataset<f64>)> {
        let all = data::generate(self.n_train + self.n_test, self.seed, self.class_sep, self.cluster_std)?;
        data::split(&all, self.n_train)
    }

    /// `key = value` lines, the same syntax the CLI reads as a config file.
    pub fn manifest(&self) -> String {
        let adam = AdamHyper::default();
        let optimizer = match self.optimizer {
            Optimizer::Adam => "adam",
            Optimizer::SgdCOverT => "sgd",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("data_seed", self.seed.to_string());
        kv("init_seed", self.seed.to_string());
        kv("batch_seed", self.seed.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_test", self.n_test.to_string());
        kv("class_sep", self.class_sep.to_string());
        kv("cluster_std", self.cluster_std.to_string());
        kv("hidden", self.hidden.to_string());
        kv("d", self.d.to_string());
        kv("r", self.r.to_string());
        kv("gammas", format!("{},{}", self.gammas[0], self.gammas[1]));
        kv("mixing_std", self.mixing_std.to_string());
        kv("optimizer", optimizer.to_string());
        kv("lr", self.lr.to_string());
        kv("adam_beta1", adam.beta1.to_string());
        kv("adam_beta2", adam.beta2.to_string());
        kv("adam_eps", adam.eps.to_string());
        kv("t_steps", self.t_steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("eval_batch_size", self.eval_batch_size.to_string());
        kv("window", self.window.to_string());
        s
    }
}

/// Statistics of one arm, all on the moving-average curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub gamma: f64,
    /// First step (1-based) whose smoothed training risk is at most [`TRAIN_RISK_TARGET`].
    ///
    /// This and the other statistics skip the first `window - 1` steps, where the moving
    /// average is over fewer than `window` batches.
    pub reached_target_at: Option<usize>,
    pub min_train_in_horizon: f64,
    pub final_train: f64,
    pub final_test: f64,
    /// Mean smoothed gap over the final [`TAIL_FRACTION`] of steps.
    pub tail_gap: f64,
    /// Largest smoothed gap over the first [`EARLY_HORIZON`] steps.
    pub early_max_gap: f64,
}

impl ArmSummary {
    pub fn from_series(gamma: f64, series: &GapSeries, window: usize) -> Result<Self> {
        if series.is_empty() {
            return Err(KafError::InvalidArgument("empty gap series".into()));
        }
        let smooth = series.smoothed(window);
        let n = smooth.len();
        // statistics use full windows only; before that the average is over too few batches
        let first = window.clamp(1, n) - 1;
        let horizon = &smooth[first..n.min(TRAIN_RISK_HORIZON).max(first + 1)];
        let reached_target_at = horizon
            .iter()
            .position(|s| s.0 <= TRAIN_RISK_TARGET)
            .map(|i| i + first + 1);
        let min_train_in_horizon = horizon.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let tail = ((n as f64 * TAIL_FRACTION).ceil() as usize).max(1);
        let tail_gap = smooth[n - tail..].iter().map(|s| s.2).sum::<f64>() / tail as f64;
        let early_max_gap = smooth[first..n.min(EARLY_HORIZON).max(first + 1)]
            .iter()
            .map(|s| s.2)
            .fold(f64::NEG_INFINITY, f64::max);
        let (final_train, final_test, _) = smooth[n - 1];
        Ok(Self {
            gamma,
            reached_target_at,
            min_train_in_horizon,
            final_train,
            final_test,
            tail_gap,
            early_max_gap,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub gamma: f64,
    pub series: GapSeries,
    pub final_net: Network<f64>,
    pub summary: ArmSummary,
}

#[derive(Debug, Clone)]
pub struct Fig1Result {
    pub config: ExperimentConfig,
    /// Large gamma first.
    pub arms: [Arm; 2],
}

impl Fig1Result {
    /// Both arms reach the training-risk target within the horizon.
    pub fn trains(&self) -> bool {
        self.arms.iter().all(|a| a.summary.reached_target_at.is_some())
    }

    /// Tail gap of the small-gamma arm over that of the large-gamma arm.
    pub fn gap_ratio(&self) -> f64 {
        gap_ratio(self.arms[0].summary.tail_gap, self.arms[1].summary.tail_gap).0
    }

    pub fn gap_ordered(&self) -> bool {
        self.gap_ratio() >= GAP_RATIO_TARGET
    }

    pub fn late_overfit(&self) -> bool {
        self.arms[0].summary.early_max_gap <= EARLY_GAP_CEILING
    }

    pub fn all_pass(&self) -> bool {
        self.trains() && self.gap_ordered() && self.late_overfit()
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for a in &self.arms {
            let reached = a
                .summary
                .reached_target_at
                .map_or("never".to_string(), |t| t.to_string());
            let _ = writeln!(
                s,
                "gamma={}: reached train risk <= {TRAIN_RISK_TARGET} at step {reached}, min {:.4} in first {TRAIN_RISK_HORIZON}; final train {:.4}, test {:.4}; tail gap {:.4}; max gap in first {EARLY_HORIZON} steps {:.4}",
                a.gamma,
                a.summary.min_train_in_horizon,
                a.summary.final_train,
                a.summary.final_test,
                a.summary.tail_gap,
                a.summary.early_max_gap,
            );
        }
        let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{} both arms train below {TRAIN_RISK_TARGET} within {TRAIN_RISK_HORIZON} steps", mark(self.trains()));
        let _ = writeln!(
            s,
            "{} tail gap ratio {:.4} >= {GAP_RATIO_TARGET}",
            mark(self.gap_ordered()),
            self.gap_ratio()
        );
        let _ = writeln!(
            s,
            "{} gamma={} gap stays <= {EARLY_GAP_CEILING} for {EARLY_HORIZON} steps",
            mark(self.late_overfit()),
            self.arms[0].gamma
        );
        s
    }

    /// `gap_gamma_<g>.csv` for each arm, `summary.txt` and `manifest.txt` in `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for a in &self.arms {
            let path = dir.join(series_file_name(a.gamma));
            let mut buf = Vec::new();
            a.series.write_csv(&mut buf, Some(self.config.window))?;
            fs::write(&path, buf)?;
            written.push(path);
        }
        let summary = dir.join("summary.txt");
        fs::write(&summary, self.summary_text())?;
        written.push(summary);
        let mut manifest = self.config.manifest();
        for p in &written {
            if let Some(name) = p.file_name() {
                let _ = writeln!(manifest, "output = {}", name.to_string_lossy());
            }
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest)?;
        written.push(path);
        Ok(written)
    }
}

/// `gap_gamma_1.0.csv`, `gap_gamma_0.005.csv`.
pub fn series_file_name(gamma: f64) -> String {
    format!("gap_gamma_{gamma:?}.csv")
}

pub fn run_arm(cfg: &ExperimentConfig, gamma: f64, train: &Dataset<f64>, test: &Dataset<f64>) -> Result<Arm> {
    let net = init_network(&cfg.net_spec(gamma), cfg.seed)?;
    let (final_net, series) = run_training(net, train, test, &cfg.train_config())?;
    let summary = ArmSummary::from_series(gamma, &series, cfg.window)?;
    Ok(Arm {
        gamma,
        series,
        final_net,
        summary,
    })
}

/// Both arms on shared data, initialisation and batch streams.
pub fn reproduce_fig1(cfg: &ExperimentConfig) -> Result<Fig1Result> {
    let (train, test) = cfg.datasets()?;
    let [g_large, g_small] = cfg.gammas;
    let (large, small) = std::thread::scope(|s| {
        let h = s.spawn(|| run_arm(cfg, g_small, &train, &test));
        let large = run_arm(cfg, g_large, &train, &test);
        (large, h.join().expect("arm thread panicked"))
    });
    Ok(Fig1Result {
        config: cfg.clone(),
        arms: [large?, small?],
    })
}
