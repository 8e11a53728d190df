//! End-to-end orchestration: log → features → Tucker3 → ranking,
//! trajectories → clusters → event windows.

use serde::{Deserialize, Serialize};

use crate::anomaly::{user_scores, AnomalyRanking};
use crate::clustering::{
    cluster_centers, cut, detect_events, ward_cluster, Dendrogram, EventWindow, DEFAULT_K_MAD, DEFAULT_MIN_DURATION,
};
use crate::decomposition::{
    anova_interaction, hooi, scree_select, AnovaReport, ScreeOptions, ScreeResult, TuckerModel, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::ingestion::{
    build_feature_tensor, compute_deltas, preprocess, FeatureTensor, HmmFeatureConfig, NotificationLog, Scaling,
    DEFAULT_MIN_OBS, DEFAULT_WINDOW_HOURS,
};
use crate::trajectory::{build_trajectories, Trajectory};

pub const DEFAULT_CUTOFF: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Unix seconds; unset takes the earliest timestamp floored to the hour.
    pub window_start: Option<i64>,
    pub window_hours: usize,
    pub min_obs: usize,
    pub seed: u64,
    pub hmm_tol: f64,
    pub hmm_max_iter: usize,
    pub max_p: usize,
    pub max_q: usize,
    pub max_r: usize,
    pub tucker_tol: f64,
    pub tucker_max_iter: usize,
    pub sweep_budget: usize,
    pub cutoff: f64,
    pub k_mad: f64,
    pub min_duration: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_start: None,
            window_hours: DEFAULT_WINDOW_HOURS,
            min_obs: DEFAULT_MIN_OBS,
            seed: 0,
            hmm_tol: crate::hmm::DEFAULT_TOL,
            hmm_max_iter: crate::hmm::DEFAULT_MAX_ITER,
            max_p: 5,
            max_q: 5,
            max_r: 5,
            tucker_tol: DEFAULT_TOL,
            tucker_max_iter: DEFAULT_MAX_ITER,
            sweep_budget: ScreeOptions::default().sweep_budget,
            cutoff: DEFAULT_CUTOFF,
            k_mad: DEFAULT_K_MAD,
            min_duration: DEFAULT_MIN_DURATION,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.window_hours == 0 {
            return bad("window_hours must be positive".into());
        }
        if self.min_obs < 4 {
            return bad(format!("min_obs must be at least 4, got {}", self.min_obs));
        }
        if self.max_p == 0 || self.max_q == 0 || self.max_r == 0 {
            return bad("grid bounds must be positive".into());
        }
        if self.sweep_budget == 0 || self.hmm_max_iter == 0 || self.tucker_max_iter == 0 {
            return bad("sweep_budget and iteration limits must be positive".into());
        }
        for (name, v) in [
            ("hmm_tol", self.hmm_tol),
            ("tucker_tol", self.tucker_tol),
            ("cutoff", self.cutoff),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.k_mad >= 0.0) || !self.k_mad.is_finite() {
            return bad(format!("k_mad must be finite and non-negative, got {}", self.k_mad));
        }
        if self.min_duration == 0 {
            return bad("min_duration must be at least 1".into());
        }
        Ok(())
    }

    pub fn hmm(&self) -> HmmFeatureConfig {
        HmmFeatureConfig {
            min_obs: self.min_obs,
            seed: self.seed,
            tol: self.hmm_tol,
            max_iter: self.hmm_max_iter,
        }
    }

    pub fn scree(&self) -> ScreeOptions {
        ScreeOptions {
            sweep_budget: self.sweep_budget,
            tol: self.tucker_tol,
            max_iter: self.tucker_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Decompose,
    Rank,
    Trajectories,
    Cluster,
    Events,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Decompose => "decompose",
            Stage::Rank => "rank",
            Stage::Trajectories => "trajectories",
            Stage::Cluster => "cluster",
            Stage::Events => "events",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{} stage failed: {source}", stage.name())]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub anova: AnovaReport,
    pub scree: ScreeResult,
    pub model: TuckerModel,
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub dendrogram: Dendrogram,
    pub labels: Vec<usize>,
    pub centers: Vec<Trajectory>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Events {
    pub windows: Vec<EventWindow>,
    /// Cluster ids whose center had no spread to test against.
    pub degenerate_clusters: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub raw: FeatureTensor,
    pub features: FeatureTensor,
    pub scaling: Scaling,
    pub decomposition: Decomposition,
    pub ranking: AnomalyRanking,
    pub trajectories: Vec<Trajectory>,
    pub clustering: Clustering,
    pub events: Events,
}

/// Raw feature tensor of a log.
pub fn extract_features(log: &NotificationLog, cfg: &PipelineConfig) -> Result<FeatureTensor> {
    if log.is_empty() {
        return Err(Error::InvalidInput("notification log has no records".into()));
    }
    build_feature_tensor(&compute_deltas(log), &cfg.hmm())
}

/// ANOVA, scree selection and the final HOOI fit on a preprocessed tensor.
/// Grid bounds are clipped to the tensor extents.
pub fn decompose(x: &FeatureTensor, cfg: &PipelineConfig) -> Result<Decomposition> {
    let [i, j, k] = x.tensor.dims();
    let anova = anova_interaction(&x.tensor)?;
    let scree = scree_select(
        &x.tensor,
        cfg.max_p.min(i),
        cfg.max_q.min(j),
        cfg.max_r.min(k),
        &cfg.scree(),
    )?;
    let (p, q, r) = scree.selected;
    let model = hooi(&x.tensor, p, q, r, cfg.tucker_tol, cfg.tucker_max_iter)?;
    Ok(Decomposition { anova, scree, model })
}

pub fn cluster(trajectories: &[Trajectory], cutoff: f64) -> Result<Clustering> {
    let dendrogram = ward_cluster(trajectories)?;
    let labels = cut(&dendrogram, cutoff)?;
    let centers = cluster_centers(trajectories, &labels)?;
    Ok(Clustering {
        dendrogram,
        labels,
        centers,
    })
}

/// Event windows of every center, center `c` being cluster `c`.
pub fn find_events(centers: &[Trajectory], k_mad: f64, min_duration: usize) -> Result<Events> {
    let mut out = Events::default();
    for (c, center) in centers.iter().enumerate() {
        let det = detect_events(center, c, k_mad, min_duration)?;
        if det.degenerate {
            out.degenerate_clusters.push(c);
        }
        out.windows.extend(det.windows);
    }
    Ok(out)
}

pub fn run(log: &NotificationLog, cfg: &PipelineConfig) -> std::result::Result<PipelineRun, StageError> {
    cfg.validate().stage(Stage::Ingest)?;
    let raw = extract_features(log, cfg).stage(Stage::Ingest)?;
    let (features, scaling) = preprocess(&raw).stage(Stage::Ingest)?;
    let decomposition = decompose(&features, cfg).stage(Stage::Decompose)?;
    let ranking = user_scores(&decomposition.model, &features.user_ids).stage(Stage::Rank)?;
    let trajectories = build_trajectories(&features, &decomposition.model).stage(Stage::Trajectories)?;
    let clustering = cluster(&trajectories, cfg.cutoff).stage(Stage::Cluster)?;
    let events = find_events(&clustering.centers, cfg.k_mad, cfg.min_duration).stage(Stage::Events)?;
    Ok(PipelineRun {
        raw,
        features,
        scaling,
        decomposition,
        ranking,
        trajectories,
        clustering,
        events,
    })
}
