use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use tuckerwatch::anomaly::{user_scores, AnomalyRanking};
use tuckerwatch::clustering::{write_clusters_csv, write_dendrogram_csv, write_events_csv};
use tuckerwatch::decomposition::{AnovaReport, ScreeResult, TuckerModel};
use tuckerwatch::ingestion::{parse_log, preprocess, FeatureTensor, NotificationLog, Scaling, WindowSpec};
use tuckerwatch::pipeline::{self, Clustering, Events, PipelineConfig, Stage, StageContext};
use tuckerwatch::synth::{generate, SynthConfig};
use tuckerwatch::trajectory::{build_trajectories, read_trajectories_csv, write_trajectories_csv, Trajectory};
use tuckerwatch::Tensor3;

use crate::config::Resolved;
use crate::error::CliError;

pub const LOG_CSV: &str = "log.csv";
pub const TRUTH_JSON: &str = "truth.json";
pub const TENSOR_TXT: &str = "tensor.txt";
pub const USERS_TXT: &str = "users.txt";
pub const SCALING_JSON: &str = "scaling.json";
pub const ANOVA_JSON: &str = "anova.json";
pub const SCREE_CSV: &str = "scree.csv";
pub const MODEL_TXT: &str = "model.txt";
pub const RANKING_CSV: &str = "ranking.csv";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const CENTERS_CSV: &str = "centers.csv";
pub const DENDROGRAM_CSV: &str = "dendrogram.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

type CliResult<T> = Result<T, CliError>;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> tuckerwatch::Result<()>,
) -> CliResult<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| CliError::io(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> CliResult<()> {
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    })
}

fn open_intermediate(dir: &Path, name: &str, producer: &str) -> CliResult<(PathBuf, BufReader<File>)> {
    let path = dir.join(name);
    match File::open(&path) {
        Ok(f) => Ok((path, BufReader::new(f))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::missing(&path, producer)),
        Err(e) => Err(CliError::io(&path, e)),
    }
}

fn read_intermediate<T>(
    dir: &Path,
    name: &str,
    producer: &str,
    parse: impl FnOnce(BufReader<File>) -> tuckerwatch::Result<T>,
) -> CliResult<T> {
    let (path, r) = open_intermediate(dir, name, producer)?;
    parse(r).map_err(|e| CliError::io(&path, e))
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> CliResult<()> {
    let (log, truth) = generate(cfg).map_err(|e| CliError::config(e.to_string()))?;
    create_dir(out)?;
    write_file(out, LOG_CSV, |w| log.write_csv(w))?;
    write_json(out, TRUTH_JSON, &truth)
}

fn load_log(r: &Resolved) -> CliResult<NotificationLog> {
    let path = r
        .input
        .as_deref()
        .ok_or_else(|| CliError::config("no input log; pass --input or set `input` in the config"))?;
    let file = File::open(path).map_err(|e| CliError::config(format!("cannot open input {}: {e}", path.display())))?;
    let window = WindowSpec {
        start: r.pipeline.window_start,
        hours: r.pipeline.window_hours,
    };
    parse_log(BufReader::new(file), window).map_err(|e| CliError::stage(Stage::Ingest, e))
}

fn write_features(out: &Path, ft: &FeatureTensor, scaling: &Scaling) -> CliResult<()> {
    write_file(out, TENSOR_TXT, |w| ft.tensor.write_text(w))?;
    write_file(out, USERS_TXT, |w| {
        for u in &ft.user_ids {
            writeln!(w, "{u}")?;
        }
        Ok(())
    })?;
    write_json(out, SCALING_JSON, scaling)
}

fn read_features(dir: &Path) -> CliResult<FeatureTensor> {
    let tensor = read_intermediate(dir, TENSOR_TXT, "ingest", Tensor3::read_text)?;
    let users = read_intermediate(dir, USERS_TXT, "ingest", |r| {
        use std::io::BufRead;
        r.lines()
            .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
            .collect::<std::io::Result<Vec<String>>>()
            .map_err(Into::into)
    })?;
    FeatureTensor::new(tensor, users).map_err(|e| CliError::io(&dir.join(TENSOR_TXT), e))
}

fn read_model(dir: &Path) -> CliResult<TuckerModel> {
    read_intermediate(dir, MODEL_TXT, "decompose", TuckerModel::read_text)
}

fn read_trajectories(dir: &Path, name: &str, producer: &str) -> CliResult<Vec<Trajectory>> {
    read_intermediate(dir, name, producer, read_trajectories_csv)
}

pub fn ingest(r: &Resolved) -> CliResult<()> {
    let log = load_log(r)?;
    let raw = pipeline::extract_features(&log, &r.pipeline).stage(Stage::Ingest)?;
    let (ft, scaling) = preprocess(&raw).stage(Stage::Ingest)?;
    create_dir(&r.out)?;
    write_features(&r.out, &ft, &scaling)
}

fn write_decomposition(out: &Path, anova: &AnovaReport, scree: &ScreeResult, model: &TuckerModel) -> CliResult<()> {
    let report = json!({
        "main_effect_pct": { "users": anova.main_effect_pct[0], "features": anova.main_effect_pct[1], "hours": anova.main_effect_pct[2] },
        "two_way_pct": { "users_features": anova.two_way_pct[0], "users_hours": anova.two_way_pct[1], "features_hours": anova.two_way_pct[2] },
        "three_way_pct": anova.three_way_pct,
        "max_two_way_pct": anova.max_two_way_pct(),
    });
    write_json(out, ANOVA_JSON, &report)?;
    write_file(out, SCREE_CSV, |w| {
        writeln!(w, "p,q,r,fit_percent,selected")?;
        for g in &scree.grid {
            let sel = u8::from(g.ranks() == scree.selected);
            writeln!(
                w,
                "{},{},{},{},{}",
                g.p,
                g.q,
                g.r,
                tuckerwatch::tensor::format_f64(g.fit_percent),
                sel
            )?;
        }
        Ok(())
    })?;
    write_file(out, MODEL_TXT, |w| model.write_text(w))
}

pub fn decompose(r: &Resolved) -> CliResult<()> {
    let ft = read_features(&r.out)?;
    let d = pipeline::decompose(&ft, &r.pipeline).stage(Stage::Decompose)?;
    write_decomposition(&r.out, &d.anova, &d.scree, &d.model)
}

pub fn rank(r: &Resolved) -> CliResult<()> {
    let model = read_model(&r.out)?;
    let users = read_features(&r.out)?.user_ids;
    let ranking = user_scores(&model, &users).stage(Stage::Rank)?;
    write_ranking(&r.out, &ranking)
}

pub fn trajectories(r: &Resolved) -> CliResult<()> {
    let model = read_model(&r.out)?;
    let ft = read_features(&r.out)?;
    let t = build_trajectories(&ft, &model).stage(Stage::Trajectories)?;
    write_file(&r.out, TRAJECTORIES_CSV, |w| write_trajectories_csv(&t, w))
}

fn write_clustering(out: &Path, t: &[Trajectory], c: &Clustering) -> CliResult<()> {
    write_file(out, CLUSTERS_CSV, |w| write_clusters_csv(t, &c.labels, w))?;
    write_file(out, CENTERS_CSV, |w| write_trajectories_csv(&c.centers, w))?;
    write_file(out, DENDROGRAM_CSV, |w| write_dendrogram_csv(&c.dendrogram, w))
}

pub fn cluster(r: &Resolved) -> CliResult<()> {
    let t = read_trajectories(&r.out, TRAJECTORIES_CSV, "trajectories")?;
    let c = pipeline::cluster(&t, r.pipeline.cutoff).stage(Stage::Cluster)?;
    write_clustering(&r.out, &t, &c)
}

fn write_events(out: &Path, e: &Events) -> CliResult<()> {
    write_file(out, EVENTS_CSV, |w| write_events_csv(&e.windows, w))
}

pub fn events(r: &Resolved) -> CliResult<()> {
    let centers = read_trajectories(&r.out, CENTERS_CSV, "cluster")?;
    let e = pipeline::find_events(&centers, r.pipeline.k_mad, r.pipeline.min_duration).stage(Stage::Events)?;
    write_events(&r.out, &e)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    input: Option<String>,
    records: usize,
    users: usize,
    window_start: i64,
    window_hours: usize,
    config: &'a PipelineConfig,
    selected_ranks: [usize; 3],
    fit_percent: f64,
    degenerate_hmm_fits: usize,
    clusters: usize,
    event_windows: usize,
    degenerate_clusters: &'a [usize],
    outputs: Vec<&'static str>,
}

pub fn run_pipeline(r: &Resolved) -> CliResult<()> {
    let log = load_log(r)?;
    let run = pipeline::run(&log, &r.pipeline)?;
    let out = &r.out;
    create_dir(out)?;
    write_features(out, &run.features, &run.scaling)?;
    let d = &run.decomposition;
    write_decomposition(out, &d.anova, &d.scree, &d.model)?;
    write_ranking(out, &run.ranking)?;
    write_file(out, TRAJECTORIES_CSV, |w| write_trajectories_csv(&run.trajectories, w))?;
    write_clustering(out, &run.trajectories, &run.clustering)?;
    write_events(out, &run.events)?;
    let (p, q, rr) = d.model.ranks();
    let manifest = Manifest {
        tool: "tuckerwatch",
        version: tuckerwatch::VERSION,
        input: r.input.as_ref().map(|p| p.display().to_string()),
        records: log.records.len(),
        users: run.features.user_ids.len(),
        window_start: log.window_start,
        window_hours: log.window_hours,
        config: &r.pipeline,
        selected_ranks: [p, q, rr],
        fit_percent: d.model.fit_percent,
        degenerate_hmm_fits: run.raw.degenerate_fits,
        clusters: run.clustering.centers.len(),
        event_windows: run.events.windows.len(),
        degenerate_clusters: &run.events.degenerate_clusters,
        outputs: vec![
            TENSOR_TXT,
            USERS_TXT,
            SCALING_JSON,
            ANOVA_JSON,
            SCREE_CSV,
            MODEL_TXT,
            RANKING_CSV,
            TRAJECTORIES_CSV,
            CLUSTERS_CSV,
            CENTERS_CSV,
            DENDROGRAM_CSV,
            EVENTS_CSV,
        ],
    };
    write_json(out, MANIFEST_JSON, &manifest)
}

fn write_ranking(out: &Path, ranking: &AnomalyRanking) -> CliResult<()> {
    write_file(out, RANKING_CSV, |w| ranking.write_csv(w))
}
