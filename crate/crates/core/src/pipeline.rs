//! Directory-level stages: `prepare` a raw log, `train` on a prepared
//! directory, `eval` and `analyze` a checkpoint. Every output directory gets
//! one `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, FORMAT_VERSION};
use crate::config::TrainConfig;
use crate::dataset::PreparedData;
use crate::error::{Error, Result};
use crate::evaluator::{category_delta, distance_hist, predict_model, slice_report, MetricsReport};
use crate::ingest::{parse_checkins, DatasetFormat, IngestOptions};
use crate::model::{GraphSet, Model};
use crate::plot::{grouped_bars, Series};
use crate::scenario::CityCenterSet;
use crate::trainer::{History, Trainer};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPHS_DIR: &str = "graphs";
/// Checkpoint file naming the prepared directory it was trained on,
/// relative to the checkpoint when possible.
pub const PREPARED_REF_FILE: &str = "prepared.txt";

/// Provenance of one output directory. Times are the first and last
/// check-in of the data rather than wall-clock time, so reruns are
/// byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub artifact_format: u32,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// SHA-256 of every input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub data_first_checkin: Option<String>,
    pub data_last_checkin: Option<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &TrainConfig, data: Option<&PreparedData>) -> Self {
        let config = cfg
            .to_kv_string()
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let span = data.and_then(data_span);
        let iso = |t: i64| DateTime::from_timestamp(t, 0).map(|d| d.to_rfc3339());
        RunManifest {
            tool: "scenario-hg".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            artifact_format: FORMAT_VERSION,
            command: command.into(),
            seed: cfg.seed,
            config,
            inputs: BTreeMap::new(),
            data_first_checkin: span.and_then(|(a, _)| iso(a)),
            data_last_checkin: span.and_then(|(_, b)| iso(b)),
            notes: Vec::new(),
        }
    }

    pub fn hash_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), &self.to_json())
    }
}

fn data_span(data: &PreparedData) -> Option<(i64, i64)> {
    let ts = data
        .train
        .iter()
        .chain(&data.test)
        .flat_map(|t| t.checkins.iter().map(|c| c.timestamp));
    ts.fold(None, |acc, t| match acc {
        None => Some((t, t)),
        Some((a, b)) => Some((a.min(t), b.max(t))),
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOptions {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    /// Required for Gowalla; Foursquare falls back to the NYC/Tokyo centers.
    pub centers: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareSummary {
    pub users: usize,
    pub pois: usize,
    pub train: usize,
    pub test: usize,
    pub graph_files: Vec<String>,
}

pub fn prepare(opts: &PrepareOptions, cfg: &TrainConfig, out: &Path) -> Result<PrepareSummary> {
    cfg.validate()?;
    let centers = match (&opts.centers, opts.format) {
        (Some(path), _) => CityCenterSet::load(path)?,
        (None, DatasetFormat::Foursquare) => CityCenterSet::foursquare_default(),
        (None, DatasetFormat::Gowalla) => {
            return Err(Error::Config(
                "gowalla data has no built-in city centers; pass --centers <file> with one `name<TAB>lat<TAB>lon` line per center".into(),
            ))
        }
    };
    let ingest = IngestOptions {
        format: opts.format,
        default_tz_offset_min: cfg.tz_offset_min,
        min_poi_checkins: cfg.min_poi_checkins,
        min_user_checkins: cfg.min_user_checkins,
    };
    let (checkins, catalog) = parse_checkins(&opts.dataset, &ingest)?;
    let data = PreparedData::from_checkins(&checkins, catalog, &centers, cfg)?;
    create_dir(out)?;
    data.save(out)?;
    let graphs = GraphSet::build_with(&data, cfg.geo_threshold_km, false)?;
    let graph_files = graphs.export(&out.join(GRAPHS_DIR))?;
    write_file(&out.join(checkpoint::CONFIG_FILE), &cfg.to_kv_string())?;

    let mut manifest = RunManifest::new("prepare", cfg, Some(&data));
    manifest.hash_input("dataset", &opts.dataset)?;
    if let Some(c) = &opts.centers {
        manifest.hash_input("centers", c)?;
    }
    manifest.notes.push(format!("format={}", opts.format));
    if !data.catalog.has_categories() {
        manifest
            .notes
            .push("no POI categories: every user labelled local".into());
    }
    manifest.write(out)?;
    log::info!(
        "prepared {} users, {} POIs, {} train / {} test trajectories",
        data.num_users(),
        data.num_pois(),
        data.train.len(),
        data.test.len()
    );
    Ok(PrepareSummary {
        users: data.num_users(),
        pois: data.num_pois(),
        train: data.train.len(),
        test: data.test.len(),
        graph_files,
    })
}

fn hash_prepared(manifest: &mut RunManifest, prepared: &Path) -> Result<()> {
    for name in ["users.tsv", "pois.tsv", "trajectories.tsv"] {
        manifest.hash_input(&format!("prepared/{name}"), &prepared.join(name))?;
    }
    Ok(())
}

pub fn train(prepared: &Path, cfg: &TrainConfig, out: &Path) -> Result<History> {
    cfg.validate()?;
    let data = PreparedData::load(prepared)?;
    let graphs = GraphSet::build(&data, cfg)?;
    let model = Model::init(&graphs, cfg);
    let outcome = Trainer::new(cfg, &data, &graphs).train(model)?;
    let mut manifest = RunManifest::new("train", cfg, Some(&data));
    hash_prepared(&mut manifest, prepared)?;
    manifest.notes.push(format!(
        "parameters: {} base tensors, {} after splitting",
        outcome.model.registry.base_count(),
        outcome.model.registry.total_count()
    ));
    if let Some(e) = outcome.history.best_epoch {
        manifest.notes.push(format!("retained epoch {e}"));
    }
    checkpoint::save(
        out,
        cfg,
        &outcome.model,
        &outcome.optimizer,
        &outcome.history,
        &[
            (MANIFEST_FILE, manifest.to_json()),
            (PREPARED_REF_FILE, format!("{}\n", prepared_reference(prepared, out)?.display())),
        ],
    )?;
    Ok(outcome.history)
}

fn prepared_reference(prepared: &Path, ckpt_dir: &Path) -> Result<PathBuf> {
    let prepared = std::path::absolute(prepared).map_err(|e| Error::io(prepared, e))?;
    let ckpt_dir = std::path::absolute(ckpt_dir).map_err(|e| Error::io(ckpt_dir, e))?;
    Ok(pathdiff::diff_paths(&prepared, &ckpt_dir).unwrap_or(prepared))
}

/// The prepared directory a checkpoint was trained on.
pub fn prepared_dir(ckpt_dir: &Path) -> Result<PathBuf> {
    let path = ckpt_dir.join(PREPARED_REF_FILE);
    let text = fs::read_to_string(&path).map_err(|_| {
        Error::Config(format!(
            "{} does not name its prepared directory; pass --prepared",
            ckpt_dir.display()
        ))
    })?;
    Ok(ckpt_dir.join(text.trim_end_matches(['\n', '\r'])))
}

struct Loaded {
    data: PreparedData,
    graphs: GraphSet,
    ckpt: checkpoint::Checkpoint,
}

fn load_run(prepared: &Path, ckpt_dir: &Path) -> Result<Loaded> {
    checkpoint::read_format(ckpt_dir)?;
    let cfg = checkpoint::load_config(ckpt_dir)?;
    let data = PreparedData::load(prepared)?;
    let graphs = GraphSet::build(&data, &cfg)?;
    let ckpt = checkpoint::load(ckpt_dir, &graphs)?;
    Ok(Loaded { data, graphs, ckpt })
}

fn run_manifest(command: &str, run: &Loaded, prepared: &Path, ckpt_dir: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(command, &run.ckpt.config, Some(&run.data));
    hash_prepared(&mut manifest, prepared)?;
    manifest.hash_input("checkpoint/tensors.bin", &ckpt_dir.join(checkpoint::TENSORS_FILE))?;
    Ok(manifest)
}

pub fn eval(prepared: &Path, ckpt_dir: &Path, out: &Path) -> Result<MetricsReport> {
    let run = load_run(prepared, ckpt_dir)?;
    let preds = predict_model(&run.ckpt.model, &run.graphs, &run.data.test, &run.data.test_labels)?;
    let report = slice_report(&preds);
    create_dir(out)?;
    write_file(&out.join("report.json"), &report.to_json())?;
    write_file(&out.join("report.csv"), &report.to_csv())?;
    run_manifest("eval", &run, prepared, ckpt_dir)?.write(out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeSummary {
    pub category_delta: bool,
    pub distance_series: usize,
}

pub fn analyze(prepared: &Path, ckpt_dir: &Path, out: &Path) -> Result<AnalyzeSummary> {
    let run = load_run(prepared, ckpt_dir)?;
    let preds = predict_model(&run.ckpt.model, &run.graphs, &run.data.test, &run.data.test_labels)?;
    create_dir(out)?;
    let mut manifest = run_manifest("analyze", &run, prepared, ckpt_dir)?;

    let hist = distance_hist(&preds, &run.data.catalog);
    write_file(&out.join("distance_hist.csv"), &hist.to_csv())?;
    if let Some(overall) = hist.series.first() {
        let svg = grouped_bars(
            "Distance from last check-in (km)",
            &hist.bin_labels(),
            &[
                Series {
                    name: "predicted".into(),
                    values: overall.predicted.clone(),
                },
                Series {
                    name: "true".into(),
                    values: overall.truth.clone(),
                },
            ],
        );
        write_file(&out.join("distance_hist.svg"), &svg)?;
    }

    let delta = category_delta(&preds, &run.data.catalog);
    match &delta {
        Some(d) => {
            write_file(&out.join("category_delta.csv"), &d.to_csv())?;
            let mut cats: Vec<String> = d
                .slices
                .iter()
                .flat_map(|(_, s)| s.iter().map(|c| c.category.clone()))
                .collect();
            cats.sort();
            cats.dedup();
            let series = d
                .slices
                .iter()
                .map(|(slice, shares)| Series {
                    name: slice.clone(),
                    values: cats
                        .iter()
                        .map(|c| shares.iter().find(|s| &s.category == c).map_or(0.0, |s| s.delta))
                        .collect(),
                })
                .collect::<Vec<_>>();
            write_file(
                &out.join("category_delta.svg"),
                &grouped_bars("Predicted minus true category share", &cats, &series),
            )?;
        }
        None => {
            let notice = "category delta skipped: the dataset has no POI categories";
            log::info!("{notice}");
            manifest.notes.push(notice.into());
        }
    }
    manifest.write(out)?;
    Ok(AnalyzeSummary {
        category_delta: delta.is_some(),
        distance_series: hist.series.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{scenario_corpus, ScenarioCorpusParams};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            dim: 4,
            layers: 1,
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stages_write_expected_files() {
        let root = tempfile::tempdir().unwrap();
        let params = ScenarioCorpusParams {
            users: 10,
            pois: 20,
            trajectories_per_user: 6,
            hotels: 2,
            ..Default::default()
        };
        let raw = root.path().join("raw.tsv");
        scenario_corpus(&params).write_foursquare(&raw).unwrap();
        let cfg = small_cfg();
        let prep = root.path().join("prep");
        let summary = prepare(
            &PrepareOptions {
                dataset: raw.clone(),
                format: DatasetFormat::Foursquare,
                centers: None,
            },
            &cfg,
            &prep,
        )
        .unwrap();
        assert_eq!(summary.graph_files.len(), 9);
        assert_eq!(fs::read_dir(prep.join(GRAPHS_DIR)).unwrap().count(), 9);
        assert!(prep.join(MANIFEST_FILE).exists());

        let ckpt = root.path().join("ckpt");
        let history = train(&prep, &cfg, &ckpt).unwrap();
        assert_eq!(history.epochs.len(), 2);
        for f in ["tensors.bin", "registry.tsv", "history.csv", "splits.tsv", MANIFEST_FILE] {
            assert!(ckpt.join(f).exists(), "{f}");
        }
        assert_eq!(fs::canonicalize(prepared_dir(&ckpt).unwrap()).unwrap(), fs::canonicalize(&prep).unwrap());
        let report = eval(&prep, &ckpt, &root.path().join("eval")).unwrap();
        assert_eq!(report.overall().unwrap().count, summary.test);
        let a = analyze(&prep, &ckpt, &root.path().join("analysis")).unwrap();
        assert!(a.category_delta);
        assert!(root.path().join("analysis/distance_hist.svg").exists());
        assert!(root.path().join("analysis/category_delta.csv").exists());
    }

    #[test]
    fn gowalla_without_centers_is_a_usage_error() {
        let err = prepare(
            &PrepareOptions {
                dataset: "missing.tsv".into(),
                format: DatasetFormat::Gowalla,
                centers: None,
            },
            &small_cfg(),
            Path::new("unused"),
        )
        .unwrap_err();
        assert!(err.is_usage());
    }
}
