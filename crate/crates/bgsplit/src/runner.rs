//! Experiment runners: factor analysis, pseudo-label study, sweeps, and the
//! feature-transfer study.
//!
//! Every runner writes one directory per variant (populated under a
//! temporary name and atomically renamed at the end), then consolidated
//! `per_run.csv` / `summary.csv` tables and a `run_record.json`. A variant
//! that fails leaves previously completed variant directories intact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use bgsplit_core::dataset::{
    build_bg_manifest, build_subset_family, downsample_background, DatasetManifest,
};
use bgsplit_core::metrics::{average_reports, evaluate, EvalReport};
use bgsplit_core::model::ModelParams;
use bgsplit_core::pseudo::attach_pseudolabels;
use bgsplit_core::trainer::{freeze_trunk_and_retrain_head, train, TrainConfig, TrainLog};

use crate::checkpoint::save_checkpoint;
use crate::manifest::read_manifest;
use crate::report::{write_report_csv, write_report_json, write_train_log_csv, ReportFile};
use crate::spec::{
    DatasetSource, ExperimentSpec, MethodSpec, PseudoLabelSpec, RunKey, SweepSpec,
};
use crate::{Error, Result};

/// Outcome of one (variant, seed) training run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub run_hash: String,
    pub mean_ap: f64,
    pub mean_f1: f64,
}

/// Consolidated record of a whole experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub tool_version: String,
    pub created_unix_seconds: u64,
    pub runs: Vec<RunSummary>,
}

impl RunRecord {
    fn new(spec: &ExperimentSpec) -> Self {
        Self {
            spec_hash: spec.spec_hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            runs: Vec::new(),
        }
    }

    /// Seed-mean AP/F1 per variant, in first-appearance order.
    pub fn seed_means(&self) -> Vec<(String, f64, f64)> {
        let mut order: Vec<&str> = Vec::new();
        let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
        for run in &self.runs {
            if !acc.contains_key(run.variant.as_str()) {
                order.push(&run.variant);
            }
            let e = acc.entry(&run.variant).or_insert((0.0, 0.0, 0));
            e.0 += run.mean_ap;
            e.1 += run.mean_f1;
            e.2 += 1;
        }
        order
            .into_iter()
            .map(|name| {
                let (ap, f1, n) = acc[name];
                (name.to_string(), ap / n as f64, f1 / n as f64)
            })
            .collect()
    }

    /// Seed-mean AP of one variant.
    pub fn seed_mean_ap(&self, variant: &str) -> Option<f64> {
        self.seed_means()
            .into_iter()
            .find(|(name, _, _)| name == variant)
            .map(|(_, ap, _)| ap)
    }
}

/// The dataset pipeline shared by all runners: the (pseudo-labelled) source
/// manifest plus the built, background-remapped training manifest.
pub struct PreparedData {
    /// Source manifest with pseudo-labels attached (not background-remapped
    /// for synthetic sources).
    pub labeled_source: DatasetManifest,
    /// Manifest the default runs train on.
    pub built: DatasetManifest,
}

fn load_source(dataset: &DatasetSource) -> Result<DatasetManifest> {
    match dataset {
        DatasetSource::Synthetic { spec, .. } => {
            Ok(bgsplit_core::dataset::generate_synthetic_longtail(spec)?)
        }
        DatasetSource::Manifest { path } => read_manifest(path),
    }
}

/// Attach pseudo-labels to the source and build the training manifest.
pub fn prepare_data(dataset: &DatasetSource, pseudo: &PseudoLabelSpec) -> Result<PreparedData> {
    let source = load_source(dataset)?;
    let labeled_source = attach_pseudolabels(&source, &pseudo.resolve()?)?;
    let built = match dataset {
        DatasetSource::Synthetic { foreground, .. } => {
            build_bg_manifest(&labeled_source, foreground)?
        }
        DatasetSource::Manifest { .. } => labeled_source.clone(),
    };
    Ok(PreparedData {
        labeled_source,
        built,
    })
}

fn run_foreground(dataset: &DatasetSource, manifest: &DatasetManifest) -> Vec<String> {
    match dataset {
        DatasetSource::Synthetic { foreground, .. } => foreground.clone(),
        DatasetSource::Manifest { .. } => manifest.foreground_categories.clone(),
    }
}

/// Hash key for a plain (non-transfer) run.
fn plain_run_key(
    spec: &ExperimentSpec,
    foreground: Vec<String>,
    pseudo: &PseudoLabelSpec,
    downsample: Option<(f64, u64)>,
    config: &TrainConfig,
) -> RunKey {
    RunKey {
        dataset: spec.dataset.clone(),
        foreground,
        pseudo_labels: config.use_aux.then(|| pseudo.clone()),
        downsample: downsample.filter(|(fraction, _)| *fraction != 1.0),
        config: config.clone(),
    }
}

fn write_run_outputs(
    dir: &Path,
    params: &ModelParams,
    log: &TrainLog,
    report: Option<(&TrainConfig, &EvalReport)>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    save_checkpoint(dir.join("model.ckpt"), params)?;
    write_train_log_csv(dir.join("train_log.csv"), log)?;
    if let Some((config, report)) = report {
        write_report_json(
            dir.join("report.json"),
            &ReportFile {
                config: config.clone(),
                report: report.clone(),
            },
        )?;
        write_report_csv(dir.join("report.csv"), report)?;
    }
    Ok(())
}

/// Populate a variant directory under a temporary name, then atomically
/// rename it into place. An existing directory of the same name is replaced.
fn with_variant_dir(
    out_dir: &Path,
    variant: &str,
    body: impl FnOnce(&Path) -> Result<()>,
) -> Result<()> {
    let tmp = out_dir.join(format!(".tmp-{variant}"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(Error::io(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(Error::io(&tmp))?;
    match body(&tmp) {
        Ok(()) => {
            let final_dir = out_dir.join(variant);
            if final_dir.exists() {
                fs::remove_dir_all(&final_dir).map_err(Error::io(&final_dir))?;
            }
            fs::rename(&tmp, &final_dir).map_err(Error::io(&final_dir))?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn write_consolidated(out_dir: &Path, record: &RunRecord, axis: Option<&str>) -> Result<()> {
    let mut per_run = match axis {
        Some(axis) => format!("variant,{axis},seed,run_hash,mAP,meanF1\n"),
        None => String::from("variant,seed,run_hash,mAP,meanF1\n"),
    };
    for run in &record.runs {
        match axis {
            Some(_) => {
                // Variant names are "<method>@<value>"; split for the table.
                let (method, value) = run.variant.split_once('@').unwrap_or((run.variant.as_str(), ""));
                writeln!(
                    per_run,
                    "{method},{value},{},{},{:.6},{:.6}",
                    run.seed, run.run_hash, run.mean_ap, run.mean_f1
                )
                .unwrap();
            }
            None => {
                writeln!(
                    per_run,
                    "{},{},{},{:.6},{:.6}",
                    run.variant, run.seed, run.run_hash, run.mean_ap, run.mean_f1
                )
                .unwrap();
            }
        }
    }
    let per_run_path = out_dir.join("per_run.csv");
    fs::write(&per_run_path, per_run).map_err(Error::io(&per_run_path))?;

    let mut summary = match axis {
        Some(axis) => format!("variant,{axis},mAP,meanF1\n"),
        None => String::from("variant,mAP,meanF1\n"),
    };
    for (variant, ap, f1) in record.seed_means() {
        match axis {
            Some(_) => {
                let (method, value) = variant.split_once('@').unwrap_or((variant.as_str(), ""));
                writeln!(summary, "{method},{value},{ap:.6},{f1:.6}").unwrap();
            }
            None => writeln!(summary, "{variant},{ap:.6},{f1:.6}").unwrap(),
        }
    }
    let summary_path = out_dir.join("summary.csv");
    fs::write(&summary_path, summary).map_err(Error::io(&summary_path))?;

    let record_path = out_dir.join("run_record.json");
    let mut json =
        serde_json::to_string_pretty(record).map_err(|e| Error::Format(e.to_string()))?;
    json.push('\n');
    fs::write(&record_path, json).map_err(Error::io(&record_path))
}

fn output_dir(spec: &ExperimentSpec, out_override: Option<&Path>) -> PathBuf {
    out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&spec.output_dir))
}

/// The four canonical factor-analysis variants derived from a base config.
pub fn canonical_factor_methods(base: &TrainConfig) -> Vec<MethodSpec> {
    let make = |name: &str, thresholding: bool, aux: bool| MethodSpec {
        name: name.to_string(),
        config: TrainConfig {
            use_thresholding: thresholding,
            use_aux: aux,
            ..base.clone()
        },
    };
    vec![
        make("ft", false, false),
        make("aux", false, true),
        make("thresh", true, false),
        make("both", true, true),
    ]
}

fn expect_factor_methods(spec: &ExperimentSpec) -> Result<Vec<&MethodSpec>> {
    let expected = [
        ("ft", false, false),
        ("aux", false, true),
        ("thresh", true, false),
        ("both", true, true),
    ];
    let mut out = Vec::new();
    for (name, thresholding, aux) in expected {
        let m = spec
            .methods
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Format(format!("factor analysis needs a method named {name}")))?;
        if m.config.use_thresholding != thresholding || m.config.use_aux != aux {
            return Err(Error::Format(format!(
                "method {name} must have use_thresholding={thresholding} and use_aux={aux}"
            )));
        }
        out.push(m);
    }
    Ok(out)
}

/// Train and evaluate the four canonical variants (ft, aux, thresh, both)
/// for every seed.
pub fn run_factor_analysis(
    spec: &ExperimentSpec,
    out_override: Option<&Path>,
) -> Result<RunRecord> {
    spec.validate()?;
    let methods = expect_factor_methods(spec)?;
    let out_dir = output_dir(spec, out_override);
    fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
    let data = prepare_data(&spec.dataset, &spec.pseudo_labels)?;
    let mut record = RunRecord::new(spec);

    for method in methods {
        let runs = run_method_over_seeds(
            spec,
            &out_dir,
            &method.name,
            &method.config,
            &spec.pseudo_labels,
            &data.built,
            &spec.seeds,
        )?;
        record.runs.extend(runs);
    }
    write_consolidated(&out_dir, &record, None)?;
    Ok(record)
}

fn run_method_over_seeds(
    spec: &ExperimentSpec,
    out_dir: &Path,
    variant: &str,
    config: &TrainConfig,
    pseudo: &PseudoLabelSpec,
    manifest: &DatasetManifest,
    seeds: &[u64],
) -> Result<Vec<RunSummary>> {
    let mut runs = Vec::new();
    with_variant_dir(out_dir, variant, |dir| {
        for &seed in seeds {
            let config = TrainConfig {
                seed,
                ..config.clone()
            };
            let key = plain_run_key(
                spec,
                run_foreground(&spec.dataset, manifest),
                pseudo,
                None,
                &config,
            );
            let (params, log) = train(manifest, &config)?;
            let report = evaluate(&params, manifest, &config)?;
            write_run_outputs(
                &dir.join(format!("seed-{seed}")),
                &params,
                &log,
                Some((&config, &report)),
            )?;
            runs.push(RunSummary {
                variant: variant.to_string(),
                seed,
                run_hash: key.hash(),
                mean_ap: report.mean_ap,
                mean_f1: report.mean_f1,
            });
        }
        Ok(())
    })?;
    Ok(runs)
}

/// Train one model per pseudo-label source listed in `spec.sources`,
/// mirroring the label-source study. The single base method supplies the
/// hyperparameters; the `none` source disables the auxiliary loss.
pub fn run_pseudolabel_study(
    spec: &ExperimentSpec,
    out_override: Option<&Path>,
) -> Result<RunRecord> {
    spec.validate()?;
    if spec.methods.len() != 1 {
        return Err(Error::Format(
            "the pseudo-label study takes exactly one base method".into(),
        ));
    }
    if spec.sources.is_empty() {
        return Err(Error::Format("the pseudo-label study needs `sources`".into()));
    }
    let base = &spec.methods[0].config;
    let out_dir = output_dir(spec, out_override);
    fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
    let mut record = RunRecord::new(spec);

    for source in &spec.sources {
        let is_none = matches!(source.pseudo_labels, PseudoLabelSpec::None);
        let config = TrainConfig {
            use_aux: !is_none,
            ..base.clone()
        };
        let data = prepare_data(&spec.dataset, &source.pseudo_labels)?;
        let runs = run_method_over_seeds(
            spec,
            &out_dir,
            &source.name,
            &config,
            &source.pseudo_labels,
            &data.built,
            &spec.seeds,
        )?;
        record.runs.extend(runs);
    }
    write_consolidated(&out_dir, &record, None)?;
    Ok(record)
}

/// Sweep one axis (batch size, background fraction, or subset size) over
/// every method and seed.
pub fn run_sweep(spec: &ExperimentSpec, out_override: Option<&Path>) -> Result<RunRecord> {
    spec.validate()?;
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Format("sweep spec missing the `sweep` field".into()))?;
    let out_dir = output_dir(spec, out_override);
    fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
    let data = prepare_data(&spec.dataset, &spec.pseudo_labels)?;
    let mut record = RunRecord::new(spec);

    match sweep {
        SweepSpec::BatchSize { values } => {
            for method in &spec.methods {
                for &batch_size in values {
                    let config = TrainConfig {
                        batch_size,
                        ..method.config.clone()
                    };
                    let variant = format!("{}@{batch_size}", method.name);
                    let runs = run_method_over_seeds(
                        spec,
                        &out_dir,
                        &variant,
                        &config,
                        &spec.pseudo_labels,
                        &data.built,
                        &spec.seeds,
                    )?;
                    record.runs.extend(runs);
                }
            }
            write_consolidated(&out_dir, &record, Some("batch_size"))?;
        }
        SweepSpec::BgFraction { values, seed } => {
            for method in &spec.methods {
                for &fraction in values {
                    let manifest = downsample_background(&data.built, fraction, *seed)?;
                    let variant = format!("{}@{fraction}", method.name);
                    let downsample = Some((fraction, *seed));
                    let runs = run_downsampled(
                        spec,
                        &out_dir,
                        &variant,
                        &method.config,
                        &manifest,
                        downsample,
                    )?;
                    record.runs.extend(runs);
                }
            }
            write_consolidated(&out_dir, &record, Some("bg_fraction"))?;
        }
        SweepSpec::Subsets {
            subset_size,
            covering,
            seed,
        } => {
            let family =
                build_subset_family(&data.labeled_source, covering, *subset_size, *seed)?;
            for method in &spec.methods {
                let variant = format!("{}@{subset_size}", method.name);
                let mut runs = Vec::new();
                with_variant_dir(&out_dir, &variant, |dir| {
                    for &run_seed in &spec.seeds {
                        let config = TrainConfig {
                            seed: run_seed,
                            ..method.config.clone()
                        };
                        let mut reports = Vec::new();
                        for (i, entry) in family.subsets.iter().enumerate() {
                            let (params, log) = train(&entry.manifest, &config)?;
                            let report = evaluate(&params, &entry.manifest, &config)?;
                            write_run_outputs(
                                &dir.join(format!("seed-{run_seed}/subset-{i}")),
                                &params,
                                &log,
                                Some((&config, &report)),
                            )?;
                            reports.push(report);
                        }
                        let merged = average_reports(&reports)?;
                        let seed_dir = dir.join(format!("seed-{run_seed}"));
                        write_report_json(
                            seed_dir.join("report.json"),
                            &ReportFile {
                                config: config.clone(),
                                report: merged.clone(),
                            },
                        )?;
                        write_report_csv(seed_dir.join("report.csv"), &merged)?;
                        let key = RunKey {
                            dataset: spec.dataset.clone(),
                            foreground: covering.clone(),
                            pseudo_labels: config.use_aux.then(|| spec.pseudo_labels.clone()),
                            downsample: None,
                            config: config.clone(),
                        };
                        runs.push(RunSummary {
                            variant: variant.clone(),
                            seed: run_seed,
                            run_hash: key.hash(),
                            mean_ap: merged.mean_ap,
                            mean_f1: merged.mean_f1,
                        });
                    }
                    Ok(())
                })?;
                record.runs.extend(runs);
            }
            write_consolidated(&out_dir, &record, Some("subset_size"))?;
        }
    }
    Ok(record)
}

fn run_downsampled(
    spec: &ExperimentSpec,
    out_dir: &Path,
    variant: &str,
    config: &TrainConfig,
    manifest: &DatasetManifest,
    downsample: Option<(f64, u64)>,
) -> Result<Vec<RunSummary>> {
    let mut runs = Vec::new();
    with_variant_dir(out_dir, variant, |dir| {
        for &seed in &spec.seeds {
            let config = TrainConfig {
                seed,
                ..config.clone()
            };
            let key = plain_run_key(
                spec,
                run_foreground(&spec.dataset, manifest),
                &spec.pseudo_labels,
                downsample,
                &config,
            );
            let (params, log) = train(manifest, &config)?;
            let report = evaluate(&params, manifest, &config)?;
            write_run_outputs(
                &dir.join(format!("seed-{seed}")),
                &params,
                &log,
                Some((&config, &report)),
            )?;
            runs.push(RunSummary {
                variant: variant.to_string(),
                seed,
                run_hash: key.hash(),
                mean_ap: report.mean_ap,
                mean_f1: report.mean_f1,
            });
        }
        Ok(())
    })?;
    Ok(runs)
}

/// The feature-transfer study over two disjoint foreground sets.
///
/// Trains `ft` and `both` on S1, retrains the main head alone on S2 from
/// each S1 trunk, and trains `both` end-to-end on S2 as the reference;
/// evaluation is always on S2.
pub fn run_transfer_study(
    spec: &ExperimentSpec,
    out_override: Option<&Path>,
) -> Result<RunRecord> {
    spec.validate()?;
    let transfer = spec
        .transfer
        .as_ref()
        .ok_or_else(|| Error::Format("transfer spec missing the `transfer` field".into()))?;
    if transfer.s1.iter().any(|c| transfer.s2.contains(c)) {
        return Err(Error::Format(
            "transfer category sets S1 and S2 must be disjoint".into(),
        ))?;
    }
    let ft = spec
        .methods
        .iter()
        .find(|m| m.name == "ft")
        .ok_or_else(|| Error::Format("transfer study needs a method named ft".into()))?;
    let both = spec
        .methods
        .iter()
        .find(|m| m.name == "both")
        .ok_or_else(|| Error::Format("transfer study needs a method named both".into()))?;

    let out_dir = output_dir(spec, out_override);
    fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
    let data = prepare_data(&spec.dataset, &spec.pseudo_labels)?;
    let m1 = build_bg_manifest(&data.labeled_source, &transfer.s1)?;
    let m2 = build_bg_manifest(&data.labeled_source, &transfer.s2)?;
    // Head retraining uses the bg-splitting scoring rule without the
    // auxiliary loss, identically for both trunk initializations.
    let head_base = TrainConfig {
        use_aux: false,
        ..both.config.clone()
    };
    let mut record = RunRecord::new(spec);

    struct Stage {
        variant: &'static str,
        summaries: Vec<RunSummary>,
    }
    let mut stages: Vec<Stage> = ["ft_s1", "bgsplit_s1", "head_on_ft", "head_on_bgsplit", "full_bgsplit"]
        .into_iter()
        .map(|variant| Stage {
            variant,
            summaries: Vec::new(),
        })
        .collect();

    // Keyed by seed: stage-1 models and their run hashes.
    let mut s1_models: BTreeMap<u64, (ModelParams, String, ModelParams, String)> = BTreeMap::new();

    for stage_idx in 0..stages.len() {
        let variant = stages[stage_idx].variant;
        let mut summaries = Vec::new();
        with_variant_dir(&out_dir, variant, |dir| {
            for &seed in &spec.seeds {
                let seed_dir = dir.join(format!("seed-{seed}"));
                match variant {
                    "ft_s1" | "bgsplit_s1" => {
                        let base = if variant == "ft_s1" { &ft.config } else { &both.config };
                        let config = TrainConfig { seed, ..base.clone() };
                        let key = plain_run_key(
                            spec,
                            transfer.s1.clone(),
                            &spec.pseudo_labels,
                            None,
                            &config,
                        );
                        let (params, log) = train(&m1, &config)?;
                        let report = evaluate(&params, &m1, &config)?;
                        write_run_outputs(&seed_dir, &params, &log, Some((&config, &report)))?;
                        let entry = s1_models.entry(seed).or_insert_with(|| {
                            (params.clone(), String::new(), params.clone(), String::new())
                        });
                        if variant == "ft_s1" {
                            entry.0 = params;
                            entry.1 = key.hash();
                        } else {
                            entry.2 = params;
                            entry.3 = key.hash();
                        }
                        summaries.push(RunSummary {
                            variant: variant.to_string(),
                            seed,
                            run_hash: key.hash(),
                            mean_ap: report.mean_ap,
                            mean_f1: report.mean_f1,
                        });
                    }
                    "head_on_ft" | "head_on_bgsplit" => {
                        let (trunk, trunk_hash) = {
                            let entry = s1_models.get(&seed).expect("stage 1 runs first");
                            if variant == "head_on_ft" {
                                (entry.0.clone(), entry.1.clone())
                            } else {
                                (entry.2.clone(), entry.3.clone())
                            }
                        };
                        let config = TrainConfig { seed, ..head_base.clone() };
                        let key = RunKey {
                            dataset: spec.dataset.clone(),
                            foreground: transfer.s2.clone(),
                            pseudo_labels: None,
                            downsample: None,
                            config: config.clone(),
                        };
                        // Chain the trunk's provenance into the run hash.
                        let run_hash = {
                            use sha2::{Digest, Sha256};
                            let digest =
                                Sha256::digest(format!("{}:{}", key.hash(), trunk_hash).as_bytes());
                            digest.iter().map(|b| format!("{b:02x}")).collect::<String>()
                        };
                        let (params, log) = freeze_trunk_and_retrain_head(&trunk, &m2, &config)?;
                        let report = evaluate(&params, &m2, &config)?;
                        write_run_outputs(&seed_dir, &params, &log, Some((&config, &report)))?;
                        summaries.push(RunSummary {
                            variant: variant.to_string(),
                            seed,
                            run_hash,
                            mean_ap: report.mean_ap,
                            mean_f1: report.mean_f1,
                        });
                    }
                    "full_bgsplit" => {
                        let config = TrainConfig { seed, ..both.config.clone() };
                        let key = plain_run_key(
                            spec,
                            transfer.s2.clone(),
                            &spec.pseudo_labels,
                            None,
                            &config,
                        );
                        let (params, log) = train(&m2, &config)?;
                        let report = evaluate(&params, &m2, &config)?;
                        write_run_outputs(&seed_dir, &params, &log, Some((&config, &report)))?;
                        summaries.push(RunSummary {
                            variant: variant.to_string(),
                            seed,
                            run_hash: key.hash(),
                            mean_ap: report.mean_ap,
                            mean_f1: report.mean_f1,
                        });
                    }
                    _ => unreachable!(),
                }
            }
            Ok(())
        })?;
        stages[stage_idx].summaries = summaries;
    }

    for stage in stages {
        record.runs.extend(stage.summaries);
    }
    write_consolidated(&out_dir, &record, None)?;
    Ok(record)
}
