use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::bundle::{
    ConnectivityRecord, FitRecord, FoldSummary, FoldTuning, RefinementResult, ResultBundle, RunOutput,
};
use super::config::{Mode, RunConfig, ValidationInput};
use super::folds::CvPlan;
use crate::connectivity::{
    attribute_models, connectivity_gain, infer_connectivity, ConnectivityModel, ModelKind, Provenance,
    RefinementTask, RegionActivations, RegionLayout, StrategyRegistry,
};
use crate::encoder::{fit, tune, EncoderModel, EncodingData, FitReport, Penalty, Standardizer};
use crate::error::{Error, Result};
use crate::featurestore::{
    check_video_ids, read_feature_set, read_response_store, FeatureMatrix, FeatureSet, ResponseSet,
};
use crate::metrics::{aggregate, score_region, RegionScore};
use crate::split::{derive_seed, holdout};

/// Scores a prediction; a prediction with no variance in any voxel scores
/// zero with every voxel counted as invalid.
pub(crate) fn score_or_zero(region: &str, subject: &str, fold: usize, pred: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<RegionScore> {
    match score_region(region, subject, fold, pred, gt) {
        Err(Error::Degenerate(_)) => Ok(RegionScore {
            region: region.into(),
            subject: subject.into(),
            fold,
            mean_r: 0.0,
            valid_voxels: 0,
            invalid_voxels: pred.ncols(),
        }),
        other => other,
    }
}

fn check_excludes(rows: &[usize], test: &BTreeSet<usize>, what: &str) -> Result<()> {
    match rows.iter().find(|r| test.contains(r)) {
        Some(v) => Err(Error::InvalidInput(format!("test video {v} leaked into {what}"))),
        None => Ok(()),
    }
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}

/// Loads the inputs named by `cfg` and runs it.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.check_paths()?;
    let features = read_feature_set(cfg.features.as_deref().unwrap())?;
    match cfg.mode {
        Mode::Real => {
            let subjects = read_response_store(cfg.responses.as_deref().unwrap())?;
            run_real(cfg, &features, &subjects)
        }
        Mode::Simulated => {
            let target = read_feature_set(cfg.target_features.as_deref().unwrap())?;
            run_simulated(cfg, &features, &target, &cfg.regions)
        }
    }
}

/// Runs features against measured responses of every subject.
pub fn run_real(cfg: &RunConfig, features: &FeatureSet, subjects: &[ResponseSet]) -> Result<RunOutput> {
    let pool = pool(cfg.parallelism)?;
    pool.install(|| {
        let projected = project(cfg, features)?;
        let mut cfg = cfg.clone();
        cfg.mode = Mode::Real;
        run_prepared(&cfg, &projected, subjects, "responses".to_string())
    })
}

/// Runs source features against target-network features, one block per
/// pseudo-region. An empty block list means every target layer.
pub fn run_simulated(cfg: &RunConfig, source: &FeatureSet, target: &FeatureSet, blocks: &[String]) -> Result<RunOutput> {
    let pool = pool(cfg.parallelism)?;
    pool.install(|| {
        check_video_ids(&source.manifest.video_ids, &target.manifest.video_ids, "target features")?;
        let src = project(cfg, source)?;
        let tgt = project(cfg, target)?;
        let names: Vec<String> = if blocks.is_empty() {
            tgt.layer_names().map(String::from).collect()
        } else {
            blocks.to_vec()
        };
        let mut regions: Vec<(String, FeatureMatrix)> = Vec::with_capacity(names.len());
        for b in &names {
            let m = tgt.layer(b).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "block `{b}` is not a layer of `{}`",
                    target.manifest.model_name
                ))
            })?;
            regions.push((b.clone(), m.clone()));
        }
        let set = ResponseSet::new("sim", tgt.manifest.video_ids.clone(), regions)?;
        let mut cfg = cfg.clone();
        cfg.mode = Mode::Simulated;
        cfg.regions = names;
        run_prepared(&cfg, &src, &[set], target.manifest.model_name.clone())
    })
}

fn project(cfg: &RunConfig, set: &FeatureSet) -> Result<FeatureSet> {
    if !cfg.projection.enabled || set.manifest.projection.is_some() {
        return Ok(set.clone());
    }
    set.project(derive_seed(cfg.seed, "projection"), cfg.projection.out_dim, cfg.projection.density)
}

struct FoldSplit {
    inner: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

struct EncoderResult {
    report: FitReport,
    model: EncoderModel,
    pred_val: DMatrix<f64>,
    pred_test: DMatrix<f64>,
    score: RegionScore,
}

#[derive(Debug, Clone, Copy)]
enum Rows {
    Truth,
    ValPrediction,
    TestPrediction,
}

#[derive(Debug, Clone, Copy)]
struct TaskKey {
    fold: usize,
    subject: usize,
    region: usize,
}

fn run_prepared(cfg: &RunConfig, features: &FeatureSet, all_subjects: &[ResponseSet], target_label: String) -> Result<RunOutput> {
    cfg.validate()?;
    if all_subjects.is_empty() {
        return Err(Error::EmptyInput("no subjects".into()));
    }
    let subjects: Vec<&ResponseSet> = if cfg.subjects.is_empty() {
        all_subjects.iter().collect()
    } else {
        cfg.subjects
            .iter()
            .map(|s| {
                all_subjects
                    .iter()
                    .find(|r| &r.subject == s)
                    .ok_or_else(|| Error::InvalidInput(format!("subject `{s}` not found")))
            })
            .collect::<Result<_>>()?
    };
    for s in &subjects {
        check_video_ids(&features.manifest.video_ids, &s.video_ids, &format!("subject {}", s.subject))?;
    }
    let regions: Vec<String> = if cfg.regions.is_empty() {
        subjects[0].region_names().map(String::from).collect()
    } else {
        cfg.regions.clone()
    };
    for s in &subjects {
        for r in &regions {
            if s.region(r).is_none() {
                return Err(Error::InvalidInput(format!("subject `{}` has no region `{r}`", s.subject)));
            }
        }
    }
    let tuning_subject = match &cfg.grid.tuning_subject {
        Some(t) => subjects
            .iter()
            .position(|s| &s.subject == t)
            .ok_or_else(|| Error::InvalidInput(format!("tuning subject `{t}` not found")))?,
        None => 0,
    };

    let n = features.num_videos();
    let layers: Vec<DMatrix<f64>> = features.layers.iter().map(FeatureMatrix::to_dmatrix).collect();
    let base = EncodingData::new(layers, DMatrix::zeros(n, 1), (0..n).collect())?;
    let plan = CvPlan::new(n, cfg.folds, cfg.fold_scheme, derive_seed(cfg.seed, "folds"))?;
    let splits: Vec<FoldSplit> = plan
        .folds
        .iter()
        .enumerate()
        .map(|(f, fold)| {
            let (inner, val) = holdout(&fold.train, cfg.inner_holdout, derive_seed(cfg.seed, &format!("inner/{f}")));
            FoldSplit {
                inner,
                val,
                test: fold.test.clone(),
            }
        })
        .collect();
    // Per-fold features, z-scored on the fold's training rows when enabled.
    let fold_bases: Vec<EncodingData> = plan
        .folds
        .iter()
        .map(|fold| {
            if cfg.standardize_features {
                let z = Standardizer::fit(&base.subset(&fold.train).layers);
                EncodingData::new(z.apply(&base.layers), DMatrix::zeros(n, 1), (0..n).collect())
            } else {
                Ok(base.clone())
            }
        })
        .collect::<Result<_>>()?;
    let responses: Vec<Vec<DMatrix<f64>>> = subjects
        .iter()
        .map(|s| regions.iter().map(|r| s.region(r).unwrap().to_dmatrix()).collect())
        .collect();

    // Tuning, once per fold on the tuning subject (or per subject).
    let tune_subjects: Vec<usize> = if cfg.tune_per_subject {
        (0..subjects.len()).collect()
    } else {
        vec![tuning_subject]
    };
    let tune_tasks: Vec<(usize, usize)> = (0..plan.k())
        .flat_map(|f| tune_subjects.iter().map(move |&s| (f, s)))
        .collect();
    let tuning: Vec<FoldTuning> = tune_tasks
        .par_iter()
        .map(|&(f, s)| {
            let train_rows = &plan.folds[f].train;
            let test: BTreeSet<usize> = plan.folds[f].test.iter().copied().collect();
            let sub = fold_bases[f].subset(train_rows);
            check_excludes(&sub.rows, &test, "tuning data")?;
            let data: Vec<(String, EncodingData)> = regions
                .iter()
                .enumerate()
                .map(|(r, name)| Ok((name.clone(), sub.with_responses(responses[s][r].select_rows(train_rows))?)))
                .collect::<Result<_>>()?;
            let seed = derive_seed(cfg.seed, &format!("tune/{f}/{}", subjects[s].subject));
            let res = tune(&cfg.grid, &data, &cfg.fit, seed)?;
            Ok(FoldTuning {
                fold: f,
                subject: subjects[s].subject.clone(),
                beta1: res.beta1,
                beta2: res.beta2,
                cells: res.cells,
            })
        })
        .collect::<Result<_>>()?;
    let penalty_for = |f: usize, s: usize| -> Penalty {
        let subject = if cfg.tune_per_subject { s } else { tuning_subject };
        let t = tuning
            .iter()
            .find(|t| t.fold == f && t.subject == subjects[subject].subject)
            .expect("every fold is tuned");
        Penalty {
            kind: cfg.fit.penalty_kind,
            ..Penalty::new(t.beta1, t.beta2)
        }
    };

    // Stage one: one encoder per (fold, subject, region).
    let (n_subjects, n_regions) = (subjects.len(), regions.len());
    let keys: Vec<TaskKey> = (0..plan.k())
        .flat_map(|fold| {
            (0..n_subjects).flat_map(move |subject| (0..n_regions).map(move |region| TaskKey { fold, subject, region }))
        })
        .collect();
    let encoders: Vec<EncoderResult> = keys
        .par_iter()
        .map(|k| {
            let split = &splits[k.fold];
            let test: BTreeSet<usize> = split.test.iter().copied().collect();
            let data = fold_bases[k.fold].with_responses(responses[k.subject][k.region].clone())?;
            let train = data.subset(&split.inner);
            let val = data.subset(&split.val);
            check_excludes(&train.rows, &test, "encoder training data")?;
            check_excludes(&val.rows, &test, "encoder validation data")?;
            let region = &regions[k.region];
            let (model, report) = fit(&train, &val, penalty_for(k.fold, k.subject), &cfg.fit, region)?;
            let test_x: Vec<DMatrix<f64>> = data.subset(&split.test).layers.to_vec();
            let pred_test = model.predict(&test_x)?;
            let pred_val = model.predict(&val.layers)?;
            let gt = responses[k.subject][k.region].select_rows(&split.test);
            let score = score_or_zero(region, &subjects[k.subject].subject, k.fold, &pred_test, &gt)?;
            Ok(EncoderResult {
                report,
                model,
                pred_val,
                pred_test,
                score,
            })
        })
        .collect::<Result<_>>()?;

    let reported = |subject: &str| !(cfg.exclude_tuning_subject && subject == subjects[tuning_subject].subject);
    let scores: Vec<RegionScore> = encoders.iter().map(|e| e.score.clone()).filter(|s| reported(&s.subject)).collect();
    let fits: Vec<FitRecord> = keys
        .iter()
        .zip(&encoders)
        .map(|(k, e)| FitRecord {
            subject: subjects[k.subject].subject.clone(),
            fold: k.fold,
            report: e.report.clone(),
        })
        .collect();

    // Stage two.
    let mut refinements = Vec::new();
    let mut conn_models = Vec::new();
    if let Some(conn) = &cfg.connectivity {
        let registry = StrategyRegistry::with_defaults();
        let layout = RegionLayout::new(
            &regions
                .iter()
                .enumerate()
                .map(|(r, name)| (name.clone(), responses[0][r].ncols()))
                .collect::<Vec<_>>(),
        )?;
        let index = |f: usize, s: usize, r: usize| (f * subjects.len() + s) * regions.len() + r;
        let activations = |f: usize, s: usize, source: Rows, rows: &[usize]| {
            let provenance = match source {
                Rows::Truth => Provenance::GroundTruth,
                _ => Provenance::Stage1Prediction,
            };
            let map: BTreeMap<String, DMatrix<f64>> = regions
                .iter()
                .enumerate()
                .map(|(r, name)| {
                    let m = match source {
                        Rows::Truth => responses[s][r].select_rows(rows),
                        Rows::ValPrediction => encoders[index(f, s, r)].pred_val.clone(),
                        Rows::TestPrediction => encoders[index(f, s, r)].pred_test.clone(),
                    };
                    (name.clone(), m)
                })
                .collect();
            RegionActivations::new(provenance, rows.to_vec(), map)
        };

        for t in &conn.targets {
            if !regions.contains(t) {
                return Err(Error::InvalidInput(format!("connectivity target `{t}` is not a selected region")));
            }
        }
        let conn_keys: Vec<TaskKey> = keys
            .iter()
            .copied()
            .filter(|k| conn.targets.is_empty() || conn.targets.contains(&regions[k.region]))
            .collect();
        let base_scores: Vec<RegionScore> = keys
            .iter()
            .zip(&encoders)
            .filter(|(k, _)| conn_keys.iter().any(|c| c.fold == k.fold && c.subject == k.subject && c.region == k.region))
            .map(|(_, e)| e.score.clone())
            .filter(|s| reported(&s.subject))
            .collect();
        for name in &conn.strategies {
            let strategy = registry.get(name)?;
            let results: Vec<(RegionScore, Option<(ConnectivityModel, Option<ConnectivityRecord>)>)> = conn_keys
                .par_iter()
                .map(|k| {
                    let split = &splits[k.fold];
                    let test: BTreeSet<usize> = split.test.iter().copied().collect();
                    check_excludes(&split.inner, &test, "connectivity training data")?;
                    check_excludes(&split.val, &test, "connectivity validation data")?;
                    let train = activations(k.fold, k.subject, Rows::Truth, &split.inner)?;
                    let val_truth = activations(k.fold, k.subject, Rows::Truth, &split.val)?;
                    let val_inputs = match conn.validation {
                        ValidationInput::Predictions => {
                            activations(k.fold, k.subject, Rows::ValPrediction, &split.val)?
                        }
                        ValidationInput::Responses => val_truth.clone(),
                    };
                    let test_inputs =
                        activations(k.fold, k.subject, Rows::TestPrediction, &split.test)?;
                    let target = &regions[k.region];
                    let subject = &subjects[k.subject].subject;
                    let task = RefinementTask {
                        layout: &layout,
                        target,
                        train: &train,
                        val_inputs: &val_inputs,
                        val_truth: &val_truth,
                        config: &conn.model,
                        seed: derive_seed(cfg.seed, &format!("conn/{name}/{}/{subject}/{target}", k.fold)),
                    };
                    let outcome = strategy.build(&task)?;
                    let gt = responses[k.subject][k.region].select_rows(&split.test);
                    let (refined, kept) = match outcome {
                        None => (encoders[index(k.fold, k.subject, k.region)].pred_test.clone(), None),
                        Some((model, report)) => {
                            let p = infer_connectivity(&model, &test_inputs)?;
                            let record = report.map(|report| ConnectivityRecord {
                                subject: subject.clone(),
                                fold: k.fold,
                                report,
                            });
                            (p, Some((model, record)))
                        }
                    };
                    Ok((score_or_zero(target, subject, k.fold, &refined, &gt)?, kept))
                })
                .collect::<Result<_>>()?;

            let refined_scores: Vec<RegionScore> =
                results.iter().map(|r| r.0.clone()).filter(|s| reported(&s.subject)).collect();
            let models: Vec<&ConnectivityModel> = results.iter().filter_map(|r| r.1.as_ref().map(|m| &m.0)).collect();
            let attribution = if models.iter().any(|m| matches!(m.kind, ModelKind::Learned(_))) {
                Some(attribute_models(&models)?)
            } else {
                None
            };
            let reports = results.iter().filter_map(|r| r.1.as_ref().and_then(|m| m.1.clone())).collect();
            refinements.push(RefinementResult {
                strategy: name.clone(),
                aggregates: aggregate(&refined_scores)?,
                gains: connectivity_gain(&base_scores, &refined_scores)?,
                scores: refined_scores,
                attribution,
                reports,
            });
            for (k, r) in conn_keys.iter().zip(results) {
                if let Some((model, _)) = r.1 {
                    conn_models.push((name.clone(), subjects[k.subject].subject.clone(), k.fold, model));
                }
            }
        }
    }

    let bundle = ResultBundle {
        mode: cfg.mode,
        source_model: features.manifest.model_name.clone(),
        target: target_label,
        regions: regions.clone(),
        subjects: subjects.iter().map(|s| s.subject.clone()).collect(),
        config: cfg.normalized(),
        folds: plan
            .folds
            .iter()
            .zip(&splits)
            .enumerate()
            .map(|(f, (fold, split))| FoldSummary {
                fold: f,
                train_videos: fold.train.len(),
                early_stopping_videos: split.val.len(),
                test_videos: fold.test.iter().map(|&v| features.manifest.video_ids[v].clone()).collect(),
            })
            .collect(),
        tuning,
        aggregates: aggregate(&scores)?,
        scores,
        fits,
        refinements,
        notes: vec![
            "scores are mean Pearson r over voxels; aggregates average subjects within a fold, then report mean and population std over folds".into(),
        ],
    };
    let encoders = keys
        .iter()
        .zip(encoders)
        .map(|(k, e)| (subjects[k.subject].subject.clone(), k.fold, e.model))
        .collect();
    Ok(RunOutput {
        bundle,
        encoders,
        connectivity: conn_models,
    })
}

/// Writes the bundle (and checkpoints when `save_models` is set) to `dir`.
pub fn write_run(output: &RunOutput, dir: &Path, save_models: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    output.bundle.write(&dir.join("bundle.json"))?;
    if save_models {
        let models = dir.join("models");
        std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        for (subject, fold, m) in &output.encoders {
            let path = models.join(format!("encoder_{subject}_fold{fold}_{}.bin", m.region));
            crate::encoder::write_encoder_checkpoint(m, &path)?;
        }
        for (strategy, subject, fold, m) in &output.connectivity {
            let path = models.join(format!("connectivity_{strategy}_{subject}_fold{fold}_{}.bin", m.target));
            crate::connectivity::write_connectivity_checkpoint(m, &path)?;
        }
    }
    Ok(())
}
