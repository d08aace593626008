use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use crate::archive::Archive;
use crate::attack::{AttackConfig, ForaAttacker, ThreadedObserver};
use crate::data::{filter_categories, gen_synthetic, load_cifar10, ImageDataset, Provenance};
use crate::error::{Error, Result};
use crate::metrics::{encode_grid_ppm_with_comment, feature_similarity, write_report, FeatureSummary, MetricsReport};
use crate::models;
use crate::nn::{Precision, Scalar, Tensor};
use crate::protocol::{eval_forward, run_training, transcript_jsonl, Observer, SessionOutcome, SessionStatus};
use crate::rng::{streams, Rng};

/// Environment variable naming the directory all run outputs go under.
pub const OUTPUT_ROOT_ENV: &str = "SLL_OUTPUT_ROOT";
/// Images tiled into the truth/reconstruction grids.
pub const GRID_IMAGES: usize = 32;
pub const GRID_COLS: usize = 8;
/// Private images used to compare substitute and client features.
pub const FEATURE_EVAL_IMAGES: usize = 256;
/// Queue depth for observers running on their own threads.
pub const OBSERVER_QUEUE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Completed,
    DetectorAborted,
    Error,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Completed => 0,
            Self::DetectorAborted => 2,
            Self::Error => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::DetectorAborted => "aborted",
            Self::Error => "error",
        }
    }
}

/// Resolved from `--output`, else `$SLL_OUTPUT_ROOT/<run.output_dir>`,
/// else `./runs/<run.output_dir>`.
pub fn resolve_output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(&cfg.run.output_dir)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub status: ExitStatus,
    pub report: MetricsReport,
    pub output_dir: PathBuf,
}

/// Options that do not change results and are therefore not part of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    /// Run each attacker on its own thread when greater than one.
    pub threads: usize,
}

pub struct Datasets {
    pub private: Arc<ImageDataset>,
    pub aux: Arc<ImageDataset>,
    pub test: ImageDataset,
}

pub fn build_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let d = &cfg.dataset;
    let seed = cfg.run.seed;
    let (private, mut aux, test) = match d.source {
        DataSource::Synthetic => {
            let private = gen_synthetic(&d.synthetic, d.private_size, &mut Rng::new(seed, streams::DATA_PRIVATE))?;
            let test = gen_synthetic(&d.synthetic, d.test_size, &mut Rng::new(seed, streams::DATA_TEST))?;
            let mut aux_spec = d.synthetic.clone();
            if let Some(shift) = d.aux_shift {
                aux_spec.domain_shift = shift;
            }
            let aux = gen_synthetic(&aux_spec, d.aux_size.max(aux_spec.num_classes), &mut Rng::new(seed, streams::DATA_AUX))?;
            (private, aux, test)
        }
        DataSource::Cifar10 => {
            let path = d.cifar_path.as_ref().ok_or_else(|| Error::Config("missing cifar_path".into()))?;
            let all = load_cifar10(path)?;
            let need = d.private_size + d.aux_size + d.test_size;
            if all.len() < need {
                return Err(Error::Config(format!("{} CIFAR images available, {need} requested", all.len())));
            }
            let mut order = Rng::new(seed, streams::DATA_SUBSAMPLE).permutation(all.len());
            order.truncate(need);
            let (p, rest) = order.split_at(d.private_size);
            let (a, t) = rest.split_at(d.aux_size);
            (
                all.subset(p, Provenance::Subsampled)?,
                all.subset(a, Provenance::Subsampled)?,
                all.subset(t, Provenance::Subsampled)?,
            )
        }
    };
    if let Some(keep) = &d.aux_categories {
        aux = filter_categories(&aux, keep)?;
    }
    Ok(Datasets { private: Arc::new(private), aux: Arc::new(aux), test })
}

/// Validate, run and persist one experiment. Invalid configurations fail
/// before anything is written; failures after that leave a report with
/// status `error`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let dir = resolve_output_dir(cfg, opts.output_dir.as_deref());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), format!("# config_hash = \"{hash}\"\n{}", cfg.to_toml_string()?))?;
    let result = match cfg.run.precision {
        Precision::Fp32 => execute::<f32>(cfg, &hash, &dir, opts),
        Precision::Fp64 => execute::<f64>(cfg, &hash, &dir, opts),
    };
    match result {
        Ok((status, report)) => Ok(ExperimentOutcome { status, report, output_dir: dir }),
        Err(e) => {
            let mut report = MetricsReport::new(&hash, cfg.run.seed);
            report.status = ExitStatus::Error.label().into();
            report.error = Some(e.to_string());
            write_report(&report, &dir)?;
            Ok(ExperimentOutcome { status: ExitStatus::Error, report, output_dir: dir })
        }
    }
}

fn execute<T: Scalar>(cfg: &ExperimentConfig, hash: &str, dir: &Path, opts: &RunOptions) -> Result<(ExitStatus, MetricsReport)> {
    let data = build_datasets(cfg)?;
    let session = cfg.session();
    let smashed = models::smashed_shape(data.private.image_shape(), session.split_point)?;
    let seed = cfg.run.seed;

    let mut attack_configs: Vec<(String, AttackConfig)> = Vec::new();
    if let Some(a) = &cfg.attack {
        attack_configs.push((a.variant().to_string(), a.clone()));
        for b in &cfg.baselines.variants {
            attack_configs.push((b.name().to_string(), b.apply(a)));
        }
    }
    let attackers = attack_configs
        .iter()
        .map(|(_, c)| ForaAttacker::<T>::new(c.clone(), data.aux.clone(), &smashed, seed))
        .collect::<Result<Vec<_>>>()?;

    let (outcome, mut attackers) = if opts.threads > 1 {
        let mut threaded: Vec<ThreadedObserver<T, ForaAttacker<T>>> =
            attackers.into_iter().map(|a| ThreadedObserver::spawn(a, OBSERVER_QUEUE)).collect();
        let mut obs: Vec<&mut dyn Observer<T>> = threaded.iter_mut().map(|o| o as &mut dyn Observer<T>).collect();
        let outcome = run_training::<T>(&session, data.private.clone(), &mut obs, Some(&data.test))?;
        drop(obs);
        let back = threaded.into_iter().map(ThreadedObserver::finish).collect::<Result<Vec<_>>>()?;
        (outcome, back)
    } else {
        let mut attackers = attackers;
        let mut obs: Vec<&mut dyn Observer<T>> = attackers.iter_mut().map(|o| o as &mut dyn Observer<T>).collect();
        let outcome = run_training::<T>(&session, data.private.clone(), &mut obs, Some(&data.test))?;
        (outcome, attackers)
    };

    let status = match outcome.status {
        SessionStatus::Completed => ExitStatus::Completed,
        SessionStatus::Aborted => ExitStatus::DetectorAborted,
    };
    let header = serde_json::json!({ "record": "header", "config_hash": hash, "seed": seed, "split_point": session.split_point });
    fs::write(dir.join("transcript.jsonl"), transcript_jsonl(&header, &outcome.transcript)?)?;

    let mut report = MetricsReport::new(hash, seed);
    report.status = status.label().into();
    report.iterations = outcome.iterations();
    report.task_accuracy = outcome.final_test_accuracy();
    let mut extra = BTreeMap::new();
    if let Some(eps) = cfg.defense.nominal_epsilon().filter(|e| e.is_finite()) {
        extra.insert("defense.nominal_epsilon".to_string(), eps);
    }
    if let Some(v) = outcome.client.final_verdict() {
        extra.insert("gs.score".to_string(), v.score);
        extra.insert("gs.mean_gap".to_string(), v.mean_gap);
        extra.insert("gs.overlap".to_string(), v.overlap);
        extra.insert("gs.fit_error".to_string(), v.fit_error);
    }
    let dcors: Vec<f64> = outcome.transcript.iter().filter_map(|r| r.dcor).collect();
    if !dcors.is_empty() {
        let tail = &dcors[dcors.len().saturating_sub(50)..];
        extra.insert("defense.final_dcor".to_string(), tail.iter().sum::<f64>() / tail.len() as f64);
    }

    if !attackers.is_empty() {
        let mut archive = Archive::new(format!("config_hash={hash}"));
        evaluate_attacks(&outcome, &data, &attack_configs, &mut attackers, &mut report, &mut extra, dir, hash, &mut archive)?;
        archive.push_network("client", outcome.client.net());
        archive.push_network("server", outcome.server.net());
        fs::create_dir_all(dir.join("checkpoints"))?;
        archive.write(dir.join("checkpoints").join("attack.slla"))?;
    }
    report.extra = extra;
    write_report(&report, dir)?;
    Ok((status, report))
}

#[allow(clippy::too_many_arguments)]
fn evaluate_attacks<T: Scalar>(
    outcome: &SessionOutcome<T>,
    data: &Datasets,
    configs: &[(String, AttackConfig)],
    attackers: &mut [ForaAttacker<T>],
    report: &mut MetricsReport,
    extra: &mut BTreeMap<String, f64>,
    dir: &Path,
    hash: &str,
    archive: &mut Archive,
) -> Result<()> {
    let snapshot = outcome.server.snapshot();
    if snapshot.is_empty() {
        return Err(Error::Empty("snapshot store (session ended before any batch)"));
    }
    let truth = outcome.client.ledger().truth_images(&data.private, snapshot)?;
    let truth_images: Vec<Tensor<f64>> = split_rows(&truth)?;
    let n_eval = FEATURE_EVAL_IMAGES.min(data.private.len());
    let (x_eval, _) = data.private.batch::<T>(&(0..n_eval).collect::<Vec<_>>())?;
    let mut client_net = outcome.client.net().clone();
    let z_target = eval_forward(&mut client_net, &x_eval)?;

    for (i, ((name, _), attacker)) in configs.iter().zip(attackers.iter_mut()).enumerate() {
        let inv_history = attacker.fit_inverse()?.to_vec();
        let recon_batches = attacker.reconstruct(snapshot)?;
        let mut recon_images = Vec::with_capacity(truth_images.len());
        for b in &recon_batches {
            recon_images.extend(split_rows(&b.cast::<f64>())?);
        }
        let z_sub = attacker.substitute_features(&x_eval)?;
        let (cosine, fmse) = feature_similarity(&z_sub, &z_target)?;
        if i == 0 {
            report.set_reconstruction(&truth_images, &recon_images)?;
            report.feature_similarity = Some(FeatureSummary { cosine, mse: fmse });
            let n = GRID_IMAGES.min(truth_images.len());
            let note = format!("config_hash={hash}");
            fs::write(dir.join("truth.ppm"), encode_grid_ppm_with_comment(&truth_images[..n], GRID_COLS, Some(&note))?)?;
            fs::write(dir.join("recon.ppm"), encode_grid_ppm_with_comment(&recon_images[..n], GRID_COLS, Some(&note))?)?;
            if let Some(last) = attacker.history().last() {
                extra.insert("attack.final_mmd".to_string(), last.mmd_loss);
                extra.insert("attack.final_disc_loss".to_string(), last.disc_loss);
            }
            if let Some(l) = inv_history.last() {
                extra.insert("attack.inverse_final_loss".to_string(), *l);
            }
            archive.push_network("substitute", attacker.substitute());
            archive.push_network("discriminator", attacker.discriminator());
            archive.push_network("inverse", attacker.inverse());
        } else {
            let mut scratch = MetricsReport::new("", 0);
            scratch.set_reconstruction(&truth_images, &recon_images)?;
            let s = scratch.reconstruction.expect("just set");
            extra.insert(format!("{name}.mean_mse"), s.mean_mse);
            extra.insert(format!("{name}.mean_ssim"), s.mean_ssim);
            extra.insert(format!("{name}.mean_psnr"), s.mean_psnr);
            extra.insert(format!("{name}.feature_cosine"), cosine);
            extra.insert(format!("{name}.feature_mse"), fmse);
        }
    }
    Ok(())
}

fn split_rows(t: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
    let shape = &t.shape()[1..];
    (0..t.batch()).map(|i| Tensor::new(shape, t.row(i).to_vec())).collect()
}
