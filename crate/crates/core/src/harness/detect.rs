use super::config::{data_dir, OodConfig, DEFAULT_CIFAR_BATCH};
use super::metrics::{confusion, pca2, roc_auc, Confusion, RocPoint};
use super::{at, ExperimentConfig, ExperimentKind, HarnessError, HealthyData, Stage, ThresholdPolicy};
use crate::adversary::{fgsm, uniform_perturbation, AttackSpec};
use crate::channel::{transmit, ChannelSpec, Transmission};
use crate::data::{filter_labels, is_odd, load_ood, OodSource};
use crate::gpdetect::{calibrate_threshold, AnomalyScore, GpModel};
use crate::nncore::{Checkpoint, Tensor};
use crate::rng::{fork, seeded, SeedRng};
use crate::vae::{per_image_mse, train_vae, ElboBreakdown, FrozenNoise, VaeModel};

/// Images shown side by side in the reconstruction grids.
pub const GRID_COLUMNS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleScore {
    pub faulty: bool,
    pub score: AnomalyScore,
    /// Per-pixel MSE between the clean image and the received reconstruction.
    pub recon_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconGrid {
    pub name: String,
    pub originals: Tensor,
    pub reconstructions: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Healthy samples first, then faulty ones.
    pub samples: Vec<SampleScore>,
    pub roc: Vec<RocPoint>,
    pub auc: Option<f64>,
    pub threshold: f64,
    pub confusion: Confusion,
    /// First two principal coordinates of each sample's received latent.
    pub projection: Vec<[f64; 2]>,
    pub length_scale: f64,
    pub jitter: f64,
    pub grids: Vec<ReconGrid>,
    pub train_history: Vec<ElboBreakdown>,
    /// Per image: (FGSM MSE, random-sign MSE). Adversarial runs only.
    pub attack_comparison: Vec<(f64, f64)>,
}

impl DetectionReport {
    /// No samples at all; every count is zero.
    pub fn empty(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            samples: Vec::new(),
            roc: Vec::new(),
            auc: None,
            threshold: 0.0,
            confusion: Confusion::default(),
            projection: Vec::new(),
            length_scale: 0.0,
            jitter: 0.0,
            grids: Vec::new(),
            train_history: Vec::new(),
            attack_comparison: Vec::new(),
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.score.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.faulty).collect()
    }

    fn mean_mse(&self, faulty: bool) -> Option<f64> {
        let v: Vec<f64> = self.samples.iter().filter(|s| s.faulty == faulty).map(|s| s.recon_mse).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mse_healthy(&self) -> Option<f64> {
        self.mean_mse(false)
    }

    pub fn mse_faulty(&self) -> Option<f64> {
        self.mean_mse(true)
    }

    pub fn mean_score(&self, faulty: bool) -> Option<f64> {
        let v: Vec<f64> = self.samples.iter().filter(|s| s.faulty == faulty).map(|s| s.score.score).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Share of attacked images whose MSE is at least twice the random baseline.
    pub fn attack_ratio_share(&self) -> Option<f64> {
        let c = &self.attack_comparison;
        (!c.is_empty()).then(|| c.iter().filter(|(a, r)| *a >= 2.0 * r).count() as f64 / c.len() as f64)
    }
}

/// A finished detection run with the fitted models.
#[derive(Clone, Debug)]
pub struct DetectionRun {
    pub report: DetectionReport,
    pub model: VaeModel,
    pub gp: GpModel,
}

/// Loads `vae.checkpoint` if configured, otherwise trains on `images`.
pub fn obtain_vae(
    cfg: &ExperimentConfig,
    images: &Tensor,
    default_sigma: f64,
    rng: &mut SeedRng,
) -> Result<(VaeModel, Vec<ElboBreakdown>), HarnessError> {
    if let Some(path) = &cfg.vae.checkpoint {
        let ckpt = Checkpoint::load(path).map_err(at(Stage::Train))?;
        return Ok((VaeModel::from_checkpoint(&ckpt).map_err(at(Stage::Train))?, Vec::new()));
    }
    train_vae(images, &cfg.vae.train_config(default_sigma), rng).map_err(at(Stage::Train))
}

fn ood_source(cfg: &OodConfig) -> Result<OodSource, HarnessError> {
    Ok(match cfg {
        OodConfig::Synthetic => OodSource::Synthetic,
        OodConfig::Cifar { path: Some(p) } => OodSource::Cifar(p.clone()),
        OodConfig::Cifar { path: None } => OodSource::Cifar(data_dir(&None)?.join(DEFAULT_CIFAR_BATCH)),
    })
}

fn send(model: &VaeModel, x: &Tensor, link: &ChannelSpec, rng: &mut SeedRng) -> Result<Transmission, HarnessError> {
    transmit(model, x, link, rng).map_err(at(Stage::Score))
}

fn first_rows(x: &Tensor, n: usize) -> Result<Tensor, HarnessError> {
    x.select_rows(&(0..n.min(x.rows())).collect::<Vec<_>>()).map_err(at(Stage::Data))
}

/// Reconstruction MSE against the clean images for FGSM and for random
/// signs of the same budget; the decoder sees the posterior mean.
pub fn adversarial_mse_comparison(
    model: &VaeModel,
    x: &Tensor,
    spec: &AttackSpec,
    rng: &mut SeedRng,
) -> Result<Vec<(f64, f64)>, HarnessError> {
    let noise = FrozenNoise::draw(x.rows(), 0.0, rng);
    let adv = fgsm(model, x, spec, &noise).map_err(at(Stage::Attack))?;
    let rnd = uniform_perturbation(x, spec, rng);
    let ra = model.reconstruct(&adv).map_err(at(Stage::Attack))?;
    let rr = model.reconstruct(&rnd).map_err(at(Stage::Attack))?;
    Ok(per_image_mse(x, &ra).into_iter().zip(per_image_mse(x, &rr)).collect())
}

/// Trains the codec exactly as the experiment named by `cfg.kind` would,
/// ignoring any configured checkpoint.
pub fn train_codec(cfg: &ExperimentConfig) -> Result<(VaeModel, Vec<ElboBreakdown>), HarnessError> {
    let mut root = seeded(cfg.seed);
    let mut data_rng = fork(&mut root);
    let mut train_rng = fork(&mut root);
    let healthy = HealthyData::open(&cfg.data.healthy)?;
    let d = &cfg.data;
    let (images, sigma) = if cfg.kind == ExperimentKind::HitlRl {
        let pool = healthy.train(d.train_count, &mut data_rng)?;
        (filter_labels(&pool, is_odd).map_err(at(Stage::Data))?.images, 0.0)
    } else {
        let train = healthy.train(d.train_count + d.calibration_count, &mut data_rng)?;
        (first_rows(&train.images, d.train_count)?, cfg.healthy_channel().sigma)
    };
    train_vae(&images, &cfg.vae.train_config(sigma), &mut train_rng).map_err(at(Stage::Train))
}

/// Number of attacked images compared against the random baseline.
pub const ATTACK_COMPARISON_SIZE: usize = 100;

pub fn run_detection(cfg: &ExperimentConfig) -> Result<DetectionRun, HarnessError> {
    if !cfg.kind.is_detection() {
        return Err(HarnessError::Config(format!("{:?} is not a detection experiment", cfg.kind)));
    }
    let d = &cfg.data;
    let n_faulty = ((d.test_count as f64 * d.ood_fraction).round() as usize).clamp(1, d.test_count - 1);
    let n_healthy = d.test_count - n_faulty;

    let mut root = seeded(cfg.seed);
    let mut data_rng = fork(&mut root);
    let mut train_rng = fork(&mut root);
    let mut link_rng = fork(&mut root);
    let mut attack_rng = fork(&mut root);

    let healthy = HealthyData::open(&d.healthy)?;
    let ood = if cfg.kind == ExperimentKind::FeatureChange { Some(ood_source(&d.ood)?) } else { None };
    let train = healthy.train(d.train_count + d.calibration_count, &mut data_rng)?;
    let train_x = first_rows(&train.images, d.train_count)?;
    let calib_x = train
        .images
        .select_rows(&(d.train_count..d.train_count + d.calibration_count).collect::<Vec<_>>())
        .map_err(at(Stage::Data))?;
    let test = healthy.test(n_healthy + n_faulty, &mut data_rng)?;
    let test_h = first_rows(&test.images, n_healthy)?;
    let base_f =
        test.images.select_rows(&(n_healthy..n_healthy + n_faulty).collect::<Vec<_>>()).map_err(at(Stage::Data))?;

    let link = cfg.healthy_channel();
    let (model, history) = obtain_vae(cfg, &train_x, link.sigma, &mut train_rng)?;

    let fit_z = send(&model, &first_rows(&train_x, cfg.gp.fit_points)?, &link, &mut link_rng)?.z_received;
    let gp = GpModel::fit(&fit_z, cfg.gp.length_scale, cfg.gp.jitter).map_err(at(Stage::Fit))?;

    let threshold = match cfg.gp.threshold {
        ThresholdPolicy::Fixed(t) => t,
        ThresholdPolicy::TargetFpr(fpr) => {
            let z = send(&model, &calib_x, &link, &mut link_rng)?.z_received;
            let s: Vec<f64> = gp.score_all(&z).map_err(at(Stage::Calibrate))?.into_iter().map(|s| s.score).collect();
            calibrate_threshold(&s, fpr).map_err(at(Stage::Calibrate))?
        }
    };

    let healthy_tx = send(&model, &test_h, &link, &mut link_rng)?;
    let mut attack_comparison = Vec::new();
    let (faulty_clean, faulty_tx) = match cfg.kind {
        ExperimentKind::FeatureChange => {
            let source = ood.as_ref().expect("set for feature-change");
            let x = load_ood(source, n_faulty, &mut data_rng).map_err(at(Stage::Data))?.images;
            let tx = send(&model, &x, &link, &mut link_rng)?;
            (x, tx)
        }
        ExperimentKind::ChannelChange => {
            let tx = send(&model, &base_f, &cfg.faulty_link(), &mut link_rng)?;
            (base_f, tx)
        }
        ExperimentKind::Adversarial => {
            let noise = FrozenNoise::draw(base_f.rows(), 0.0, &mut attack_rng);
            let adv = fgsm(&model, &base_f, &cfg.attack, &noise).map_err(at(Stage::Attack))?;
            let sample = first_rows(&base_f, ATTACK_COMPARISON_SIZE)?;
            attack_comparison = adversarial_mse_comparison(&model, &sample, &cfg.attack, &mut attack_rng)?;
            let tx = send(&model, &adv, &link, &mut link_rng)?;
            (base_f, tx)
        }
        ExperimentKind::HitlRl => unreachable!("rejected above"),
    };

    let mut samples = Vec::with_capacity(d.test_count);
    for (clean, tx, faulty) in [(&test_h, &healthy_tx, false), (&faulty_clean, &faulty_tx, true)] {
        let scores = gp.score_all(&tx.z_received).map_err(at(Stage::Score))?;
        let mses = per_image_mse(clean, &tx.x_hat);
        samples.extend(scores.into_iter().zip(mses).map(|(score, recon_mse)| SampleScore { faulty, score, recon_mse }));
    }
    let scores: Vec<f64> = samples.iter().map(|s| s.score.score).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.faulty).collect();
    let (roc, auc) = roc_auc(&scores, &labels)?;
    let all_z = Tensor::concat_rows(&[&healthy_tx.z_received, &faulty_tx.z_received]).map_err(at(Stage::Score))?;
    let proj = pca2(&all_z)?;
    let projection = proj.coords.iter_rows().map(|r| [r[0], r[1]]).collect();

    let grid = |name: &str, clean: &Tensor, tx: &Transmission| -> Result<ReconGrid, HarnessError> {
        Ok(ReconGrid {
            name: name.to_string(),
            originals: first_rows(clean, GRID_COLUMNS)?,
            reconstructions: first_rows(&tx.x_hat, GRID_COLUMNS)?,
        })
    };
    let grids = vec![grid("healthy", &test_h, &healthy_tx)?, grid("faulty", &faulty_clean, &faulty_tx)?];

    let report = DetectionReport {
        kind: cfg.kind,
        seed: cfg.seed,
        confusion: confusion(&scores, &labels, threshold),
        samples,
        roc,
        auc: Some(auc),
        threshold,
        projection,
        length_scale: gp.length_scale(),
        jitter: gp.jitter(),
        grids,
        train_history: history,
        attack_comparison,
    };
    Ok(DetectionRun { report, model, gp })
}
