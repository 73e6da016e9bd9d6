use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{resize, FilterType};
use image::GrayImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use walkdir::WalkDir;

use crate::data::{
    augment, discover_pairs, image_tensor, load_mask, load_sample, open_gray, split_indices, AugmentationPolicy,
    Discovery, Label, Sample, SplitSpec,
};
use crate::distance::{distance_map, DistanceMapConfig};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{aggregate_macro, aggregate_micro, confusion, report, ConfusionCounts, MetricsReport};
use crate::model::Network;
use crate::nn::ParamStore;
use crate::seed;
use crate::tensor::Tensor;

use super::checkpoint::Checkpoint;
use super::optim::AdamConfig;
use super::settings::RunConfig;
use super::trainer::{evaluate_samples, Batch, Trainer};

pub const CURVES_HEADER: &str = "epoch,split,loss,accuracy,recall,precision";

/// One row of the curves file.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

impl CurveRow {
    fn from_eval(epoch: usize, split: &'static str, loss: f64, r: &MetricsReport) -> Self {
        Self {
            epoch,
            split,
            loss,
            accuracy: r.accuracy,
            recall: r.sensitivity,
            precision: r.precision,
        }
    }

    /// CSV line; undefined metrics are empty fields.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{},{},{}",
            self.epoch,
            self.split,
            self.loss,
            f(self.accuracy),
            f(self.recall),
            f(self.precision)
        )
    }
}

/// Discovers pairs under the configured root and loads them, optionally a
/// seeded subset.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Vec<Sample>, Discovery)> {
    let root = cfg
        .resolve_data_root()
        .ok_or_else(|| Error::Usage("no dataset root: set data_root or BUSI_ROOT".into()))?;
    let mut found = discover_pairs(&root)?;
    if let Some(n) = cfg.subset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[cfg.seed, 0x5b5e7]));
        found.pairs.shuffle(&mut rng);
        found.pairs.truncate(n);
        found.pairs.sort_by(|a, b| a.image.cmp(&b.image));
    }
    if found.pairs.is_empty() {
        return Err(Error::data_file(root, "no image/mask pairs found"));
    }
    let samples = found
        .pairs
        .iter()
        .map(|p| load_sample(p, cfg.model.image_size))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, found))
}

pub fn split_samples(samples: &[Sample], cfg: &RunConfig) -> (Vec<Sample>, Vec<Sample>) {
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let spec = SplitSpec {
        train_fraction: cfg.train_fraction,
        seed: cfg.seed,
        stratify: cfg.stratify,
    };
    let (train, test) = split_indices(&labels, &spec);
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| samples[i].clone()).collect();
    (pick(train), pick(test))
}

/// Writes the configured initial loss weights and temperatures.
fn apply_loss_initials(network: &Network, store: &mut ParamStore<f32>, cfg: &RunConfig) -> Result<()> {
    let inv_softplus = |v: f64| v.exp_m1().ln();
    let lp = &network.loss;
    for (id, raw) in [
        (lp.lambda_seg, inv_softplus(cfg.lambda_seg)),
        (lp.lambda_dc, inv_softplus(cfg.lambda_dc)),
        (lp.log_sigma_seg, cfg.sigma_seg.ln()),
        (lp.log_sigma_dc, cfg.sigma_dc.ln()),
    ] {
        store.set(id, Tensor::scalar(raw as f32))?;
    }
    Ok(())
}

pub fn new_trainer(cfg: &RunConfig) -> Result<Trainer> {
    cfg.validate()?;
    let mut t = Trainer::new(
        &cfg.model,
        cfg.seed,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    )?;
    apply_loss_initials(&t.network, &mut t.store, cfg)?;
    Ok(t)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub curves: Vec<CurveRow>,
    pub steps: u64,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains on in-memory splits. With `out_dir`, writes `run.cfg`,
/// `curves.csv`, periodic `epoch_N.bin` and `final.bin`.
pub fn train(
    cfg: &RunConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    out_dir: Option<&Path>,
    mut log: impl FnMut(&str),
) -> Result<TrainSummary> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut trainer = new_trainer(cfg)?;
    let hash = cfg.model.hash();
    let mut curves_text = format!("{CURVES_HEADER}\n");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("run.cfg"), cfg.to_text())?;
        write(&dir.join("curves.csv"), &curves_text)?;
    }
    let policy = if cfg.augment {
        AugmentationPolicy {
            seed: seed::derive(&[cfg.seed, 0xa06]),
            ..AugmentationPolicy::default()
        }
    } else {
        AugmentationPolicy::identity()
    };
    let threshold = cfg.threshold as f32;
    let mut curves = Vec::new();
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(&[cfg.seed, 0xe90c, epoch as u64])));
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| trainer.step >= m) {
                break 'epochs;
            }
            let augmented: Vec<Sample> = chunk
                .iter()
                .map(|&i| augment(&train_set[i], &policy, epoch as u64, i as u64))
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let batch = Batch::new(&refs, cfg.model.distance_threshold)?;
            let loss = trainer.train_step(&batch)?;
            log(&format!("epoch {} step {} loss {loss:.6}", epoch + 1, trainer.step));
        }
        let mut rows = Vec::new();
        for (name, set) in [("train", train_set), ("test", test_set)] {
            if set.is_empty() {
                continue;
            }
            let e = evaluate_samples(&trainer.network, &trainer.store, set, cfg.batch_size, threshold)?;
            rows.push(CurveRow::from_eval(epoch + 1, name, e.loss, &report(&e.pooled())));
        }
        for r in &rows {
            let _ = writeln!(curves_text, "{}", r.to_csv());
            log(&r.to_csv());
        }
        curves.extend(rows);
        if let Some(dir) = out_dir {
            write(&dir.join("curves.csv"), &curves_text)?;
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                Checkpoint::from_store(&trainer.store, hash, trainer.step)
                    .save(&dir.join(format!("epoch_{}.bin", epoch + 1)))?;
            }
        }
    }
    let checkpoint = Checkpoint::from_store(&trainer.store, hash, trainer.step);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("final.bin"))?;
    }
    Ok(TrainSummary {
        checkpoint,
        curves,
        steps: trainer.step,
    })
}

/// Builds the network for `cfg` and loads checkpoint weights into it.
pub fn restore_network(cfg: &RunConfig, checkpoint: &Checkpoint, force: bool) -> Result<(Network, ParamStore<f32>)> {
    cfg.model.validate()?;
    let (network, mut store) = Network::build::<f32>(&cfg.model, 0)?;
    checkpoint.restore(&mut store, cfg.model.hash(), force)?;
    Ok((network, store))
}

/// Micro and macro reports over a sample list.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub samples: usize,
    pub counts: ConfusionCounts,
    pub micro: MetricsReport,
    pub macro_: MetricsReport,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples={}", self.samples);
        let _ = writeln!(s, "loss={:.6}", self.loss);
        let c = self.counts;
        let _ = writeln!(s, "tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn);
        s.push_str(&self.micro.records("micro."));
        s.push_str(&self.macro_.records("macro."));
        s.push('\n');
        s.push_str(&self.micro.table("micro"));
        let _ = writeln!(s, "{:<12}{}", "macro", self.macro_.table_row());
        s
    }
}

pub fn evaluate(
    network: &Network,
    store: &ParamStore<f32>,
    samples: &[Sample],
    batch_size: usize,
    threshold: f64,
) -> Result<EvalReport> {
    let e = evaluate_samples(network, store, samples, batch_size, threshold as f32)?;
    Ok(EvalReport {
        loss: e.loss,
        samples: samples.len(),
        counts: e.pooled(),
        micro: aggregate_micro(&e.counts)?,
        macro_: aggregate_macro(&e.counts)?,
    })
}

/// Mask and probability map at the source image's original extent.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub mask: GrayImage,
    pub probability: GrayImage,
}

/// Thresholds at working resolution, then resizes back nearest-neighbour.
pub fn predict(network: &Network, store: &ParamStore<f32>, image: &Path, threshold: f64) -> Result<Prediction> {
    let gray = open_gray(image)?;
    let (w, h) = gray.dimensions();
    let size = network.config.image_size;
    let t = image_tensor(&gray, size);
    let input = t.reshape(&[1, 1, size, size])?;
    let probs = network.predict_proba(store, &input)?;
    let mask = Mask::from_probabilities(size, size, probs.data(), threshold as f32)?;
    let s = size as u32;
    let mask_img = GrayImage::from_raw(s, s, mask.data().iter().map(|&v| v * 255).collect()).expect("size");
    let prob_img = GrayImage::from_raw(
        s,
        s,
        probs.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    )
    .expect("size");
    let back = |img: &GrayImage| {
        if (w, h) == (s, s) {
            img.clone()
        } else {
            resize(img, w, h, FilterType::Nearest)
        }
    };
    Ok(Prediction {
        mask: back(&mask_img),
        probability: back(&prob_img),
    })
}

/// Exports one 16-bit class map per pair plus `manifest.csv`. Masks stay at
/// native resolution unless `image_size` is given.
pub fn make_distance_maps(
    root: &Path,
    out_dir: &Path,
    threshold: usize,
    image_size: Option<usize>,
) -> Result<(usize, Discovery)> {
    let cfg = DistanceMapConfig::new(threshold)?;
    let found = discover_pairs(root)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::from("image,label,masks,height,width,foreground,output\n");
    for pair in &found.pairs {
        let mask = load_mask(&pair.masks, image_size)?;
        let map = distance_map(&mask, cfg);
        let rel = pair.image.strip_prefix(root).unwrap_or(&pair.image);
        let rel_out: PathBuf = rel.with_file_name(format!("{}_dist.png", pair.stem()));
        let dest = out_dir.join(&rel_out);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        map.to_image()
            .save(&dest)
            .map_err(|e| Error::data_file(&dest, e))?;
        let _ = writeln!(
            manifest,
            "{},{},{},{},{},{},{}",
            csv_field(&rel.display().to_string()),
            pair.label,
            pair.masks.len(),
            map.height,
            map.width,
            mask.foreground(),
            csv_field(&rel_out.display().to_string())
        );
    }
    write(&out_dir.join("manifest.csv"), manifest)?;
    Ok((found.pairs.len(), found))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-stem counts plus the stems that could not be matched.
pub type ScoredMasks = (Vec<(String, ConfusionCounts)>, Vec<String>);

/// Scores externally produced masks against ground truth. Files are compared
/// directly; directories are matched by stem, predictions named `<stem>.png`
/// (or `<stem>_pred.png`) anywhere under `pred`.
pub fn score_masks(pred: &Path, gt: &Path) -> Result<ScoredMasks> {
    if pred.is_file() && gt.is_file() {
        let p = load_mask(&[pred.to_path_buf()], None)?;
        let g = load_mask(&[gt.to_path_buf()], None)?;
        let c = confusion(&p, &g).map_err(|e| Error::data_file(pred, e))?;
        return Ok((vec![(pred.display().to_string(), c)], Vec::new()));
    }
    if !pred.is_dir() {
        return Err(Error::data_file(pred, "prediction path not found"));
    }
    let mut by_stem = std::collections::BTreeMap::new();
    for entry in WalkDir::new(pred).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::data_file(pred, e))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let stem = entry.path().file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let stem = stem.strip_suffix("_pred").map(str::to_string).unwrap_or(stem);
        by_stem.entry(stem).or_insert_with(|| entry.path().to_path_buf());
    }
    let found = discover_pairs(gt)?;
    let mut scored = Vec::new();
    let mut missing = Vec::new();
    for pair in &found.pairs {
        let stem = pair.stem();
        let Some(p) = by_stem.get(&stem) else {
            missing.push(stem);
            continue;
        };
        let pm = load_mask(std::slice::from_ref(p), None)?;
        let gm = load_mask(&pair.masks, None)?;
        let c = confusion(&pm, &gm).map_err(|e| Error::data_file(p, e))?;
        scored.push((stem, c));
    }
    if scored.is_empty() {
        return Err(Error::data_file(pred, "no prediction matches a ground-truth pair"));
    }
    Ok((scored, missing))
}
