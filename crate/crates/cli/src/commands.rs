//! Command implementations behind the CLI surface.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use fusebench_core::corpus::generate_corpus;
use fusebench_core::fusion::{
    export_weight_stack, fuse, oracle_weights, softmax_weights, WeightStack,
};
use fusebench_core::image::{psnr, save_png, save_raster, ssim, ImagePatch, MetricReport};
use fusebench_core::noise::{derive_seed, make_dataset, Manifest, NoiseSpec, MANIFEST_FILE};
use fusebench_core::pool::{run_pool, train_cnn_denoiser, DenoiserHandle, DenoiserTrainConfig, PoolOutput};
use fusebench_core::scorer::{ScoreMode, Scorer};
use fusebench_core::train::{distill_best, train_scorer, DistillConfig, Weighting};
use fusebench_core::{Error, Result};

use crate::config::{ExperimentConfig, Variant};
use crate::plot::{bar_chart, series_chart};
use crate::report::{MethodReport, RunReport, ORACLE_METHOD};

const UNIFORM_METHOD: &str = "uniform_avg";
const BDE_METHOD: &str = "bde";

/// Locations of the synthesized dataset manifests, written by `synthesize`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub unlabeled: Vec<PathBuf>,
}

impl DatasetIndex {
    fn path(out_dir: &Path) -> PathBuf {
        out_dir.join("datasets.toml")
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::InvalidArgument(format!("dataset index: {e}")))?;
        std::fs::write(Self::path(out_dir), text).map_err(|e| Error::io(Self::path(out_dir), e))
    }

    pub fn load(out_dir: &Path) -> Result<DatasetIndex> {
        let path = Self::path(out_dir);
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "dataset index not found at {} (run `fusebench synthesize --config ...` first)",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn manifests(&self, role: &str) -> Result<Vec<Manifest>> {
        let list = match role {
            "train" => &self.train,
            "val" => &self.val,
            "test" => &self.test,
            "unlabeled" => &self.unlabeled,
            other => return Err(Error::InvalidArgument(format!("unknown dataset role `{other}`"))),
        };
        if list.is_empty() {
            return Err(Error::MissingArtifact(format!(
                "no `{role}` datasets were synthesized; add [[noise.{role}]] specs and re-run `fusebench synthesize`"
            )));
        }
        list.iter().map(Manifest::load).collect()
    }
}

/// Generates the procedural clean corpus if the directory is absent/empty.
pub fn ensure_corpus(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let corpus = cfg.corpus.as_ref().ok_or_else(|| {
        Error::InvalidArgument("config needs a [corpus] section for this command".into())
    })?;
    let empty = !corpus.dir.exists()
        || std::fs::read_dir(&corpus.dir)
            .map(|mut d| d.next().is_none())
            .unwrap_or(true);
    if empty {
        eprintln!(
            "generating {} procedural textures ({}x{}, {}ch) into {}",
            corpus.count,
            corpus.size,
            corpus.size,
            corpus.channels,
            corpus.dir.display()
        );
        generate_corpus(
            &corpus.dir,
            corpus.count,
            corpus.size,
            corpus.channels,
            cfg.corpus_seed(),
        )?;
    }
    Ok(corpus.dir.clone())
}

pub fn cmd_gen_corpus(cfg: &ExperimentConfig) -> Result<()> {
    let dir = ensure_corpus(cfg)?;
    println!("corpus ready at {}", dir.display());
    Ok(())
}

/// Synthesizes every declared dataset and writes the index.
pub fn cmd_synthesize(cfg: &ExperimentConfig) -> Result<DatasetIndex> {
    let clean_dir = ensure_corpus(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut index = DatasetIndex::default();
    let roles: [(&str, &[NoiseSpec], usize, u64); 4] = [
        ("train", &cfg.noise.train, cfg.dataset.train_count, 0x1000),
        ("val", &cfg.noise.val, cfg.dataset.val_count, 0x2000),
        ("test", &cfg.noise.test, cfg.dataset.test_count, 0x3000),
        (
            "unlabeled",
            &cfg.noise.unlabeled,
            cfg.dataset.unlabeled_count,
            0x4000,
        ),
    ];
    for (role, specs, count, stream) in roles {
        for (i, spec) in specs.iter().enumerate() {
            let eff = spec.with_seed(derive_seed(cfg.seed ^ spec.seed, stream + i as u64));
            let dir = cfg.dataset.dir.join(format!("{role}_{i}"));
            let manifest = make_dataset(&clean_dir, &eff, cfg.dataset.patch, count, &dir)?;
            eprintln!(
                "synthesized {role}_{i}: {} pairs of {}x{} at {}",
                manifest.entries.len(),
                cfg.dataset.patch,
                cfg.dataset.patch,
                dir.display()
            );
            let list = match role {
                "train" => &mut index.train,
                "val" => &mut index.val,
                "test" => &mut index.test,
                _ => &mut index.unlabeled,
            };
            list.push(dir.join(MANIFEST_FILE));
        }
    }
    index.save(&cfg.out_dir)?;
    Ok(index)
}

/// Trains every `trained_cnn` pool member at its declared noise level.
pub fn cmd_train_pool(cfg: &ExperimentConfig) -> Result<()> {
    let clean_dir = ensure_corpus(cfg)?;
    let channels = corpus_channels(cfg)?;
    let (arch, section) = cfg.denoiser_arch(channels)?;
    let mut trained = 0;
    for (idx, member) in cfg.pool.iter().enumerate() {
        if member.kind != "trained_cnn" {
            continue;
        }
        let level = member.train_noise_level.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "pool.{}: trained_cnn members need `train_noise_level` for train-pool",
                member.name
            ))
        })?;
        let spec = NoiseSpec::awgn(level, derive_seed(cfg.seed, 0x700 + idx as u64));
        let data_dir = cfg.dataset.dir.join(format!("pool_{}", member.name));
        let manifest = make_dataset(
            &clean_dir,
            &spec,
            cfg.dataset.patch,
            cfg.dataset.train_count,
            &data_dir,
        )?;
        let train_cfg = DenoiserTrainConfig {
            arch,
            iters: section.iters,
            batch: section.batch,
            patch: section.patch,
            lr: section.lr,
            seed: derive_seed(cfg.seed, 0x800 + idx as u64),
        };
        let ckpt = cfg.member_checkpoint(member);
        let t = Instant::now();
        let (_, losses) = train_cnn_denoiser(&train_cfg, &manifest, level, &ckpt)?;
        let head: f64 = losses.iter().take(10).sum::<f64>() / 10f64.min(losses.len() as f64);
        let tail: f64 = losses.iter().rev().take(10).sum::<f64>() / 10f64.min(losses.len() as f64);
        eprintln!(
            "trained `{}` at sigma {level}: loss {head:.5} -> {tail:.5} in {:.1?} ({})",
            member.name,
            t.elapsed(),
            ckpt.display()
        );
        trained += 1;
    }
    if trained == 0 {
        eprintln!("no trained_cnn members in the pool; nothing to do");
    }
    Ok(())
}

fn corpus_channels(cfg: &ExperimentConfig) -> Result<usize> {
    Ok(cfg.corpus.as_ref().map(|c| c.channels).unwrap_or(1))
}

fn load_scorer(cfg: &ExperimentConfig, variant: Variant) -> Result<Scorer> {
    let path = cfg.scorer_checkpoint(variant);
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "scorer checkpoint for variant `{}` not found at {} (run `fusebench train-scorer --variant {}` first)",
            variant.name(),
            path.display(),
            variant.name()
        )));
    }
    Scorer::load(&path)
}

/// Trains the scoring network for the configured variant.
pub fn cmd_train_scorer(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let variant = cfg.variant();
    let pool = cfg.build_pool()?;
    let index = DatasetIndex::load(&cfg.out_dir)?;
    let manifests = index.manifests("train")?;
    let channels = corpus_channels(cfg)?;
    let refs: Vec<&Manifest> = manifests.iter().collect();
    let out = cfg
        .scorer_checkpoint(variant)
        .parent()
        .unwrap()
        .to_path_buf();
    let t = Instant::now();
    let result = train_scorer(
        &pool,
        &refs,
        cfg.scorer_config(channels),
        &cfg.loss_config(),
        &cfg.train_schedule(),
        cfg.weighting(),
        &out,
    )?;
    eprintln!(
        "trained scorer `{}`: total {:.4} -> {:.4} over {} iters in {:.1?}",
        variant.name(),
        result.log.first().map(|e| e.total).unwrap_or(0.0),
        result.log.last().map(|e| e.total).unwrap_or(0.0),
        result.log.len(),
        t.elapsed()
    );
    Ok(result.checkpoint)
}

/// Weighting maps for one pool output under the configured variant.
fn fusion_weights(
    cfg: &ExperimentConfig,
    scorer: &Scorer,
    noisy: &ImagePatch,
    output: &PoolOutput,
) -> Result<WeightStack> {
    let weighting = cfg.weighting();
    let scores: Vec<ImagePatch> = output
        .results
        .iter()
        .map(|(name, img)| {
            let bundle = match weighting {
                Weighting::PatchwiseSoftmax(p) => scorer.score_patchwise(noisy, img, name, p)?,
                _ => scorer.score(noisy, img, name, ScoreMode::Eval)?,
            };
            Ok(bundle.score)
        })
        .collect::<Result<Vec<_>>>()?;
    match weighting {
        Weighting::Direct => fusebench_core::fusion::direct_weights(&scores),
        _ => softmax_weights(&scores),
    }
}

/// Fuses every test image and writes rasters, previews and weight maps.
pub fn cmd_fuse(cfg: &ExperimentConfig) -> Result<()> {
    let variant = cfg.variant();
    let pool = cfg.build_pool()?;
    let scorer = load_scorer(cfg, variant)?;
    let index = DatasetIndex::load(&cfg.out_dir)?;
    let out_dir = cfg.out_dir.join("fused").join(variant.name());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let names: Vec<String> = pool.iter().map(|h| h.name().to_string()).collect();
    let mut count = 0;
    for (mi, manifest) in index.manifests("test")?.iter().enumerate() {
        for (id, noisy, _clean) in manifest.load_pairs()? {
            let uid = format!("t{mi}_{id}");
            let output = run_pool(&pool, &noisy, &id)?;
            let weights = fusion_weights(cfg, &scorer, &noisy, &output)?;
            let fused = fuse(&output, &weights)?;
            save_raster(&fused, out_dir.join(format!("{uid}.fras")))?;
            save_png(&fused, out_dir.join(format!("{uid}.png")))?;
            export_weight_stack(&weights, &names, out_dir.join("weights"), &uid)?;
            count += 1;
        }
    }
    println!("fused {count} images into {}", out_dir.display());
    Ok(())
}

struct PerMethodAccumulator {
    entries: Vec<(String, f64, f64)>,
}

impl PerMethodAccumulator {
    fn new() -> Self {
        PerMethodAccumulator { entries: Vec::new() }
    }

    fn push(&mut self, id: &str, result: &ImagePatch, gt: &ImagePatch) -> Result<()> {
        self.entries.push((
            id.to_string(),
            psnr(result, gt, 1.0)?,
            ssim(result, gt)?,
        ));
        Ok(())
    }

    fn report(self) -> Result<MetricReport> {
        MetricReport::from_entries(self.entries)
    }
}

fn uniform_average(output: &PoolOutput) -> Result<ImagePatch> {
    let c = output.len() as f32;
    let first = &output.results[0].1;
    let mut acc = vec![0.0f32; first.data().len()];
    for (_, img) in &output.results {
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= c;
    }
    ImagePatch::new(first.height(), first.width(), first.channels(), acc)
}

/// Shared evaluation core: per-method metrics over a set of manifests.
///
/// Rows appear in pool order, then the enabled baselines, then the fused
/// result (when a scorer is given).
pub fn evaluate_set(
    cfg: &ExperimentConfig,
    pool: &[DenoiserHandle],
    scorer: Option<&Scorer>,
    manifests: &[Manifest],
    export_weights_to: Option<&Path>,
) -> Result<Vec<MethodReport>> {
    let mut members: Vec<PerMethodAccumulator> =
        pool.iter().map(|_| PerMethodAccumulator::new()).collect();
    let mut uniform = PerMethodAccumulator::new();
    let mut oracle = PerMethodAccumulator::new();
    let mut bde = PerMethodAccumulator::new();
    let names: Vec<String> = pool.iter().map(|h| h.name().to_string()).collect();

    for (mi, manifest) in manifests.iter().enumerate() {
        for (id, noisy, clean) in manifest.load_pairs()? {
            let uid = format!("t{mi}_{id}");
            let output = run_pool(pool, &noisy, &id)?;
            for (acc, (_, img)) in members.iter_mut().zip(&output.results) {
                acc.push(&uid, img, &clean)?;
            }
            if cfg.eval.include_uniform {
                uniform.push(&uid, &uniform_average(&output)?, &clean)?;
            }
            if cfg.eval.include_oracle {
                let ow = oracle_weights(&output, &clean)?;
                let fused = fuse(&output, &ow.as_weights()?)?;
                oracle.push(&uid, &fused, &clean)?;
            }
            if let Some(scorer) = scorer {
                let weights = fusion_weights(cfg, scorer, &noisy, &output)?;
                if let Some(dir) = export_weights_to {
                    export_weight_stack(&weights, &names, dir, &uid)?;
                }
                let fused = fuse(&output, &weights)?;
                bde.push(&uid, &fused, &clean)?;
            }
        }
    }

    let mut methods = Vec::new();
    for (handle, acc) in pool.iter().zip(members) {
        methods.push(MethodReport::new(handle.name(), "pool", acc.report()?));
    }
    if cfg.eval.include_uniform {
        methods.push(MethodReport::new(UNIFORM_METHOD, "baseline", uniform.report()?));
    }
    if cfg.eval.include_oracle {
        methods.push(MethodReport::new(ORACLE_METHOD, "baseline", oracle.report()?));
    }
    if scorer.is_some() {
        methods.push(MethodReport::new(BDE_METHOD, "fusion", bde.report()?));
    }
    Ok(methods)
}

/// Evaluates the pool, baselines and the fused result on the test sets.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<RunReport> {
    let t = Instant::now();
    let variant = cfg.variant();
    let pool = cfg.build_pool()?;
    let scorer = if cfg.eval.include_bde {
        Some(load_scorer(cfg, variant)?)
    } else {
        None
    };
    let index = DatasetIndex::load(&cfg.out_dir)?;
    let manifests = index.manifests("test")?;
    let weights_dir = cfg
        .eval
        .export_weights
        .then(|| cfg.out_dir.join("weights").join(variant.name()));
    let methods = evaluate_set(
        cfg,
        &pool,
        scorer.as_ref(),
        &manifests,
        weights_dir.as_deref(),
    )?;

    let mut report = RunReport::new("evaluate", variant.name(), cfg.seed, methods, cfg.echo()?);
    report.check_oracle_dominance()?;
    report.wall_clock_secs = t.elapsed().as_secs_f64();

    let report_path = cfg.out_dir.join(format!("report_{}.toml", variant.name()));
    report.save(&report_path)?;
    let entries: Vec<(String, f64)> = report
        .methods
        .iter()
        .map(|m| (m.name.clone(), m.psnr))
        .collect();
    bar_chart(
        "PSNR DB",
        &entries,
        &[BDE_METHOD, ORACLE_METHOD],
        cfg.out_dir.join(format!("psnr_{}.png", variant.name())),
    )?;
    print!("{}", report.table());
    println!("report: {}", report_path.display());
    Ok(report)
}

/// Ensures the variant's scorer exists, training it when absent.
fn ensure_variant_scorer(cfg: &ExperimentConfig, variant: Variant) -> Result<Scorer> {
    let mut vcfg = cfg.clone();
    vcfg.variant = variant.name().to_string();
    let path = vcfg.scorer_checkpoint(variant);
    if !path.exists() {
        eprintln!("training scorer for variant `{}`", variant.name());
        cmd_train_scorer(&vcfg)?;
    }
    load_scorer(&vcfg, variant)
}

/// Row of the ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Trains (if needed) and evaluates the requested variants on the
/// validation sets; emits a variant x metric table.
pub fn cmd_ablate(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::InvalidArgument("ablate: no variants requested".into()));
    }
    let pool = cfg.build_pool()?;
    let index = DatasetIndex::load(&cfg.out_dir)?;
    let manifests = index.manifests("val")?;
    let mut rows = Vec::new();
    for &variant in variants {
        let scorer = ensure_variant_scorer(cfg, variant)?;
        let mut vcfg = cfg.clone();
        vcfg.variant = variant.name().to_string();
        let methods = evaluate_set(&vcfg, &pool, Some(&scorer), &manifests, None)?;
        let bde = methods
            .iter()
            .find(|m| m.name == BDE_METHOD)
            .expect("bde row present");
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            psnr: bde.psnr,
            ssim: bde.ssim,
        });
    }

    let mut text = String::from("variant        psnr      ssim\n");
    for r in &rows {
        text.push_str(&format!("{:<13} {:>8.3}  {:>7.4}\n", r.variant, r.psnr, r.ssim));
    }
    print!("{text}");
    let table = toml::to_string(&AblationTable {
        rows: rows.clone(),
        config_echo: cfg.echo()?,
    })
    .map_err(|e| Error::InvalidArgument(format!("ablation table: {e}")))?;
    std::fs::write(cfg.out_dir.join("ablation.toml"), table)
        .map_err(|e| Error::io(cfg.out_dir.join("ablation.toml"), e))?;
    let entries: Vec<(String, f64)> = rows.iter().map(|r| (r.variant.clone(), r.psnr)).collect();
    bar_chart(
        "ABLATION PSNR DB",
        &entries,
        &["full"],
        cfg.out_dir.join("ablation.png"),
    )?;
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct AblationTable {
    rows: Vec<AblationRow>,
    config_echo: toml::Table,
}

/// One point of the pool-size sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub psnr: f64,
}

/// PSNR as members are added in the declared order; each point fuses the
/// prefix sub-pool with a scorer trained on it (size 1 is the member
/// itself: the softmax of a single score map is identically one).
pub fn cmd_pool_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let order = &cfg.sweep.order;
    if order.len() < 2 {
        return Err(Error::InvalidArgument(
            "sweep.order needs at least two pool members".into(),
        ));
    }
    let index = DatasetIndex::load(&cfg.out_dir)?;
    let val = index.manifests("val")?;
    let channels = corpus_channels(cfg)?;
    let mut points = Vec::new();

    for k in 1..=order.len() {
        let sub: Vec<&str> = order[..k].iter().map(|s| s.as_str()).collect();
        let mut sub_cfg = cfg.clone();
        sub_cfg.pool = cfg
            .pool
            .iter()
            .filter(|m| sub.contains(&m.name.as_str()))
            .cloned()
            .collect();
        // Keep the declared order, not the original pool order.
        sub_cfg.pool.sort_by_key(|m| sub.iter().position(|n| *n == m.name).unwrap());
        let pool = sub_cfg.build_pool()?;

        let psnr_val = if k == 1 {
            // Weights are identically one for a single member; no training.
            let scorer = Scorer::init(sub_cfg.scorer_config(channels), cfg.seed)?;
            let methods = evaluate_set(&sub_cfg, &pool, Some(&scorer), &val, None)?;
            methods
                .iter()
                .find(|m| m.name == BDE_METHOD)
                .expect("bde row")
                .psnr
        } else {
            let ckpt_dir = cfg.out_dir.join("ckpts").join(format!("sweep_k{k}"));
            let ckpt = ckpt_dir.join("scorer.ckpt");
            let scorer = if ckpt.exists() {
                Scorer::load(&ckpt)?
            } else {
                eprintln!("training sweep scorer for pool size {k}");
                let manifests = index.manifests("train")?;
                let refs: Vec<&Manifest> = manifests.iter().collect();
                train_scorer(
                    &pool,
                    &refs,
                    sub_cfg.scorer_config(channels),
                    &sub_cfg.loss_config(),
                    &sub_cfg.train_schedule(),
                    sub_cfg.weighting(),
                    &ckpt_dir,
                )?
                .scorer
            };
            let methods = evaluate_set(&sub_cfg, &pool, Some(&scorer), &val, None)?;
            methods
                .iter()
                .find(|m| m.name == BDE_METHOD)
                .expect("bde row")
                .psnr
        };
        println!("pool size {k} ({}): {:.3} dB", sub.join("+"), psnr_val);
        points.push(SweepPoint {
            size: k,
            psnr: psnr_val,
        });
    }

    let table = toml::to_string(&SweepTable {
        points: points.clone(),
        config_echo: cfg.echo()?,
    })
    .map_err(|e| Error::InvalidArgument(format!("sweep table: {e}")))?;
    std::fs::write(cfg.out_dir.join("sweep.toml"), table)
        .map_err(|e| Error::io(cfg.out_dir.join("sweep.toml"), e))?;
    let series: Vec<(String, f64)> = points
        .iter()
        .map(|p| (p.size.to_string(), p.psnr))
        .collect();
    series_chart("POOL SWEEP PSNR", &series, cfg.out_dir.join("sweep.png"))?;
    Ok(points)
}

#[derive(Serialize, Deserialize)]
struct SweepTable {
    points: Vec<SweepPoint>,
    config_echo: toml::Table,
}

/// Distillation outcome written next to the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillReport {
    pub best: String,
    pub pre_psnr: f64,
    pub post_psnr: f64,
    pub checkpoint: PathBuf,
}

/// Fine-tunes the best pool member on scorer-fused pseudo-labels and
/// reports its validation PSNR before and after.
pub fn cmd_distill(cfg: &ExperimentConfig) -> Result<DistillReport> {
    let section = cfg.distill.as_ref().ok_or_else(|| {
        Error::InvalidArgument("config needs a [distill] section for this command".into())
    })?;
    let variant = cfg.variant();
    let pool = cfg.build_pool()?;
    let scorer = load_scorer(cfg, variant)?;
    let index = DatasetIndex::load(&cfg.out_dir)?;
    let unlabeled = index.manifests("unlabeled")?;
    let val = index.manifests("val")?;

    let out_ckpt = cfg.out_dir.join("ckpts").join("distilled.ckpt");
    let dcfg = DistillConfig {
        iters: section.iters,
        batch: section.batch,
        patch: section.patch,
        lr: section.lr,
        seed: cfg.distill_seed(),
    };
    // Distill against the first unlabeled/validation sets joined.
    let outcome = distill_best(&pool, &scorer, &unlabeled[0], &val[0], &dcfg, &out_ckpt)?;

    // Post-distillation PSNR over the full validation list.
    let distilled = DenoiserHandle::trained_cnn("distilled", &out_ckpt)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for manifest in &val {
        for (id, noisy, clean) in manifest.load_pairs()? {
            acc += psnr(&distilled.denoise(&noisy, &id)?, &clean, 1.0)?;
            n += 1;
        }
    }
    let mut pre_acc = 0.0;
    let best_handle = pool
        .iter()
        .find(|h| h.name() == outcome.best_name)
        .expect("best member in pool");
    for manifest in &val {
        for (id, noisy, clean) in manifest.load_pairs()? {
            pre_acc += psnr(&best_handle.denoise(&noisy, &id)?, &clean, 1.0)?;
        }
    }
    let report = DistillReport {
        best: outcome.best_name,
        pre_psnr: pre_acc / n as f64,
        post_psnr: acc / n as f64,
        checkpoint: out_ckpt,
    };
    println!(
        "distilled `{}`: {:.3} dB -> {:.3} dB on validation",
        report.best, report.pre_psnr, report.post_psnr
    );
    #[derive(Serialize)]
    struct DistillArtifact<'a> {
        #[serde(flatten)]
        report: &'a DistillReport,
        config_echo: toml::Table,
    }
    let text = toml::to_string(&DistillArtifact {
        report: &report,
        config_echo: cfg.echo()?,
    })
    .map_err(|e| Error::InvalidArgument(format!("distill report: {e}")))?;
    std::fs::write(cfg.out_dir.join("distill.toml"), text)
        .map_err(|e| Error::io(cfg.out_dir.join("distill.toml"), e))?;
    Ok(report)
}
