use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qmrkit::eval::{
    aggregate_score, benchmark_dataset as bench_dataset, benchmark_sr as bench_sr, list_images,
    macro_auc, med_r, prf_at_k, recall_at_k, EvalPair, EvalPairs,
};
use qmrkit::image::load_image;
use qmrkit::modifiers::{generate_annotated_dataset, DatasetManifest, MANIFEST_FILE};
use qmrkit::regressor::{
    load_model, predict as predict_one, save_model, EpochLog, PredictionDistribution, QmrNet,
    QualityVector, RegressorConfig, Topology,
};
use qmrkit::rng::derive_seed;
use qmrkit::sr::{load_tiny_sr, save_tiny_sr, train_tiny_sr, SrEpochLog, SrMethod};
use qmrkit::{Error, ModifierKind, ParamGrid};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{io_err, CliError};
use crate::run::{sha256_hex, RunDir, RUN_MANIFEST};
use crate::{
    BenchDatasetArgs, BenchSrArgs, EvaluateArgs, Global, ModifyArgs, PredictArgs, ScoreArgs,
    TrainArgs, TrainSrArgs,
};

struct Ctx {
    cfg: RunConfig,
    seed: u64,
}

impl Ctx {
    fn new(g: &Global) -> Result<Self, CliError> {
        let cfg = RunConfig::load(g.config.as_deref())?;
        let seed = g.seed.or(cfg.seed).unwrap_or(0);
        Ok(Ctx { cfg, seed })
    }

    fn runs_root(&self, g: &Global) -> PathBuf {
        g.runs_root
            .clone()
            .or_else(|| self.cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    fn run(&self, g: &Global, command: &'static str) -> Result<RunDir, CliError> {
        RunDir::create(g.out.as_deref(), &self.runs_root(g), command, self.seed, &self.cfg)
    }
}

fn required(flag: Option<PathBuf>, fallback: Option<&PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let p = flag
        .or_else(|| fallback.cloned())
        .ok_or_else(|| CliError::Usage(format!("missing {name}")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("{name} {} does not exist", p.display())));
    }
    Ok(p)
}

fn image_list(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let images = if dir.is_file() { vec![dir.to_path_buf()] } else { list_images(dir)? };
    if images.is_empty() {
        return Err(CliError::Usage(format!("no images in {}", dir.display())));
    }
    Ok(images)
}

fn load_models(flags: &[PathBuf], fallback: &[PathBuf], need: bool) -> Result<Vec<QmrNet>, CliError> {
    let paths = if flags.is_empty() { fallback } else { flags };
    if need && paths.is_empty() {
        return Err(CliError::Usage("missing --model".into()));
    }
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(CliError::Usage(format!("model {} does not exist", p.display())));
            }
            Ok(load_model(p, None)?)
        })
        .collect()
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Runtime(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))
}

/// Previous runs of the same command with the same seed and parameters.
fn earlier_runs(dirs: &[PathBuf], command: &str, seed: u64, params: &serde_json::Value) -> Vec<(PathBuf, String)> {
    let mut found = Vec::new();
    for d in dirs {
        let Ok(text) = std::fs::read_to_string(d.join(RUN_MANIFEST)) else { continue };
        let Ok(m) = serde_json::from_str::<serde_json::Value>(&text) else { continue };
        if m["command"] == command && m["seed"] == seed && &m["params"] == params {
            if let Some(h) = m["outputs"][MANIFEST_FILE].as_str() {
                found.push((d.clone(), h.to_string()));
            }
        }
    }
    found
}

pub fn modify(g: &Global, a: ModifyArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    let input = required(a.input, ctx.cfg.inputs.images.as_ref(), "--input")?;
    let cfg_grids = ctx.cfg.regressor.as_ref().map(|r| r.grids.clone()).unwrap_or_default();
    let kind = match (a.modifier, cfg_grids.as_slice()) {
        (Some(k), _) => k,
        (None, [only]) => only.kind(),
        _ => return Err(CliError::Usage("missing --modifier".into())),
    };
    let base_grid = cfg_grids
        .iter()
        .find(|g| g.kind() == kind)
        .cloned()
        .unwrap_or_else(|| kind.default_grid());
    let grid = ParamGrid::new(
        kind,
        a.n.unwrap_or(base_grid.n()),
        a.lo.unwrap_or(base_grid.lo()),
        a.hi.unwrap_or(base_grid.hi()),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let side = a.side.unwrap_or(ctx.cfg.dataset.side);
    let crops = a.crops.unwrap_or(ctx.cfg.dataset.crops);
    let images = image_list(&input)?;
    let params = json!({
        "input": input.display().to_string(),
        "grid": grid,
        "side": side,
        "crops": crops,
        "base": ctx.cfg.base,
    });

    let root = ctx.runs_root(g);
    let mut candidates: Vec<PathBuf> = g.out.iter().cloned().collect();
    if let Ok(rd) = std::fs::read_dir(&root) {
        let mut dirs: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("modify-")))
            .collect();
        dirs.sort();
        candidates.extend(dirs);
    }
    let earlier = earlier_runs(&candidates, "modify", ctx.seed, &params);

    let mut run = ctx.run(g, "modify")?;
    let manifest = generate_annotated_dataset(&images, &grid, side, crops, ctx.seed, run.path(), &ctx.cfg.base)?;
    run.record(MANIFEST_FILE)?;
    let hash = sha256_hex(manifest.to_jsonl()?.as_bytes());
    run.log(format!(
        "{} crops from {} images, grid {}",
        manifest.entries.len(),
        manifest.header.sources.len() - manifest.header.skipped.len(),
        grid.identity()
    ));
    for s in &manifest.header.skipped {
        run.log(format!("skipped unreadable source {s}"));
    }
    match earlier.iter().find(|(_, h)| *h == hash) {
        Some((d, _)) => run.log(format!("manifest sha256 {hash} reproduced (matches {})", d.display())),
        None if !earlier.is_empty() => {
            run.log(format!("manifest sha256 {hash} differs from {}", earlier[0].0.display()))
        }
        None => run.log(format!("manifest sha256 {hash}")),
    }
    run.finish(params)?;
    Ok(())
}

pub fn train(g: &Global, a: TrainArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    let paths = if a.manifests.is_empty() { ctx.cfg.inputs.manifests.clone() } else { a.manifests };
    if paths.is_empty() {
        return Err(CliError::Usage("missing --manifest".into()));
    }
    let manifests = paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(CliError::Usage(format!("manifest {} does not exist", p.display())));
            }
            Ok(DatasetManifest::read(p)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut config = match &ctx.cfg.regressor {
        Some(c) => c.clone(),
        None => {
            let mut grids: Vec<ParamGrid> = Vec::new();
            for m in &manifests {
                if !grids.iter().any(|g| g.kind() == m.grid().kind()) {
                    grids.push(m.grid().clone());
                }
            }
            RegressorConfig {
                topology: if grids.len() == 1 { Topology::SingleHead } else { Topology::MultiHead },
                side: manifests[0].header.side,
                grids,
                ..RegressorConfig::default()
            }
        }
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(t) = a.topology {
        config.topology = t;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let fraction = a.train_fraction.unwrap_or(ctx.cfg.train.train_fraction);
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Usage(format!("train fraction {fraction} outside (0, 1)")));
    }

    let mut run = ctx.run(g, "train")?;
    let out = qmrkit::regressor::train(&manifests, &config, fraction, ctx.seed)?;
    let model_path = run.path().join("model.json");
    save_model(&out.model, &model_path)?;
    run.record("model.json")?;
    run.write("train_log.csv", EpochLog::to_csv(&out.log).as_bytes())?;
    let split = json!({ "train": out.train_sources, "val": out.val_sources });
    run.write("split.json", (serde_json::to_string_pretty(&split).unwrap_or_default() + "\n").as_bytes())?;
    let best = &out.log[out.best_epoch - 1];
    run.log(format!(
        "best epoch {}: loss {:.4}, medR {:.3}, R@1 {:.1}%, R@5 {:.1}%",
        best.epoch, best.loss, best.med_r, best.r_at_1, best.r_at_5
    ));
    run.finish(json!({
        "manifests": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "regressor": config,
        "train_fraction": fraction,
    }))?;
    Ok(())
}

fn prediction_row(image: &str, target: Option<usize>, d: &PredictionDistribution) -> Vec<String> {
    let labels: Vec<String> = d.labels.iter().map(|l| l.to_string()).collect();
    let mut row = vec![
        image.to_string(),
        target.map(|t| t.to_string()).unwrap_or_default(),
        d.argmax.to_string(),
        format!("{:.6}", d.value),
        labels.join(";"),
    ];
    row.extend(d.probs.iter().map(|p| format!("{p:.9}")));
    row
}

pub fn predict(g: &Global, a: PredictArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    let models = load_models(&a.models, &ctx.cfg.inputs.models, true)?;
    // (display name, path, annotated class and its modifier)
    let items: Vec<(String, PathBuf, Option<(ModifierKind, usize)>)> = match (&a.manifest, a.input) {
        (Some(mp), _) => {
            if !mp.exists() {
                return Err(CliError::Usage(format!("manifest {} does not exist", mp.display())));
            }
            let m = DatasetManifest::read(mp)?;
            for model in &models {
                if let Some(h) = model.head_index(m.grid().kind()) {
                    if &model.grids()[h] != m.grid() {
                        return Err(Error::GridMismatch {
                            expected: model.grids()[h].identity(),
                            found: m.grid().identity(),
                        }
                        .into());
                    }
                }
            }
            m.entries
                .iter()
                .map(|e| (e.output.clone(), m.output_path(e), Some((e.modifier, e.class))))
                .collect()
        }
        (None, input) => {
            let dir = required(input, ctx.cfg.inputs.images.as_ref(), "--input")?;
            image_list(&dir)?
                .into_iter()
                .map(|p| {
                    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    (name, p, None)
                })
                .collect()
        }
    };

    let mut run = ctx.run(g, "predict")?;
    let mut tables: BTreeMap<ModifierKind, (usize, Vec<Vec<String>>)> = BTreeMap::new();
    for (i, (name, path, annot)) in items.iter().enumerate() {
        let img = load_image(path)?;
        let seed = derive_seed(ctx.seed, &[i as u64]);
        for model in &models {
            let crops = a.crops.unwrap_or(model.config().crops);
            for d in predict_one(model, &img, crops, seed)? {
                let target = annot.filter(|(k, _)| *k == d.kind).map(|(_, c)| c);
                let t = tables.entry(d.kind).or_insert((d.grid.n(), Vec::new()));
                t.1.push(prediction_row(name, target, &d));
            }
        }
    }
    for (kind, (n, rows)) in &tables {
        let mut header: Vec<String> = ["image", "target", "predicted", "value", "labels"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..*n).map(|k| format!("p{k}")));
        let name = format!("predictions_{kind}.csv");
        run.write(&name, &csv_bytes(&header, rows)?)?;
        run.log(format!("{name}: {} rows", rows.len()));
    }
    run.finish(json!({
        "models": a.models.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "manifest": a.manifest.map(|p| p.display().to_string()),
        "images": items.len(),
        "crops": a.crops,
    }))?;
    Ok(())
}

/// Reads `target`, `predicted` and `p<k>` columns; rows with an empty target are skipped.
fn read_pairs(path: &Path, n_flag: Option<usize>) -> Result<EvalPairs, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: no '{name}' column", path.display())))
    };
    let (ti, pi) = (col("target")?, col("predicted")?);
    let mut prob_cols = Vec::new();
    while let Some(i) = header.iter().position(|h| h == format!("p{}", prob_cols.len())) {
        prob_cols.push(i);
    }
    let n = match (prob_cols.len(), n_flag) {
        (0, Some(n)) => n,
        (0, None) => return Err(CliError::Usage("no probability columns; pass --n".into())),
        (k, Some(n)) if n != k => {
            return Err(CliError::Usage(format!("--n {n} but the CSV has {k} probability columns")))
        }
        (k, _) => k,
    };
    let bad = |line: usize, what: &str| CliError::Runtime(format!("{}: row {line}: bad {what}", path.display()));
    let mut pairs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let t = rec.get(ti).unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let target = t.parse().map_err(|_| bad(line + 2, "target"))?;
        let predicted = rec.get(pi).unwrap_or("").trim().parse().map_err(|_| bad(line + 2, "predicted"))?;
        let probs = prob_cols
            .iter()
            .map(|&c| rec.get(c).unwrap_or("").trim().parse::<f64>().map_err(|_| bad(line + 2, "probability")))
            .collect::<Result<Vec<_>, _>>()?;
        pairs.push(EvalPair { target, predicted, probs });
    }
    Ok(EvalPairs::new(n, pairs)?)
}

pub fn evaluate(g: &Global, a: EvaluateArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    if !a.predictions.exists() {
        return Err(CliError::Usage(format!("predictions {} does not exist", a.predictions.display())));
    }
    if a.k.contains(&0) {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let pairs = read_pairs(&a.predictions, a.n)?;
    let has_probs = pairs.pairs.first().is_some_and(|p| !p.probs.is_empty());
    let mut rows: Vec<(String, String)> = vec![
        ("pairs".into(), pairs.pairs.len().to_string()),
        ("medR".into(), format!("{:.6}", med_r(&pairs)?)),
    ];
    for &k in &a.k {
        rows.push((format!("R@{k}"), format!("{:.6}", recall_at_k(&pairs, k)?)));
    }
    if has_probs {
        for &k in &a.k {
            let p = prf_at_k(&pairs, k, a.threshold)?;
            rows.push((format!("precision@{k}"), format!("{:.6}", p.precision)));
            rows.push((format!("recall@{k}"), format!("{:.6}", p.recall)));
            rows.push((format!("accuracy@{k}"), format!("{:.6}", p.accuracy)));
            rows.push((format!("f_score@{k}"), format!("{:.6}", p.f_score)));
        }
        let auc = match macro_auc(&pairs) {
            Ok(v) => format!("{v:.9}"),
            Err(Error::UndefinedAuc) => qmrkit::eval::UNAVAILABLE.to_string(),
            Err(e) => return Err(e.into()),
        };
        rows.push(("AUC".into(), auc));
    }
    let mut run = ctx.run(g, "evaluate")?;
    let table: Vec<Vec<String>> = rows.iter().map(|(m, v)| vec![m.clone(), v.clone()]).collect();
    run.write("metrics.csv", &csv_bytes(&["metric".into(), "value".into()], &table)?)?;
    for (m, v) in &rows {
        println!("{m},{v}");
    }
    run.finish(json!({
        "predictions": a.predictions.display().to_string(),
        "k": a.k,
        "threshold": a.threshold,
    }))?;
    Ok(())
}

pub fn score(g: &Global, a: ScoreArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    ctx.cfg.score.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let qv = QualityVector {
        blur_sigma: a.blur,
        snr: a.snr,
        rer: a.rer,
        sharpness_f: a.sharpness,
        gsd: a.gsd,
    };
    if [qv.blur_sigma, qv.snr, qv.rer, qv.sharpness_f, qv.gsd].iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("metric values must be finite".into()));
    }
    let s = aggregate_score(&qv, &ctx.cfg.score)?;
    println!("{s:.4}");
    if g.out.is_some() {
        let mut run = ctx.run(g, "score")?;
        let body = json!({ "quality": qv, "score": s });
        run.write("score.json", (serde_json::to_string_pretty(&body).unwrap_or_default() + "\n").as_bytes())?;
        run.finish(json!({ "quality": qv, "convention": ctx.cfg.score }))?;
    }
    Ok(())
}

pub fn benchmark_dataset(g: &Global, a: BenchDatasetArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    let models = load_models(&a.models, &ctx.cfg.inputs.models, true)?;
    let dir = required(a.input, ctx.cfg.inputs.images.as_ref(), "--input")?;
    let images = image_list(&dir)?;
    let label = a.label.unwrap_or_else(|| {
        dir.file_name()
            .map(|n| format!("{}{}", n.to_string_lossy(), images.len()))
            .unwrap_or_else(|| "dataset".into())
    });
    let crops = a.crops.unwrap_or(ctx.cfg.dataset.crops);
    let refs: Vec<&QmrNet> = models.iter().collect();
    let mut run = ctx.run(g, "benchmark-dataset")?;
    let report = bench_dataset(&refs, &images, &label, crops, ctx.seed, &ctx.cfg.score)?;
    for s in &report.skipped {
        run.log(format!("skipped unreadable image {s}"));
    }
    run.write("dataset.csv", report.to_csv().as_bytes())?;
    run.log(format!("{} images, mean score {}", report.images.len(), report.mean.score.map_or("-".into(), |s| format!("{s:.3}"))));
    run.finish(json!({
        "input": dir.display().to_string(),
        "models": a.models.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "label": label,
        "crops": crops,
        "convention": ctx.cfg.score,
    }))?;
    Ok(())
}

fn parse_method(s: &str, scale: usize) -> Result<SrMethod, CliError> {
    let s = s.trim();
    match s.split_once(['=', ':']) {
        Some(("tinysr", path)) => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(CliError::Usage(format!("tinysr checkpoint {path} does not exist")));
            }
            Ok(SrMethod::Tiny(Box::new(load_tiny_sr(p)?)))
        }
        _ => match s {
            "nearest" => Ok(SrMethod::Nearest { scale }),
            "bicubic" => Ok(SrMethod::Bicubic { scale }),
            o => Err(CliError::Usage(format!("unknown SR method '{o}' (expected nearest, bicubic, tinysr=<checkpoint>)"))),
        },
    }
}

pub fn benchmark_sr(g: &Global, a: BenchSrArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    if !(2..=4).contains(&a.scale) {
        return Err(CliError::Usage(format!("--scale {} (expected 2, 3 or 4)", a.scale)));
    }
    let dir = required(a.input, ctx.cfg.inputs.hr.as_ref(), "--input")?;
    let images = image_list(&dir)?;
    let methods = a.methods.iter().map(|m| parse_method(m, a.scale)).collect::<Result<Vec<_>, _>>()?;
    let models = load_models(&a.models, &ctx.cfg.inputs.models, false)?;
    let refs: Vec<&QmrNet> = models.iter().collect();
    let crops = a.crops.unwrap_or(ctx.cfg.dataset.crops);
    let mut run = ctx.run(g, "benchmark-sr")?;
    let report = bench_sr(&methods, &images, a.scale, a.blur_lr, &refs, crops, ctx.seed, &ctx.cfg.score)?;
    for r in report.rows.iter().filter(|r| r.failures > 0) {
        run.log(format!("{}: failed on {} images", r.label, r.failures));
    }
    run.write("fr.csv", report.fr_csv().as_bytes())?;
    run.write("nr.csv", report.nr_csv().as_bytes())?;
    run.write("qmr.csv", report.qmr_csv().as_bytes())?;
    run.finish(json!({
        "input": dir.display().to_string(),
        "scale": a.scale,
        "methods": a.methods,
        "blur_lr": a.blur_lr,
        "models": a.models.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "crops": crops,
        "convention": ctx.cfg.score,
    }))?;
    Ok(())
}

pub fn train_sr(g: &Global, a: TrainSrArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(g)?;
    let dir = required(a.input, ctx.cfg.inputs.hr.as_ref(), "--input")?;
    let images = image_list(&dir)?;
    let mut config = ctx.cfg.sr.clone();
    if let Some(s) = a.scale {
        config.scale = s;
    }
    if let Some(l) = a.lambda {
        config.lambda = l;
    }
    if let Some(k) = a.loss_kind {
        config.loss_kind = k;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    if let Some(p) = a.patch {
        config.patch = p;
    }
    if let Some(p) = a.patches_per_image {
        config.patches_per_image = p;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let regressor = match &a.model {
        Some(p) if p.exists() => Some(load_model(p, None)?),
        Some(p) => return Err(CliError::Usage(format!("model {} does not exist", p.display()))),
        None if config.lambda > 0.0 => {
            return Err(CliError::Usage("--lambda > 0 needs --model (a frozen regressor)".into()))
        }
        None => None,
    };
    let mut run = ctx.run(g, "train-sr")?;
    let out = train_tiny_sr(&images, &config, regressor.as_ref().map(|m| (m, a.param)), ctx.seed)?;
    save_tiny_sr(&out.model, run.path().join("tinysr.json"))?;
    run.record("tinysr.json")?;
    run.write("sr_log.csv", SrEpochLog::to_csv(&out.log).as_bytes())?;
    if let Some(l) = out.log.last() {
        run.log(format!("epoch {}: loss {:.5}, val psnr {:.3}, ssim {:.4}", l.epoch, l.loss, l.val_psnr, l.val_ssim));
    }
    run.finish(json!({
        "input": dir.display().to_string(),
        "sr": config,
        "model": a.model.map(|p| p.display().to_string()),
        "param": a.param,
        "train_images": out.train_images,
        "val_images": out.val_images,
    }))?;
    Ok(())
}
