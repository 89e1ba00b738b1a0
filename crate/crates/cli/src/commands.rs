use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use larvacount::counting::{
    count_images, read_count_csv, write_count_csv, write_count_json, CountConfig, CountResult, ImageInput,
};
use larvacount::dataset::{load_manifest, split_dataset, DatasetManifest, Split, SplitAssignment};
use larvacount::detect::{load_detection_store, BackendRegistry, DetectorBackend};
use larvacount::evalstat::{render_scatter_svg, scatter_data, EvalSeries};
use larvacount::report::{evaluate, read_metrics_csv, render_table, write_metrics_csv, write_stats_json};
use larvacount::tiling::{self, file_safe, project_annotations, TileAnnotations, TileGrid, DEFAULT_KEEP_FRACTION};
use larvacount::tune::{tune, write_rounds_csv, TuneResult};
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{count_code, tune_code, Failure, ResultExt, EXIT_BACKEND};
use crate::run::RunDir;

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest, Failure> {
    let path = cfg.require_manifest()?;
    load_manifest(path).validation_err(|| format!("manifest {}", path.display()))
}

fn backend(cfg: &RunConfig) -> Result<Box<dyn DetectorBackend>, Failure> {
    let spec = cfg.require_backend()?;
    BackendRegistry::with_builtins().build(&spec).map_err(|e| {
        use larvacount::detect::DetectError as D;
        let code = match e {
            D::Config(_) | D::UnknownBackend(_) => crate::failure::EXIT_CONFIG,
            D::Io { .. } | D::Parse { .. } | D::Record { .. } => crate::failure::EXIT_VALIDATION,
            _ => EXIT_BACKEND,
        };
        Failure::new(code, anyhow::Error::new(e).context(format!("backend '{}'", spec.kind)))
    })
}

/// The split in effect: a split file, or one drawn from the configured ratios
/// (then saved into the run as `splits.json`).
fn split_assignment(
    cfg: &RunConfig,
    m: &DatasetManifest,
    run: Option<&mut RunDir>,
) -> Result<Option<SplitAssignment>, Failure> {
    if let Some(path) = &cfg.splits {
        let s = SplitAssignment::load(path).validation_err(|| format!("split file {}", path.display()))?;
        s.check_against(m)
            .validation_err(|| format!("split file {}", path.display()))?;
        return Ok(Some(s));
    }
    if let Some(p) = &cfg.split {
        let s = split_dataset(m, p.ratios, p.seed.unwrap_or(cfg.seed)).config_err(|| "cannot split dataset")?;
        if let Some(run) = run {
            let path = run.artifact("splits.json")?;
            s.write(&path).io_err(|| "cannot write splits.json")?;
        }
        return Ok(Some(s));
    }
    Ok(None)
}

/// Images of the configured subset, in manifest order.
fn inputs(
    cfg: &RunConfig,
    m: &DatasetManifest,
    run: &mut RunDir,
    default_subset: Option<Split>,
) -> Result<Vec<ImageInput>, Failure> {
    let split = split_assignment(cfg, m, Some(run))?;
    let subset = match &cfg.subset {
        Some(s) => Some(
            s.parse::<Split>()
                .map_err(|e| Failure::config(format!("subset '{s}': {e}")))?,
        ),
        None if split.is_some() => default_subset,
        None => None,
    };
    let root = cfg.image_root();
    let keep: Option<BTreeSet<&str>> = match (subset, &split) {
        (Some(which), Some(s)) => Some(s.ids(which).into_iter().collect()),
        (Some(which), None) => {
            return Err(Failure::config(format!(
                "subset '{which}' needs a split (\"splits\" or \"split\")"
            )));
        }
        (None, _) => None,
    };
    let out: Vec<ImageInput> = m
        .images
        .iter()
        .filter(|r| keep.as_ref().is_none_or(|k| k.contains(r.id.as_str())))
        .map(|r| ImageInput::from_manifest(m, r, &root))
        .collect();
    if out.is_empty() {
        return Err(Failure::validation("no images selected"));
    }
    Ok(out)
}

pub fn validate(cfg: &RunConfig, stores: &[PathBuf]) -> Result<String, Failure> {
    let m = manifest(cfg)?;
    let mut lines = vec![format!(
        "{} images, {} annotations",
        m.images.len(),
        m.annotations.len()
    )];
    if let Some(s) = split_assignment(cfg, &m, None)? {
        let (a, b, c) = s.sizes();
        lines.push(format!("split: {a} train, {b} val, {c} test"));
    }
    for path in stores {
        let store = load_detection_store(path).validation_err(|| format!("detection store {}", path.display()))?;
        lines.push(format!(
            "{}: {} tiles, {} detections ({})",
            path.display(),
            store.len(),
            store.detection_count(),
            store.provenance.model
        ));
    }
    Ok(lines.join("\n"))
}

pub fn synth(cfg: &larvacount::synthetic::SyntheticConfig, out: &Path, render: bool) -> Result<String, Failure> {
    let m = larvacount::synthetic::generate(cfg).config_err(|| "synthetic dataset")?;
    let path = larvacount::synthetic::write_dataset(&m, out, render).io_err(|| "synthetic dataset")?;
    Ok(format!(
        "{} images, {} annotations written to {}",
        m.images.len(),
        m.annotations.len(),
        path.display()
    ))
}

pub fn split(cfg: &RunConfig, run: &mut RunDir) -> Result<String, Failure> {
    let m = manifest(cfg)?;
    if cfg.split.is_none() {
        return Err(Failure::config("split needs ratios (--ratios or \"split\")"));
    }
    let cfg = RunConfig {
        splits: None,
        ..cfg.clone()
    };
    let s = split_assignment(&cfg, &m, Some(run))?.expect("split params present");
    let (a, b, c) = s.sizes();
    Ok(format!("{a} train, {b} val, {c} test"))
}

#[derive(Serialize)]
struct ImageTiles {
    grid: TileGrid,
    tiles: Vec<TileAnnotations>,
}

pub fn tile(cfg: &RunConfig, run: &mut RunDir) -> Result<String, Failure> {
    let m = manifest(cfg)?;
    let spec = cfg
        .tiling
        .or_else(|| cfg.count.map(|c| larvacount::TileSpec::Scaled { scale: c.scale }))
        .ok_or_else(|| Failure::config("tile needs --scale or --side"))?;
    let images = inputs(cfg, &m, run, None)?;
    let mut out = Vec::with_capacity(images.len());
    let mut tiles = 0;
    let mut kept = 0;
    for input in &images {
        let rec = &input.record;
        let grid = spec
            .grid(&rec.id, rec.width, rec.height)
            .config_err(|| format!("image {}", rec.id))?;
        let anns = input.annotations.clone().unwrap_or_default();
        let projected =
            project_annotations(&anns, &grid, DEFAULT_KEEP_FRACTION).validation_err(|| format!("image {}", rec.id))?;
        tiles += grid.len();
        kept += projected.iter().map(|t| t.boxes.len()).sum::<usize>();
        if cfg.dump_tiles {
            let raster = input.raster.as_ref().expect("manifest inputs carry a raster");
            let img = tiling::load_raster(&raster.path).validation_err(|| format!("image {}", rec.id))?;
            let dir = run.dir.join("tiles");
            let written =
                tiling::dump_tiles(&img, &grid, &projected, &dir).io_err(|| format!("tiles of {}", rec.id))?;
            for p in written {
                let rel = p
                    .strip_prefix(&run.dir)
                    .expect("inside run")
                    .to_string_lossy()
                    .into_owned();
                run.artifact(&rel)?;
            }
        }
        out.push(ImageTiles { grid, tiles: projected });
    }
    run.write_json("tiles.json", &out)?;
    Ok(format!("{} images, {tiles} tiles, {kept} retained boxes", out.len()))
}

#[derive(Serialize)]
struct CountFile<'a> {
    model: &'a str,
    config: &'a CountConfig,
    results: &'a [CountResult],
}

pub fn count(cfg: &RunConfig, run: &mut RunDir) -> Result<String, Failure> {
    let m = manifest(cfg)?;
    let count_cfg = cfg
        .count
        .ok_or_else(|| Failure::config("count needs --scale and --conf (or \"count\")"))?;
    count_cfg.validate().config_err(|| "count config")?;
    let images = inputs(cfg, &m, run, Some(Split::Test))?;
    let b = backend(cfg)?;
    let model = cfg.model_name();
    log::info!(
        "counting {} images with {} at scale {} conf {}",
        images.len(),
        b.name(),
        count_cfg.scale,
        count_cfg.confidence
    );
    let results = count_images(&images, b.as_ref(), &count_cfg).map_err(|e| {
        let code = count_code(&e);
        Failure::new(code, e)
    })?;
    let csv = run.artifact("counts.csv")?;
    write_count_csv(&results, &csv).io_err(|| "counts.csv")?;
    let json = run.artifact("counts.json")?;
    write_count_json(
        &CountFile {
            model: &model,
            config: &count_cfg,
            results: &results,
        },
        &json,
    )
    .io_err(|| "counts.json")?;
    let exact = results.iter().filter(|r| r.truth == Some(r.predicted)).count();
    Ok(format!("{model}: {} images counted, {exact} exact", results.len()))
}

pub fn tune_cmd(cfg: &RunConfig, run: &mut RunDir) -> Result<String, Failure> {
    let m = manifest(cfg)?;
    let images = inputs(cfg, &m, run, Some(Split::Train))?;
    let b = backend(cfg)?;
    let model = cfg.model_name();
    let opts = cfg.tune.clone().unwrap_or_else(|| {
        let mut o = larvacount::tune::TuneOptions::default();
        o.preprocess.seed = cfg.seed;
        o
    });
    match tune(&model, &images, b.as_ref(), &opts) {
        Ok(result) => {
            run.write_json("tune.json", &result)?;
            let csv = run.artifact("tune.csv")?;
            result.write_csv(&csv).io_err(|| "tune.csv")?;
            Ok(result.table_row())
        }
        Err(e) => {
            if let Some(partial) = e.partial() {
                run.write_json("tune_partial.json", partial)?;
                let csv = run.artifact("tune_partial.csv")?;
                write_rounds_csv(&partial.rounds, &csv).io_err(|| "tune_partial.csv")?;
            }
            let code = tune_code(&e);
            Err(Failure::new(code, e))
        }
    }
}

pub fn eval(cfg: &RunConfig, run: &mut RunDir) -> Result<String, Failure> {
    if cfg.eval.counts.len() < 2 {
        return Err(Failure::config("eval needs at least two models (--counts name=path)"));
    }
    let mut series = Vec::with_capacity(cfg.eval.counts.len());
    for (model, path) in &cfg.eval.counts {
        let rows = read_count_csv(path).validation_err(|| format!("counts for {model}"))?;
        series.push(EvalSeries::from_rows(model, &rows).validation_err(|| format!("counts for {model}"))?);
    }
    let report = evaluate(&series, cfg.eval.alpha, cfg.eval.r2).validation_err(|| "evaluation")?;
    let csv = run.artifact("metrics.csv")?;
    write_metrics_csv(&report.rows, &csv).io_err(|| "metrics.csv")?;
    let stats = run.artifact("stats.json")?;
    write_stats_json(&report, &stats).io_err(|| "stats.json")?;
    for s in &series {
        let data = scatter_data(s).validation_err(|| format!("scatter for {}", s.model))?;
        run.write_text(
            &format!("plots/{}.svg", file_safe(&s.model)),
            &render_scatter_svg(&data),
        )?;
    }
    let table = render_table(&report.rows);
    run.write_text("table.md", &table)?;
    Ok(format!(
        "{table}\nANOVA MAE: F = {:.3}, p = {:.5}; MAPE: F = {:.3}, p = {:.5}",
        report.anova_mae.f_stat, report.anova_mae.p_value, report.anova_mape.f_stat, report.anova_mape.p_value
    ))
}

fn load_tune_result(path: &Path) -> Result<TuneResult, Failure> {
    let text = std::fs::read_to_string(path).validation_err(|| format!("tune result {}", path.display()))?;
    serde_json::from_str(&text).validation_err(|| format!("tune result {}", path.display()))
}

pub fn report(cfg: &RunConfig, run: &mut RunDir) -> Result<String, Failure> {
    let path = cfg
        .metrics
        .as_deref()
        .ok_or_else(|| Failure::config("report needs --metrics"))?;
    let rows = read_metrics_csv(path).validation_err(|| format!("metrics {}", path.display()))?;
    let mut text = String::from("# Model comparison\n\n");
    text += &render_table(&rows);
    if !cfg.tune_results.is_empty() {
        text += "\n## Inference settings\n\n| Model | Confidence | Scale |\n|---|---|---|\n";
        for p in &cfg.tune_results {
            text += &load_tune_result(p)?.table_row();
            text.push('\n');
        }
    }
    run.write_text("report.md", &text)?;
    Ok(text)
}
