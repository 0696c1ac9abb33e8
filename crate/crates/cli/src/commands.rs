use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kgat_core::artifact::{
    atomic_write, read_document, to_document, to_json_lines, train_csv, ExtractionDocument,
    RelationRecord, StabilityDocument,
};
use kgat_core::ingest::{coco_document, encode_pgm, image_relation, load_dataset};
use kgat_core::radiance::{band_radiance, render_scene, SceneSpec};
use kgat_core::rankcore::{rank_vector, spearman, RelationPair};
use kgat_core::stability::{empirical_stability, image_stability};
use kgat_core::theorem::{
    compare_detectors, expected_spearman, monte_carlo_expected_spearman, permutation_engines,
    ExpectationReport, TheoremModel, TheoremModelSpec,
};
use kgat_core::trainer::{run_training, TrainConfig};
use kgat_core::weights::weighting_schemes;
use kgat_core::{ClassId, Error, ImageId, Result};

use crate::config::{
    ExtractArgs, RenderArgs, RunConfig, StabilityArgs, TrainArgs, VerifyTheoremArgs, WeightsArgs,
};

/// Settings shared by every command after merging flags over `--config`.
pub struct Context {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub run: RunConfig,
}

pub fn extract(ctx: &Context, args: &ExtractArgs) -> Result<()> {
    let dataset = load_dataset(&args.annotations, &args.images)?;
    for w in &dataset.warnings {
        log::warn!("{w}");
    }
    let mut images: Vec<_> = dataset.images.iter().collect();
    images.sort_by_key(|(id, _)| *id);
    let mut doc = ExtractionDocument::default();
    for (id, image) in images {
        let boxes = dataset.boxes(*id);
        if boxes.is_empty() {
            log::info!("image {} has no annotations; skipped", id.0);
            doc.skipped.push(*id);
            continue;
        }
        doc.relations
            .push(RelationRecord::new(image_relation(*id, image, boxes)?)?);
    }
    atomic_write(&ctx.out, &to_document(&doc)?)
}

pub fn stability(ctx: &Context, args: &StabilityArgs) -> Result<()> {
    let doc: ExtractionDocument = read_document(&args.extraction)?;
    let matrix = empirical_stability(&doc.relations())?;
    atomic_write(&ctx.out, &to_document(&StabilityDocument::from(&matrix))?)
}

pub fn weights(ctx: &Context, args: &WeightsArgs) -> Result<()> {
    let reference: ExtractionDocument = read_document(&args.extraction)?;
    let predicted: ExtractionDocument = read_document(&args.predictions)?;
    let stability: StabilityDocument = read_document(&args.stability)?;
    let matrix = stability.to_matrix()?;
    let cfg = ctx.run.weights.unwrap_or_default();
    cfg.validate()?;
    let scheme_name = args
        .scheme
        .as_deref()
        .or(ctx.run.scheme.as_deref())
        .unwrap_or("kgat");
    let schemes = weighting_schemes();
    let scheme = schemes.get(scheme_name)?;

    let by_id: BTreeMap<ImageId, _> = predicted
        .relations()
        .into_iter()
        .map(|r| (r.image_id, r))
        .collect();
    let mut records = Vec::with_capacity(reference.relations.len());
    for r in reference.relations() {
        let pred = by_id.get(&r.image_id).ok_or_else(|| {
            Error::Domain(format!("no predicted relation for image {}", r.image_id.0))
        })?;
        let rho = spearman(&RelationPair::new(&r, pred));
        let classes: Vec<ClassId> = r.foreground().into_iter().map(|(c, _)| c).collect();
        let s = image_stability(&matrix, &classes)?;
        records.push(scheme.record(r.image_id, rho, s, &cfg)?);
    }
    atomic_write(&ctx.out, &to_json_lines(&records)?)
}

#[derive(Serialize)]
struct TruthClass {
    class_id: ClassId,
    name: Option<String>,
    temperature: f64,
    band_radiance: f64,
    clean_gray: f64,
    rank: f64,
}

#[derive(Serialize)]
struct RenderTruth {
    background_gray: f64,
    classes: Vec<TruthClass>,
}

pub const RENDER_IMAGE: &str = "scene.pgm";
pub const RENDER_ANNOTATIONS: &str = "annotations.json";
pub const RENDER_TRUTH: &str = "truth.json";

pub fn render(ctx: &Context, args: &RenderArgs) -> Result<()> {
    let mut spec: SceneSpec = read_document(&args.scene)?;
    if let Some(seed) = ctx.seed {
        spec.rng_seed = seed;
    }
    let scene = render_scene(&spec)?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::Io {
        path: ctx.out.clone(),
        source: e,
    })?;

    let (background_gray, grays) = spec.clean_grays()?;
    let ranks = rank_vector(
        &spec
            .classes
            .iter()
            .zip(&grays)
            .map(|(c, &g)| (c.class_id, g))
            .collect::<Vec<_>>(),
    )?;
    let classes = spec
        .classes
        .iter()
        .zip(&grays)
        .zip(&ranks.ranks)
        .map(|((c, &clean_gray), &rank)| {
            Ok(TruthClass {
                class_id: c.class_id,
                name: c.name.clone(),
                temperature: c.params.temperature,
                band_radiance: band_radiance(&c.params, &spec.band)?,
                clean_gray,
                rank,
            })
        })
        .collect::<Result<_>>()?;

    let coco = coco_document(
        ImageId(1),
        RENDER_IMAGE,
        &scene.image,
        &scene.annotations,
        &scene.class_names,
    );
    atomic_write(&ctx.out.join(RENDER_IMAGE), &encode_pgm(&scene.image)?)?;
    atomic_write(&ctx.out.join(RENDER_ANNOTATIONS), &to_document(&coco)?)?;
    atomic_write(
        &ctx.out.join(RENDER_TRUTH),
        &to_document(&RenderTruth {
            background_gray,
            classes,
        })?,
    )
}

fn default_engine() -> String {
    "marginal".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TheoremInput {
    model_1: TheoremModelSpec,
    model_2: TheoremModelSpec,
    #[serde(default = "default_engine")]
    engine: String,
    /// Adds Monte Carlo estimates with this many samples per model.
    #[serde(default)]
    mc_samples: Option<usize>,
}

#[derive(Serialize)]
struct TheoremOutput {
    engine: String,
    /// Classes in reference order (ascending mean offset).
    class_ids: Vec<ClassId>,
    model_1: ExpectationReport,
    model_2: ExpectationReport,
    knowledge_loss_1: f64,
    knowledge_loss_2: f64,
    improved: bool,
}

pub fn verify_theorem(ctx: &Context, args: &VerifyTheoremArgs) -> Result<()> {
    let input: TheoremInput = read_document(&args.model)?;
    let engine_name = args.engine.clone().unwrap_or(input.engine);
    let engines = permutation_engines();
    let engine = engines.get(&engine_name)?;
    let m1 = TheoremModel::from_spec(&input.model_1)?;
    let m2 = TheoremModel::from_spec(&input.model_2)?;
    let comparison = compare_detectors(&m1, &m2, engine)?;

    let report = |m: &TheoremModel| -> Result<ExpectationReport> {
        let mut r = expected_spearman(m, engine, true)?;
        if let Some(n) = input.mc_samples {
            let mc = monte_carlo_expected_spearman(m, n, ctx.seed.unwrap_or(0))?;
            r.mc_estimate = Some(mc.estimate);
            r.mc_stderr = Some(mc.stderr);
        }
        Ok(r)
    };
    let out = TheoremOutput {
        engine: engine_name,
        class_ids: m1.class_ids(),
        model_1: report(&m1)?,
        model_2: report(&m2)?,
        knowledge_loss_1: comparison.knowledge_loss_1,
        knowledge_loss_2: comparison.knowledge_loss_2,
        improved: comparison.improved,
    };
    atomic_write(&ctx.out, &to_document(&out)?)
}

/// CSV report path written next to the JSON report.
pub fn csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

pub fn train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match (&args.train_config, &ctx.run.train) {
        (Some(path), _) => read_document(path)?,
        (None, Some(cfg)) => cfg.clone(),
        (None, None) => {
            return Err(Error::Config(
                "train needs --train-config or a `train` section in --config".into(),
            ))
        }
    };
    if let Some(w) = &ctx.run.weights {
        cfg.weights = *w;
    }
    if let Some(seed) = ctx.seed {
        cfg.perturbation.seed = seed;
    }
    let doc: ExtractionDocument = read_document(&args.extraction)?;
    let stability: StabilityDocument = read_document(&args.stability)?;
    let report = run_training(&doc.relations(), &stability.to_matrix()?, &cfg)?;
    atomic_write(&ctx.out, &to_document(&report)?)?;
    atomic_write(&csv_path(&ctx.out), train_csv(&report).as_bytes())
}
