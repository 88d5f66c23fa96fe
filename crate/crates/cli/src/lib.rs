use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use typeshift_core::color::rgb_to_hsv;
use typeshift_core::dataset::{
    build_augmented_set, load_faces, load_manifest, read_cache, split_dataset, write_cache, AugmentedInstance,
    Background, Sample, Split,
};
use typeshift_core::eval::{
    contact_sheet, interpolate_latents, load_regional_pairs, markdown_table, original_to_regional_report,
    prepare_eval_image, reconstruct_one, reconstruction_report, type_swap, EvalReport, Metric, ModelTag, SwapTarget,
    VariantSelection,
};
use typeshift_core::model::{ArchConfig, Params};
use typeshift_core::synth::{write_corpus, CorpusSize};
use typeshift_core::training::{
    load_checkpoint, load_checkpoint_for, run_plan, Initialization, LogEntry, PlanData, TrainingPlan,
};
use typeshift_core::typeassign::{label_faces, Assignment};
use typeshift_core::types::parse_type_list;
use typeshift_core::{Raster, TypeVector};

/// Share of the manifest held out for testing: 147 of 974 creatures.
pub const DEFAULT_TEST_FRACTION: f64 = 147.0 / 974.0;

#[derive(Parser, Debug)]
#[command(name = "typeshift", version, about = "Type-conditioned sprite autoencoder toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic sprite/face/regional corpus.
    Synth(SynthArgs),
    /// Split the manifest and write the augmented PNG cache.
    Prepare(PrepareArgs),
    /// Label face images with creature types by stable matching.
    AssignTypes(AssignArgs),
    /// Print a training plan as TOML.
    Plan(PlanArgs),
    Train(TrainArgs),
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 974)]
    pub sprites: usize,
    #[arg(long, default_value_t = 2000)]
    pub faces: usize,
    #[arg(long, default_value_t = 48)]
    pub regional: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cache directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AssignArgs {
    /// Face index JSON.
    #[arg(long)]
    pub faces: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for assignments.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlanName {
    Transfer,
    Baseline,
}

impl PlanName {
    fn as_str(self) -> &'static str {
        match self {
            PlanName::Transfer => "transfer",
            PlanName::Baseline => "baseline",
        }
    }
}

#[derive(Args, Debug)]
pub struct PlanSelection {
    #[arg(long, value_enum, default_value_t = PlanName::Transfer)]
    pub plan: PlanName,
    /// Plan TOML; replaces the built-in plan.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Multiplies every stage's epoch count (rounded up, at least 1).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Overrides every stage seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl PlanSelection {
    pub fn resolve(&self) -> Result<TrainingPlan> {
        let plan = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                TrainingPlan::from_toml(&text)?
            }
            None => TrainingPlan::by_name(self.plan.as_str(), self.seed.unwrap_or(0))
                .ok_or_else(|| anyhow!("unknown plan"))?,
        };
        let plan = match self.seed {
            Some(seed) => plan.with_seed(seed),
            None => plan,
        };
        let plan = plan.scaled(self.scale)?;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[command(flatten)]
    pub selection: PlanSelection,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub selection: PlanSelection,
    #[arg(long)]
    pub out: PathBuf,
    /// Augmented sprite cache (train split is used).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Face index JSON; needed when the plan has face stages.
    #[arg(long)]
    pub faces: Option<PathBuf>,
    /// Face type labels from `assign-types`.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    /// Start from this checkpoint instead of fresh weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Architecture JSON; defaults to the full model.
    #[arg(long)]
    pub arch: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Recon,
    Swap,
    Regional,
    Interp,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub model: PathBuf,
    /// Augmented cache (recon, swap, interp).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sprite manifest (regional).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Regional variant CSV (regional).
    #[arg(long)]
    pub regional: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    pub magnitude: f64,
    /// Comma-separated target types for swaps.
    #[arg(long, default_value = "fire", value_delimiter = ',')]
    pub types: Vec<String>,
    /// Score every background/flip rendering instead of black only.
    #[arg(long)]
    pub all_variants: bool,
    /// Sprite ids to render; interp takes exactly two.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

pub use typeshift_core::tensor::ensure_blas_kernels;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Prepare(a) => prepare(&a),
        Command::AssignTypes(a) => assign_types(&a),
        Command::Plan(a) => {
            print!("{}", a.selection.resolve()?.to_toml());
            Ok(())
        }
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Serve(a) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(typeshift_service::serve(typeshift_service::ServeConfig {
                host: a.host,
                port: a.port,
                checkpoint: a.checkpoint,
                catalog: a.catalog,
            }))
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let paths = write_corpus(
        &a.out,
        CorpusSize {
            sprites: a.sprites,
            faces: a.faces,
            regional: a.regional,
        },
        a.seed,
    )?;
    println!("manifest  {}", paths.manifest.display());
    println!("faces     {}", paths.faces_index.display());
    println!("regional  {}", paths.regional.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SplitFile {
    seed: u64,
    test_fraction: f64,
    train: Vec<String>,
    test: Vec<String>,
    train_instances: usize,
    test_instances: usize,
}

fn prepare(a: &PrepareArgs) -> Result<()> {
    let records = load_manifest(&a.manifest)?;
    let (train, test) = split_dataset(&records, a.test_fraction, a.seed)?;
    let mut all = train.clone();
    all.extend(test.iter().cloned());
    let instances = build_augmented_set(&all, a.seed)?;
    write_cache(&a.out, &instances)?;
    let count = |s: Split| instances.iter().filter(|i| i.split == s).count();
    let split = SplitFile {
        seed: a.seed,
        test_fraction: a.test_fraction,
        train: train.iter().map(|r| r.id.clone()).collect(),
        test: test.iter().map(|r| r.id.clone()).collect(),
        train_instances: count(Split::Train),
        test_instances: count(Split::Test),
    };
    write_file(&a.out.join("split.json"), serde_json::to_vec_pretty(&split)?)?;
    println!(
        "{} creatures: {} train / {} test -> {} train / {} test instances",
        records.len(),
        train.len(),
        test.len(),
        split.train_instances,
        split.test_instances
    );
    Ok(())
}

fn assign_types(a: &AssignArgs) -> Result<()> {
    let sprites = load_manifest(&a.manifest)?;
    let faces = load_faces(&a.faces)?;
    let labelling = label_faces(&sprites, &faces)?;
    fs::create_dir_all(&a.out)?;
    let csv = fs::File::create(a.out.join("assignments.csv"))?;
    labelling.assignment.write_csv(csv)?;
    labelling.summary.write_json(&a.out.join("summary.json"))?;
    println!("{} faces labelled", faces.len());
    Ok(())
}

/// Faces as training samples, each conditioned on its assigned type.
pub fn face_samples(index: &Path, assignments: &Path) -> Result<Vec<Sample>> {
    let file = fs::File::open(assignments).with_context(|| format!("opening {}", assignments.display()))?;
    let assignment = Assignment::read_csv(file)?;
    let labels = assignment.as_map();
    load_faces(index)?
        .into_iter()
        .map(|f| {
            let t = labels
                .get(f.id.as_str())
                .ok_or_else(|| anyhow!("face {} has no assigned type", f.id))?;
            Ok(Sample {
                image: rgb_to_hsv(&f.image)?,
                type_vector: TypeVector::unit(&[*t])?,
            })
        })
        .collect()
}

fn train(a: &TrainArgs) -> Result<()> {
    let plan = a.selection.resolve()?;
    let arch = match &a.arch {
        Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ArchConfig::default(),
    };
    let params = match &a.init {
        Some(path) => load_checkpoint_for(path, &arch)?.params,
        None if plan.initialization == Initialization::FromCheckpoint => {
            bail!("plan {} starts from a checkpoint; pass --init", plan.name)
        }
        None => Params::init(&arch, plan.stages[0].seed)?,
    };
    let uses = |kind| plan.stages.iter().any(|s| s.dataset == kind);

    let faces = if uses(typeshift_core::training::DatasetKind::Faces) {
        let index = a.faces.as_ref().ok_or_else(|| anyhow!("plan has face stages; pass --faces"))?;
        let labels = a
            .assignments
            .as_ref()
            .ok_or_else(|| anyhow!("plan has face stages; pass --assignments"))?;
        face_samples(index, labels)?
    } else {
        Vec::new()
    };
    let pokemon: Vec<Sample> = if uses(typeshift_core::training::DatasetKind::Pokemon) {
        let dir = a.data.as_ref().ok_or_else(|| anyhow!("plan has sprite stages; pass --data"))?;
        read_cache(dir)?
            .iter()
            .filter(|i| i.split == Split::Train)
            .map(Sample::from)
            .collect()
    } else {
        Vec::new()
    };
    println!(
        "plan {}: {} stages, {} epochs; {} face samples, {} sprite samples",
        plan.name,
        plan.stages.len(),
        plan.total_epochs(),
        faces.len(),
        pokemon.len()
    );
    write_file(&a.out.join("plan.toml"), plan.to_toml())?;
    let data = PlanData {
        faces: &faces,
        pokemon: &pokemon,
    };
    let outcome = run_plan(&plan, params, &data, &a.out, &mut |entry| match entry {
        LogEntry::Epoch(r) => println!(
            "stage {} {} epoch {}: loss {:.4} (recon {:.4}, types {:.4}, kl {:.4})",
            r.stage + 1,
            r.dataset.name(),
            r.epoch,
            r.mean_loss,
            r.reconstruction,
            r.type_reconstruction,
            r.kl
        ),
        LogEntry::Stage(s) => println!("stage {} done in {:.1}s -> {}", s.stage + 1, s.wall_seconds, s.checkpoint),
        LogEntry::Run { .. } => {}
    })?;
    if let Some(last) = outcome.checkpoints.last() {
        println!("final checkpoint {}", last.display());
    }
    Ok(())
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, task: Task) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| anyhow!("--{flag} is required for {task:?}"))
}

/// Black, unflipped rendering of each requested creature, in request order.
fn pick_instances<'a>(instances: &'a [AugmentedInstance], ids: &[String], default_count: usize) -> Result<Vec<&'a AugmentedInstance>> {
    let black: Vec<&AugmentedInstance> = instances
        .iter()
        .filter(|i| i.background == Background::Black && !i.flipped)
        .collect();
    if ids.is_empty() {
        let mut chosen: Vec<&AugmentedInstance> = black.iter().copied().filter(|i| i.split == Split::Test).collect();
        chosen.extend(black.iter().copied().filter(|i| i.split == Split::Train));
        chosen.truncate(default_count);
        return Ok(chosen);
    }
    let by_id: HashMap<&str, &AugmentedInstance> = black.iter().map(|i| (i.source_id.as_str(), *i)).collect();
    ids.iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| anyhow!("sprite {id} not in the cache")))
        .collect()
}

fn write_report(out: &Path, name: &str, report: &EvalReport) -> Result<()> {
    write_file(&out.join(format!("{name}.json")), report.to_json())
}

fn write_tables(out: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text.push_str(&format!("## {}\n\n", r.set));
        text.push_str(&markdown_table(Metric::Mse, std::slice::from_ref(r)));
        text.push('\n');
        text.push_str(&markdown_table(Metric::Ssim, std::slice::from_ref(r)));
        text.push('\n');
    }
    write_file(&out.join("tables.md"), text)
}

fn write_sheet(out: &Path, name: &str, rows: &[Vec<Raster>]) -> Result<()> {
    fs::create_dir_all(out)?;
    contact_sheet(rows).save_png(&out.join(format!("{name}.png")))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SwapEntry {
    id: String,
    from: Vec<String>,
    to: Vec<String>,
    magnitude: f64,
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let checkpoint = load_checkpoint(&a.model)?;
    let params = checkpoint.params;
    let tag = ModelTag::from_provenance(&checkpoint.provenance);
    fs::create_dir_all(&a.out)?;
    match a.task {
        Task::Recon => {
            let instances = read_cache(require(&a.data, "data", a.task)?)?;
            let selection = if a.all_variants {
                VariantSelection::AllVariants
            } else {
                VariantSelection::BlackOnly
            };
            let report = reconstruction_report(&params, &instances, tag, selection)?;
            write_report(&a.out, "recon", &report)?;
            write_tables(&a.out, std::slice::from_ref(&report))?;
            let rows = pick_instances(&instances, &a.ids, 8)?
                .into_iter()
                .map(|inst| {
                    let out = reconstruct_one(&params, &inst.image, inst.type_vector)?;
                    Ok(vec![inst.image.to_rgb(), out.to_rgb()])
                })
                .collect::<Result<Vec<_>>>()?;
            write_sheet(&a.out, "recon", &rows)?;
            print_summary(&report);
        }
        Task::Swap => {
            let instances = read_cache(require(&a.data, "data", a.task)?)?;
            let types = parse_type_list(&a.types)?;
            let chosen = pick_instances(&instances, &a.ids, 8)?;
            let mut rows = Vec::new();
            let mut entries = Vec::new();
            for inst in chosen {
                let recon = reconstruct_one(&params, &inst.image, inst.type_vector)?;
                let swapped = type_swap(&params, &inst.image, &types, a.magnitude)?;
                rows.push(vec![inst.image.to_rgb(), recon.to_rgb(), swapped.to_rgb()]);
                entries.push(SwapEntry {
                    id: inst.source_id.clone(),
                    from: inst.type_vector.active_types().iter().map(|t| t.name().to_string()).collect(),
                    to: types.iter().map(|t| t.name().to_string()).collect(),
                    magnitude: a.magnitude,
                });
            }
            write_file(&a.out.join("swap.json"), serde_json::to_vec_pretty(&entries)?)?;
            write_sheet(&a.out, "swap", &rows)?;
            println!("{} swaps rendered", entries.len());
        }
        Task::Regional => {
            let records = load_manifest(require(&a.manifest, "manifest", a.task)?)?;
            let pairs = load_regional_pairs(require(&a.regional, "regional", a.task)?, &records)?;
            let variant = original_to_regional_report(&params, &pairs, a.magnitude, SwapTarget::Variant, tag)?;
            let own = original_to_regional_report(&params, &pairs, a.magnitude, SwapTarget::Original, tag)?;
            write_report(&a.out, "regional", &variant)?;
            write_report(&a.out, "regional_own_types", &own)?;
            write_tables(&a.out, &[variant.clone(), own.clone()])?;
            let rows = pairs
                .iter()
                .take(8)
                .map(|p| {
                    let original = prepare_eval_image(&p.original.image)?;
                    let target = prepare_eval_image(&p.variant_image)?;
                    let swapped = type_swap(&params, &original, &p.variant_types, a.magnitude)?;
                    Ok(vec![original.to_rgb(), target.to_rgb(), swapped.to_rgb()])
                })
                .collect::<Result<Vec<_>>>()?;
            write_sheet(&a.out, "regional", &rows)?;
            print_summary(&variant);
            print_summary(&own);
        }
        Task::Interp => {
            let instances = read_cache(require(&a.data, "data", a.task)?)?;
            if a.ids.len() != 2 {
                bail!("interp needs --ids with exactly two sprite ids");
            }
            let pair = pick_instances(&instances, &a.ids, 2)?;
            let frames = interpolate_latents(
                &params,
                &pair[0].image,
                pair[0].type_vector,
                &pair[1].image,
                pair[1].type_vector,
                a.steps,
            )?;
            let mut row = vec![pair[0].image.to_rgb()];
            row.extend(frames.iter().map(|f| f.to_rgb()));
            row.push(pair[1].image.to_rgb());
            write_sheet(&a.out, "interp", &[row])?;
            println!("{} frames between {} and {}", frames.len(), a.ids[0], a.ids[1]);
        }
    }
    Ok(())
}

fn print_summary(r: &EvalReport) {
    println!(
        "{} [{}]: {} images, MSE {:.5}, SSIM {:.4}",
        r.set,
        r.model.name(),
        r.combined.count,
        r.combined.mse,
        r.combined.ssim
    );
}
