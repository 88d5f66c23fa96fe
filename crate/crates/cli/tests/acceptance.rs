//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Positional arguments filter criteria by name.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use typeshift_core::color::{hsv_to_rgb, hsv_to_rgb_pixel, rgb_to_hsv, rgb_to_hsv_pixel};
use typeshift_core::dataset::{build_augmented_set, load_manifest, split_dataset, Background, Sample, Split, SpriteRecord};
use typeshift_core::eval::{mse_rgb, reconstruction_report, ssim_yuv, ModelTag, VariantSelection};
use typeshift_core::model::{ArchConfig, Batch, Params};
use typeshift_core::synth::{synth_sprites, write_corpus, CorpusPaths, CorpusSize};
use typeshift_core::training::{save_checkpoint, train_stage, DatasetKind, EpochRecord, StageConfig};
use typeshift_core::typeassign::{gale_shapley_assign, PreferenceMatrix, TypeQuota};
use typeshift_core::{Raster, NUM_TYPES};
use typeshift_cli::DEFAULT_TEST_FRACTION;

const SEED: u64 = 20;

struct Ctx {
    dir: tempfile::TempDir,
    corpus: Option<CorpusPaths>,
    smoke_checkpoint: Option<PathBuf>,
}

impl Ctx {
    /// 974 sprites and 1000 faces, shared by the count-law and audit checks.
    fn corpus(&mut self) -> Result<CorpusPaths> {
        if self.corpus.is_none() {
            let size = CorpusSize {
                sprites: 974,
                faces: 1000,
                regional: 0,
            };
            self.corpus = Some(write_corpus(&self.dir.path().join("corpus"), size, SEED)?);
        }
        Ok(self.corpus.clone().expect("just written"))
    }
}

type Check = fn(&mut Ctx) -> Result<String>;

fn main() {
    typeshift_cli::ensure_blas_kernels();
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, u64, Check); 10] = [
        ("stable-matching oracle", 10, stable_matching_oracle),
        ("count law", 60, count_law),
        ("color round trip", 5, color_round_trip),
        ("metric identities", 10, metric_identities),
        ("gradient check", 120, gradient_check),
        ("shape chain", 60, shape_chain),
        ("training smoke", 600, training_smoke),
        ("overfit proxy", 1800, overfit_proxy),
        ("type-assignment audit", 120, type_assignment_audit),
        ("evaluation determinism", 600, evaluation_determinism),
    ];
    let mut ctx = Ctx {
        dir: tempfile::tempdir().expect("temp dir"),
        corpus: None,
        smoke_checkpoint: None,
    };
    let mut failures = 0;
    for (name, limit, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = check(&mut ctx);
        let elapsed = started.elapsed();
        let result = match result {
            Ok(detail) if elapsed > Duration::from_secs(limit) => {
                Err(anyhow!("{detail}; took longer than the {limit}s budget"))
            }
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS  {name:<24} {detail} ({:.1}s)", elapsed.as_secs_f64()),
            Err(e) => {
                failures += 1;
                println!("FAIL  {name:<24} {e:#} ({:.1}s)", elapsed.as_secs_f64());
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- matching

/// Every quota-respecting assignment of `n` images to `k` types.
fn all_assignments(n: usize, quotas: &[usize]) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, left: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for t in 0..left.len() {
            if left[t] > 0 {
                left[t] -= 1;
                cur.push(t);
                rec(i + 1, n, left, cur, out);
                cur.pop();
                left[t] += 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, n, &mut quotas.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Both sides prefer smaller distance. Ties: an image prefers the lower type
/// index, a type prefers the lower image index.
fn image_key(d: &[Vec<f64>], i: usize, t: usize) -> (f64, usize) {
    (d[i][t], t)
}

fn type_key(d: &[Vec<f64>], i: usize, t: usize) -> (f64, usize) {
    (d[i][t], i)
}

fn is_stable(d: &[Vec<f64>], quotas: &[usize], m: &[usize]) -> bool {
    for (i, &own) in m.iter().enumerate() {
        for t in 0..quotas.len() {
            if t == own || quotas[t] == 0 || image_key(d, i, t) >= image_key(d, i, own) {
                continue;
            }
            let members: Vec<usize> = (0..m.len()).filter(|&j| m[j] == t).collect();
            if members.len() < quotas[t] || members.iter().any(|&j| type_key(d, j, t) > type_key(d, i, t)) {
                return false;
            }
        }
    }
    true
}

fn image_optimal(d: &[Vec<f64>], quotas: &[usize]) -> Option<Vec<usize>> {
    let stable: Vec<Vec<usize>> = all_assignments(d.len(), quotas)
        .into_iter()
        .filter(|m| is_stable(d, quotas, m))
        .collect();
    stable
        .iter()
        .find(|m| {
            stable
                .iter()
                .all(|o| (0..d.len()).all(|i| image_key(d, i, m[i]) <= image_key(d, i, o[i])))
        })
        .cloned()
}

fn stable_matching_oracle(_: &mut Ctx) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for instance in 0..200 {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        // Which of the 18 types take part, and a random split of n among them.
        let mut active: Vec<usize> = (0..NUM_TYPES).collect();
        for i in 0..k {
            let j = rng.random_range(i..NUM_TYPES);
            active.swap(i, j);
        }
        active.truncate(k);
        active.sort_unstable();
        let mut quotas = vec![0usize; k];
        for _ in 0..n {
            quotas[rng.random_range(0..k)] += 1;
        }
        // Half the instances use a few integer levels so ties are common.
        let tied = instance % 2 == 1;
        let d: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| if tied { rng.random_range(0..3) as f64 } else { rng.random::<f64>() })
                    .collect()
            })
            .collect();

        // Inactive columns sit far away with zero quota.
        let rows = d
            .iter()
            .map(|r| {
                let mut full = vec![0f64; NUM_TYPES];
                for (t, v) in full.iter_mut().enumerate() {
                    *v = 10.0 + t as f64;
                }
                for (c, &t) in active.iter().enumerate() {
                    full[t] = r[c];
                }
                full
            })
            .collect();
        let mut quota = [0usize; NUM_TYPES];
        for (c, &t) in active.iter().enumerate() {
            quota[t] = quotas[c];
        }
        let ids: Vec<String> = (0..n).map(|i| format!("img{i}")).collect();
        let got = gale_shapley_assign(&PreferenceMatrix::from_rows(rows)?, &ids, &TypeQuota(quota))?;
        let got: Vec<usize> = got
            .types
            .iter()
            .map(|t| active.iter().position(|&a| a == t.index()).expect("assigned to an active type"))
            .collect();

        ensure!(is_stable(&d, &quotas, &got), "instance {instance}: output has a blocking pair");
        let best = image_optimal(&d, &quotas).ok_or_else(|| anyhow!("instance {instance}: no image-optimal matching"))?;
        ensure!(got == best, "instance {instance}: {got:?} differs from image-optimal {best:?}");
    }
    Ok("200 instances (100 with tied distances) stable and equal to brute force".into())
}

// ---------------------------------------------------------------- dataset

fn count_law(ctx: &mut Ctx) -> Result<String> {
    let corpus = ctx.corpus()?;
    let records = load_manifest(&corpus.manifest)?;
    ensure!(records.len() == 974, "manifest has {} creatures", records.len());
    let (train, test) = split_dataset(&records, DEFAULT_TEST_FRACTION, SEED)?;
    ensure!((train.len(), test.len()) == (827, 147), "split {}/{}", train.len(), test.len());
    let mut all = train;
    all.extend(test);
    let set = build_augmented_set(&all, SEED)?;
    let n_train = set.iter().filter(|i| i.split == Split::Train).count();
    let n_test = set.iter().filter(|i| i.split == Split::Test).count();
    ensure!((n_train, n_test) == (6616, 588), "augmented {n_train}/{n_test}");
    Ok("974 -> 827/147 creatures -> 6616/588 instances".into())
}

fn color_round_trip(_: &mut Ctx) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n = 100_000;
    let mut worst_pixel = 0f64;
    let mut data = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let rgb = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let back = hsv_to_rgb_pixel(rgb_to_hsv_pixel(rgb));
        for c in 0..3 {
            worst_pixel = worst_pixel.max((back[c] - rgb[c]).abs());
        }
        data.extend(rgb.map(|v| v as f32));
    }
    // The same pixels through the f32 image path.
    let image = Raster::new(1000, 100, 3, data)?;
    let back = hsv_to_rgb(&rgb_to_hsv(&image)?);
    let worst_image = image
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    ensure!(worst_pixel < 1e-6, "pixel round trip error {worst_pixel:e}");
    ensure!(worst_image < 1e-6, "image round trip error {worst_image:e}");
    Ok(format!("max error {worst_pixel:.1e} (f64), {worst_image:.1e} (f32 images)"))
}

// ---------------------------------------------------------------- metrics

const SSIM_REFERENCE: f64 = 0.5972162;

fn ssim_reference_pair() -> (Raster, Raster) {
    let a = Raster::from_fn(32, 32, 3, |j, i, c| {
        (0.5 + 0.4 * (0.3 * i as f64 + 0.2 * j as f64 + c as f64).sin()) as f32
    });
    let b = Raster::from_fn(32, 32, 3, |j, i, c| {
        (0.5 + 0.35 * (0.3 * i as f64 + 0.22 * j as f64 + c as f64 + 0.15).sin()
            + 0.05 * (0.7 * (i * j) as f64 / 32.0).cos()) as f32
    });
    (a, b)
}

fn metric_identities(_: &mut Ctx) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_mse, mut worst_ssim) = (0f64, 0f64);
    for _ in 0..50 {
        let x = Raster::new(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.random::<f32>()).collect())?;
        worst_mse = worst_mse.max(mse_rgb(&x, &x)?.abs());
        worst_ssim = worst_ssim.max((ssim_yuv(&x, &x)? - 1.0).abs());
    }
    ensure!(worst_mse <= 1e-9, "mse(x,x) off by {worst_mse:e}");
    ensure!(worst_ssim <= 1e-6, "ssim(x,x) off by {worst_ssim:e}");
    let (a, b) = ssim_reference_pair();
    let got = ssim_yuv(&a, &b)?;
    ensure!((got - SSIM_REFERENCE).abs() < 1e-3, "reference pair SSIM {got} vs {SSIM_REFERENCE}");
    Ok(format!(
        "identities hold on 50 images; reference pair {got:.7} vs {SSIM_REFERENCE}"
    ))
}

// ---------------------------------------------------------------- model

fn gradient_check(_: &mut Ctx) -> Result<String> {
    let config = ArchConfig::miniature();
    let params = Params::<f64>::init(&config, SEED)?;
    let b = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let images: Vec<f64> = (0..b * config.image_len()).map(|_| rng.random::<f64>()).collect();
    let mut types = vec![0.0; b * NUM_TYPES];
    types[1] = 1.0;
    types[NUM_TYPES + 9] = 0.5;
    types[NUM_TYPES + 12] = 0.5;
    let noise: Vec<f64> = (0..b * config.latent_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let batch = Batch::new(&config, &images, &types)?;
    let loss = |p: &Params<f64>| -> Result<f64> { Ok(p.loss(&batch, &p.forward(&batch, &noise)?).total) };

    let analytic = params.backward(&batch, &params.forward(&batch, &noise)?);
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, g)| g.to_vec()).collect();
    let h = 1e-4;
    let (mut total, mut within) = (0usize, 0usize);
    for (t, g) in grads.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1[k] -= h;
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-10);
            total += 1;
            within += usize::from(rel < 1e-4);
        }
    }
    let share = within as f64 / total as f64;
    ensure!(share >= 0.95, "{within}/{total} parameters within 1e-4");
    Ok(format!("{within}/{total} parameters within 1e-4 ({:.1}%)", share * 100.0))
}

fn shape_chain(_: &mut Ctx) -> Result<String> {
    let config = ArchConfig::default();
    let params = Params::<f32>::init(&config, SEED)?;
    let b = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let images: Vec<f32> = (0..b * 32 * 32 * 3).map(|_| rng.random::<f32>()).collect();
    let mut types = vec![0f32; b * NUM_TYPES];
    for s in 0..b {
        types[s * NUM_TYPES + s * 5] = 1.0;
    }
    let batch = Batch::new(&config, &images, &types)?;
    let noise = vec![0f32; b * config.latent_dim];
    let pass = params.forward(&batch, &noise)?;
    let (e, d) = (&pass.encoder, &pass.decoder);
    let checks: [(&str, usize, usize); 10] = [
        ("input 32x32x3", batch.images.len(), b * 32 * 32 * 3),
        ("conv1 16x16x512", e.conv1_out.len(), b * 16 * 16 * 512),
        ("conv2 8x8x1024", e.conv2_out.len(), b * 8 * 8 * 1024),
        ("flat+types 65554", e.latent_input.len(), b * 65554),
        ("latent mean 128", e.mean.len(), b * 128),
        ("latent sample 128", pass.latent.len(), b * 128),
        ("decoder fc 65554", d.grid.len() + d.type_logits.len(), b * 65554),
        ("type split 18", d.type_logits.len(), b * 18),
        ("deconv 16x16 / 32x32", d.deconv1_out.len() + d.deconv2_out.len(), b * (16 * 16 * 1024 + 32 * 32 * 512)),
        ("output 32x32x3", d.image_logits.len(), b * 32 * 32 * 3),
    ];
    for (what, got, want) in checks {
        ensure!(got == want, "{what}: {got} values, expected {want}");
    }
    ensure!(d.grid.len() == b * 8 * 8 * 1024, "decoder grid {}", d.grid.len());
    ensure!(d.deconv1_out.len() == b * 16 * 16 * 1024, "deconv1 {}", d.deconv1_out.len());
    Ok("3x(32x32x3 -> 16x16x512 -> 8x8x1024 -> 128 -> 65554 = 65536+18 -> 32x32x3)".into())
}

// ---------------------------------------------------------------- training

/// Unflipped black-background renderings of `count` synthetic sprites.
fn sprite_samples(count: usize, seed: u64) -> Result<(Vec<SpriteRecord>, Vec<Sample>)> {
    let records: Vec<SpriteRecord> = synth_sprites(count, seed)
        .into_iter()
        .map(|s| SpriteRecord {
            id: s.id,
            name: s.name,
            types: s.types,
            image: s.image,
            split: Split::Train,
        })
        .collect();
    let samples = build_augmented_set(&records, seed)?
        .iter()
        .filter(|i| i.background == Background::Black && !i.flipped)
        .map(Sample::from)
        .collect();
    Ok((records, samples))
}

fn stage(epochs: u32, batch_size: usize) -> StageConfig {
    StageConfig {
        dataset: DatasetKind::Pokemon,
        epochs,
        learning_rate: 1e-4,
        batch_size,
        optimizer: Default::default(),
        seed: SEED,
    }
}

fn train(samples: &[Sample], config: &StageConfig) -> Result<(Params<f32>, Vec<EpochRecord>)> {
    let mut params = Params::<f32>::init(&ArchConfig::default(), SEED)?;
    let records = train_stage(&mut params, samples, config, 0, &mut |_| {})?;
    Ok((params, records))
}

fn training_smoke(ctx: &mut Ctx) -> Result<String> {
    let (_, samples) = sprite_samples(64, SEED)?;
    ensure!(samples.len() == 64);
    // 8 steps per epoch.
    let config = stage(25, 8);
    let (params, first) = train(&samples, &config)?;
    let steps: usize = first.iter().map(|r| r.steps).sum();
    ensure!(steps == 200, "ran {steps} steps");
    let initial = first[0].mean_loss;
    let last = first.last().expect("epochs").mean_loss;
    let drop = 1.0 - last / initial;

    let (again, second) = train(&samples, &config)?;
    let repeat = first == second && params.tensors() == again.tensors();

    let path = ctx.dir.path().join("smoke.ckpt");
    save_checkpoint(&params, "smoke run: pokemon x25 epochs, lr 0.0001, batch 8", &path)?;
    ctx.smoke_checkpoint = Some(path);

    ensure!(drop >= 0.2, "epoch-mean loss {initial:.2} -> {last:.2}, drop {:.1}%", drop * 100.0);
    ensure!(repeat, "second run with the same seed diverged from the first");
    Ok(format!(
        "epoch-mean loss {initial:.2} -> {last:.2} ({:.1}% drop), repeat bit-identical",
        drop * 100.0
    ))
}

fn overfit_proxy(_: &mut Ctx) -> Result<String> {
    let (records, samples) = sprite_samples(16, SEED + 1)?;
    // 4 steps per epoch.
    let (params, log) = train(&samples, &stage(500, 4))?;
    let steps: usize = log.iter().map(|r| r.steps).sum();
    ensure!(steps == 2000, "ran {steps} steps");
    let instances = build_augmented_set(&records, SEED + 1)?;
    let report = reconstruction_report(&params, &instances, ModelTag::Other, VariantSelection::BlackOnly)?;
    let mse = report.combined.mse;
    ensure!(report.combined.count == 16);
    ensure!(mse < 0.02, "reconstruction MSE {mse:.5} (SSIM {:.4})", report.combined.ssim);
    Ok(format!("reconstruction MSE {mse:.5}, SSIM {:.4} after 2000 steps", report.combined.ssim))
}

// ---------------------------------------------------------------- cli

fn typeshift(args: &[&str]) -> Result<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_typeshift")).args(args).output()?;
    if !out.status.success() {
        bail!("typeshift {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn type_assignment_audit(ctx: &mut Ctx) -> Result<String> {
    let corpus = ctx.corpus()?;
    let out = ctx.dir.path().join("assign");
    typeshift(&[
        "assign-types",
        "--faces",
        path_str(&corpus.faces_index),
        "--manifest",
        path_str(&corpus.manifest),
        "--out",
        path_str(&out),
    ])?;
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json"))?)?;
    ensure!(summary["images"] == 1000, "summary covers {} images", summary["images"]);
    let per_type = summary["per_type"].as_array().ok_or_else(|| anyhow!("per_type missing"))?;
    ensure!(per_type.len() == NUM_TYPES);

    let mut csv_counts = std::collections::HashMap::new();
    let text = std::fs::read_to_string(out.join("assignments.csv"))?;
    for line in text.lines().skip(1) {
        let t = line.split(',').nth(1).ok_or_else(|| anyhow!("bad row {line}"))?;
        *csv_counts.entry(t.to_string()).or_insert(0u64) += 1;
    }
    let mut oversubscribed = Vec::new();
    for entry in per_type {
        let name = entry["creature_type"].as_str().unwrap_or_default();
        let quota = entry["quota"].as_u64().ok_or_else(|| anyhow!("no quota for {name}"))?;
        let assigned = entry["assigned"].as_u64().unwrap_or(u64::MAX);
        let first = entry["first_choice"].as_u64().ok_or_else(|| anyhow!("no first-choice count for {name}"))?;
        ensure!(assigned == quota, "{name}: {assigned} assigned, quota {quota}");
        ensure!(csv_counts.get(name).copied().unwrap_or(0) == quota, "{name}: CSV count differs from quota");
        if first > quota {
            oversubscribed.push(format!("{name} {first}->{quota}"));
        }
    }
    let reassigned = summary["reassigned"].as_u64().unwrap_or(0);
    ensure!(reassigned > 0 && !oversubscribed.is_empty(), "quotas never forced a reassignment");
    Ok(format!(
        "1000 faces, counts equal quotas; {reassigned} moved off their first choice (e.g. {})",
        oversubscribed.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
    ))
}

fn evaluation_determinism(ctx: &mut Ctx) -> Result<String> {
    let checkpoint = match &ctx.smoke_checkpoint {
        Some(p) => p.clone(),
        None => {
            let p = ctx.dir.path().join("fresh.ckpt");
            save_checkpoint(&Params::<f32>::init(&ArchConfig::default(), SEED)?, "fresh weights", &p)?;
            p
        }
    };
    let root = ctx.dir.path().join("eval");
    let corpus = write_corpus(
        &root.join("corpus"),
        CorpusSize {
            sprites: 24,
            faces: 0,
            regional: 0,
        },
        SEED,
    )?;
    let cache = root.join("cache");
    typeshift(&["prepare", "--manifest", path_str(&corpus.manifest), "--out", path_str(&cache)])?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        typeshift(&[
            "evaluate",
            "--task",
            "recon",
            "--model",
            path_str(&checkpoint),
            "--data",
            path_str(&cache),
            "--out",
            path_str(&out),
        ])?;
        reports.push((std::fs::read(out.join("recon.json"))?, std::fs::read(out.join("tables.md"))?));
    }
    ensure!(reports[0].0 == reports[1].0, "recon.json differs between runs");
    ensure!(reports[0].1 == reports[1].1, "tables.md differs between runs");
    let report: Value = serde_json::from_slice(&reports[0].0)?;
    Ok(format!(
        "two runs over {} images wrote identical {}-byte reports",
        report["combined"]["count"],
        reports[0].0.len()
    ))
}
