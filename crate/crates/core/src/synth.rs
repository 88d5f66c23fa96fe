//! Procedural stand-ins for the sprite catalogue, the face set and the
//! regional variants. Sprites are RGBA blobs whose palette follows their
//! types; faces are opaque RGB portraits with widely varying hair colour.
//! Everything is a pure function of the seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::color::{hsv_to_rgb_pixel, rgb_to_hsv_pixel};
use crate::dataset::{DatasetError, FaceEntry};
use crate::raster::Raster;
use crate::seed::derive_rng;
use crate::types::{CreatureType, NUM_TYPES};

pub const SPRITE_SOURCE_SIDE: usize = 96;
pub const FACE_SOURCE_SIDE: usize = 64;

/// Representative RGB colour per type, in `CreatureType::ALL` order.
pub const TYPE_COLORS: [[f64; 3]; NUM_TYPES] = [
    [0.60, 0.75, 0.15], // bug
    [0.28, 0.22, 0.22], // dark
    [0.40, 0.25, 0.85], // dragon
    [0.98, 0.85, 0.15], // electric
    [0.95, 0.60, 0.80], // fairy
    [0.75, 0.25, 0.20], // fighting
    [0.95, 0.35, 0.10], // fire
    [0.60, 0.70, 0.95], // flying
    [0.40, 0.30, 0.55], // ghost
    [0.35, 0.75, 0.30], // grass
    [0.85, 0.70, 0.40], // ground
    [0.60, 0.90, 0.95], // ice
    [0.75, 0.72, 0.62], // normal
    [0.65, 0.30, 0.65], // poison
    [0.98, 0.40, 0.55], // psychic
    [0.70, 0.62, 0.35], // rock
    [0.70, 0.72, 0.80], // steel
    [0.25, 0.50, 0.95], // water
];

/// Relative frequency of each type in the generated catalogue.
const TYPE_WEIGHTS: [u32; NUM_TYPES] = [80, 50, 45, 55, 40, 50, 65, 95, 45, 95, 60, 40, 115, 70, 80, 60, 55, 135];

const SYLLABLES: [&str; 20] = [
    "bul", "char", "squi", "pik", "zu", "mon", "ra", "ta", "chu", "saur", "leon", "tle", "bat", "dra", "gon", "fli",
    "mew", "nix", "tor", "vee",
];

#[derive(Debug, Clone)]
pub struct SynthSprite {
    pub id: String,
    pub name: String,
    pub types: Vec<CreatureType>,
    pub image: Raster,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    /// Approximate signed distance in pixels, positive inside.
    fn depth(&self, x: f64, y: f64) -> f64 {
        let d = (((x - self.cx) / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)).sqrt();
        (1.0 - d) * self.rx.min(self.ry)
    }
}

#[derive(Debug, Clone)]
struct Geometry {
    body: Ellipse,
    limbs: Vec<Ellipse>,
    patch: Ellipse,
    eyes: [Ellipse; 2],
    striped: bool,
}

fn geometry(rng: &mut ChaCha8Rng) -> Geometry {
    let s = SPRITE_SOURCE_SIDE as f64;
    let body = Ellipse {
        cx: s / 2.0 + rng.random_range(-6.0..6.0),
        cy: s / 2.0 + rng.random_range(-4.0..8.0),
        rx: rng.random_range(16.0..32.0),
        ry: rng.random_range(16.0..32.0),
    };
    let limbs = (0..rng.random_range(1..4))
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Ellipse {
                cx: body.cx + angle.cos() * body.rx * 0.9,
                cy: body.cy + angle.sin() * body.ry * 0.9,
                rx: rng.random_range(5.0..12.0),
                ry: rng.random_range(5.0..12.0),
            }
        })
        .collect();
    let patch = Ellipse {
        cx: body.cx + rng.random_range(-4.0..4.0),
        cy: body.cy + body.ry * 0.35,
        rx: body.rx * rng.random_range(0.35..0.6),
        ry: body.ry * rng.random_range(0.3..0.5),
    };
    let eye_y = body.cy - body.ry * 0.3;
    let spread = body.rx * 0.35;
    let eye = |cx| Ellipse {
        cx,
        cy: eye_y,
        rx: 3.0,
        ry: 3.5,
    };
    Geometry {
        body,
        limbs,
        patch,
        eyes: [eye(body.cx - spread), eye(body.cx + spread)],
        striped: rng.random_bool(0.3),
    }
}

fn jitter(color: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let [h, s, v] = rgb_to_hsv_pixel(color);
    let h = (h + rng.random_range(-0.03..0.03)).rem_euclid(1.0);
    let s = (s + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0);
    let v = (v + rng.random_range(-0.1..0.1)).clamp(0.05, 1.0);
    hsv_to_rgb_pixel([h, s, v])
}

fn render_sprite(geom: &Geometry, types: &[CreatureType], rng: &mut ChaCha8Rng) -> Raster {
    let primary = jitter(TYPE_COLORS[types[0].index()], rng);
    let secondary = match types.get(1) {
        Some(t) => jitter(TYPE_COLORS[t.index()], rng),
        None => primary.map(|c| (c * 1.25 + 0.1).min(1.0)),
    };
    let outline = primary.map(|c| c * 0.35);
    let stripe_period = rng.random_range(6.0..10.0);
    Raster::from_fn(SPRITE_SOURCE_SIDE, SPRITE_SOURCE_SIDE, 4, |xi, yi, c| {
        let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
        let depth = geom
            .limbs
            .iter()
            .map(|l| l.depth(x, y))
            .fold(geom.body.depth(x, y), f64::max);
        let alpha = (depth + 0.5).clamp(0.0, 1.0);
        if c == 3 {
            return alpha as f32;
        }
        if alpha == 0.0 {
            return 0.0;
        }
        let in_eye = geom.eyes.iter().map(|e| e.depth(x, y)).fold(f64::MIN, f64::max);
        let color = if in_eye > 1.2 {
            [0.05, 0.05, 0.08]
        } else if in_eye > 0.0 {
            [1.0, 1.0, 1.0]
        } else if depth < 1.5 {
            outline
        } else if geom.patch.depth(x, y) > 0.0 || (geom.striped && ((y / stripe_period) as i64) % 2 == 1) {
            secondary
        } else {
            primary
        };
        color[c] as f32
    })
}

fn random_types(rng: &mut ChaCha8Rng) -> Vec<CreatureType> {
    let dist = WeightedIndex::new(TYPE_WEIGHTS).expect("static weights");
    let first = CreatureType::ALL[dist.sample(rng)];
    if rng.random_bool(0.5) {
        loop {
            let second = CreatureType::ALL[dist.sample(rng)];
            if second != first {
                return vec![first, second];
            }
        }
    }
    vec![first]
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..4);
    let mut name: String = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
    if let Some(first) = name.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    name
}

fn sprite_rngs(seed: u64, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let idx = (index as u64).to_le_bytes();
    (
        derive_rng(seed, &[b"synth-sprite", &idx, b"identity"]),
        derive_rng(seed, &[b"synth-sprite", &idx, b"shape"]),
    )
}

/// `count` sprites with ids `0001`, `0002`, ...
pub fn synth_sprites(count: usize, seed: u64) -> Vec<SynthSprite> {
    (0..count)
        .map(|i| {
            let (mut ident, mut shape) = sprite_rngs(seed, i);
            let types = random_types(&mut ident);
            let name = random_name(&mut ident);
            let geom = geometry(&mut shape);
            let image = render_sprite(&geom, &types, &mut shape);
            SynthSprite {
                id: format!("{:04}", i + 1),
                name,
                types,
                image,
            }
        })
        .collect()
}

/// Redraws `count` evenly spaced sprites of the catalogue with the same
/// silhouette but new types. Returns `(original id, variant)` pairs.
pub fn synth_regional(catalogue_size: usize, count: usize, seed: u64) -> Vec<(String, SynthSprite)> {
    let originals = synth_sprites(catalogue_size, seed);
    let step = (catalogue_size / count.max(1)).max(1);
    (0..catalogue_size)
        .step_by(step)
        .take(count)
        .map(|i| {
            let original = &originals[i];
            let (_, mut shape) = sprite_rngs(seed, i);
            let geom = geometry(&mut shape);
            let mut rng = derive_rng(seed, &[b"synth-regional", &(i as u64).to_le_bytes()]);
            let types = loop {
                let t = random_types(&mut rng);
                let (mut a, mut b) = (t.clone(), original.types.clone());
                a.sort();
                b.sort();
                if a != b {
                    break t;
                }
            };
            let image = render_sprite(&geom, &types, &mut rng);
            (
                original.id.clone(),
                SynthSprite {
                    id: format!("{}-r", original.id),
                    name: format!("{} (regional)", original.name),
                    types,
                    image,
                },
            )
        })
        .collect()
}

/// Opaque RGB portraits: backdrop, skin-toned face, hair of a random colour.
pub fn synth_faces(count: usize, seed: u64) -> Vec<(String, Raster)> {
    (0..count)
        .map(|i| {
            let mut rng = derive_rng(seed, &[b"synth-face", &(i as u64).to_le_bytes()]);
            let s = FACE_SOURCE_SIDE as f64;
            let backdrop = hsv_to_rgb_pixel([rng.random(), rng.random_range(0.0..0.5), rng.random_range(0.5..1.0)]);
            let hair = hsv_to_rgb_pixel([rng.random(), rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)]);
            let skin = hsv_to_rgb_pixel([
                rng.random_range(0.02..0.1),
                rng.random_range(0.15..0.45),
                rng.random_range(0.6..1.0),
            ]);
            let iris = hsv_to_rgb_pixel([rng.random(), 0.8, 0.7]);
            let face = Ellipse {
                cx: s / 2.0 + rng.random_range(-3.0..3.0),
                cy: s * 0.58,
                rx: s * rng.random_range(0.24..0.32),
                ry: s * rng.random_range(0.28..0.36),
            };
            let hair_shape = Ellipse {
                cx: face.cx,
                cy: face.cy - face.ry * 0.35,
                rx: face.rx * rng.random_range(1.15..1.5),
                ry: face.ry * rng.random_range(0.9..1.2),
            };
            let fringe = face.cy - face.ry * rng.random_range(0.2..0.45);
            let eye_y = face.cy + face.ry * 0.05;
            let eyes = [-1.0, 1.0].map(|side| Ellipse {
                cx: face.cx + side * face.rx * 0.45,
                cy: eye_y,
                rx: face.rx * 0.18,
                ry: face.ry * 0.2,
            });
            let image = Raster::from_fn(FACE_SOURCE_SIDE, FACE_SOURCE_SIDE, 3, |xi, yi, c| {
                let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
                let color = if eyes.iter().any(|e| e.depth(x, y) > 0.0) {
                    iris
                } else if face.depth(x, y) > 0.0 && y > fringe {
                    skin
                } else if hair_shape.depth(x, y) > 0.0 {
                    hair
                } else {
                    backdrop
                };
                color[c] as f32
            });
            (format!("face{:05}", i + 1), image)
        })
        .collect()
}

/// Paths written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub manifest: PathBuf,
    pub faces_index: PathBuf,
    pub regional: PathBuf,
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusSize {
    pub sprites: usize,
    pub faces: usize,
    pub regional: usize,
}

impl Default for CorpusSize {
    fn default() -> Self {
        CorpusSize {
            sprites: 974,
            faces: 2000,
            regional: 48,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn type_columns(types: &[CreatureType]) -> (String, String) {
    (
        types[0].name().to_string(),
        types.get(1).map(|t| t.name().to_string()).unwrap_or_default(),
    )
}

/// Writes `manifest.csv` + `sprites/`, `faces/index.json` + images and
/// `regional.csv` + `regional/` under `dir`.
pub fn write_corpus(dir: &Path, size: CorpusSize, seed: u64) -> Result<CorpusPaths, DatasetError> {
    for sub in ["sprites", "faces", "regional"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_error(&p))?;
    }

    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| DatasetError::Cache(e.to_string()))?;
    let csv_err = |e: csv::Error| DatasetError::Cache(e.to_string());
    w.write_record(["id", "name", "type1", "type2", "image_path"]).map_err(csv_err)?;
    for s in synth_sprites(size.sprites, seed) {
        let rel = format!("sprites/{}.png", s.id);
        s.image.save_png(&dir.join(&rel))?;
        let (t1, t2) = type_columns(&s.types);
        w.write_record([s.id.as_str(), &s.name, &t1, &t2, &rel]).map_err(csv_err)?;
    }
    w.flush().map_err(io_error(&manifest))?;

    let mut entries = Vec::with_capacity(size.faces);
    for (id, image) in synth_faces(size.faces, seed) {
        let rel = PathBuf::from(format!("{id}.png"));
        image.save_png(&dir.join("faces").join(&rel))?;
        entries.push(FaceEntry { id, path: rel });
    }
    let faces_index = dir.join("faces").join("index.json");
    fs::write(&faces_index, serde_json::to_vec_pretty(&entries).expect("index serializes"))
        .map_err(io_error(&faces_index))?;

    let regional = dir.join("regional.csv");
    let mut w = csv::Writer::from_path(&regional).map_err(|e| DatasetError::Cache(e.to_string()))?;
    w.write_record(["original_id", "variant_id", "type1", "type2", "image_path"]).map_err(csv_err)?;
    for (original, v) in synth_regional(size.sprites, size.regional, seed) {
        let rel = format!("regional/{}.png", v.id);
        v.image.save_png(&dir.join(&rel))?;
        let (t1, t2) = type_columns(&v.types);
        w.write_record([original.as_str(), &v.id, &t1, &t2, &rel]).map_err(csv_err)?;
    }
    w.flush().map_err(io_error(&regional))?;

    Ok(CorpusPaths {
        manifest,
        faces_index,
        regional,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_faces, load_manifest};
    use crate::eval::load_regional_pairs;
    use crate::typeassign::masked_mean_hsv;

    #[test]
    fn sprites_are_deterministic_and_typed() {
        let a = synth_sprites(30, 4);
        let b = synth_sprites(30, 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.types, y.types);
            assert_eq!(x.image, y.image);
        }
        assert!(a.iter().all(|s| (1..=2).contains(&s.types.len())));
        assert!(a.iter().any(|s| s.types.len() == 2));
        let alpha: Vec<f32> = a[0].image.pixels().map(|p| p[3]).collect();
        assert!(alpha.contains(&0.0) && alpha.contains(&1.0));
    }

    #[test]
    fn fire_sprites_are_redder_than_water_sprites() {
        let sprites = synth_sprites(400, 1);
        let mean_hue_of = |t: CreatureType| {
            let hues: Vec<f64> = sprites
                .iter()
                .filter(|s| s.types == [t])
                .map(|s| masked_mean_hsv(&s.image).unwrap()[0])
                .collect();
            hues.iter().sum::<f64>() / hues.len() as f64
        };
        assert!(mean_hue_of(CreatureType::Fire) < 0.15);
        assert!((0.5..0.75).contains(&mean_hue_of(CreatureType::Water)));
    }

    #[test]
    fn regional_variants_change_types_but_keep_silhouette() {
        let originals = synth_sprites(60, 2);
        let variants = synth_regional(60, 6, 2);
        assert_eq!(variants.len(), 6);
        for (id, v) in &variants {
            let o = originals.iter().find(|s| &s.id == id).unwrap();
            assert_ne!(o.types, v.types);
            let alpha = |r: &Raster| r.pixels().map(|p| p[3]).collect::<Vec<_>>();
            assert_eq!(alpha(&o.image), alpha(&v.image));
        }
    }

    #[test]
    fn corpus_round_trips_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(
            dir.path(),
            CorpusSize {
                sprites: 12,
                faces: 5,
                regional: 3,
            },
            9,
        )
        .unwrap();
        let records = load_manifest(&paths.manifest).unwrap();
        assert_eq!(records.len(), 12);
        assert_eq!(records[0].image.shape(), (96, 96, 4));
        let faces = load_faces(&paths.faces_index).unwrap();
        assert_eq!(faces.len(), 5);
        assert_eq!(faces[0].image.shape(), (32, 32, 3));
        let pairs = load_regional_pairs(&paths.regional, &records).unwrap();
        assert_eq!(pairs.len(), 3);
    }
}
