//! Deterministic synthetic-platform generator.
//!
//! Produces posts, per-modality embeddings, and ground-truth latent factors
//! (alpha_star, phi_star) so that the decomposition pipeline can be checked
//! against a known answer. All randomness flows through counter-based
//! per-post streams, so generation is order-independent and bit-reproducible
//! for a fixed seed.
//!
//! The content side (category prototypes, modality projections, the smooth
//! attractiveness map) is seeded independently of the exposure side, which
//! lets two platforms share an attractiveness generator while drawing
//! different exposure dynamics.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::PostRecord;
use crate::error::{OmniError, Result};
use crate::tensor::Tensor;
use crate::timeutil::{hour_of_day, weekday, SECONDS_PER_DAY};

pub const MODALITY_COUNT: usize = 3;
const OTEB_MAGIC: &[u8; 4] = b"OTEB";
const OTEB_VERSION: u16 = 1;

/// Corpus start epoch (2020-09-13T12:26:40Z); keeps timestamps positive and
/// modern-looking without mattering otherwise.
const TIME_ORIGIN: i64 = 1_600_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_posts: usize,
    pub n_authors: usize,
    pub n_categories: usize,
    pub n_locations: usize,
    /// Shared embedding dimension (desk-scale default 32).
    pub embedding_dim: usize,
    pub missing_image_rate: f64,
    pub missing_text_rate: f64,
    pub missing_video_rate: f64,
    /// Std of the label noise epsilon.
    pub noise_std: f64,
    pub seed: u64,
    /// Seed for the attractiveness generator; defaults to `seed`. Two
    /// platforms sharing this value share their alpha map.
    pub content_map_seed: Option<u64>,
    pub time_span_secs: i64,
    pub platform_id: u32,
    /// Baseline exposure level added to phi_star, sets the count scale.
    pub base_level: f64,
}

impl GeneratorConfig {
    /// Desk-scale default corpus: 10k posts, d = 32.
    pub fn default_desk() -> Self {
        GeneratorConfig {
            n_posts: 22_000,
            n_authors: 400,
            n_categories: 16,
            n_locations: 20,
            embedding_dim: 64,
            missing_image_rate: 0.10,
            missing_text_rate: 0.05,
            missing_video_rate: 0.70,
            noise_std: 0.22,
            seed: 7,
            content_map_seed: None,
            time_span_secs: 48 * SECONDS_PER_DAY,
            platform_id: 0,
            base_level: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(OmniError::Config("embedding_dim must be >= 2".into()));
        }
        for (name, r) in [
            ("missing_image_rate", self.missing_image_rate),
            ("missing_text_rate", self.missing_text_rate),
            ("missing_video_rate", self.missing_video_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(OmniError::Config(format!("{name} must be in [0, 1)")));
            }
        }
        if self.noise_std < 0.0 {
            return Err(OmniError::Config("noise_std must be >= 0".into()));
        }
        if self.n_posts == 0 || self.n_authors == 0 || self.n_categories == 0 || self.n_locations == 0
        {
            return Err(OmniError::Config("all corpus counts must be positive".into()));
        }
        if self.time_span_secs <= 0 {
            return Err(OmniError::Config("time_span_secs must be positive".into()));
        }
        Ok(())
    }

    fn content_seed(&self) -> u64 {
        self.content_map_seed.unwrap_or(self.seed)
    }
}

/// Per-modality embedding matrices aligned row-for-row with the post list.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub post_ids: Vec<u64>,
    pub image: Tensor,
    pub text: Tensor,
    pub video: Tensor,
    pub image_present: Vec<bool>,
    pub text_present: Vec<bool>,
    pub video_present: Vec<bool>,
}

impl EmbeddingSet {
    pub fn n_rows(&self) -> usize {
        self.post_ids.len()
    }

    pub fn row_index(&self) -> HashMap<u64, usize> {
        self.post_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect()
    }
}

/// Latent factors behind each generated label; sidecar data for evaluation
/// only, never an input to training.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub post_ids: Vec<u64>,
    pub alpha_star: Vec<f64>,
    pub phi_star: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream(seed: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag ^ splitmix64(idx))))
}

const TAG_POST: u64 = 1;
const TAG_AUTHOR_WEIGHTS: u64 = 2;
const TAG_CONTENT_MAP: u64 = 3;
const TAG_PHI_MAP: u64 = 4;

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * std_normal(rng)).collect()
}

// ---------------------------------------------------------------------------
// Static generator state
// ---------------------------------------------------------------------------

const MAP_HIDDEN: usize = 16;
const TREND_COMPONENTS: usize = 4;
const DRIFT_COMPONENTS: usize = 3;
/// Static category share of the content latent. Kept at zero: a static
/// prototype would give α* a per-category mean that spuriously correlates
/// with φ*'s category effect at modest category counts; the per-category
/// drift below already ties visual similarity to category.
const CATEGORY_MIX: f64 = 0.0;
/// Share of the content latent carried by a slow per-category temporal
/// drift; the remainder is idiosyncratic. The drift makes stylistically
/// similar posts share a category AND be temporally close, which is what
/// gives retrieval neighbors their value. It must be large relative to the
/// idiosyncratic share: cosine selection at d=32 picks ~3.5-sigma noise
/// alignments (~0.6/sqrt(d) per unit share), so a small drift share would be
/// drowned out of the top-K entirely.
const DRIFT_MIX: f64 = 0.50;

struct ContentStatics {
    prototypes: Vec<Vec<f64>>,          // n_categories x d
    proj: [Vec<f64>; MODALITY_COUNT],   // d x d row-major, one per modality
    map_w: Vec<f64>,                    // MAP_HIDDEN x 3d
    map_b: Vec<f64>,                    // MAP_HIDDEN
    map_g: Vec<f64>,                    // MAP_HIDDEN
    drift_freqs: Vec<[f64; DRIFT_COMPONENTS]>, // per embedding dimension
    drift_amp: Vec<[f64; DRIFT_COMPONENTS]>,
    drift_phase: Vec<Vec<[f64; DRIFT_COMPONENTS]>>, // per category, per dimension
}

impl ContentStatics {
    /// Smooth unit-variance-per-dimension drift of one category's content
    /// latent. Every dimension mixes its own random frequencies, so the
    /// vector-level autocorrelation decays over a few days without periodic
    /// recurrences; phases are drawn per category, so two posts are close in
    /// drift only when they share a category AND are temporally close.
    fn drift(&self, d: usize, category: usize, t: i64) -> Vec<f64> {
        let phases = &self.drift_phase[category];
        (0..d)
            .map(|k| {
                let mut v = 0.0;
                for c in 0..DRIFT_COMPONENTS {
                    v += self.drift_amp[k][c]
                        * (std::f64::consts::TAU * self.drift_freqs[k][c] * t as f64
                            + phases[k][c])
                            .sin();
                }
                v
            })
            .collect()
    }
}

struct PhiStatics {
    time_coefs: [f64; 4],
    author_effect: Vec<f64>,
    activity_coef: f64,
    category_effect: Vec<f64>,
    trend_freqs: [f64; TREND_COMPONENTS],
    trend_phases: Vec<[f64; TREND_COMPONENTS]>, // per category
    trend_scale: f64,
    momentum_coef: f64,
}

fn content_statics(cfg: &GeneratorConfig) -> ContentStatics {
    let d = cfg.embedding_dim;
    let mut rng = stream(cfg.content_seed(), TAG_CONTENT_MAP, 0);
    let prototypes = (0..cfg.n_categories)
        .map(|_| normal_vec(&mut rng, d, 1.0))
        .collect();
    let scale = 1.0 / (d as f64).sqrt();
    let proj = [
        normal_vec(&mut rng, d * d, scale),
        normal_vec(&mut rng, d * d, scale),
        normal_vec(&mut rng, d * d, scale),
    ];
    let map_w = normal_vec(&mut rng, MAP_HIDDEN * 3 * d, 1.0 / (3.0 * d as f64).sqrt() * 2.0);
    let map_b = normal_vec(&mut rng, MAP_HIDDEN, 0.3);
    let map_g = normal_vec(&mut rng, MAP_HIDDEN, 1.0);
    // drift periods log-uniform in 6..24 days, drawn per dimension: the
    // latent stays coherent for a couple of days, decays over ~a week, and
    // the spread of frequencies prevents periodic recurrences
    let drift_freqs = (0..d)
        .map(|_| {
            let mut f = [0.0; DRIFT_COMPONENTS];
            for x in f.iter_mut() {
                let period_days = 2.5 * (4.0f64).powf(rng.gen::<f64>());
                *x = 1.0 / (period_days * SECONDS_PER_DAY as f64);
            }
            f
        })
        .collect();
    // amplitude variance 2/C per component keeps each dimension at unit variance
    let amp_std = (2.0 / DRIFT_COMPONENTS as f64).sqrt();
    let drift_amp = (0..d)
        .map(|_| {
            let mut a = [0.0; DRIFT_COMPONENTS];
            for x in a.iter_mut() {
                *x = amp_std * std_normal(&mut rng);
            }
            a
        })
        .collect();
    let drift_phase = (0..cfg.n_categories)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let mut p = [0.0; DRIFT_COMPONENTS];
                    for x in p.iter_mut() {
                        *x = rng.gen::<f64>() * std::f64::consts::TAU;
                    }
                    p
                })
                .collect()
        })
        .collect();
    ContentStatics {
        prototypes,
        proj,
        map_w,
        map_b,
        map_g,
        drift_freqs,
        drift_amp,
        drift_phase,
    }
}

fn phi_statics(cfg: &GeneratorConfig) -> PhiStatics {
    let mut rng = stream(cfg.seed, TAG_PHI_MAP, cfg.platform_id as u64);
    let mut time_coefs = [0.0; 4];
    for c in time_coefs.iter_mut() {
        *c = 0.8 * std_normal(&mut rng);
    }
    let author_effect = normal_vec(&mut rng, cfg.n_authors, 0.15);
    let activity_coef = 0.4;
    let category_effect = normal_vec(&mut rng, cfg.n_categories, 0.35);
    // per-category trend: sinusoids with 8..14 day periods. The band is
    // deliberate: the trend stays coherent over the ~2 day retrieval decay
    // horizon (so neighbor statistics can track it) but rotates far over the
    // several-day gap between the validation and test windows and averages
    // out over the 38-day training window (so static category features
    // cannot piggyback on it).
    let mut trend_freqs = [0.0; TREND_COMPONENTS];
    for (j, f) in trend_freqs.iter_mut().enumerate() {
        let period_days = 8.0 + 2.0 * j as f64 + 0.5 * rng.gen::<f64>();
        *f = 1.0 / (period_days * SECONDS_PER_DAY as f64);
    }
    let trend_phases = (0..cfg.n_categories)
        .map(|_| {
            let mut p = [0.0; TREND_COMPONENTS];
            for x in p.iter_mut() {
                *x = rng.gen::<f64>() * std::f64::consts::TAU;
            }
            p
        })
        .collect();
    PhiStatics {
        time_coefs,
        author_effect,
        activity_coef,
        category_effect,
        trend_freqs,
        trend_phases,
        trend_scale: 1.35,
        momentum_coef: 0.15,
    }
}

/// Development aid: the trend component of phi_star per post, aligned with
/// the given post order.
#[doc(hidden)]
pub fn debug_trend_component(cfg: &GeneratorConfig, posts: &[PostRecord]) -> Vec<f64> {
    let phi = phi_statics(cfg);
    let tau = std::f64::consts::TAU;
    posts
        .iter()
        .map(|p| {
            let mut trend = 0.0;
            for j in 0..TREND_COMPONENTS {
                trend += (tau * phi.trend_freqs[j] * p.timestamp as f64
                    + phi.trend_phases[p.category_id as usize][j])
                    .sin();
            }
            trend * phi.trend_scale / (TREND_COMPONENTS as f64).sqrt()
        })
        .collect()
}

fn author_cdf(cfg: &GeneratorConfig) -> Vec<f64> {
    let mut rng = stream(cfg.seed, TAG_AUTHOR_WEIGHTS, 0);
    let weights: Vec<f64> = (0..cfg.n_authors)
        .map(|_| (0.8 * std_normal(&mut rng)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Per-post primitives (counter-based, order-independent)
// ---------------------------------------------------------------------------

struct PostPrimitives {
    timestamp: i64,
    author: usize,
    category: usize,
    location: usize,
    has_image: bool,
    has_text: bool,
    has_video: bool,
    image: Vec<f64>,
    text: Vec<f64>,
    video: Vec<f64>,
    noise: f64,
}

/// Quantizes to the f32 grid so the binary embedding file round-trips
/// bit-exactly.
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn unit_normalize_quantized(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in v.iter_mut() {
            *x = quantize(*x / norm);
        }
    }
}

fn post_primitives(
    cfg: &GeneratorConfig,
    content: &ContentStatics,
    authors: &[f64],
    idx: usize,
) -> PostPrimitives {
    let d = cfg.embedding_dim;
    let mut rng = stream(cfg.seed, TAG_POST, idx as u64);

    let timestamp = TIME_ORIGIN + rng.gen_range(0..cfg.time_span_secs);
    let u: f64 = rng.gen();
    let author = authors.partition_point(|&c| c < u).min(cfg.n_authors - 1);
    let category = rng.gen_range(0..cfg.n_categories);
    let location = rng.gen_range(0..cfg.n_locations);

    let has_image = rng.gen::<f64>() >= cfg.missing_image_rate;
    let mut has_text = rng.gen::<f64>() >= cfg.missing_text_rate;
    let has_video = rng.gen::<f64>() >= cfg.missing_video_rate;
    if !(has_image || has_text || has_video) {
        has_text = true;
    }

    // content latent: category prototype, slow temporal drift, idiosyncratic
    let proto = &content.prototypes[category];
    let drift = content.drift(d, category, timestamp);
    let mix_c = CATEGORY_MIX.sqrt();
    let mix_d = DRIFT_MIX.sqrt();
    let mix_i = (1.0 - CATEGORY_MIX - DRIFT_MIX).sqrt();
    let latent: Vec<f64> = (0..d)
        .map(|k| {
            let xi = std_normal(&mut rng);
            mix_c * proto[k] + mix_d * drift[k] + mix_i * xi
        })
        .collect();

    let embed = |which: usize, present: bool, rng: &mut ChaCha8Rng| -> Vec<f64> {
        // modality-specific small distortion keeps modalities distinct
        let distort: Vec<f64> = (0..d)
            .map(|_| 0.12 * std_normal(rng))
            .collect();
        if !present {
            return vec![0.0; d];
        }
        let proj = &content.proj[which];
        let mut e: Vec<f64> = (0..d)
            .map(|r| {
                let row = &proj[r * d..(r + 1) * d];
                row.iter().zip(latent.iter()).map(|(a, b)| a * b).sum::<f64>() + distort[r]
            })
            .collect();
        unit_normalize_quantized(&mut e);
        e
    };

    let image = embed(0, has_image, &mut rng);
    let text = embed(1, has_text, &mut rng);
    let video = embed(2, has_video, &mut rng);
    let noise = cfg.noise_std * std_normal(&mut rng);

    PostPrimitives {
        timestamp,
        author,
        category,
        location,
        has_image,
        has_text,
        has_video,
        image,
        text,
        video,
        noise,
    }
}

fn alpha_raw(content: &ContentStatics, d: usize, prims: &PostPrimitives) -> f64 {
    let mut x = Vec::with_capacity(3 * d);
    x.extend_from_slice(&prims.image);
    x.extend_from_slice(&prims.text);
    x.extend_from_slice(&prims.video);
    let mut out = 0.0;
    for h in 0..MAP_HIDDEN {
        let row = &content.map_w[h * 3 * d..(h + 1) * 3 * d];
        let z: f64 =
            row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + content.map_b[h];
        out += content.map_g[h] * z.tanh();
    }
    out
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

pub fn generate_corpus(
    cfg: &GeneratorConfig,
) -> Result<(Vec<PostRecord>, EmbeddingSet, GroundTruth)> {
    cfg.validate()?;
    let d = cfg.embedding_dim;
    let content = content_statics(cfg);
    let phi = phi_statics(cfg);
    let authors = author_cdf(cfg);

    let prims: Vec<PostPrimitives> = (0..cfg.n_posts)
        .map(|i| post_primitives(cfg, &content, &authors, i))
        .collect();

    // smooth attractiveness map, standardized to zero mean and then scaled:
    // attractiveness carries a deliberately larger-than-unit share of the
    // label variance so content quality matters beyond what neighborhood
    // averages can proxy
    const ALPHA_SCALE: f64 = 1.1;
    let raw: Vec<f64> = prims.iter().map(|p| alpha_raw(&content, d, p)).collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let alpha_star: Vec<f64> = raw.iter().map(|a| ALPHA_SCALE * (a - mean) / std).collect();

    // sequential pass in time order for activity, momentum, and labels
    let mut order: Vec<usize> = (0..cfg.n_posts).collect();
    order.sort_by_key(|&i| (prims[i].timestamp, i));

    struct AuthorState {
        prior_count: u64,
        recent: std::collections::VecDeque<f64>,
    }
    let mut states: Vec<AuthorState> = (0..cfg.n_authors)
        .map(|_| AuthorState {
            prior_count: 0,
            recent: std::collections::VecDeque::new(),
        })
        .collect();

    let mut phi_star = vec![0.0; cfg.n_posts];
    let mut y = vec![0u64; cfg.n_posts];
    for &i in &order {
        let p = &prims[i];
        let h = hour_of_day(p.timestamp) as f64;
        let wd = weekday(p.timestamp) as f64;
        let tau = std::f64::consts::TAU;
        let time_term = phi.time_coefs[0] * (tau * h / 24.0).sin()
            + phi.time_coefs[1] * (tau * h / 24.0).cos()
            + phi.time_coefs[2] * (tau * wd / 7.0).sin()
            + phi.time_coefs[3] * (tau * wd / 7.0).cos();

        let st = &states[p.author];
        let activity_term = phi.activity_coef * (1.0 + st.prior_count as f64).ln();
        let momentum_term = if st.recent.is_empty() {
            0.0
        } else {
            let m = st.recent.iter().sum::<f64>() / st.recent.len() as f64;
            phi.momentum_coef * (m - cfg.base_level).clamp(-2.5, 2.5)
        };

        let mut trend = 0.0;
        for j in 0..TREND_COMPONENTS {
            trend += (tau * phi.trend_freqs[j] * p.timestamp as f64
                + phi.trend_phases[p.category][j])
                .sin();
        }
        trend *= phi.trend_scale / (TREND_COMPONENTS as f64).sqrt();

        let phi_i = cfg.base_level
            + time_term
            + phi.author_effect[p.author]
            + activity_term
            + phi.category_effect[p.category]
            + trend
            + momentum_term;
        phi_star[i] = phi_i;

        let y_tilde = alpha_star[i] + phi_i + p.noise;
        let count = (y_tilde.exp() - 1.0).round().max(0.0);
        y[i] = count as u64;

        let realized = (1.0 + count).ln();
        let st = &mut states[p.author];
        st.prior_count += 1;
        st.recent.push_back(realized);
        if st.recent.len() > 10 {
            st.recent.pop_front();
        }
    }

    let posts: Vec<PostRecord> = prims
        .iter()
        .enumerate()
        .map(|(i, p)| PostRecord {
            post_id: i as u64,
            platform_id: cfg.platform_id,
            author_id: p.author as u64,
            category_id: p.category as u32,
            location_id: p.location as u32,
            timestamp: p.timestamp,
            y: y[i],
            has_image: p.has_image,
            has_text: p.has_text,
            has_video: p.has_video,
        })
        .collect();

    let mut image = Tensor::zeros(cfg.n_posts, d);
    let mut text = Tensor::zeros(cfg.n_posts, d);
    let mut video = Tensor::zeros(cfg.n_posts, d);
    for (i, p) in prims.iter().enumerate() {
        image.row_mut(i).copy_from_slice(&p.image);
        text.row_mut(i).copy_from_slice(&p.text);
        video.row_mut(i).copy_from_slice(&p.video);
    }

    let embeddings = EmbeddingSet {
        dim: d,
        post_ids: (0..cfg.n_posts as u64).collect(),
        image,
        text,
        video,
        image_present: prims.iter().map(|p| p.has_image).collect(),
        text_present: prims.iter().map(|p| p.has_text).collect(),
        video_present: prims.iter().map(|p| p.has_video).collect(),
    };

    let truth = GroundTruth {
        post_ids: (0..cfg.n_posts as u64).collect(),
        alpha_star,
        phi_star,
    };

    Ok((posts, embeddings, truth))
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

/// Writes the binary embedding file:
/// magic "OTEB", version u16, modality count u8, d per modality (u32 each),
/// n rows u64, post ids (u64 each), then per modality one presence byte per
/// post followed by row-major f32 values. All integers little-endian.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(OTEB_MAGIC)?;
    w.write_all(&OTEB_VERSION.to_le_bytes())?;
    w.write_all(&[MODALITY_COUNT as u8])?;
    for _ in 0..MODALITY_COUNT {
        w.write_all(&(set.dim as u32).to_le_bytes())?;
    }
    w.write_all(&(set.n_rows() as u64).to_le_bytes())?;
    for id in &set.post_ids {
        w.write_all(&id.to_le_bytes())?;
    }
    let mods = [
        (&set.image, &set.image_present),
        (&set.text, &set.text_present),
        (&set.video, &set.video_present),
    ];
    for (mat, present) in mods {
        for &p in present.iter() {
            w.write_all(&[p as u8])?;
        }
        for &v in &mat.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != OTEB_MAGIC {
        return Err(OmniError::Format("bad embedding file magic".into()));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != OTEB_VERSION {
        return Err(OmniError::Format(format!("unsupported embedding version {version}")));
    }
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)?;
    if b1[0] as usize != MODALITY_COUNT {
        return Err(OmniError::Format(format!("expected 3 modalities, got {}", b1[0])));
    }
    let mut dims = [0u32; MODALITY_COUNT];
    for d in dims.iter_mut() {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        *d = u32::from_le_bytes(b4);
    }
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(OmniError::Format("modality dimensions must agree".into()));
    }
    let dim = dims[0] as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut post_ids = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        let id = u64::from_le_bytes(b8);
        if !seen.insert(id) {
            return Err(OmniError::Format(format!("duplicate post_id {id} in embeddings")));
        }
        post_ids.push(id);
    }
    let read_modality = |r: &mut dyn Read| -> Result<(Tensor, Vec<bool>)> {
        let mut present = Vec::with_capacity(n);
        let mut b1 = [0u8; 1];
        for _ in 0..n {
            r.read_exact(&mut b1)?;
            present.push(b1[0] != 0);
        }
        let mut data = Vec::with_capacity(n * dim);
        let mut b4 = [0u8; 4];
        for _ in 0..n * dim {
            r.read_exact(&mut b4)?;
            data.push(f32::from_le_bytes(b4) as f64);
        }
        Ok((Tensor::from_vec(n, dim, data), present))
    };
    let (image, image_present) = read_modality(&mut r)?;
    let (text, text_present) = read_modality(&mut r)?;
    let (video, video_present) = read_modality(&mut r)?;
    Ok(EmbeddingSet {
        dim,
        post_ids,
        image,
        text,
        video,
        image_present,
        text_present,
        video_present,
    })
}

#[derive(Serialize, Deserialize)]
struct TruthLine {
    post_id: u64,
    alpha_star: f64,
    phi_star: f64,
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..truth.post_ids.len() {
        let line = TruthLine {
            post_id: truth.post_ids[i],
            alpha_star: truth.alpha_star[i],
            phi_star: truth.phi_star[i],
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| OmniError::Format(format!("truth encode: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let content = std::fs::read_to_string(path)?;
    let mut truth = GroundTruth {
        post_ids: Vec::new(),
        alpha_star: Vec::new(),
        phi_star: Vec::new(),
    };
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TruthLine = serde_json::from_str(line)
            .map_err(|e| OmniError::Format(format!("truth.jsonl line {}: {e}", i + 1)))?;
        truth.post_ids.push(t.post_id);
        truth.alpha_star.push(t.alpha_star);
        truth.phi_star.push(t.phi_star);
    }
    Ok(truth)
}

/// Writes corpus.jsonl + embeddings.oteb + truth.jsonl under `dir`.
pub fn write_corpus(
    dir: &Path,
    posts: &[PostRecord],
    embeddings: &EmbeddingSet,
    truth: &GroundTruth,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::corpus::write_posts_jsonl(&dir.join("corpus.jsonl"), posts)?;
    write_embeddings(&dir.join("embeddings.oteb"), embeddings)?;
    write_truth(&dir.join("truth.jsonl"), truth)?;
    Ok(())
}

/// Reads posts and embeddings; the ground-truth sidecar is deliberately not
/// part of this call so training code cannot see it.
pub fn read_corpus(dir: &Path) -> Result<(Vec<PostRecord>, EmbeddingSet)> {
    let posts = crate::corpus::read_posts_jsonl(&dir.join("corpus.jsonl"))?;
    let embeddings = read_embeddings(&dir.join("embeddings.oteb"))?;
    if posts.len() != embeddings.n_rows() {
        return Err(OmniError::Format(format!(
            "embedding row count {} != post count {}",
            embeddings.n_rows(),
            posts.len()
        )));
    }
    let idx = embeddings.row_index();
    for p in &posts {
        if !idx.contains_key(&p.post_id) {
            return Err(OmniError::Format(format!(
                "post {} has no embedding row",
                p.post_id
            )));
        }
    }
    Ok((posts, embeddings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            n_posts: 300,
            n_authors: 30,
            n_categories: 16,
            n_locations: 4,
            embedding_dim: 8,
            ..GeneratorConfig::default_desk()
        }
    }

    #[test]
    fn determinism_bitwise() {
        let cfg = small_cfg();
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn per_post_streams_order_independent() {
        let cfg = small_cfg();
        let content = content_statics(&cfg);
        let authors = author_cdf(&cfg);
        let forward: Vec<i64> = (0..cfg.n_posts)
            .map(|i| post_primitives(&cfg, &content, &authors, i).timestamp)
            .collect();
        let mut reverse: Vec<i64> = (0..cfg.n_posts)
            .rev()
            .map(|i| post_primitives(&cfg, &content, &authors, i).timestamp)
            .collect();
        reverse.reverse();
        assert_eq!(forward, reverse);
    }

    #[test]
    fn noise_free_label_identity() {
        let mut cfg = small_cfg();
        cfg.noise_std = 0.0;
        let (posts, _, truth) = generate_corpus(&cfg).unwrap();
        for (i, p) in posts.iter().enumerate() {
            let y_tilde = truth.alpha_star[i] + truth.phi_star[i];
            let expect = (y_tilde.exp() - 1.0).round().max(0.0) as u64;
            assert_eq!(p.y, expect, "post {i}");
        }
    }

    #[test]
    fn at_least_one_modality() {
        let mut cfg = small_cfg();
        cfg.missing_image_rate = 0.9;
        cfg.missing_text_rate = 0.9;
        cfg.missing_video_rate = 0.9;
        let (posts, _, _) = generate_corpus(&cfg).unwrap();
        for p in posts {
            assert!(p.has_image || p.has_text || p.has_video);
        }
    }

    #[test]
    fn present_rows_unit_norm_absent_rows_zero() {
        let (_, emb, _) = generate_corpus(&small_cfg()).unwrap();
        for i in 0..emb.n_rows() {
            for (mat, present) in [
                (&emb.image, &emb.image_present),
                (&emb.text, &emb.text_present),
                (&emb.video, &emb.video_present),
            ] {
                let norm: f64 = mat.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                if present[i] {
                    assert!((norm - 1.0).abs() < 1e-6, "row {i} norm {norm}");
                } else {
                    assert_eq!(norm, 0.0);
                }
            }
        }
    }

    #[test]
    fn long_tailed_engagement_mass() {
        let (posts, _, _) = generate_corpus(&GeneratorConfig::default_desk()).unwrap();
        let mut ys: Vec<u64> = posts.iter().map(|p| p.y).collect();
        ys.sort_unstable();
        let cut = ys.len() * 2 / 3;
        let total: u128 = ys.iter().map(|&y| y as u128).sum();
        let top: u128 = ys[cut..].iter().map(|&y| y as u128).sum();
        assert!(total > 0);
        assert!(
            top as f64 / total as f64 > 0.6,
            "top tercile mass {}",
            top as f64 / total as f64
        );
    }

    #[test]
    fn file_roundtrip_bitwise() {
        let cfg = GeneratorConfig {
            n_posts: 100,
            ..small_cfg()
        };
        let (posts, emb, truth) = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &posts, &emb, &truth).unwrap();
        let (posts2, emb2) = read_corpus(dir.path()).unwrap();
        let truth2 = read_truth(&dir.path().join("truth.jsonl")).unwrap();
        assert_eq!(posts, posts2);
        assert_eq!(emb, emb2);
        assert_eq!(truth, truth2);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.oteb");
        std::fs::write(&path, b"NOPE followed by junk").unwrap();
        assert!(matches!(read_embeddings(&path), Err(OmniError::Format(_))));
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let cfg = GeneratorConfig {
            n_posts: 50,
            ..small_cfg()
        };
        let (posts, emb, truth) = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &posts[..40], &emb, &truth).unwrap();
        assert!(read_corpus(dir.path()).is_err());
    }
}
