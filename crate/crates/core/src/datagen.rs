//! Synthetic two-modality identity embeddings and the text embedding format.
//!
//! A generated world places identity anchors on the unit sphere of an
//! identity subspace. Visible samples scatter around their anchor; infrared
//! samples scatter around a displaced anchor (small per-identity rotation
//! plus a run-wide offset direction scaled by `delta_mod`). Each visible
//! sample also gets an augmented twin: the same feature with extra jitter.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::tensor::{self, DenseTensor};
use crate::error::{Error, Result};

pub const HEADER_PREFIX: &str = "uvireid-emb v1 dim=";

/// Relative size of the per-identity infrared rotation against `delta_mod`.
const IDENTITY_ROTATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visible,
    Infrared,
}

impl Modality {
    pub fn code(self) -> &'static str {
        match self {
            Modality::Visible => "V",
            Modality::Infrared => "I",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Visible => Modality::Infrared,
            Modality::Infrared => Modality::Visible,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Original,
    Augmented,
}

impl View {
    pub fn code(self) -> &'static str {
        match self {
            View::Original => "O",
            View::Augmented => "A",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub feature: Vec<f64>,
    /// Ground truth; training reads it only for diagnostics and simulated label corruption.
    pub identity: usize,
    pub modality: Modality,
    pub camera: usize,
    pub view: View,
}

/// Samples in file order. An augmented row is the twin of the visible
/// original row directly before it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    samples: Vec<SampleRecord>,
}

impl EmbeddingDataset {
    pub fn new(dim: usize, samples: Vec<SampleRecord>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            check_record(s, dim).map_err(|m| Error::Data(format!("sample {i}: {m}")))?;
            if s.view == View::Augmented {
                let ok = i > 0
                    && samples[i - 1].view == View::Original
                    && samples[i - 1].modality == Modality::Visible;
                if !ok {
                    return Err(Error::Data(format!(
                        "sample {i}: augmented view must follow a visible original"
                    )));
                }
            }
        }
        Ok(EmbeddingDataset { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    /// Indices of original (non-augmented) samples of one modality.
    pub fn originals(&self, modality: Modality) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.modality == modality && s.view == View::Original)
            .map(|(i, _)| i)
            .collect()
    }

    /// Augmented twin of sample `i`, if it has one.
    pub fn twin_of(&self, i: usize) -> Option<usize> {
        let next = self.samples.get(i + 1)?;
        (self.samples[i].view == View::Original && next.view == View::Augmented).then_some(i + 1)
    }

    /// Stack features of `idx` into a `[idx.len(), dim]` matrix.
    pub fn feature_matrix(&self, idx: &[usize]) -> DenseTensor {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].feature);
        }
        DenseTensor::matrix(idx.len(), self.dim, data).expect("validated widths")
    }

    /// Ensure every visible original has an augmented twin, jittering with
    /// `sigma_aug` where one is missing.
    pub fn with_augmentation(&self, sigma_aug: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.samples.len() * 2);
        for (i, s) in self.samples.iter().enumerate() {
            out.push(s.clone());
            if s.modality == Modality::Visible && s.view == View::Original && self.twin_of(i).is_none() {
                out.push(augment(s, sigma_aug, &mut rng)?);
            }
        }
        Self::new(self.dim, out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{HEADER_PREFIX}{}", self.dim)?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            write!(
                line,
                "{},{},{},{}",
                s.identity,
                s.modality.code(),
                s.camera,
                s.view.code()
            )
            .expect("string write");
            for v in &s.feature {
                write!(line, ",{v:?}").expect("string write");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(Error::Parse { line: 1, msg: "empty file".into() })??;
        let dim: usize = header
            .trim_end()
            .strip_prefix(HEADER_PREFIX)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("expected header '{HEADER_PREFIX}<d>', got '{header}'"),
            })?;
        if dim < 2 {
            return Err(Error::Parse { line: 1, msg: format!("dimension {dim} < 2") });
        }
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let rec = parse_row(line, dim).map_err(|msg| Error::Parse { line: lineno, msg })?;
            if rec.view == View::Augmented {
                let ok = samples.last().is_some_and(|p: &SampleRecord| {
                    p.view == View::Original && p.modality == Modality::Visible
                });
                if !ok {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "augmented view must follow a visible original".into(),
                    });
                }
            }
            samples.push(rec);
        }
        Ok(EmbeddingDataset { dim, samples })
    }
}

fn check_record(s: &SampleRecord, dim: usize) -> std::result::Result<(), String> {
    if s.feature.len() != dim {
        return Err(format!("feature has {} values, expected {dim}", s.feature.len()));
    }
    let n = tensor::l2_norm(&s.feature);
    if !((n - 1.0).abs() <= 1e-9) {
        return Err(format!("feature norm {n} is not 1"));
    }
    if s.view == View::Augmented && s.modality != Modality::Visible {
        return Err("augmented view on a non-visible sample".into());
    }
    Ok(())
}

fn parse_row(line: &str, dim: usize) -> std::result::Result<SampleRecord, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != dim + 4 {
        return Err(format!("expected {} fields, found {}", dim + 4, fields.len()));
    }
    let identity = fields[0]
        .trim()
        .parse()
        .map_err(|_| format!("bad identity '{}'", fields[0]))?;
    let modality = match fields[1].trim() {
        "V" => Modality::Visible,
        "I" => Modality::Infrared,
        m => return Err(format!("bad modality '{m}'")),
    };
    let camera = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("bad camera '{}'", fields[2]))?;
    let view = match fields[3].trim() {
        "O" => View::Original,
        "A" => View::Augmented,
        v => return Err(format!("bad view '{v}'")),
    };
    let feature = fields[4..]
        .iter()
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad float '{f}'"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let rec = SampleRecord { feature, identity, modality, camera, view };
    check_record(&rec, dim)?;
    Ok(rec)
}

fn gaussian(dim: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

fn augment(s: &SampleRecord, sigma_aug: f64, rng: &mut ChaCha8Rng) -> Result<SampleRecord> {
    let feature = if sigma_aug == 0.0 {
        s.feature.clone()
    } else {
        let noise = gaussian(s.feature.len(), sigma_aug, rng);
        let v: Vec<f64> = s.feature.iter().zip(&noise).map(|(a, b)| a + b).collect();
        tensor::normalized(&v)?
    };
    Ok(SampleRecord { feature, view: View::Augmented, ..s.clone() })
}

/// Parameters of a synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    /// Training identities (K).
    pub num_identities: usize,
    /// Held-out identities for evaluation (ids `K..K+test_identities`).
    pub test_identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    /// Rank of the subspace holding identity anchors; 0 means the full space.
    pub identity_rank: usize,
    pub sigma_id: f64,
    pub delta_mod: f64,
    /// Angle (radians) by which infrared anchors are turned in half of the
    /// identity subspace, the same for every identity.
    pub shared_rotation: f64,
    pub sigma_aug: f64,
    pub cameras_per_modality: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            num_identities: 20,
            test_identities: 20,
            samples_per_identity: 30,
            dim: 64,
            identity_rank: 16,
            sigma_id: 0.05,
            delta_mod: 0.5,
            shared_rotation: 0.0,
            sigma_aug: 0.02,
            cameras_per_modality: 2,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.num_identities < 2 {
            return Err(Error::config("need at least 2 identities"));
        }
        if self.samples_per_identity == 0 {
            return Err(Error::config("samples_per_identity must be >= 1"));
        }
        if self.identity_rank > self.dim {
            return Err(Error::config("identity_rank exceeds dim"));
        }
        for (name, v) in [
            ("sigma_id", self.sigma_id),
            ("delta_mod", self.delta_mod),
            ("shared_rotation", self.shared_rotation),
            ("sigma_aug", self.sigma_aug),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn rank(&self) -> usize {
        if self.identity_rank == 0 {
            self.dim
        } else {
            self.identity_rank
        }
    }
}

/// Anchors and modality displacement shared by train and test identities.
#[derive(Debug, Clone)]
pub struct GenWorld {
    /// Visible anchors, one per identity (train first, then test).
    pub anchors: Vec<Vec<f64>>,
    /// Infrared anchors (unnormalized: rotated anchor plus offset).
    pub ir_anchors: Vec<Vec<f64>>,
    pub offset_dir: Vec<f64>,
}

/// Turn `v` by `angle` inside each plane spanned by an orthonormal pair.
fn rotate_planes(v: &[f64], planes: &[(Vec<f64>, Vec<f64>)], angle: f64) -> Vec<f64> {
    let (sin, cos) = angle.sin_cos();
    let mut out = v.to_vec();
    for (p, q) in planes {
        let (x, y) = (tensor::dot(v, p), tensor::dot(v, q));
        let (dx, dy) = (x * cos - y * sin - x, x * sin + y * cos - y);
        for ((o, a), b) in out.iter_mut().zip(p).zip(q) {
            *o += dx * a + dy * b;
        }
    }
    out
}

impl GenWorld {
    pub fn new(spec: &GenSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let total = spec.num_identities + spec.test_identities;
        let rank = spec.rank();
        let basis = if rank == spec.dim {
            None
        } else {
            Some(orthonormal_basis(spec.dim, rank, &mut rng)?)
        };
        let offset_dir = tensor::normalized(&gaussian(spec.dim, 1.0, &mut rng))?;
        let mut anchors = Vec::with_capacity(total);
        for _ in 0..total {
            let g = gaussian(rank, 1.0, &mut rng);
            let v = match &basis {
                None => g,
                Some(b) => {
                    let mut v = vec![0.0; spec.dim];
                    for (c, row) in g.iter().zip(b) {
                        for (o, r) in v.iter_mut().zip(row) {
                            *o += c * r;
                        }
                    }
                    v
                }
            };
            anchors.push(tensor::normalized(&v)?);
        }
        let twists: Vec<Vec<f64>> = (0..total)
            .map(|_| gaussian(spec.dim, 1.0 / (spec.dim as f64).sqrt(), &mut rng))
            .collect();
        let mut world = Self::assemble(spec, anchors, offset_dir, &twists)?;
        if spec.shared_rotation != 0.0 {
            let basis = match basis {
                Some(b) => b,
                None => orthonormal_basis(spec.dim, rank, &mut rng)?,
            };
            let planes: Vec<(Vec<f64>, Vec<f64>)> = basis
                .chunks_exact(2)
                .take(rank / 4)
                .map(|c| (c[0].clone(), c[1].clone()))
                .collect();
            let d = spec.delta_mod;
            for ((ir, a), t) in world.ir_anchors.iter_mut().zip(&world.anchors).zip(&twists) {
                let turned: Vec<f64> = rotate_planes(a, &planes, spec.shared_rotation)
                    .iter()
                    .zip(t)
                    .map(|(x, y)| x + d * IDENTITY_ROTATION * y)
                    .collect();
                let turned = tensor::normalized(&turned)?;
                *ir = turned.iter().zip(&world.offset_dir).map(|(x, u)| x + d * u).collect();
            }
        }
        Ok(world)
    }

    /// World with caller-chosen anchors (no per-identity rotation).
    pub fn from_anchors(spec: &GenSpec, anchors: Vec<Vec<f64>>, offset_dir: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let anchors = anchors
            .iter()
            .map(|a| tensor::normalized(a))
            .collect::<Result<Vec<_>>>()?;
        let twists = vec![vec![0.0; spec.dim]; anchors.len()];
        Self::assemble(spec, anchors, tensor::normalized(&offset_dir)?, &twists)
    }

    fn assemble(
        spec: &GenSpec,
        anchors: Vec<Vec<f64>>,
        offset_dir: Vec<f64>,
        twists: &[Vec<f64>],
    ) -> Result<Self> {
        let d = spec.delta_mod;
        let ir_anchors = anchors
            .iter()
            .zip(twists)
            .map(|(a, t)| {
                if d == 0.0 {
                    return Ok(a.clone());
                }
                let turned: Vec<f64> = a
                    .iter()
                    .zip(t)
                    .map(|(x, y)| x + d * IDENTITY_ROTATION * y)
                    .collect();
                let turned = tensor::normalized(&turned)?;
                Ok(turned.iter().zip(&offset_dir).map(|(x, u)| x + d * u).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GenWorld { anchors, ir_anchors, offset_dir })
    }

    /// Emit samples for identities `ids`, drawing noise from a stream keyed by `stream`.
    pub fn emit(&self, spec: &GenSpec, ids: std::ops::Range<usize>, stream: u64) -> Result<EmbeddingDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream + 1);
        let cams = spec.cameras_per_modality.max(1);
        let mut samples = Vec::new();
        for k in ids {
            let anchor = self
                .anchors
                .get(k)
                .ok_or_else(|| Error::config(format!("identity {k} outside world")))?;
            for s in 0..spec.samples_per_identity {
                let rec = SampleRecord {
                    feature: jitter(anchor, spec.sigma_id, &mut rng)?,
                    identity: k,
                    modality: Modality::Visible,
                    camera: s % cams,
                    view: View::Original,
                };
                let twin = augment(&rec, spec.sigma_aug, &mut rng)?;
                samples.push(rec);
                samples.push(twin);
            }
            for s in 0..spec.samples_per_identity {
                samples.push(SampleRecord {
                    feature: jitter(&self.ir_anchors[k], spec.sigma_id, &mut rng)?,
                    identity: k,
                    modality: Modality::Infrared,
                    camera: cams + s % cams,
                    view: View::Original,
                });
            }
        }
        EmbeddingDataset::new(spec.dim, samples)
    }
}

fn jitter(center: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let noise = gaussian(center.len(), sigma, rng);
    let v: Vec<f64> = center.iter().zip(&noise).map(|(a, b)| a + b).collect();
    tensor::normalized(&v)
}

fn orthonormal_basis(dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v = gaussian(dim, 1.0, rng);
        for b in &basis {
            let p = tensor::dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if tensor::l2_norm(&v) > 1e-6 {
            basis.push(tensor::normalized(&v)?);
        }
    }
    Ok(basis)
}

/// Training dataset for identities `0..K`.
pub fn generate(spec: &GenSpec) -> Result<EmbeddingDataset> {
    let world = GenWorld::new(spec)?;
    world.emit(spec, 0..spec.num_identities, 0)
}

/// Training and held-out test datasets sharing one world.
pub fn generate_split(spec: &GenSpec) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let world = GenWorld::new(spec)?;
    let k = spec.num_identities;
    let train = world.emit(spec, 0..k, 0)?;
    let test = world.emit(spec, k..k + spec.test_identities, 1)?;
    Ok((train, test))
}
