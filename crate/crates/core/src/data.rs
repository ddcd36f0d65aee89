//! Feature stores, episode sampling, synthetic data and label encoding.
//!
//! Two on-disk formats are supported:
//!
//! * CSV with header `label,f0,f1,...,f{D-1}` and one instance per row.
//! * ICIF, a little-endian binary layout: magic `ICIF`, `u32` version (= 1),
//!   `u32` n, `u32` D, `u32` c, then n `u32` labels, then n*D `f32` features
//!   in row-major order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};

pub const ICIF_MAGIC: &[u8; 4] = b"ICIF";
pub const ICIF_VERSION: u32 = 1;

/// Every instance of a dataset split with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub meta: String,
}

impl FeatureStore {
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        class_count: usize,
        meta: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(IciError::Dimension(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(IciError::LabelRange { label, class_count });
        }
        if labels.len() < class_count {
            return Err(IciError::param(format!(
                "{} rows cannot cover {} classes",
                labels.len(),
                class_count
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            let row = pos % features.nrows().max(1);
            return Err(IciError::load(format!("row {row}"), "non-finite feature"));
        }
        Ok(FeatureStore {
            features,
            labels,
            class_count,
            meta: meta.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Store indices grouped by class, in ascending index order.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    pub fn rows(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), self.dim(), |r, c| {
            self.features[(indices[r], c)]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Icif,
}

impl FeatureFormat {
    /// Guess the format from a file extension (`.csv` or `.icif`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(FeatureFormat::Csv),
            "icif" | "bin" => Some(FeatureFormat::Icif),
            _ => None,
        }
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureStore> {
    let file = File::open(path).map_err(|source| IciError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let meta = path.display().to_string();
    match format {
        FeatureFormat::Csv => read_csv(BufReader::new(file), &meta),
        FeatureFormat::Icif => read_icif(BufReader::new(file), &meta),
    }
}

/// Parse the CSV feature format. Labels are remapped to `0..c` in order of
/// first appearance.
pub fn read_csv<R: Read>(reader: R, meta: &str) -> Result<FeatureStore> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IciError::load("line 1", e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(IciError::load("line 1", "no rows"));
    }
    if headers.get(0) != Some("label") {
        return Err(IciError::load("line 1", "label column missing"));
    }
    for (j, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{j}") {
            return Err(IciError::load(
                "line 1",
                format!("malformed header: expected f{j}, found {h:?}"),
            ));
        }
    }
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(IciError::load("line 1", "header has no feature columns"));
    }

    let mut remap: HashMap<i64, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| IciError::load(format!("line {line}"), e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(IciError::load(
                format!("line {line}"),
                format!("ragged row: {} fields, expected {}", record.len(), dim + 1),
            ));
        }
        let raw: i64 = record[0].parse().map_err(|_| {
            IciError::load(format!("line {line}"), format!("bad label {:?}", &record[0]))
        })?;
        let next = remap.len();
        labels.push(*remap.entry(raw).or_insert(next));
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                IciError::load(format!("line {line}, column f{j}"), format!("bad float {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(IciError::load(
                    format!("line {line}, column f{j}"),
                    "NaN or infinite value",
                ));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(IciError::load("line 2", "no rows"));
    }
    let n = labels.len();
    let features = DMatrix::from_row_slice(n, dim, &values);
    FeatureStore::new(features, labels, remap.len(), format!("csv:{meta}"))
}

pub fn write_csv<W: Write>(store: &FeatureStore, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| IciError::load("csv writer", e.to_string());
    let mut header = vec!["label".to_string()];
    header.extend((0..store.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(io)?;
    for (i, &l) in store.labels.iter().enumerate() {
        let mut rec = vec![l.to_string()];
        rec.extend(store.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()
        .map_err(|e| IciError::load("csv writer", e.to_string()))?;
    Ok(())
}

/// Parse the ICIF binary format. Labels are kept verbatim and validated
/// against the stored class count.
pub fn read_icif<R: Read>(mut reader: R, meta: &str) -> Result<FeatureStore> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| IciError::load("offset 0", e.to_string()))?;
    if bytes.is_empty() {
        return Err(IciError::load("offset 0", "no rows"));
    }
    if bytes.len() < 20 || &bytes[0..4] != ICIF_MAGIC {
        return Err(IciError::load("offset 0", "malformed header: bad magic"));
    }
    let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = word(4);
    if version != ICIF_VERSION {
        return Err(IciError::load(
            "offset 4",
            format!("unsupported version {version}"),
        ));
    }
    let n = word(8) as usize;
    let dim = word(12) as usize;
    let class_count = word(16) as usize;
    if n == 0 {
        return Err(IciError::load("offset 8", "no rows"));
    }
    let expected = 20 + 4 * n + 4 * n * dim;
    if bytes.len() != expected {
        return Err(IciError::load(
            format!("offset {}", bytes.len().min(expected)),
            format!("payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let off = 20 + 4 * i;
        let l = word(off) as usize;
        if l >= class_count {
            return Err(IciError::load(
                format!("offset {off}"),
                format!("label {l} >= class count {class_count}"),
            ));
        }
        labels.push(l);
    }
    let base = 20 + 4 * n;
    let mut values = Vec::with_capacity(n * dim);
    for k in 0..n * dim {
        let off = base + 4 * k;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(IciError::load(
                format!("offset {off}"),
                "NaN or infinite value",
            ));
        }
        values.push(v as f64);
    }
    let features = DMatrix::from_row_slice(n, dim, &values);
    FeatureStore::new(features, labels, class_count, format!("icif:{meta}"))
}

/// Serialize to ICIF. Features are narrowed to `f32`.
pub fn write_icif<W: Write>(store: &FeatureStore, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e: std::io::Error| IciError::load("icif writer", e.to_string());
    let put = |v: u32, w: &mut BufWriter<W>| w.write_all(&v.to_le_bytes()).map_err(io);
    w.write_all(ICIF_MAGIC).map_err(io)?;
    put(ICIF_VERSION, &mut w)?;
    put(store.len() as u32, &mut w)?;
    put(store.dim() as u32, &mut w)?;
    put(store.class_count as u32, &mut w)?;
    for &l in &store.labels {
        put(l as u32, &mut w)?;
    }
    for i in 0..store.len() {
        for j in 0..store.dim() {
            w.write_all(&(store.features[(i, j)] as f32).to_le_bytes())
                .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn save_icif(store: &FeatureStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| IciError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_icif(store, file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeMode {
    /// The query set doubles as the unlabeled pool.
    Transductive,
    /// A separate unlabeled pool is drawn per class.
    SemiSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub unlabeled: usize,
    pub mode: EpisodeMode,
}

impl Default for EpisodeSpec {
    /// 5-way 1-shot, 15 queries per class, transductive.
    fn default() -> Self {
        EpisodeSpec::transductive(5, 1, 15)
    }
}

impl EpisodeSpec {
    pub fn transductive(ways: usize, shots: usize, queries: usize) -> Self {
        EpisodeSpec {
            ways,
            shots,
            queries,
            unlabeled: queries,
            mode: EpisodeMode::Transductive,
        }
    }

    pub fn semi_supervised(ways: usize, shots: usize, queries: usize, unlabeled: usize) -> Self {
        EpisodeSpec {
            ways,
            shots,
            queries,
            unlabeled,
            mode: EpisodeMode::SemiSupervised,
        }
    }

    /// Unlabeled instances drawn per class.
    pub fn unlabeled_per_class(&self) -> usize {
        match self.mode {
            EpisodeMode::Transductive => self.queries,
            EpisodeMode::SemiSupervised => self.unlabeled,
        }
    }

    /// Instances each sampled class must hold.
    pub fn per_class_demand(&self) -> usize {
        match self.mode {
            EpisodeMode::Transductive => self.shots + self.queries,
            EpisodeMode::SemiSupervised => self.shots + self.queries + self.unlabeled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(IciError::param("ways must be >= 2"));
        }
        if self.shots < 1 {
            return Err(IciError::param("shots must be >= 1"));
        }
        Ok(())
    }
}

/// One c-way s-shot task. Episode-local labels run over `0..ways`.
///
/// The true labels of the unlabeled pool are kept for diagnostics only and
/// are reachable solely through [`Episode::unlabeled_truth`].
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub spec: EpisodeSpec,
    pub seed: u64,
    /// Store class id of each episode class.
    pub classes: Vec<usize>,
    pub support_x: DMatrix<f64>,
    pub support_y: Vec<usize>,
    pub query_x: DMatrix<f64>,
    pub query_y: Vec<usize>,
    pub unlabeled_x: DMatrix<f64>,
    unlabeled_truth: Vec<usize>,
    pub support_idx: Vec<usize>,
    pub query_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
}

impl Episode {
    /// Assemble an episode from parts. In transductive mode the unlabeled
    /// pool is forced to equal the query set.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        spec: EpisodeSpec,
        seed: u64,
        support_x: DMatrix<f64>,
        support_y: Vec<usize>,
        query_x: DMatrix<f64>,
        query_y: Vec<usize>,
        unlabeled_x: DMatrix<f64>,
        unlabeled_truth: Vec<usize>,
    ) -> Result<Self> {
        if support_x.nrows() != support_y.len() || query_x.nrows() != query_y.len() {
            return Err(IciError::Dimension("rows and labels disagree".into()));
        }
        if unlabeled_x.nrows() != unlabeled_truth.len() {
            return Err(IciError::Dimension("unlabeled rows and truth disagree".into()));
        }
        let (unlabeled_x, unlabeled_truth) = match spec.mode {
            EpisodeMode::Transductive => (query_x.clone(), query_y.clone()),
            EpisodeMode::SemiSupervised => (unlabeled_x, unlabeled_truth),
        };
        Ok(Episode {
            spec,
            seed,
            classes: (0..spec.ways).collect(),
            support_idx: (0..support_y.len()).collect(),
            query_idx: Vec::new(),
            unlabeled_idx: Vec::new(),
            support_x,
            support_y,
            query_x,
            query_y,
            unlabeled_x,
            unlabeled_truth,
        })
    }

    pub fn ways(&self) -> usize {
        self.spec.ways
    }

    pub fn unlabeled_truth(&self) -> &[usize] {
        &self.unlabeled_truth
    }

    pub fn without_unlabeled(&self) -> Episode {
        let mut ep = self.clone();
        ep.spec.mode = EpisodeMode::SemiSupervised;
        ep.spec.unlabeled = 0;
        ep.unlabeled_x = DMatrix::zeros(0, self.support_x.ncols());
        ep.unlabeled_truth.clear();
        ep.unlabeled_idx.clear();
        ep
    }
}

/// Per-episode seed derived from the run's master seed.
pub fn episode_seed(master: u64, index: u64) -> u64 {
    master ^ index
}

pub fn sample_episode(store: &FeatureStore, spec: &EpisodeSpec, seed: u64) -> Result<Episode> {
    spec.validate()?;
    if spec.ways > store.class_count {
        return Err(IciError::Sampling(format!(
            "{} ways requested but the store has {} classes",
            spec.ways, store.class_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = store.class_members();
    let mut class_ids: Vec<usize> = (0..store.class_count).collect();
    class_ids.shuffle(&mut rng);
    class_ids.truncate(spec.ways);

    let demand = spec.per_class_demand();
    let too_small: Vec<String> = class_ids
        .iter()
        .filter(|&&c| members[c].len() < demand)
        .map(|&c| format!("class {} has {} < {}", c, members[c].len(), demand))
        .collect();
    if !too_small.is_empty() {
        return Err(IciError::Sampling(too_small.join("; ")));
    }

    let mut support_idx = Vec::new();
    let mut support_y = Vec::new();
    let mut query_idx = Vec::new();
    let mut query_y = Vec::new();
    let mut unl_idx = Vec::new();
    let mut unl_y = Vec::new();
    for (local, &class) in class_ids.iter().enumerate() {
        let mut pool = members[class].clone();
        pool.shuffle(&mut rng);
        let mut it = pool.into_iter();
        for _ in 0..spec.shots {
            support_idx.push(it.next().unwrap());
            support_y.push(local);
        }
        for _ in 0..spec.queries {
            query_idx.push(it.next().unwrap());
            query_y.push(local);
        }
        if spec.mode == EpisodeMode::SemiSupervised {
            for _ in 0..spec.unlabeled {
                unl_idx.push(it.next().unwrap());
                unl_y.push(local);
            }
        }
    }
    if spec.mode == EpisodeMode::Transductive {
        unl_idx = query_idx.clone();
        unl_y = query_y.clone();
    }

    Ok(Episode {
        spec: *spec,
        seed,
        classes: class_ids,
        support_x: store.rows(&support_idx),
        support_y,
        query_x: store.rows(&query_idx),
        query_y,
        unlabeled_x: store.rows(&unl_idx),
        unlabeled_truth: unl_y,
        support_idx,
        query_idx,
        unlabeled_idx: unl_idx,
    })
}

/// Parameters of the spherical-Gaussian synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            classes: 20,
            per_class: 60,
            dim: 32,
            separation: 3.0,
            noise_sigma: 1.0,
            seed: 7,
        }
    }
}

const MEAN_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Spherical Gaussian classes whose means sit on a sphere of radius
/// `separation`, pairwise at least `separation` apart. Values are rounded to
/// `f32` precision so stores survive an ICIF round trip unchanged.
pub fn synth_gaussian(p: &SynthParams) -> Result<FeatureStore> {
    if p.classes < 2 {
        return Err(IciError::param("synthetic data needs at least 2 classes"));
    }
    if p.per_class < 1 || p.dim < 1 {
        return Err(IciError::param("per_class and dim must be >= 1"));
    }
    if !(p.separation >= 0.0) || !(p.noise_sigma >= 0.0) {
        return Err(IciError::param("separation and noise_sigma must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(p.classes);
    let mut attempts = 0;
    while means.len() < p.classes {
        attempts += 1;
        if attempts > MEAN_PLACEMENT_ATTEMPTS * p.classes {
            return Err(IciError::param(format!(
                "could not place {} means {} apart in {} dimensions",
                p.classes, p.separation, p.dim
            )));
        }
        let candidate = random_on_sphere(&mut rng, p.dim, p.separation);
        let ok = means.iter().all(|m| {
            let d2: f64 = m.iter().zip(&candidate).map(|(a, b)| (a - b).powi(2)).sum();
            d2.sqrt() >= p.separation * (1.0 - 1e-12)
        });
        if ok {
            means.push(candidate);
        }
    }
    let n = p.classes * p.per_class;
    let mut features = DMatrix::zeros(n, p.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for k in 0..p.per_class {
            let row = c * p.per_class + k;
            for j in 0..p.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[(row, j)] = ((mean[j] + p.noise_sigma * z) as f32) as f64;
            }
            labels.push(c);
        }
    }
    FeatureStore::new(
        features,
        labels,
        p.classes,
        format!(
            "synthetic-gaussian classes={} per_class={} dim={} separation={} noise_sigma={} seed={}",
            p.classes, p.per_class, p.dim, p.separation, p.noise_sigma, p.seed
        ),
    )
}

fn random_on_sphere<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

/// One-hot label rows, n x c.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(DMatrix<f64>);

impl LabelMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

pub fn one_hot(labels: &[usize], c: usize) -> Result<LabelMatrix> {
    let mut m = DMatrix::zeros(labels.len(), c);
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(IciError::LabelRange {
                label: l,
                class_count: c,
            });
        }
        m[(i, l)] = 1.0;
    }
    Ok(LabelMatrix(m))
}

/// Scale every nonzero row to unit Euclidean norm.
pub fn l2_normalize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}
