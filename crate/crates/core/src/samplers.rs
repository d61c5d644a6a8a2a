//! Samplers for Poisson, determinantal and superposed processes, and the
//! exhaustive L-ensemble distribution used to validate them.
//!
//! Every sampler is a pure function of the model and an [`RngState`]. Batches
//! are cut into fixed-size chunks; chunk `c` and component `l` draw from the
//! substream `state.substream(c).substream(l)`, so a batch is reproducible
//! bit-for-bit regardless of how many worker threads run it.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::linalg;
use crate::model::{validate_kernel_for_sampling, IntensityMeasure, Kernel, PointConfiguration, ProcessModel};
use crate::{Error, Result, C64};

/// Samples per reproducibility chunk.
pub const CHUNK_SIZE: usize = 1024;
/// Largest space handled by [`brute_force_dpp_distribution`].
pub const BRUTE_FORCE_MAX_ATOMS: usize = 12;
/// Smallest admissible pivot during projection-DPP elimination.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// ChaCha8 keyed by `seed`, positioned on stream `stream`.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Child state for an independent sub-computation.
    pub fn substream(&self, index: u64) -> Self {
        Self { seed: splitmix64(self.seed ^ splitmix64(self.stream)), stream: index }
    }
}

/// Independent Poisson counts with means `ν({i})`.
pub fn sample_poisson<R: Rng + ?Sized>(nu: &IntensityMeasure, rng: &mut R) -> PointConfiguration {
    let counts = (0..nu.len())
        .map(|i| {
            let mean = nu.mass(i);
            if mean > 0.0 {
                // construction only fails for non-positive or non-finite means
                let d = Poisson::new(mean).expect("finite positive mean");
                d.sample(rng) as u32
            } else {
                0
            }
        })
        .collect();
    PointConfiguration { counts }
}

/// Spectral sampler for a Hermitian positive contraction kernel.
#[derive(Debug, Clone)]
pub struct DppSampler {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<C64>,
}

impl DppSampler {
    pub fn new(k: &Kernel) -> Result<Self> {
        let check = validate_kernel_for_sampling(k);
        if !check.valid {
            return Err(Error::InvalidKernel(check.violations.join("; ")));
        }
        let (_, eigenvectors) = linalg::hermitian_eigen(k.matrix());
        let eigenvalues = k.clamped_spectrum().expect("valid kernels carry a spectrum");
        Ok(Self { eigenvalues, eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Bernoulli selection of eigenvectors, then sequential sampling of the
    /// projection process they span.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PointConfiguration {
        let n = self.dim();
        let chosen: Vec<usize> = self
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l >= 1.0 || (l > 0.0 && rng.random::<f64>() < l))
            .map(|(j, _)| j)
            .collect();
        let mut counts = vec![0u32; n];
        let mut basis: Vec<Vec<C64>> = chosen
            .iter()
            .map(|&j| self.eigenvectors.column(j).iter().copied().collect())
            .collect();

        while !basis.is_empty() {
            let k = basis.len() as f64;
            let weights: Vec<f64> =
                (0..n).map(|i| basis.iter().map(|v| v[i].norm_sqr()).sum::<f64>() / k).collect();
            let i = pick_index(&weights, rng);
            counts[i] = 1;

            let (pivot, pivot_mod) = basis
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v[i].norm()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty basis");
            if pivot_mod < PIVOT_TOLERANCE {
                // the selected atom is numerically outside the span; nothing left to eliminate
                break;
            }
            let pv = basis.swap_remove(pivot);
            for v in basis.iter_mut() {
                let f = v[i] / pv[i];
                for (x, p) in v.iter_mut().zip(&pv) {
                    *x -= f * p;
                }
                v[i] = C64::new(0.0, 0.0);
            }
            gram_schmidt(&mut basis);
        }
        PointConfiguration { counts }
    }
}

fn pick_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

/// Modified Gram–Schmidt with one reorthogonalisation pass; vectors that
/// collapse below the pivot tolerance are dropped.
fn gram_schmidt(basis: &mut Vec<Vec<C64>>) {
    let mut out: Vec<Vec<C64>> = Vec::with_capacity(basis.len());
    for mut v in basis.drain(..) {
        for _ in 0..2 {
            for q in &out {
                let dot: C64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (x, qq) in v.iter_mut().zip(q) {
                    *x -= dot * qq;
                }
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm > PIVOT_TOLERANCE {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    *basis = out;
}

/// One draw from a determinantal process.
pub fn sample_dpp<R: Rng + ?Sized>(k: &Kernel, rng: &mut R) -> Result<PointConfiguration> {
    Ok(DppSampler::new(k)?.sample(rng))
}

enum LeafSampler {
    Poisson(IntensityMeasure),
    Dpp(DppSampler),
}

impl LeafSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PointConfiguration {
        match self {
            LeafSampler::Poisson(nu) => sample_poisson(nu, rng),
            LeafSampler::Dpp(s) => s.sample(rng),
        }
    }
}

fn leaf_samplers(model: &ProcessModel) -> Result<Vec<LeafSampler>> {
    model.validate()?;
    model
        .leaves()
        .into_iter()
        .map(|leaf| match leaf {
            ProcessModel::Poisson(nu) => Ok(LeafSampler::Poisson(nu.clone())),
            ProcessModel::Determinantal(k) => Ok(LeafSampler::Dpp(DppSampler::new(k)?)),
            ProcessModel::Superposition(_) => unreachable!("leaves are never superpositions"),
        })
        .collect()
}

/// One draw from the independent superposition of all components of `model`;
/// component `l` uses `state.substream(l)`.
pub fn sample_superposition(model: &ProcessModel, state: &RngState) -> Result<PointConfiguration> {
    let leaves = leaf_samplers(model)?;
    let mut total = PointConfiguration::empty(model.dim());
    for (l, s) in leaves.iter().enumerate() {
        let mut rng = state.substream(l as u64).rng();
        total.add_assign(&s.sample(&mut rng));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    configs: Vec<PointConfiguration>,
    dim: usize,
    pub model_digest: String,
    pub rng: Option<RngState>,
}

impl SampleBatch {
    pub fn new(configs: Vec<PointConfiguration>, dim: usize, model_digest: String, rng: Option<RngState>) -> Result<Self> {
        if let Some(c) = configs.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: c.len() });
        }
        Ok(Self { configs, dim, model_digest, rng })
    }

    pub fn configs(&self) -> &[PointConfiguration] {
        &self.configs
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Distinct configurations with their multiplicities, in lexicographic order.
    pub fn distinct(&self) -> Vec<(PointConfiguration, u64)> {
        let mut map: BTreeMap<&PointConfiguration, u64> = BTreeMap::new();
        for c in &self.configs {
            *map.entry(c).or_default() += 1;
        }
        map.into_iter().map(|(c, m)| (c.clone(), m)).collect()
    }

    /// Empirical frequency of each subset (bitmask-indexed) for simple
    /// configurations; `None` if some atom carries two or more points.
    pub fn subset_frequencies(&self) -> Option<Vec<f64>> {
        if self.dim > BRUTE_FORCE_MAX_ATOMS || self.configs.is_empty() {
            return None;
        }
        let mut freq = vec![0.0; 1 << self.dim];
        for c in &self.configs {
            if !c.is_simple() {
                return None;
            }
            let mask = c.counts.iter().enumerate().fold(0usize, |m, (i, &v)| m | ((v as usize) << i));
            freq[mask] += 1.0;
        }
        let m = self.configs.len() as f64;
        freq.iter_mut().for_each(|f| *f /= m);
        Some(freq)
    }

    /// Writes the batch as CSV: one header row of labels, one row of counts per sample.
    pub fn write_csv<W: Write>(&self, labels: &[String], out: W) -> Result<()> {
        if labels.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: labels.len() });
        }
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(labels).map_err(io)?;
        for c in &self.configs {
            w.write_record(c.counts.iter().map(|v| v.to_string())).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv write failed: {e}")))?;
        Ok(())
    }

    /// Reads a batch written by [`SampleBatch::write_csv`]; returns the header labels too.
    pub fn read_csv<R: Read>(input: R) -> Result<(Vec<String>, Self)> {
        let mut rdr = csv::Reader::from_reader(input);
        let labels: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Config(format!("sample csv header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut configs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("sample csv: {e}")))?;
            let counts = rec
                .iter()
                .enumerate()
                .map(|(col, f)| {
                    f.trim().parse::<u32>().map_err(|_| {
                        Error::Config(format!("sample csv line {}, column {}: {f:?} is not a count", line + 2, col + 1))
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            configs.push(PointConfiguration { counts });
        }
        let n = labels.len();
        let batch = Self::new(configs, n, "external".into(), None)?;
        Ok((labels, batch))
    }
}

/// `m` independent draws of `model`.
pub fn sample_batch(model: &ProcessModel, m: usize, state: &RngState) -> Result<SampleBatch> {
    let leaves = leaf_samplers(model)?;
    let n = model.dim();
    let chunks = m.div_ceil(CHUNK_SIZE);
    let configs: Vec<PointConfiguration> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let len = CHUNK_SIZE.min(m - c * CHUNK_SIZE);
            let chunk_state = state.substream(c as u64);
            let mut out = vec![PointConfiguration::empty(n); len];
            for (l, s) in leaves.iter().enumerate() {
                let mut rng = chunk_state.substream(l as u64).rng();
                for cfg in out.iter_mut() {
                    cfg.add_assign(&s.sample(&mut rng));
                }
            }
            out
        })
        .collect();
    SampleBatch::new(configs, n, model.digest(), Some(*state))
}

/// Exact law of a determinantal process as an L-ensemble, indexed by subset
/// bitmask (bit `i` set ⇔ atom `i` present).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetDistribution {
    pub n: usize,
    pub probs: Vec<f64>,
}

impl SubsetDistribution {
    pub fn prob(&self, subset: &[usize]) -> f64 {
        self.probs[subset.iter().fold(0usize, |m, &i| m | (1 << i))]
    }

    /// `P(no point in B)`, with `B` given as a bitmask.
    pub fn avoidance(&self, window: usize) -> f64 {
        self.probs.iter().enumerate().filter(|(s, _)| s & window == 0).map(|(_, p)| p).sum()
    }
}

/// Subset probabilities `det(L_S) / det(I + L)` with `L = K (I − K)^{-1}`.
pub fn brute_force_dpp_distribution(k: &Kernel) -> Result<SubsetDistribution> {
    let n = k.dim();
    if n > BRUTE_FORCE_MAX_ATOMS {
        return Err(Error::TooLarge { what: "brute-force DPP distribution", max: BRUTE_FORCE_MAX_ATOMS, n });
    }
    let check = validate_kernel_for_sampling(k);
    if !check.valid {
        return Err(Error::InvalidKernel(check.violations.join("; ")));
    }
    let top = k.spectrum().and_then(|s| s.last().copied()).unwrap_or(0.0);
    if top >= 1.0 - 1e-12 {
        return Err(Error::SingularIminusK);
    }
    let id = DMatrix::<C64>::identity(n, n);
    let l = (&id - k.matrix())
        .lu()
        .solve(k.matrix())
        .ok_or(Error::SingularIminusK)?;
    // (I - K)^{-1} K = K (I - K)^{-1}; symmetrise against rounding
    let l = DMatrix::from_fn(n, n, |i, j| (l[(i, j)] + l[(j, i)].conj()) * 0.5);
    let norm = linalg::determinant(&(&id + &l)).re;
    let probs = (0..1usize << n)
        .map(|mask| {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            linalg::determinant(&linalg::principal_block(&l, &idx)).re / norm
        })
        .collect();
    Ok(SubsetDistribution { n, probs })
}
