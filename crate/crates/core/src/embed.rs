//! Patch feature extraction. The extractor contract is a patch in, a
//! compact vector F in R^N out, with exact gradients available for
//! training; the reference implementation is a small fully connected
//! network with explicit forward/backward in f64. Features computed by
//! external models can be swapped in through the feature-file
//! import/export instead.

use std::io::Read as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sampling::{standardize, Patch};
use crate::{Error, Result};

pub type FeatureVector = Vec<f64>;

const FEATURE_MAGIC: &[u8] = b"WIFV1\n";

/// Fully connected network: ReLU hidden layers, linear output.
/// Weights of layer l map dims[l] -> dims[l+1], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpExtractor {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    init_seed: u64,
    /// Bumped on every parameter mutation; forward caches remember the
    /// version they were computed against.
    version: u64,
}

/// Activations recorded by [`MlpExtractor::forward`] for the matching
/// backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// acts[0] is the input; acts[l+1] the post-activation of layer l.
    acts: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    zs: Vec<Vec<f64>>,
}

/// Parameter and input gradients from one backward pass, shaped like the
/// network's weights/biases.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpExtractor) -> Gradients {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; net.layer_dims[0]],
        }
    }

    /// Accumulate `other` scaled by `c` (parameters only).
    pub fn add_scaled(&mut self, other: &Gradients, c: f64) {
        for (mine, theirs) in self.weights.iter_mut().zip(&other.weights) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += c * t;
            }
        }
        for (mine, theirs) in self.biases.iter_mut().zip(&other.biases) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += c * t;
            }
        }
    }

    /// Parameters flattened in the network's canonical order (per layer:
    /// weights row-major, then biases).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Xavier-uniform initialization: weights ~ U(+-sqrt(6/(fan_in+fan_out))),
/// biases zero, deterministic per seed.
pub fn init_extractor(layer_dims: &[usize], seed: u64) -> Result<MlpExtractor> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidParam(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(
            (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        );
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpExtractor {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        init_seed: seed,
        version: 0,
    })
}

impl MlpExtractor {
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// All parameters in canonical flat order (per layer: weights
    /// row-major, then biases).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Replace all parameters (canonical flat order). Invalidates
    /// outstanding forward caches.
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidParam(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (wn, bn) = (w.len(), b.len());
            w.copy_from_slice(&params[offset..offset + wn]);
            offset += wn;
            b.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
        self.version += 1;
        Ok(())
    }

    /// Rebuild an extractor from its stored dims and flat parameters
    /// (checkpoint restore).
    pub fn from_parts(layer_dims: &[usize], params: &[f64], init_seed: u64) -> Result<MlpExtractor> {
        let mut net = init_extractor(layer_dims, init_seed)?;
        net.set_params_flat(params)?;
        Ok(net)
    }

    /// Affine + ReLU chain with a linear last layer. Returns the output
    /// and the activation cache for [`Self::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(FeatureVector, ForwardCache)> {
        if input.len() != self.layer_dims[0] {
            return Err(Error::InvalidParam(format!(
                "input length {} does not match input dim {}",
                input.len(),
                self.layer_dims[0]
            )));
        }
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        let mut zs = Vec::with_capacity(layers);
        acts.push(input.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &acts[l];
            let mut z = self.biases[l].clone();
            for (row, zi) in z.iter_mut().enumerate() {
                let w_row = &self.weights[l][row * n_in..(row + 1) * n_in];
                *zi += w_row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
            }
            let a = if l + 1 < layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            debug_assert_eq!(a.len(), n_out);
            zs.push(z);
            acts.push(a);
        }
        let out = acts.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                version: self.version,
                acts,
                zs,
            },
        ))
    }

    /// Exact reverse-mode gradients of the chain for a given gradient of
    /// the loss w.r.t. the output. The cache must come from a forward
    /// pass against the current parameters.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &[f64]) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::InvalidParam(format!(
                "stale activation cache (network version {}, cache version {})",
                self.version, cache.version
            )));
        }
        if output_gradient.len() != self.output_dim() {
            return Err(Error::InvalidParam(format!(
                "output gradient length {} does not match output dim {}",
                output_gradient.len(),
                self.output_dim()
            )));
        }
        let layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_gradient.to_vec();
        for l in (0..layers).rev() {
            let (n_in, _n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if l + 1 < layers {
                // ReLU derivative: pass gradient only through positive
                // pre-activations.
                for (d, z) in delta.iter_mut().zip(&cache.zs[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let prev = &cache.acts[l];
            for (row, d) in delta.iter().enumerate() {
                grads.biases[l][row] = *d;
                let w_row = &mut grads.weights[l][row * n_in..(row + 1) * n_in];
                for (g, a) in w_row.iter_mut().zip(prev) {
                    *g = d * a;
                }
            }
            // Propagate to the previous activation.
            let mut next_delta = vec![0.0; n_in];
            for (row, d) in delta.iter().enumerate() {
                let w_row = &self.weights[l][row * n_in..(row + 1) * n_in];
                for (nd, w) in next_delta.iter_mut().zip(w_row) {
                    *nd += d * w;
                }
            }
            delta = next_delta;
        }
        grads.input = delta;
        Ok(grads)
    }
}

/// Per-document patch embeddings: one f32 row of width N per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub doc_id: String,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(doc_id: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParam("embedding matrix must be non-empty".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidParam(format!(
                "embedding data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(EmbeddingMatrix {
            doc_id: doc_id.into(),
            rows,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Standardize and embed every patch; row i is the forward pass of patch
/// i, in input order.
pub fn embed_document(
    net: &MlpExtractor,
    doc_id: &str,
    patches: &[Patch],
) -> Result<EmbeddingMatrix> {
    if patches.is_empty() {
        return Err(Error::InvalidParam(format!(
            "cannot embed zero patches for {doc_id}"
        )));
    }
    let cols = net.output_dim();
    let mut data = Vec::with_capacity(patches.len() * cols);
    for patch in patches {
        let input = standardize(&patch.pixels);
        let (out, _) = net.forward(&input)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of {doc_id}")));
        }
        data.extend(out.iter().map(|v| *v as f32));
    }
    EmbeddingMatrix::new(doc_id, patches.len(), cols, data)
}

/// Write features as magic `WIFV1\n`, ASCII `rows cols\n`, then
/// row-major little-endian f32.
pub fn export_features(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(FEATURE_MAGIC.len() + 16 + m.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(format!("{} {}\n", m.rows, m.cols).as_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a feature file written by [`export_features`]; the document id is
/// the file stem.
pub fn import_features(path: &Path) -> Result<EmbeddingMatrix> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 6];
    file.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for magic"))?;
    if magic != FEATURE_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected {:?}", magic, FEATURE_MAGIC),
        ));
    }
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        file.read_exact(&mut byte)
            .map_err(|_| Error::format(path, "truncated header"))?;
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 64 {
            return Err(Error::format(path, "unterminated header"));
        }
    }
    let header = String::from_utf8(header).map_err(|_| Error::format(path, "non-ASCII header"))?;
    let mut parts = header.split_whitespace();
    let rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad header '{header}'")))?;
    let cols: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad header '{header}'")))?;
    if parts.next().is_some() {
        return Err(Error::format(path, format!("bad header '{header}'")));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} floats but header says {rows}x{cols} = {}",
                payload.len() / 4,
                rows * cols
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let doc_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingMatrix::new(doc_id, rows, cols, data)
}
