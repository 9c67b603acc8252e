use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{Adjacency, GraphSnapshot, NormalizationSpec, DEFAULT_D_TILDE};
use crate::nn::{glorot_bound, Activation, Mlp, MlpTrace, Parameters, SageLayer, SageTrace, Tensor};

/// Per-node embedding width produced by the graph encoder.
pub const EMBED_DIM: usize = 4;
/// Width of the hidden layers of the Koopman encoder/decoder.
pub const KOOPMAN_HIDDEN: usize = 16;
/// Dimension of the Koopman-invariant latent space.
pub const LATENT_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GkaeDims {
    #[serde(rename = "L")]
    pub num_uavs: usize,
    /// Coordinates reconstructed by the graph decoder (2 or 3).
    pub d_out: usize,
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
    /// Neighbourhood threshold (m) used to rebuild decoded adjacency.
    #[serde(rename = "D_tilde")]
    pub d_tilde: f64,
}

impl GkaeDims {
    pub fn new(num_uavs: usize, d_out: usize) -> Result<Self> {
        let dims = GkaeDims {
            num_uavs,
            d_out,
            embed: EMBED_DIM,
            hidden: KOOPMAN_HIDDEN,
            latent: LATENT_DIM,
            d_tilde: DEFAULT_D_TILDE,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn with_threshold(mut self, d_tilde: f64) -> Self {
        self.d_tilde = d_tilde;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_uavs == 0 {
            return Err(Error::Config("model needs at least one UAV".into()));
        }
        if !(self.d_out == 2 || self.d_out == 3) {
            return Err(Error::Config(format!("d_out must be 2 or 3, got {}", self.d_out)));
        }
        if self.embed == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Length of the stacked graph embedding, `embed * L`.
    pub fn embedding_len(&self) -> usize {
        self.embed * self.num_uavs
    }
}

/// Graph encoder (two SAGE layers) and the per-node graph decoder head.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAutoencoder {
    pub encoder: Vec<SageLayer>,
    pub decoder: Mlp,
}

impl Parameters for GraphAutoencoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.encoder {
            l.visit(f);
        }
        self.decoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.encoder {
            l.visit_mut(f);
        }
        self.decoder.visit_mut(f);
    }
}

/// Koopman encoder, bias-free Koopman matrix and Koopman decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanAutoencoder {
    pub encoder: Mlp,
    pub koopman: Tensor,
    pub decoder: Mlp,
}

impl Parameters for KoopmanAutoencoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.visit(f);
        f(self.koopman.data());
        self.decoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        f(self.koopman.data_mut());
        self.decoder.visit_mut(f);
    }
}

impl KoopmanAutoencoder {
    /// `z <- K z`, once.
    #[inline]
    pub(crate) fn advance_into(&self, z: &[f64], out: &mut [f64]) {
        self.koopman.matvec_into(z, out);
    }
}

/// Final training losses and bookkeeping stored with a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub seed: u64,
    #[serde(default)]
    pub final_l_grec: Option<f64>,
    #[serde(default)]
    pub final_l_rec: Option<f64>,
    #[serde(default)]
    pub final_l_pred: Option<f64>,
}

/// Stacked per-node embeddings in node-index order (length `embed * L`).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding(pub Vec<f64>);

/// Koopman-invariant latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState(pub Vec<f64>);

/// The graph Koopman autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GkaeModel {
    pub dims: GkaeDims,
    pub norm: NormalizationSpec,
    pub graph: GraphAutoencoder,
    pub koopman: KoopmanAutoencoder,
    pub meta: TrainingMeta,
}

impl Parameters for GkaeModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.graph.visit(f);
        self.koopman.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.graph.visit_mut(f);
        self.koopman.visit_mut(f);
    }
}

impl GkaeModel {
    /// Randomly initialised model (Glorot weights, zero biases).
    pub fn new(dims: GkaeDims, norm: NormalizationSpec, seed: u64) -> Result<Self> {
        dims.validate()?;
        norm.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = dims.embed;
        let graph = GraphAutoencoder {
            encoder: vec![
                SageLayer::init(3, e, Activation::Elu, &mut rng),
                SageLayer::init(e, e, Activation::Elu, &mut rng),
            ],
            decoder: Mlp::init(&[e, e, e, e, dims.d_out], Activation::Elu, Activation::Identity, &mut rng),
        };
        let n = dims.embedding_len();
        let (h, z) = (dims.hidden, dims.latent);
        let encoder = Mlp::init(&[n, h, h, z], Activation::Tanh, Activation::Tanh, &mut rng);
        let mut koopman = Tensor::zeros(&[z, z]);
        let bound = glorot_bound(z, z);
        {
            use rand::Rng;
            for v in koopman.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        let decoder = Mlp::init(&[z, h, h, n], Activation::Tanh, Activation::Identity, &mut rng);
        Ok(GkaeModel {
            dims,
            norm,
            graph,
            koopman: KoopmanAutoencoder {
                encoder,
                koopman,
                decoder,
            },
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        })
    }

    /// Every parameter set to zero; handy for structural tests.
    pub fn zeroed(dims: GkaeDims, norm: NormalizationSpec) -> Result<Self> {
        let mut m = Self::new(dims, norm, 0)?;
        m.fill(0.0);
        Ok(m)
    }

    /// Checks layer-chain shapes against `dims`.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.norm.validate()?;
        let d = &self.dims;
        let n = d.embedding_len();
        let sage = &self.graph.encoder;
        let sage_ok = sage.len() == 2
            && sage[0].input_dim() == 3
            && sage[0].output_dim() == d.embed
            && sage[1].input_dim() == d.embed
            && sage[1].output_dim() == d.embed;
        let gd = &self.graph.decoder;
        let kae = &self.koopman;
        let chain_ok = gd.input_dim() == d.embed
            && gd.output_dim() == d.d_out
            && kae.encoder.input_dim() == n
            && kae.encoder.output_dim() == d.latent
            && kae.koopman.shape() == [d.latent, d.latent]
            && kae.decoder.input_dim() == d.latent
            && kae.decoder.output_dim() == n;
        if !(sage_ok && chain_ok) {
            return Err(Error::shape(
                format!("layer chain for L={}, d_out={}", d.num_uavs, d.d_out),
                "incompatible layer sizes",
            ));
        }
        for s in sage {
            s.validate()?;
        }
        gd.validate()?;
        kae.encoder.validate()?;
        kae.decoder.validate()?;
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::State("model contains non-finite parameters".into()))
        }
    }

    fn check_snapshot(&self, snapshot: &GraphSnapshot) -> Result<()> {
        if snapshot.num_nodes() != self.dims.num_uavs {
            return Err(Error::shape(
                format!("{} UAVs", self.dims.num_uavs),
                format!("{} UAVs", snapshot.num_nodes()),
            ));
        }
        if !snapshot.normalized {
            return Err(Error::State("graph encoder expects normalized features".into()));
        }
        Ok(())
    }

    /// Two SAGE layers; node outputs stacked in node order.
    pub fn graph_encode(&self, snapshot: &GraphSnapshot) -> Result<GraphEmbedding> {
        self.check_snapshot(snapshot)?;
        Ok(GraphEmbedding(self.encode_raw(&flat_features(&snapshot.features), &snapshot.adjacency)))
    }

    pub(crate) fn encode_raw(&self, x: &[f64], adj: &Adjacency) -> Vec<f64> {
        let mut t1 = SageTrace::default();
        let mut t2 = SageTrace::default();
        self.graph.encoder[0].forward_traced(x, adj, &mut t1);
        self.graph.encoder[1].forward_traced(&t1.out, adj, &mut t2);
        t2.out
    }

    pub fn koopman_encode(&self, h: &GraphEmbedding) -> Result<LatentState> {
        self.check_embedding(&h.0)?;
        Ok(LatentState(self.koopman.encoder.forward(&h.0)?))
    }

    /// `K^steps z` by repeated multiplication.
    pub fn latent_advance(&self, z: &LatentState, steps: usize) -> Result<LatentState> {
        if z.0.len() != self.dims.latent {
            return Err(Error::shape(self.dims.latent, z.0.len()));
        }
        let mut cur = z.0.clone();
        let mut next = vec![0.0; cur.len()];
        for _ in 0..steps {
            self.koopman.advance_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(LatentState(cur))
    }

    pub fn koopman_decode(&self, z: &LatentState) -> Result<GraphEmbedding> {
        if z.0.len() != self.dims.latent {
            return Err(Error::shape(self.dims.latent, z.0.len()));
        }
        Ok(GraphEmbedding(self.koopman.decoder.forward(&z.0)?))
    }

    /// Per-node decoder head; returns `L x d_out` normalized coordinates.
    pub fn graph_decode(&self, h: &GraphEmbedding) -> Result<Tensor> {
        self.check_embedding(&h.0)?;
        let rows = self.decode_raw(&h.0);
        Tensor::from_vec(&[self.dims.num_uavs, self.dims.d_out], rows)
    }

    pub(crate) fn decode_raw(&self, h: &[f64]) -> Vec<f64> {
        let e = self.dims.embed;
        let mut trace = MlpTrace::default();
        let mut out = Vec::with_capacity(self.dims.num_uavs * self.dims.d_out);
        for block in h.chunks_exact(e) {
            self.graph.decoder.forward_traced(block, &mut trace);
            out.extend_from_slice(trace.output());
        }
        out
    }

    /// Decodes an embedding into a snapshot whose adjacency is rebuilt from
    /// the denormalized positions. Missing coordinates (`d_out = 2`) are
    /// filled from `fill_z` (normalized units).
    pub fn decode_snapshot(&self, h: &GraphEmbedding, t: f64, fill_z: f64) -> Result<GraphSnapshot> {
        let coords = self.graph_decode(h)?;
        let features: Vec<Vec3> = coords
            .data()
            .chunks_exact(self.dims.d_out)
            .map(|c| Vec3::new(c[0], c[1], if c.len() > 2 { c[2] } else { fill_z }))
            .collect();
        let metres: Vec<Vec3> = features.iter().map(|&p| self.norm.invert(p)).collect();
        Ok(GraphSnapshot {
            adjacency: Adjacency::from_positions(&metres, self.dims.d_tilde),
            features,
            threshold: self.dims.d_tilde,
            timestamp: t,
            normalized: true,
        })
    }

    fn check_embedding(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dims.embedding_len() {
            return Err(Error::shape(self.dims.embedding_len(), h.len()));
        }
        Ok(())
    }

    /// Normalizes metre positions and builds the model's input snapshot.
    pub fn snapshot_from_positions(&self, positions: &[Vec3], t: f64) -> Result<GraphSnapshot> {
        let mut s = crate::graph::build_snapshot(positions, self.dims.d_tilde, t)?;
        s.features = s.features.iter().map(|&p| self.norm.apply(p)).collect();
        s.normalized = true;
        Ok(s)
    }

    /// Encodes `snapshot` once, advances the latent state one step at a time
    /// and decodes every step. Returns `horizon` frames of positions in
    /// metres (steps `1..=horizon`).
    pub fn rollout_predict(&self, snapshot: &GraphSnapshot, horizon: usize) -> Result<Vec<Vec<Vec3>>> {
        self.check_finite()?;
        if horizon == 0 {
            return Err(Error::Input("rollout horizon must be at least one step".into()));
        }
        let snapshot = if snapshot.normalized {
            snapshot.clone()
        } else {
            let mut s = snapshot.clone();
            s.features = s.features.iter().map(|&p| self.norm.apply(p)).collect();
            s.normalized = true;
            s
        };
        self.check_snapshot(&snapshot)?;
        let h0 = self.encode_raw(&flat_features(&snapshot.features), &snapshot.adjacency);
        let mut z = self.koopman.encoder.forward(&h0)?;
        let mut next = vec![0.0; z.len()];
        let mut frames = Vec::with_capacity(horizon);
        let mut trace = MlpTrace::default();
        for _ in 0..horizon {
            self.koopman.advance_into(&z, &mut next);
            std::mem::swap(&mut z, &mut next);
            self.koopman.decoder.forward_traced(&z, &mut trace);
            let coords = self.decode_raw(trace.output());
            let frame = coords
                .chunks_exact(self.dims.d_out)
                .zip(&snapshot.features)
                .map(|(c, init)| {
                    let zc = if c.len() > 2 { c[2] } else { init.z() };
                    self.norm.invert(Vec3::new(c[0], c[1], zc))
                })
                .collect();
            frames.push(frame);
        }
        Ok(frames)
    }

    /// Largest absolute eigenvalue of `K`, estimated by power iteration on
    /// `K^T K` (an upper bound on the spectral radius).
    pub fn koopman_norm_bound(&self) -> f64 {
        let k = &self.koopman.koopman;
        let n = k.rows();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut kv = vec![0.0; n];
        let mut sigma = 0.0;
        for _ in 0..200 {
            k.matvec_into(&v, &mut kv);
            let mut ktkv = vec![0.0; n];
            k.matvec_t_acc(&kv, &mut ktkv);
            let norm = ktkv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            sigma = norm.sqrt();
            v = ktkv.into_iter().map(|x| x / norm).collect();
        }
        sigma
    }
}

pub(crate) fn flat_features(features: &[Vec3]) -> Vec<f64> {
    features.iter().flat_map(|p| p.0).collect()
}
