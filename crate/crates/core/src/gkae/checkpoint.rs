use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{GkaeDims, GkaeModel, GraphAutoencoder, KoopmanAutoencoder, TrainingMeta};
use crate::error::{Error, Result};
use crate::graph::NormalizationSpec;
use crate::nn::{Activation, DenseLayer, Mlp, SageLayer, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDense {
    activation: Activation,
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSage {
    activation: Activation,
    w_self: Vec<Vec<f64>>,
    w_neigh: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireParams {
    graph_encoder: Vec<WireSage>,
    koopman_encoder: Vec<WireDense>,
    #[serde(rename = "K")]
    koopman: Vec<Vec<f64>>,
    koopman_decoder: Vec<WireDense>,
    graph_decoder: Vec<WireDense>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireCheckpoint {
    version: u32,
    dims: GkaeDims,
    norm: NormalizationSpec,
    params: WireParams,
    meta: TrainingMeta,
}

fn rows_to_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::Parse("empty weight matrix".into()));
    }
    Tensor::from_rows(rows)
}

fn vec_to_tensor(v: &[f64]) -> Result<Tensor> {
    Tensor::from_vec(&[v.len()], v.to_vec())
}

impl WireDense {
    fn from_layer(l: &DenseLayer) -> Self {
        WireDense {
            activation: l.activation,
            weight: l.weight.to_rows(),
            bias: l.bias.data().to_vec(),
        }
    }

    fn into_layer(self) -> Result<DenseLayer> {
        Ok(DenseLayer {
            activation: self.activation,
            weight: rows_to_tensor(&self.weight)?,
            bias: vec_to_tensor(&self.bias)?,
        })
    }
}

impl WireSage {
    fn from_layer(l: &SageLayer) -> Self {
        WireSage {
            activation: l.activation,
            w_self: l.w_self.to_rows(),
            w_neigh: l.w_neigh.to_rows(),
            bias: l.bias.data().to_vec(),
        }
    }

    fn into_layer(self) -> Result<SageLayer> {
        Ok(SageLayer {
            activation: self.activation,
            w_self: rows_to_tensor(&self.w_self)?,
            w_neigh: rows_to_tensor(&self.w_neigh)?,
            bias: vec_to_tensor(&self.bias)?,
        })
    }
}

fn mlp_to_wire(m: &Mlp) -> Vec<WireDense> {
    m.layers.iter().map(WireDense::from_layer).collect()
}

fn wire_to_mlp(w: Vec<WireDense>) -> Result<Mlp> {
    Ok(Mlp {
        layers: w.into_iter().map(WireDense::into_layer).collect::<Result<_>>()?,
    })
}

impl GkaeModel {
    /// JSON checkpoint; floats use shortest round-trip formatting, so a
    /// reload is bit-exact.
    pub fn write_checkpoint<W: Write>(&self, writer: W) -> Result<()> {
        let wire = WireCheckpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            norm: self.norm,
            params: WireParams {
                graph_encoder: self.graph.encoder.iter().map(WireSage::from_layer).collect(),
                koopman_encoder: mlp_to_wire(&self.koopman.encoder),
                koopman: self.koopman.koopman.to_rows(),
                koopman_decoder: mlp_to_wire(&self.koopman.decoder),
                graph_decoder: mlp_to_wire(&self.graph.decoder),
            },
            meta: self.meta.clone(),
        };
        let mut w = writer;
        serde_json::to_writer(&mut w, &wire)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<GkaeModel> {
        let value: serde_json::Value = serde_json::from_reader(reader)?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse("checkpoint has no numeric version field".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let wire: WireCheckpoint = serde_json::from_value(value)?;
        let p = wire.params;
        let model = GkaeModel {
            dims: wire.dims,
            norm: wire.norm,
            graph: GraphAutoencoder {
                encoder: p.graph_encoder.into_iter().map(WireSage::into_layer).collect::<Result<_>>()?,
                decoder: wire_to_mlp(p.graph_decoder)?,
            },
            koopman: KoopmanAutoencoder {
                encoder: wire_to_mlp(p.koopman_encoder)?,
                koopman: rows_to_tensor(&p.koopman)?,
                decoder: wire_to_mlp(p.koopman_decoder)?,
            },
            meta: wire.meta,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &GkaeModel, path: &Path) -> Result<()> {
    model.write_checkpoint(BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<GkaeModel> {
    GkaeModel::read_checkpoint(BufReader::new(File::open(path)?))
}
