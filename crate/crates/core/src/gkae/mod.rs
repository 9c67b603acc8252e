//! Graph Koopman autoencoder: a GraphSAGE graph autoencoder feeding a
//! Koopman autoencoder whose latent dynamics are a single linear map.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use loss::{loss_grec, loss_grec_grad, loss_koopman_grad, loss_pred, loss_rec, sequence_embeddings};
pub use model::{
    GkaeDims, GkaeModel, GraphAutoencoder, GraphEmbedding, KoopmanAutoencoder, LatentState, TrainingMeta, EMBED_DIM,
    KOOPMAN_HIDDEN, LATENT_DIM,
};
pub use train::{train, EpochLoss, LossHistory, Phase, TrainConfig};

/// Random normalized sequences for tests in this crate.
#[cfg(test)]
pub(crate) mod fixtures {
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use crate::geom::Vec3;
    use crate::graph::{build_snapshot, GraphSequence, NormalizationSpec};

    /// `t_len` frames of `l` UAVs inside a `side`-metre box, normalized by `side`.
    pub fn random_sequence(rng: &mut ChaCha8Rng, l: usize, t_len: usize, side: f64) -> GraphSequence {
        let norm = NormalizationSpec::for_area(side).unwrap();
        let snaps = (0..t_len)
            .map(|k| {
                let pos: Vec<Vec3> = (0..l)
                    .map(|_| {
                        Vec3::new(
                            rng.random_range(0.0..side),
                            rng.random_range(0.0..side),
                            rng.random_range(0.0..side),
                        )
                    })
                    .collect();
                build_snapshot(&pos, 100.0, k as f64 * 0.1).unwrap()
            })
            .collect();
        GraphSequence::new(snaps, 0.1, NormalizationSpec::default())
            .unwrap()
            .normalize(norm)
            .unwrap()
    }
}
