use rayon::prelude::*;

use super::model::{flat_features, GkaeModel, GraphAutoencoder, KoopmanAutoencoder};
use crate::error::{Error, Result};
use crate::graph::{GraphSequence, GraphSnapshot};
use crate::nn::{mse_acc_grad, MlpTrace, Parameters, SageTrace};

/// Items per parallel work unit. Fixed so the reduction order, and thus
/// every floating-point sum, is independent of the thread count.
const CHUNK: usize = 64;

#[derive(Default)]
struct GraphScratch {
    x: Vec<f64>,
    t1: SageTrace,
    t2: SageTrace,
    dec: MlpTrace,
    gy: Vec<f64>,
    grad_h: Vec<f64>,
    grad_h1: Vec<f64>,
}

/// Squared-error of one snapshot's reconstruction (mean over `L x d_out`);
/// adds `weight * gradient` into `grads` when given.
fn graph_item(
    gae: &GraphAutoencoder,
    d_out: usize,
    snap: &GraphSnapshot,
    weight: f64,
    grads: Option<&mut GraphAutoencoder>,
    s: &mut GraphScratch,
) -> f64 {
    let adj = &snap.adjacency;
    let l = adj.len();
    s.x.clear();
    s.x.extend(snap.features.iter().flat_map(|p| p.0));
    gae.encoder[0].forward_traced(&s.x, adj, &mut s.t1);
    gae.encoder[1].forward_traced(&s.t1.out, adj, &mut s.t2);
    let e = gae.encoder[1].output_dim();
    let n = (l * d_out) as f64;
    s.grad_h.clear();
    s.grad_h.resize(l * e, 0.0);
    s.gy.resize(d_out, 0.0);
    let mut total = 0.0;
    let mut grads = grads;
    for i in 0..l {
        gae.decoder.forward_traced(&s.t2.out[i * e..(i + 1) * e], &mut s.dec);
        let target = &s.x[i * 3..i * 3 + d_out];
        for ((g, y), t) in s.gy.iter_mut().zip(s.dec.output()).zip(target) {
            let d = y - t;
            total += d * d;
            *g = 2.0 * weight * d / n;
        }
        if let Some(g) = grads.as_deref_mut() {
            gae.decoder
                .backward_traced(&mut s.dec, &s.gy, &mut g.decoder, Some(&mut s.grad_h[i * e..(i + 1) * e]));
        }
    }
    if let Some(g) = grads {
        s.grad_h1.clear();
        s.grad_h1.resize(l * e, 0.0);
        let (g0, g1) = g.encoder.split_at_mut(1);
        gae.encoder[1].backward_traced(&s.t1.out, adj, &s.t2, &s.grad_h, &mut g1[0], Some(&mut s.grad_h1));
        gae.encoder[0].backward_traced(&s.x, adj, &s.t1, &s.grad_h1, &mut g0[0], None);
    }
    total / n
}

/// Sum of per-snapshot reconstruction errors, with `weight`-scaled gradients.
pub(crate) fn graph_batch(
    gae: &GraphAutoencoder,
    d_out: usize,
    snaps: &[&GraphSnapshot],
    weight: f64,
    with_grad: bool,
) -> (f64, Option<GraphAutoencoder>) {
    let parts: Vec<(f64, Option<GraphAutoencoder>)> = snaps
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = GraphScratch::default();
            let mut g = with_grad.then(|| gae.zeros_like());
            let loss = chunk
                .iter()
                .map(|snap| graph_item(gae, d_out, snap, weight, g.as_mut(), &mut s))
                .sum::<f64>();
            (loss, g)
        })
        .collect();
    reduce(parts)
}

fn reduce<P: Parameters>(parts: Vec<(f64, Option<P>)>) -> (f64, Option<P>) {
    let mut loss = 0.0;
    let mut acc: Option<P> = None;
    for (l, g) in parts {
        loss += l;
        match (&mut acc, g) {
            (None, g) => acc = g,
            (Some(a), Some(g)) => a.accumulate(&g),
            (Some(_), None) => {}
        }
    }
    (loss, acc)
}

/// Which Koopman terms a work item contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct KoopmanItem {
    pub seq: usize,
    pub t: usize,
    pub rec: bool,
    pub pred: bool,
}

#[derive(Default)]
struct KoopmanScratch {
    enc: MlpTrace,
    dec: MlpTrace,
    gy: Vec<f64>,
    gz: Vec<f64>,
    zs: Vec<Vec<f64>>,
    gzs: Vec<Vec<f64>>,
    g: Vec<f64>,
    gk: Vec<f64>,
}

/// Returns `(rec, pred_sum)`: the embedding reconstruction error at the
/// anchor and the sum over `dt = 1..=tau` of prediction errors.
#[allow(clippy::too_many_arguments)]
fn koopman_item(
    kae: &KoopmanAutoencoder,
    emb: &[Vec<f64>],
    item: KoopmanItem,
    tau: usize,
    w_rec: f64,
    w_pred: f64,
    grads: Option<&mut KoopmanAutoencoder>,
    s: &mut KoopmanScratch,
) -> (f64, f64) {
    let h = &emb[item.t];
    let zdim = kae.koopman.rows();
    kae.encoder.forward_traced(h, &mut s.enc);
    let mut grads = grads;
    s.g.clear();
    s.g.resize(zdim, 0.0);
    let mut rec = 0.0;
    if item.rec {
        kae.decoder.forward_traced(s.enc.output(), &mut s.dec);
        s.gy.clear();
        s.gy.resize(h.len(), 0.0);
        rec = mse_acc_grad(s.dec.output(), h, w_rec, &mut s.gy);
        if let Some(g) = grads.as_deref_mut() {
            kae.decoder.backward_traced(&mut s.dec, &s.gy, &mut g.decoder, Some(&mut s.g));
        }
    }
    let mut pred = 0.0;
    if item.pred {
        s.zs.resize_with(tau + 1, Vec::new);
        s.gzs.resize_with(tau + 1, Vec::new);
        s.zs[0].clear();
        s.zs[0].extend_from_slice(s.enc.output());
        for k in 1..=tau {
            let (prev, cur) = s.zs.split_at_mut(k);
            cur[0].resize(zdim, 0.0);
            kae.advance_into(&prev[k - 1], &mut cur[0]);
        }
        for k in 1..=tau {
            let target = &emb[item.t + k];
            kae.decoder.forward_traced(&s.zs[k], &mut s.dec);
            s.gy.clear();
            s.gy.resize(target.len(), 0.0);
            pred += mse_acc_grad(s.dec.output(), target, w_pred, &mut s.gy);
            if let Some(g) = grads.as_deref_mut() {
                let gz = &mut s.gzs[k];
                gz.clear();
                gz.resize(zdim, 0.0);
                kae.decoder.backward_traced(&mut s.dec, &s.gy, &mut g.decoder, Some(gz));
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            // Reverse through z_k = K z_{k-1}.
            s.gz.clear();
            s.gz.resize(zdim, 0.0);
            for k in (1..=tau).rev() {
                for (a, b) in s.gz.iter_mut().zip(&s.gzs[k]) {
                    *a += b;
                }
                g.koopman.outer_acc(&s.gz, &s.zs[k - 1]);
                s.gk.clear();
                s.gk.resize(zdim, 0.0);
                kae.koopman.matvec_t_acc(&s.gz, &mut s.gk);
                std::mem::swap(&mut s.gz, &mut s.gk);
            }
            for (a, b) in s.g.iter_mut().zip(&s.gz) {
                *a += b;
            }
        }
    }
    if let Some(g) = grads {
        if item.rec || item.pred {
            kae.encoder.backward_traced(&mut s.enc, &s.g, &mut g.encoder, None);
        }
    }
    (rec, pred)
}

/// Sums of reconstruction and prediction errors over `items`.
pub(crate) fn koopman_batch(
    kae: &KoopmanAutoencoder,
    embeddings: &[Vec<Vec<f64>>],
    items: &[KoopmanItem],
    tau: usize,
    w_rec: f64,
    w_pred: f64,
    with_grad: bool,
) -> (f64, f64, Option<KoopmanAutoencoder>) {
    let parts: Vec<((f64, f64), Option<KoopmanAutoencoder>)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = KoopmanScratch::default();
            let mut g = with_grad.then(|| kae.zeros_like());
            let mut sums = (0.0, 0.0);
            for &item in chunk {
                let (r, p) = koopman_item(kae, &embeddings[item.seq], item, tau, w_rec, w_pred, g.as_mut(), &mut s);
                sums.0 += r;
                sums.1 += p;
            }
            (sums, g)
        })
        .collect();
    let mut rec = 0.0;
    let mut pred = 0.0;
    let mut acc: Option<KoopmanAutoencoder> = None;
    for ((r, p), g) in parts {
        rec += r;
        pred += p;
        match (&mut acc, g) {
            (None, g) => acc = g,
            (Some(a), Some(g)) => a.accumulate(&g),
            (Some(_), None) => {}
        }
    }
    (rec, pred, acc)
}

fn check_sequence(model: &GkaeModel, seq: &GraphSequence) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::Input("empty graph sequence".into()));
    }
    if seq.num_nodes() != model.dims.num_uavs {
        return Err(Error::shape(
            format!("{} UAVs", model.dims.num_uavs),
            format!("{} UAVs", seq.num_nodes()),
        ));
    }
    if !seq.is_normalized() {
        return Err(Error::State("losses expect a normalized sequence".into()));
    }
    Ok(())
}

/// Mean squared node-feature reconstruction error over all frames.
pub fn loss_grec(model: &GkaeModel, seq: &GraphSequence) -> Result<f64> {
    Ok(loss_grec_grad_impl(model, seq, false)?.0)
}

/// `L_grec` and its gradient with respect to the graph autoencoder.
pub fn loss_grec_grad(model: &GkaeModel, seq: &GraphSequence) -> Result<(f64, GraphAutoencoder)> {
    let (l, g) = loss_grec_grad_impl(model, seq, true)?;
    Ok((l, g.expect("gradient requested")))
}

fn loss_grec_grad_impl(model: &GkaeModel, seq: &GraphSequence, with_grad: bool) -> Result<(f64, Option<GraphAutoencoder>)> {
    check_sequence(model, seq)?;
    let snaps: Vec<&GraphSnapshot> = seq.snapshots.iter().collect();
    let w = 1.0 / snaps.len() as f64;
    let (sum, g) = graph_batch(&model.graph, model.dims.d_out, &snaps, w, with_grad);
    Ok((sum * w, g))
}

/// Graph embeddings of every frame, using the (frozen) graph encoder.
pub fn sequence_embeddings(model: &GkaeModel, seq: &GraphSequence) -> Result<Vec<Vec<f64>>> {
    check_sequence(model, seq)?;
    Ok(seq
        .snapshots
        .par_iter()
        .map(|s| model.encode_raw(&flat_features(&s.features), &s.adjacency))
        .collect())
}

/// Full-sequence Koopman losses and, optionally, their gradient.
/// `L_rec` averages over every frame, `L_pred` (when `tau` is given) over
/// anchors `t = 0..T-tau-1` and `dt = 1..=tau`.
fn koopman_losses(
    model: &GkaeModel,
    seq: &GraphSequence,
    tau: Option<usize>,
    with_grad: bool,
) -> Result<(f64, f64, Option<KoopmanAutoencoder>)> {
    check_sequence(model, seq)?;
    let t_len = seq.len();
    let anchors = match tau {
        Some(0) => return Err(Error::Config("tau must be at least 1".into())),
        Some(tau) if t_len < tau + 1 => {
            return Err(Error::Input(format!(
                "sequence of {t_len} frames is shorter than tau + 1 = {}",
                tau + 1
            )))
        }
        Some(tau) => t_len - tau,
        None => 0,
    };
    let tau = tau.unwrap_or(0);
    let emb = vec![sequence_embeddings(model, seq)?];
    let items: Vec<KoopmanItem> = (0..t_len)
        .map(|t| KoopmanItem {
            seq: 0,
            t,
            rec: true,
            pred: t < anchors,
        })
        .collect();
    let w_rec = 1.0 / t_len as f64;
    let w_pred = if anchors > 0 { 1.0 / (anchors * tau) as f64 } else { 0.0 };
    let (r, p, g) = koopman_batch(&model.koopman, &emb, &items, tau, w_rec, w_pred, with_grad);
    Ok((r * w_rec, p * w_pred, g))
}

/// Mean embedding reconstruction error over every frame.
pub fn loss_rec(model: &GkaeModel, seq: &GraphSequence) -> Result<f64> {
    Ok(koopman_losses(model, seq, None, false)?.0)
}

/// Mean error of `D_d(K^dt E_d(h_t))` against `h_{t+dt}`.
pub fn loss_pred(model: &GkaeModel, seq: &GraphSequence, tau: usize) -> Result<f64> {
    Ok(koopman_losses(model, seq, Some(tau), false)?.1)
}

/// `(L_rec, L_pred)` and the gradient of `L_rec + L_pred` with respect to
/// the Koopman autoencoder.
pub fn loss_koopman_grad(
    model: &GkaeModel,
    seq: &GraphSequence,
    tau: usize,
) -> Result<(f64, f64, KoopmanAutoencoder)> {
    let (r, p, g) = koopman_losses(model, seq, Some(tau), true)?;
    Ok((r, p, g.expect("gradient requested")))
}
