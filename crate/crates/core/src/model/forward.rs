use super::weights::{AddedEmbeddings, Weights};
use crate::error::{Error, Result};
use crate::numerics::ops::{gemm_acc, gemm_nt_acc, softmax_row_in_place};
use crate::numerics::{gelu, matmul, rmsnorm, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Layer whose hidden states are the tap output, `1..=L`.
    pub tap_layer: usize,
    /// Compute logits. Only valid when `tap_layer == L`.
    pub need_logits: bool,
    /// Keep the activations needed by [`Weights::backward`].
    pub keep_cache: bool,
    /// At `tap_layer == L`, tap the final-norm output rather than the raw
    /// residual stream.
    pub post_norm_tap: bool,
}

impl ForwardOptions {
    pub fn tap(tap_layer: usize) -> Self {
        Self {
            tap_layer,
            need_logits: false,
            keep_cache: false,
            post_norm_tap: true,
        }
    }

    pub fn full(n_layers: usize) -> Self {
        Self {
            tap_layer: n_layers,
            need_logits: true,
            keep_cache: false,
            post_norm_tap: true,
        }
    }

    pub fn with_cache(mut self) -> Self {
        self.keep_cache = true;
        self
    }

    pub fn with_logits(mut self) -> Self {
        self.need_logits = true;
        self
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<F> {
    pub a_norm: Tensor<F>,
    pub q: Tensor<F>,
    pub k: Tensor<F>,
    pub v: Tensor<F>,
    pub probs: Vec<Vec<F>>,
    pub attn: Tensor<F>,
    pub x_mid: Tensor<F>,
    pub m_norm: Tensor<F>,
    pub up: Tensor<F>,
    pub act: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    pub ids: Vec<u32>,
    pub tap_layer: usize,
    /// Residual stream `H^(0)..=H^(tap)`; `H^(0)` is the embedding lookup.
    pub hidden: Vec<Tensor<F>>,
    /// Final-norm output, present when the last layer ran.
    pub final_hidden: Option<Tensor<F>>,
    pub logits: Option<Tensor<F>>,
    pub(crate) cache: Option<Vec<LayerCache<F>>>,
    pub(crate) added_rows: usize,
    pub(crate) post_norm_tap: bool,
    pub(crate) n_layers: usize,
}

impl<F: Real> ForwardTrace<F> {
    /// Hidden states compared by distillation objectives at layer `l`.
    pub fn state(&self, layer: usize) -> Option<&Tensor<F>> {
        if layer == self.n_layers && self.post_norm_tap {
            self.final_hidden.as_ref()
        } else {
            self.hidden.get(layer)
        }
    }

    pub fn tap_state(&self) -> &Tensor<F> {
        self.state(self.tap_layer).expect("tap layer was executed")
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub(crate) fn is_post_norm(&self) -> bool {
        self.post_norm_tap
    }
}

/// Rotary tables for positions `0..t`, pairing channel `i` with `i + hd/2`.
pub(crate) struct Rope<F> {
    cos: Vec<F>,
    sin: Vec<F>,
    half: usize,
}

impl<F: Real> Rope<F> {
    pub fn new(t: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(t * half);
        let mut sin = Vec::with_capacity(t * half);
        for pos in 0..t {
            for i in 0..half {
                let theta = pos as f64 / base.powf(2.0 * i as f64 / head_dim as f64);
                cos.push(F::of(theta.cos()));
                sin.push(F::of(theta.sin()));
            }
        }
        Self { cos, sin, half }
    }

    fn rotate(&self, x: &mut Tensor<F>, n_heads: usize, inverse: bool) {
        let d = x.cols();
        let hd = 2 * self.half;
        for pos in 0..x.rows() {
            let row = x.row_mut(pos);
            for h in 0..n_heads {
                let base = h * hd;
                for i in 0..self.half {
                    let c = self.cos[pos * self.half + i];
                    let s = if inverse {
                        -self.sin[pos * self.half + i]
                    } else {
                        self.sin[pos * self.half + i]
                    };
                    let a = row[base + i];
                    let b = row[base + i + self.half];
                    row[base + i] = a * c - b * s;
                    row[base + i + self.half] = a * s + b * c;
                }
            }
            debug_assert_eq!(row.len(), d);
        }
    }

    pub fn apply(&self, x: &mut Tensor<F>, n_heads: usize) {
        self.rotate(x, n_heads, false);
    }

    /// Transpose of the rotation, i.e. the backward rule.
    pub fn apply_transpose(&self, x: &mut Tensor<F>, n_heads: usize) {
        self.rotate(x, n_heads, true);
    }
}

pub(crate) fn gather_cols<F: Real>(x: &Tensor<F>, start: usize, width: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(x.rows() * width);
    for r in 0..x.rows() {
        out.extend_from_slice(&x.row(r)[start..start + width]);
    }
    out
}

pub(crate) fn scatter_cols<F: Real>(x: &mut Tensor<F>, start: usize, width: usize, src: &[F]) {
    for r in 0..x.rows() {
        x.row_mut(r)[start..start + width].copy_from_slice(&src[r * width..(r + 1) * width]);
    }
}

impl<F: Real> Weights<F> {
    pub(crate) fn embed(
        &self,
        ids: &[u32],
        added: Option<&AddedEmbeddings<F>>,
    ) -> Result<Tensor<F>> {
        let v = self.config.vocab_size;
        let d = self.config.d_model;
        let k = added.map_or(0, AddedEmbeddings::count);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id_us = id as usize;
            if id_us < v {
                data.extend_from_slice(self.tok_emb.row(id_us));
            } else if id_us < v + k {
                data.extend_from_slice(added.expect("k > 0").input.row(id_us - v));
            } else {
                return Err(Error::UnknownId {
                    id,
                    vocab_size: v + k,
                });
            }
        }
        Tensor::matrix(ids.len(), d, data)
    }

    /// Output rows for logits: the pretrained table plus any added rows.
    pub(crate) fn output_rows<'a>(
        &'a self,
        added: Option<&'a AddedEmbeddings<F>>,
    ) -> Option<&'a Tensor<F>> {
        let added = added?;
        if self.is_tied() {
            Some(&added.input)
        } else {
            added.output.as_ref()
        }
    }

    pub(crate) fn layer_forward(
        &self,
        li: usize,
        x: &Tensor<F>,
        rope: &Rope<F>,
        keep: bool,
    ) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
        let cfg = &self.config;
        let lw = &self.layers[li];
        let (t, d) = (x.rows(), x.cols());
        let (h, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = F::of(1.0 / (hd as f64).sqrt());

        let a_norm = rmsnorm(x, &lw.attn_norm, cfg.norm_eps)?;
        let mut q = matmul(&a_norm, &lw.wq)?;
        let mut k = matmul(&a_norm, &lw.wk)?;
        let v = matmul(&a_norm, &lw.wv)?;
        rope.apply(&mut q, h);
        rope.apply(&mut k, h);

        let mut attn = Tensor::zeros(&[t, d]);
        let mut probs = Vec::with_capacity(if keep { h } else { 0 });
        for head in 0..h {
            let qh = gather_cols(&q, head * hd, hd);
            let kh = gather_cols(&k, head * hd, hd);
            let vh = gather_cols(&v, head * hd, hd);
            let mut s = vec![F::zero(); t * t];
            gemm_nt_acc(&qh, &kh, &mut s, t, hd, t);
            for i in 0..t {
                let row = &mut s[i * t..(i + 1) * t];
                for (j, val) in row.iter_mut().enumerate() {
                    *val = if j > i {
                        F::neg_infinity()
                    } else {
                        *val * scale
                    };
                }
                softmax_row_in_place(row);
            }
            let mut oh = vec![F::zero(); t * hd];
            gemm_acc(&s, &vh, &mut oh, t, t, hd);
            scatter_cols(&mut attn, head * hd, hd, &oh);
            if keep {
                probs.push(s);
            }
        }
        attn.ensure_finite("attention output")?;
        let attn_out = matmul(&attn, &lw.wo)?;
        let mut x_mid = x.clone();
        x_mid.add_assign(&attn_out)?;

        let m_norm = rmsnorm(&x_mid, &lw.mlp_norm, cfg.norm_eps)?;
        let up = matmul(&m_norm, &lw.w_up)?;
        let act = gelu(&up)?;
        let down = matmul(&act, &lw.w_down)?;
        let mut out = x_mid.clone();
        out.add_assign(&down)?;
        out.ensure_finite("residual stream")?;

        let cache = keep.then_some(LayerCache {
            a_norm,
            q,
            k,
            v,
            probs,
            attn,
            x_mid,
            m_norm,
            up,
            act,
        });
        Ok((out, cache))
    }

    pub fn forward(
        &self,
        ids: &[u32],
        added: Option<&AddedEmbeddings<F>>,
        opts: &ForwardOptions,
    ) -> Result<ForwardTrace<F>> {
        let cfg = &self.config;
        let n_layers = cfg.n_layers;
        if opts.tap_layer == 0 || opts.tap_layer > n_layers {
            return Err(Error::Config(format!(
                "tap layer {} outside 1..={n_layers}",
                opts.tap_layer
            )));
        }
        if opts.need_logits && opts.tap_layer != n_layers {
            return Err(Error::Config("logits require running every layer".into()));
        }
        if ids.len() > cfg.max_seq_len {
            return Err(Error::Length {
                len: ids.len(),
                max: cfg.max_seq_len,
            });
        }
        if ids.is_empty() {
            return Err(Error::DegenerateInput("empty input sequence".into()));
        }
        if let Some(a) = added {
            if a.input.cols() != cfg.d_model {
                return Err(Error::Shape("added rows have the wrong width".into()));
            }
        }

        let rope = Rope::new(ids.len(), cfg.head_dim(), cfg.rope_base);
        let mut hidden = Vec::with_capacity(opts.tap_layer + 1);
        hidden.push(self.embed(ids, added)?);
        let mut caches = Vec::new();
        for li in 0..opts.tap_layer {
            let (out, cache) = self.layer_forward(li, &hidden[li], &rope, opts.keep_cache)?;
            hidden.push(out);
            if let Some(c) = cache {
                caches.push(c);
            }
        }

        let mut final_hidden = None;
        let mut logits = None;
        if opts.tap_layer == n_layers {
            let hn = rmsnorm(&hidden[n_layers], &self.final_norm, cfg.norm_eps)?;
            if opts.need_logits {
                logits = Some(self.project_logits(&hn, added)?);
            }
            final_hidden = Some(hn);
        }

        Ok(ForwardTrace {
            ids: ids.to_vec(),
            tap_layer: opts.tap_layer,
            hidden,
            final_hidden,
            logits,
            cache: opts.keep_cache.then_some(caches),
            added_rows: added.map_or(0, AddedEmbeddings::count),
            post_norm_tap: opts.post_norm_tap,
            n_layers,
        })
    }

    pub(crate) fn project_logits(
        &self,
        hn: &Tensor<F>,
        added: Option<&AddedEmbeddings<F>>,
    ) -> Result<Tensor<F>> {
        let (t, d) = (hn.rows(), hn.cols());
        let v = self.config.vocab_size;
        let extra = self.output_rows(added);
        let k = extra.map_or(0, Tensor::rows);
        let mut table = Vec::with_capacity((v + k) * d);
        table.extend_from_slice(self.out_emb().data());
        if let Some(e) = extra {
            table.extend_from_slice(e.data());
        }
        let mut out = vec![F::zero(); t * (v + k)];
        gemm_nt_acc(hn.data(), &table, &mut out, t, d, v + k);
        let logits = Tensor::matrix(t, v + k, out)?;
        logits.ensure_finite("logits")?;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 12,
            tied_embeddings: false,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
        }
    }

    #[test]
    fn embedding_lookup_is_h0() {
        let w = Weights::<f32>::init(&tiny(), 1).unwrap();
        let tr = w.forward(&[5], None, &ForwardOptions::tap(2)).unwrap();
        assert_eq!(tr.hidden[0].row(0), w.tok_emb.row(5));
    }

    #[test]
    fn early_tap_matches_full_prefix() {
        let w = Weights::<f32>::init(&tiny(), 2).unwrap();
        let ids = [1, 4, 9, 3, 3, 7];
        let full = w.forward(&ids, None, &ForwardOptions::full(2)).unwrap();
        let early = w.forward(&ids, None, &ForwardOptions::tap(1)).unwrap();
        assert_eq!(early.hidden.len(), 2);
        assert_eq!(early.hidden[1], full.hidden[1]);
        assert!(early.logits.is_none() && early.final_hidden.is_none());
        assert!(full.logits.is_some());
    }

    #[test]
    fn errors() {
        let w = Weights::<f32>::init(&tiny(), 3).unwrap();
        assert!(matches!(
            w.forward(&[16], None, &ForwardOptions::tap(1)),
            Err(Error::UnknownId { .. })
        ));
        assert!(matches!(
            w.forward(&[0; 13], None, &ForwardOptions::tap(1)),
            Err(Error::Length { .. })
        ));
        assert!(w.forward(&[0], None, &ForwardOptions::tap(0)).is_err());
        assert!(w
            .forward(&[0], None, &ForwardOptions::tap(1).with_logits())
            .is_err());
    }

    #[test]
    fn rope_transpose_inverts() {
        let rope = Rope::<f64>::new(5, 4, 10_000.0);
        let orig = Tensor::from_f64(
            &[5, 8],
            &(0..40).map(|i| i as f64 * 0.1).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut x = orig.clone();
        rope.apply(&mut x, 2);
        rope.apply_transpose(&mut x, 2);
        for (a, b) in x.data().iter().zip(orig.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
