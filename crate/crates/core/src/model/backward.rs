use std::collections::BTreeSet;

use super::forward::{gather_cols, scatter_cols, ForwardTrace, LayerCache, Rope};
use super::weights::{AddedEmbeddings, LayerWeights, Weights};
use crate::error::{Error, Result};
use crate::numerics::ops::{gemm_acc, gemm_nt_acc, gemm_tn_acc, softmax_row_backward_in_place};
use crate::numerics::{gelu_backward, matmul_nt, matmul_tn, rmsnorm_backward, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum RowSelection {
    #[default]
    None,
    Rows(BTreeSet<u32>),
    All,
}

impl RowSelection {
    fn is_none(&self) -> bool {
        matches!(self, RowSelection::None)
    }
}

/// Which parameters receive gradients. Anything not requested gets no
/// gradient storage at all.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GradRequest {
    pub input_rows: RowSelection,
    pub output_rows: RowSelection,
    /// Zero-based layer indices.
    pub layers: BTreeSet<usize>,
    pub final_norm: bool,
}

impl GradRequest {
    pub fn embedding_rows(ids: impl IntoIterator<Item = u32>) -> Self {
        Self {
            input_rows: RowSelection::Rows(ids.into_iter().collect()),
            ..Self::default()
        }
    }

    pub fn output_table() -> Self {
        Self {
            output_rows: RowSelection::All,
            ..Self::default()
        }
    }

    pub fn all_weights(n_layers: usize) -> Self {
        Self {
            input_rows: RowSelection::All,
            output_rows: RowSelection::All,
            layers: (0..n_layers).collect(),
            final_norm: true,
        }
    }
}

/// Gradients arriving from an objective.
#[derive(Debug, Clone)]
pub struct Upstream<F> {
    /// `(l, dL/d state(l))`, where `state` is [`ForwardTrace::state`].
    pub states: Vec<(usize, Tensor<F>)>,
    pub logits: Option<Tensor<F>>,
}

impl<F> Default for Upstream<F> {
    fn default() -> Self {
        Self {
            states: Vec::new(),
            logits: None,
        }
    }
}

/// Gradients for a set of embedding rows, one row per id in `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrads<F> {
    pub ids: Vec<u32>,
    pub grads: Tensor<F>,
}

impl<F: Real> RowGrads<F> {
    pub fn get(&self, id: u32) -> Option<&[F]> {
        self.ids.binary_search(&id).ok().map(|i| self.grads.row(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<F> {
    pub input: Option<RowGrads<F>>,
    pub output: Option<RowGrads<F>>,
    pub layers: Vec<(usize, LayerWeights<F>)>,
    pub final_norm: Option<Tensor<F>>,
}

fn row_ids(sel: &RowSelection, total: usize) -> Vec<u32> {
    match sel {
        RowSelection::None => Vec::new(),
        RowSelection::All => (0..total as u32).collect(),
        RowSelection::Rows(s) => s.iter().copied().collect(),
    }
}

impl<F: Real> Weights<F> {
    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        li: usize,
        x_in: &Tensor<F>,
        c: &LayerCache<F>,
        dout: Tensor<F>,
        rope: &Rope<F>,
        want_weights: bool,
    ) -> Result<(Tensor<F>, Option<LayerWeights<F>>)> {
        let cfg = &self.config;
        let lw = &self.layers[li];
        let (t, d) = (x_in.rows(), x_in.cols());
        let (h, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = F::of(1.0 / (hd as f64).sqrt());
        let mut grads = want_weights.then(|| LayerWeights::zeros(cfg));

        // MLP branch
        let d_act = matmul_nt(&dout, &lw.w_down)?;
        let d_up = gelu_backward(&c.up, &d_act)?;
        let d_mnorm = matmul_nt(&d_up, &lw.w_up)?;
        let (dx_mlp, dg_mlp) = rmsnorm_backward(&c.x_mid, &lw.mlp_norm, cfg.norm_eps, &d_mnorm)?;
        if let Some(g) = grads.as_mut() {
            g.w_down = matmul_tn(&c.act, &dout)?;
            g.w_up = matmul_tn(&c.m_norm, &d_up)?;
            g.mlp_norm = dg_mlp;
        }
        let mut dx_mid = dout;
        dx_mid.add_assign(&dx_mlp)?;

        // attention branch
        let d_attn = matmul_nt(&dx_mid, &lw.wo)?;
        let mut dq = Tensor::zeros(&[t, d]);
        let mut dk = Tensor::zeros(&[t, d]);
        let mut dv = Tensor::zeros(&[t, d]);
        for head in 0..h {
            let d_oh = gather_cols(&d_attn, head * hd, hd);
            let qh = gather_cols(&c.q, head * hd, hd);
            let kh = gather_cols(&c.k, head * hd, hd);
            let vh = gather_cols(&c.v, head * hd, hd);
            let p = &c.probs[head];

            let mut dp = vec![F::zero(); t * t];
            gemm_nt_acc(&d_oh, &vh, &mut dp, t, hd, t);
            let mut dvh = vec![F::zero(); t * hd];
            gemm_tn_acc(p, &d_oh, &mut dvh, t, t, hd);
            for i in 0..t {
                let row = &mut dp[i * t..(i + 1) * t];
                softmax_row_backward_in_place(&p[i * t..(i + 1) * t], row);
                row.iter_mut().for_each(|v| *v *= scale);
            }
            let mut dqh = vec![F::zero(); t * hd];
            gemm_acc(&dp, &kh, &mut dqh, t, t, hd);
            let mut dkh = vec![F::zero(); t * hd];
            gemm_tn_acc(&dp, &qh, &mut dkh, t, t, hd);
            scatter_cols(&mut dq, head * hd, hd, &dqh);
            scatter_cols(&mut dk, head * hd, hd, &dkh);
            scatter_cols(&mut dv, head * hd, hd, &dvh);
        }
        rope.apply_transpose(&mut dq, h);
        rope.apply_transpose(&mut dk, h);

        let mut d_anorm = matmul_nt(&dq, &lw.wq)?;
        d_anorm.add_assign(&matmul_nt(&dk, &lw.wk)?)?;
        d_anorm.add_assign(&matmul_nt(&dv, &lw.wv)?)?;
        let (dx_attn, dg_attn) = rmsnorm_backward(x_in, &lw.attn_norm, cfg.norm_eps, &d_anorm)?;
        if let Some(g) = grads.as_mut() {
            g.wo = matmul_tn(&c.attn, &dx_mid)?;
            g.wq = matmul_tn(&c.a_norm, &dq)?;
            g.wk = matmul_tn(&c.a_norm, &dk)?;
            g.wv = matmul_tn(&c.a_norm, &dv)?;
            g.attn_norm = dg_attn;
        }
        let mut dx = dx_mid;
        dx.add_assign(&dx_attn)?;
        dx.ensure_finite("backward residual gradient")?;
        Ok((dx, grads))
    }

    /// Reverse pass over a cached trace. `added` must be the same rows the
    /// trace was computed with.
    pub fn backward(
        &self,
        trace: &ForwardTrace<F>,
        added: Option<&AddedEmbeddings<F>>,
        upstream: &Upstream<F>,
        request: &GradRequest,
    ) -> Result<GradBundle<F>> {
        let caches = trace.cache.as_ref().ok_or(Error::MissingCache)?;
        let cfg = &self.config;
        let n_layers = cfg.n_layers;
        let top = trace.hidden.len() - 1;
        let (t, d) = (trace.len(), cfg.d_model);
        let v = cfg.vocab_size;
        let k_in = added.map_or(0, AddedEmbeddings::count);
        if k_in != trace.added_rows {
            return Err(Error::Config(
                "added rows differ from the forward pass".into(),
            ));
        }

        let mut residual: Vec<Option<Tensor<F>>> = vec![None; top + 1];
        let mut d_final: Option<Tensor<F>> = None;
        let accumulate = |slot: &mut Option<Tensor<F>>, g: &Tensor<F>| -> Result<()> {
            if g.shape() != [t, d] {
                return Err(Error::Shape(format!("upstream gradient {:?}", g.shape())));
            }
            match slot {
                Some(s) => s.add_assign(g),
                None => {
                    *slot = Some(g.clone());
                    Ok(())
                }
            }
        };
        for (l, g) in &upstream.states {
            if *l == n_layers && trace.is_post_norm() {
                if top != n_layers {
                    return Err(Error::Config("final states were not computed".into()));
                }
                accumulate(&mut d_final, g)?;
            } else if *l <= top {
                accumulate(&mut residual[*l], g)?;
            } else {
                return Err(Error::Config(format!("layer {l} was not executed")));
            }
        }

        let mut output = None;
        if let Some(dlogits) = &upstream.logits {
            let logits = trace
                .logits
                .as_ref()
                .ok_or_else(|| Error::Config("trace has no logits".into()))?;
            if dlogits.shape() != logits.shape() {
                return Err(Error::Shape("logit gradient shape".into()));
            }
            let hn = trace
                .final_hidden
                .as_ref()
                .expect("logits imply final states");
            let cols = dlogits.cols();
            let mut table = Vec::with_capacity(cols * d);
            table.extend_from_slice(self.out_emb().data());
            if let Some(e) = self.output_rows(added) {
                table.extend_from_slice(e.data());
            }
            let mut dh = vec![F::zero(); t * d];
            gemm_acc(dlogits.data(), &table, &mut dh, t, cols, d);
            accumulate(&mut d_final, &Tensor::matrix(t, d, dh)?)?;

            let ids = row_ids(&request.output_rows, cols);
            if !request.output_rows.is_none() {
                let ids: Vec<u32> = ids.into_iter().filter(|&i| (i as usize) < cols).collect();
                let mut g = vec![F::zero(); ids.len() * d];
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut g[r * d..(r + 1) * d];
                    for ti in 0..t {
                        let w = dlogits.row(ti)[id as usize];
                        if w == F::zero() {
                            continue;
                        }
                        for (o, &hv) in dst.iter_mut().zip(hn.row(ti)) {
                            *o += w * hv;
                        }
                    }
                }
                output = Some(RowGrads {
                    grads: Tensor::matrix(ids.len(), d, g)?,
                    ids,
                });
            }
        } else if !request.output_rows.is_none() {
            output = Some(RowGrads {
                ids: Vec::new(),
                grads: Tensor::zeros(&[0, d]),
            });
        }

        let mut final_norm_grad = None;
        let mut dx = Tensor::zeros(&[t, d]);
        if let Some(df) = d_final {
            let (dres, dg) =
                rmsnorm_backward(&trace.hidden[n_layers], &self.final_norm, cfg.norm_eps, &df)?;
            dx.add_assign(&dres)?;
            if request.final_norm {
                final_norm_grad = Some(dg);
            }
        } else if request.final_norm {
            final_norm_grad = Some(Tensor::zeros(&[d]));
        }
        if let Some(g) = residual[top].take() {
            dx.add_assign(&g)?;
        }

        let lowest = if !request.input_rows.is_none() {
            0
        } else {
            request.layers.iter().next().copied().unwrap_or(top)
        };
        let rope = Rope::new(t, cfg.head_dim(), cfg.rope_base);
        let mut layers = Vec::new();
        for li in (lowest..top).rev() {
            let want = request.layers.contains(&li);
            let (dprev, lg) =
                self.layer_backward(li, &trace.hidden[li], &caches[li], dx, &rope, want)?;
            dx = dprev;
            if let Some(g) = residual[li].take() {
                dx.add_assign(&g)?;
            }
            if let Some(lg) = lg {
                layers.push((li, lg));
            }
        }
        layers.reverse();
        for &li in &request.layers {
            if li >= top && li < n_layers {
                layers.push((li, LayerWeights::zeros(cfg)));
            }
        }
        layers.sort_by_key(|(li, _)| *li);

        let input = if request.input_rows.is_none() {
            None
        } else {
            let ids = row_ids(&request.input_rows, v + k_in);
            let mut g = Tensor::zeros(&[ids.len(), d]);
            for (pos, &id) in trace.ids.iter().enumerate() {
                if let Ok(r) = ids.binary_search(&id) {
                    for (o, &val) in g.row_mut(r).iter_mut().zip(dx.row(pos)) {
                        *o += val;
                    }
                }
            }
            Some(RowGrads { ids, grads: g })
        };

        Ok(GradBundle {
            input,
            output,
            layers,
            final_norm: final_norm_grad,
        })
    }
}

impl<F: Real> GradBundle<F> {
    /// Adds every gradient for the pretrained parameters into a dense
    /// gradient model of the same shape. Rows for added ids are skipped. For
    /// tied models output-row gradients land in the shared table.
    pub fn accumulate_into(&self, acc: &mut Weights<F>) -> Result<()> {
        let v = acc.config.vocab_size;
        let add_rows = |table: &mut Tensor<F>, rows: &RowGrads<F>| {
            for (r, &id) in rows.ids.iter().enumerate() {
                if (id as usize) < v {
                    for (o, &g) in table.row_mut(id as usize).iter_mut().zip(rows.grads.row(r)) {
                        *o += g;
                    }
                }
            }
        };
        if let Some(rows) = &self.input {
            add_rows(&mut acc.tok_emb, rows);
        }
        if let Some(rows) = &self.output {
            add_rows(acc.out_emb_mut(), rows);
        }
        for (li, lg) in &self.layers {
            let dst = acc
                .layers
                .get_mut(*li)
                .ok_or_else(|| Error::Shape(format!("no layer {li}")))?;
            for ((_, d), (_, s)) in dst.tensors_mut().into_iter().zip(lg.tensors()) {
                d.add_assign(s)?;
            }
        }
        if let Some(g) = &self.final_norm {
            acc.final_norm.add_assign(g)?;
        }
        Ok(())
    }
}
