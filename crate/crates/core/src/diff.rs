//! Reverse-mode gradient of the training objective over the unrolled blocks.
//!
//! The forward pass records each block's inputs, SymNet activations and
//! pseudo-upwind decisions; the reverse pass replays the recorded decisions,
//! so the gradient is exact for the selected branch at every node.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{correlate_adjoint_acc, kernel_gradient_acc, Kernel};
use crate::loss::{check_batch, LossBreakdown, LossWeights};
use crate::model::{
    flip_x, flip_y, BlockTape, PdeNetModel, FILTERS_PER_COMPONENT, SLOT_DX, SLOT_DY,
};
use crate::moments::{huber_grad, moment_loss};
use crate::simulator::TrajectorySet;
use crate::symnet::{symnet_sparsity_grad, symnet_sparsity_loss};

/// Where each trainable group lives in the flat parameter vector: the free
/// moments of the six filters in bank order, then each component's SymNet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub filter_sizes: Vec<usize>,
    pub symnet_sizes: Vec<usize>,
}

impl ParamLayout {
    pub fn of(model: &PdeNetModel) -> Self {
        ParamLayout {
            filter_sizes: model.filters.iter().map(|f| f.free().len()).collect(),
            symnet_sizes: model.symnets.iter().map(|s| s.param_count()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.filter_sizes.iter().sum::<usize>() + self.symnet_sizes.iter().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn filter_range(&self, f: usize) -> Range<usize> {
        let start: usize = self.filter_sizes[..f].iter().sum();
        start..start + self.filter_sizes[f]
    }

    pub fn filters_range(&self) -> Range<usize> {
        0..self.filter_sizes.iter().sum()
    }

    pub fn symnet_range(&self, c: usize) -> Range<usize> {
        let start =
            self.filter_sizes.iter().sum::<usize>() + self.symnet_sizes[..c].iter().sum::<usize>();
        start..start + self.symnet_sizes[c]
    }

    pub fn symnets_range(&self) -> Range<usize> {
        self.filters_range().end..self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn pack(model: &PdeNetModel) -> Self {
        let layout = ParamLayout::of(model);
        let mut values = Vec::with_capacity(layout.len());
        for f in &model.filters {
            values.extend_from_slice(f.free());
        }
        for s in &model.symnets {
            values.extend(s.to_flat());
        }
        ParamVector { layout, values }
    }

    pub fn unpack_into(&self, model: &mut PdeNetModel) -> Result<()> {
        set_params(model, &self.values)
    }

    /// Little-endian `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(layout: ParamLayout, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 8 * layout.len() {
            return Err(Error::shape(format!(
                "expected {} bytes, got {}",
                8 * layout.len(),
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(ParamVector { layout, values })
    }
}

/// Writes a flat parameter vector (in [`ParamLayout`] order) into the model.
pub fn set_params(model: &mut PdeNetModel, theta: &[f64]) -> Result<()> {
    let layout = ParamLayout::of(model);
    if theta.len() != layout.len() {
        return Err(Error::shape(format!(
            "expected {} parameters, got {}",
            layout.len(),
            theta.len()
        )));
    }
    for (f, filt) in model.filters.iter_mut().enumerate() {
        filt.set_free(&theta[layout.filter_range(f)])?;
    }
    for (c, net) in model.symnets.iter_mut().enumerate() {
        net.set_flat(&theta[layout.symnet_range(c)])?;
    }
    Ok(())
}

struct SampleGrad {
    data: f64,
    kernels: Vec<Kernel>,
    symnets: Vec<Vec<f64>>,
}

impl PdeNetModel {
    /// Reverse pass through one block. `obar` is the adjoint of the block
    /// output; returns the adjoint of its input and accumulates parameter
    /// adjoints (kernel space for filters).
    fn block_backward(
        &self,
        tape: &BlockTape,
        obar: &[Vec<f64>],
        kbar: &mut [Kernel],
        symgrad: &mut [Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let npts = g.len();
        let d = self.n_components();
        let m = self.n_inputs();
        let depth = self.symnets[0].depth();
        let tl = self.symnets[0].trace_len();

        let mut ibar: Vec<Vec<f64>> = obar.to_vec();
        let mut xbar_nodes = vec![0.0; npts * m];
        let mut xb = vec![0.0; m];
        let mut zbar = vec![0.0; m + depth];
        for p in 0..npts {
            for (c, net) in self.symnets.iter().enumerate() {
                let gb = self.dt * obar[c][p];
                if gb == 0.0 {
                    continue;
                }
                let tr = &tape.traces[(p * d + c) * tl..(p * d + c + 1) * tl];
                net.backward_traced(tr, gb, Some(&mut symgrad[c]), &mut xb, &mut zbar);
                for (a, b) in xbar_nodes[p * m..(p + 1) * m].iter_mut().zip(&xb) {
                    *a += b;
                }
            }
        }

        let mut field_bar = vec![0.0; npts];
        for c in 0..d {
            for (f, filt) in self.filters.iter().enumerate() {
                let s = c * FILTERS_PER_COMPONENT + f;
                let flip_bit = match f {
                    SLOT_DX if self.pseudo_upwind => Some(0),
                    SLOT_DY if self.pseudo_upwind => Some(1),
                    _ => None,
                };
                let scale = filt.scale(g.dx, g.dy);
                match flip_bit {
                    None => {
                        for p in 0..npts {
                            field_bar[p] = xbar_nodes[p * m + s];
                        }
                        correlate_adjoint_acc(
                            &field_bar,
                            nx,
                            ny,
                            filt.kernel(),
                            scale,
                            &mut ibar[c],
                        );
                        if !self.frozen {
                            kernel_gradient_acc(
                                &field_bar,
                                &tape.input[c],
                                nx,
                                ny,
                                scale,
                                &mut kbar[f],
                            );
                        }
                    }
                    Some(bit) => {
                        let mut flipped_bar = vec![0.0; npts];
                        for p in 0..npts {
                            let v = xbar_nodes[p * m + s];
                            if tape.flips[(p * d + c) * 2 + bit] {
                                flipped_bar[p] = v;
                                field_bar[p] = 0.0;
                            } else {
                                field_bar[p] = v;
                            }
                        }
                        let fk = if bit == 0 {
                            flip_x(filt.kernel())
                        } else {
                            flip_y(filt.kernel())
                        };
                        correlate_adjoint_acc(
                            &field_bar,
                            nx,
                            ny,
                            filt.kernel(),
                            scale,
                            &mut ibar[c],
                        );
                        correlate_adjoint_acc(&flipped_bar, nx, ny, &fk, scale, &mut ibar[c]);
                        if !self.frozen {
                            kernel_gradient_acc(
                                &field_bar,
                                &tape.input[c],
                                nx,
                                ny,
                                scale,
                                &mut kbar[f],
                            );
                            let mut kf = Kernel::zeros(fk.size()).expect("odd size");
                            kernel_gradient_acc(
                                &flipped_bar,
                                &tape.input[c],
                                nx,
                                ny,
                                scale,
                                &mut kf,
                            );
                            // flip is linear and self-adjoint: q̄ += flip(q̄_flipped)
                            let back = if bit == 0 { flip_x(&kf) } else { flip_y(&kf) };
                            let mut sum = kbar[f].taps().to_vec();
                            for (a, b) in sum.iter_mut().zip(back.taps()) {
                                *a += b;
                            }
                            kbar[f] = Kernel::from_taps(fk.size(), sum).expect("odd size");
                        }
                    }
                }
            }
        }
        ibar
    }

    fn sample_gradient(
        &self,
        sample: &[crate::grid::State],
        n_blocks: usize,
    ) -> Result<SampleGrad> {
        let d = self.n_components();
        let size = self.filters[0].kernel().size();
        let mut tapes = Vec::with_capacity(n_blocks);
        let mut preds: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_blocks);
        let mut cur: Vec<Vec<f64>> = sample[0]
            .components
            .iter()
            .map(|f| f.values().to_vec())
            .collect();
        for i in 1..=n_blocks {
            let mut tape = BlockTape::default();
            let next = self
                .block_forward(&cur, Some(&mut tape))?
                .ok_or(Error::Divergence { block: i })?;
            tapes.push(tape);
            preds.push(next.clone());
            cur = next;
        }
        let coef = 1.0 / (n_blocks as f64 * self.dt * self.dt);
        let mut data = 0.0;
        let mut kernels = vec![Kernel::zeros(size)?; FILTERS_PER_COMPONENT];
        let mut symnets: Vec<Vec<f64>> = self
            .symnets
            .iter()
            .map(|s| vec![0.0; s.param_count()])
            .collect();
        let mut ubar: Vec<Vec<f64>> = vec![vec![0.0; self.grid.len()]; d];
        for i in (1..=n_blocks).rev() {
            let obs = &sample[i];
            for c in 0..d {
                for ((ub, &p), &o) in ubar[c]
                    .iter_mut()
                    .zip(&preds[i - 1][c])
                    .zip(obs.components[c].values())
                {
                    let r = p - o;
                    data += r * r;
                    *ub += 2.0 * coef * r;
                }
            }
            ubar = self.block_backward(&tapes[i - 1], &ubar, &mut kernels, &mut symnets);
        }
        Ok(SampleGrad {
            data: data * coef,
            kernels,
            symnets,
        })
    }
}

/// Total loss and its gradient with respect to every trainable parameter in
/// [`ParamLayout`] order. Filter entries of the gradient are zero for frozen
/// models.
pub fn loss_and_gradient(
    model: &PdeNetModel,
    batch: &TrajectorySet,
    n_blocks: usize,
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_batch(batch, model, n_blocks)?;
    let per_sample: Vec<Result<SampleGrad>> = batch
        .samples
        .par_iter()
        .map(|s| model.sample_gradient(s, n_blocks))
        .collect();

    let layout = ParamLayout::of(model);
    let mut grad = vec![0.0; layout.len()];
    let size = model.filters[0].kernel().size();
    let mut kbar = vec![Kernel::zeros(size)?; FILTERS_PER_COMPONENT];
    let mut data = 0.0;
    // fixed-order reduction
    for r in per_sample {
        let sg = r?;
        data += sg.data;
        for (acc, k) in kbar.iter_mut().zip(&sg.kernels) {
            let sum: Vec<f64> = acc
                .taps()
                .iter()
                .zip(k.taps())
                .map(|(a, b)| a + b)
                .collect();
            *acc = Kernel::from_taps(size, sum)?;
        }
        for (c, g) in sg.symnets.iter().enumerate() {
            for (a, b) in grad[layout.symnet_range(c)].iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    if !model.frozen {
        for (f, filt) in model.filters.iter().enumerate() {
            let gfree = filt.free_gradient(&kbar[f]);
            for ((a, b), m) in grad[layout.filter_range(f)]
                .iter_mut()
                .zip(&gfree)
                .zip(filt.free())
            {
                *a = b + w.lambda_moment * huber_grad(*m, w.s_moment);
            }
        }
    }
    for (c, net) in model.symnets.iter().enumerate() {
        for (a, b) in grad[layout.symnet_range(c)]
            .iter_mut()
            .zip(symnet_sparsity_grad(net, w.s_symnet))
        {
            *a += w.lambda_symnet * b;
        }
    }
    let breakdown = LossBreakdown::combine(
        data,
        moment_loss(&model.filters, w.s_moment),
        symnet_sparsity_loss(&model.symnets, w.s_symnet),
        w,
    );
    Ok((breakdown, grad))
}

/// Largest coordinate-wise discrepancy between the analytic gradient and
/// fourth-order central differences with step `h`:
/// `|g − g_fd| / max(|g|, |g_fd|, floor)`.
#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares [`loss_and_gradient`] against central finite differences on the
/// given coordinates (all when `indices` is `None`).
pub fn check_gradient(
    model: &PdeNetModel,
    batch: &TrajectorySet,
    n_blocks: usize,
    w: &LossWeights,
    h: f64,
    floor: f64,
    indices: Option<&[usize]>,
) -> Result<GradientCheck> {
    let (_, g) = loss_and_gradient(model, batch, n_blocks, w)?;
    let theta = ParamVector::pack(model).values;
    let all: Vec<usize> = (0..theta.len()).collect();
    let idx = indices.unwrap_or(&all);
    let mut probe = model.clone();
    let mut eval = |t: &[f64]| -> Result<f64> {
        set_params(&mut probe, t)?;
        Ok(crate::loss::total_loss(batch, &probe, n_blocks, w)?.total)
    };
    let mut analytic = Vec::with_capacity(idx.len());
    let mut numeric = Vec::with_capacity(idx.len());
    let mut worst = (0.0, 0);
    for &i in idx {
        let mut tp = theta.clone();
        let mut at = |off: f64| -> Result<f64> {
            tp[i] = theta[i] + off;
            eval(&tp)
        };
        let d1 = at(h)? - at(-h)?;
        let d2 = at(2.0 * h)? - at(-2.0 * h)?;
        let fd = (8.0 * d1 - d2) / (12.0 * h);
        let den = g[i].abs().max(fd.abs()).max(floor);
        let rel = if den > 0.0 {
            (g[i] - fd).abs() / den
        } else {
            0.0
        };
        if rel > worst.0 {
            worst = (rel, i);
        }
        analytic.push(g[i]);
        numeric.push(fd);
    }
    Ok(GradientCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric,
    })
}
