//! Finite-difference gradient verification harness.

use super::{Graph, NodeId, ParamSet};
use crate::error::{CiderError, Result};

/// Central-difference step; pinned to match the verification protocol.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat element index where the worst error occurred.
    pub worst_index: usize,
    pub ad_at_worst: f64,
    pub fd_at_worst: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{}: max_rel_err={:.3e} at [{}] (ad={:.6e}, fd={:.6e})",
                e.name, e.max_rel_err, e.worst_index, e.ad_at_worst, e.fd_at_worst
            )?;
        }
        Ok(())
    }
}

/// Relative error with the small-gradient floor:
/// `|ad - fd| / max(|ad|, |fd|, 1e-6)`.
pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6)
}

/// Compare autodiff gradients of `build`'s scalar output against central
/// finite differences over every element of every parameter.
///
/// `build` must register each parameter on the graph under its `ParamSet`
/// name. The finite-difference loss is read through the graph's f64 scalar
/// side-channel and divided by the actually-realized f32 step, which keeps
/// the check meaningful at 32-bit storage precision.
pub fn grad_check<F>(params: &ParamSet, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    if params.is_empty() {
        return Err(CiderError::Contract(
            "grad_check requires at least one parameter".into(),
        ));
    }

    let mut graph = Graph::new();
    let loss = build(&mut graph, params)?;
    graph.backward(loss)?;

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, p)?;
        Ok(g.scalar_value(l))
    };

    let mut entries = Vec::new();
    for (name, tensor) in params.iter() {
        let ad = graph
            .param_grad(name)
            .ok_or_else(|| {
                CiderError::Contract(format!("parameter '{name}' was not used by the graph"))
            })?
            .clone();
        let mut worst = GradCheckEntry {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            ad_at_worst: 0.0,
            fd_at_worst: 0.0,
        };
        for idx in 0..tensor.numel() {
            let w = tensor.data()[idx];
            let wp = (w as f64 + FD_STEP) as f32;
            let wm = (w as f64 - FD_STEP) as f32;

            let mut pp = params.clone();
            pp.get_mut(name).unwrap().data_mut()[idx] = wp;
            let fp = eval(&pp)?;
            pp.get_mut(name).unwrap().data_mut()[idx] = wm;
            let fm = eval(&pp)?;

            let fd = (fp - fm) / (wp as f64 - wm as f64);
            let adv = ad.data()[idx] as f64;
            let rel = relative_error(adv, fd);
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = idx;
                worst.ad_at_worst = adv;
                worst.fd_at_worst = fd;
            }
        }
        entries.push(worst);
    }
    Ok(GradCheckReport { entries })
}
