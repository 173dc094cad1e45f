//! A robust design problem: network, ground-truth node functions, design
//! box, and finite uncertainty set.

use serde::{Deserialize, Serialize};

use crate::acquisition::{argmin_first, UncertaintySet};
use crate::error::{invalid, Error, Result};
use crate::funcnet::{evaluate, forward_acyclic, FixedPointOptions, ForwardWorkspace, FunctionNetwork, NetworkState, NodeFn};
use crate::optim::BoxBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Clone)]
pub struct RobustProblem {
    pub name: String,
    pub net: FunctionNetwork,
    pub truth: Vec<NodeFn>,
    pub bounds: BoxBounds,
    pub set: UncertaintySet,
    pub known_optimum: Option<KnownOptimum>,
    pub fixed_point: FixedPointOptions,
}

impl std::fmt::Debug for RobustProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobustProblem")
            .field("name", &self.name)
            .field("nodes", &self.net.node_count())
            .field("bounds", &self.bounds)
            .field("scenarios", &self.set.len())
            .finish()
    }
}

impl RobustProblem {
    pub fn new(name: &str, net: FunctionNetwork, truth: Vec<NodeFn>, bounds: BoxBounds, set: UncertaintySet) -> Result<Self> {
        if truth.len() != net.node_count() {
            return invalid(format!("{} node functions for {} nodes", truth.len(), net.node_count()));
        }
        if bounds.dim() != net.design_dim() {
            return invalid(format!("design box has dimension {}, network expects {}", bounds.dim(), net.design_dim()));
        }
        if set.dim() != net.uncertainty_dim() {
            return invalid(format!(
                "uncertainty set has dimension {}, network expects {}",
                set.dim(),
                net.uncertainty_dim()
            ));
        }
        Ok(RobustProblem {
            name: name.to_string(),
            net,
            truth,
            bounds,
            set,
            known_optimum: None,
            fixed_point: FixedPointOptions::default(),
        })
    }

    pub fn with_known_optimum(mut self, x: Vec<f64>, value: f64) -> Self {
        self.known_optimum = Some(KnownOptimum { x, value });
        self
    }

    pub fn design_dim(&self) -> usize {
        self.net.design_dim()
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.net.uncertainty_dim()
    }

    /// Initial design size `2n_x + 2n_w + 1`.
    pub fn init_size(&self) -> usize {
        2 * self.design_dim() + 2 * self.uncertainty_dim() + 1
    }

    pub fn state(&self, x: &[f64], w: &[f64]) -> Result<NetworkState> {
        let s = evaluate(&self.net, &self.truth, x, w, None, &self.fixed_point)?;
        if !s.converged {
            return Err(Error::FixedPoint { residual: s.residual });
        }
        Ok(s)
    }

    pub fn objective(&self, x: &[f64], w: &[f64]) -> Result<f64> {
        let s = self.state(x, w)?;
        crate::funcnet::objective(&self.net, &s)
    }

    /// True worst case `min_j g(x, w_j)` and its scenario index.
    pub fn worst_case(&self, x: &[f64]) -> Result<(usize, f64)> {
        let mut ws = ForwardWorkspace::default();
        self.worst_case_with(x, &mut ws)
    }

    pub(crate) fn worst_case_with(&self, x: &[f64], ws: &mut ForwardWorkspace) -> Result<(usize, f64)> {
        let mut vals = Vec::with_capacity(self.set.len());
        for w in &self.set.points {
            let v = if self.net.is_acyclic() {
                forward_acyclic(&self.net, &self.truth, x, w, ws, None)?
            } else {
                self.objective(x, w)?
            };
            vals.push(v);
        }
        Ok(argmin_first(&vals))
    }
}
