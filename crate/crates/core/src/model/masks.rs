// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::autodiff::{Graph, NodeId, ScalarParam};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::scalar::Scalar;

/// The L x H head-mask scalars. Every value starts at 1 (head intact); 0
/// removes the head's output from its layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaskGrid<T> {
    layers: usize,
    heads: usize,
    params: Vec<ScalarParam<T>>,
}

impl<T: Scalar> HeadMaskGrid<T> {
    pub fn ones(layers: usize, heads: usize) -> Self {
        let params = (0..layers)
            .flat_map(|l| (0..heads).map(move |h| ScalarParam::new(T::one(), (l, h))))
            .collect();
        Self { layers, heads, params }
    }

    pub fn for_config(config: &ModelConfig) -> Self {
        Self::ones(config.num_layers, config.num_heads)
    }

    /// Grid from layer-major values. Any finite value is accepted, so
    /// derivative probes may step past 1.
    pub fn from_values(layers: usize, heads: usize, values: &[T]) -> Result<Self> {
        if values.len() != layers * heads {
            return Err(Error::InvalidArgument(format!(
                "{} mask values for a {layers}x{heads} grid",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("mask value {v} is not finite")));
        }
        let mut grid = Self::ones(layers, heads);
        for (p, &v) in grid.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(grid)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.layers, self.heads)
    }

    pub fn get(&self, layer: usize, head: usize) -> T {
        self.params[layer * self.heads + head].value
    }

    /// Sets a mask value; it must lie in `[0, 1]`.
    pub fn set(&mut self, layer: usize, head: usize, value: T) -> Result<()> {
        if layer >= self.layers || head >= self.heads {
            return Err(Error::InvalidArgument(format!(
                "head ({}, {}) outside a {}x{} grid",
                layer + 1,
                head + 1,
                self.layers,
                self.heads
            )));
        }
        if !(value >= T::zero() && value <= T::one()) {
            return Err(Error::InvalidArgument(format!("mask value {value} outside [0, 1]")));
        }
        self.params[layer * self.heads + head].value = value;
        Ok(())
    }

    pub fn params(&self) -> &[ScalarParam<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ScalarParam<T>] {
        &mut self.params
    }

    /// Zero-based heads whose mask is exactly 0.
    pub fn masked_heads(&self) -> Vec<(usize, usize)> {
        self.params
            .iter()
            .filter(|p| p.value == T::zero())
            .map(|p| p.label)
            .collect()
    }

    pub fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        if self.dims() != (config.num_layers, config.num_heads) {
            return Err(Error::InvalidArgument(format!(
                "mask grid is {}x{}, model has {} layers x {} heads",
                self.layers, self.heads, config.num_layers, config.num_heads
            )));
        }
        Ok(())
    }

    /// Registers every mask as a graph parameter, layer-major.
    pub fn register(&self, g: &mut Graph<'_, T>) -> Result<Vec<NodeId>> {
        self.params.iter().map(|p| g.param(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_one_and_rejects_out_of_range() {
        let mut grid = HeadMaskGrid::<f32>::ones(2, 3);
        assert!(grid.params().iter().all(|p| p.value == 1.0));
        assert!(grid.set(0, 0, 1.5).is_err());
        assert!(grid.set(2, 0, 0.0).is_err());
        grid.set(1, 2, 0.0).unwrap();
        assert_eq!(grid.masked_heads(), vec![(1, 2)]);
    }
}
