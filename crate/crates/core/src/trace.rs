//! Generic sampled trace: an ascending abscissa plus named channels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            values,
        }
    }
}

/// Unit of exchange between the simulation modules and the CLI.
///
/// Channels keep insertion order so that serialized files are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    pub abscissa: Column,
    pub channels: Vec<Column>,
    pub metadata: BTreeMap<String, String>,
}

impl SignalTrace {
    /// Creates an empty-channel trace; the grid must be strictly ascending.
    pub fn new(name: impl Into<String>, unit: impl Into<String>, grid: Vec<f64>) -> Result<Self> {
        check_ascending(&grid)?;
        Ok(Self {
            abscissa: Column::new(name, unit, grid),
            channels: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.abscissa.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissa.values.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        &self.abscissa.values
    }

    /// Appends a channel. Replacing an existing name is an error.
    pub fn push_channel(
        &mut self,
        name: impl Into<String>,
        unit: impl Into<String>,
        values: Vec<f64>,
    ) -> Result<()> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(Error::Input(format!(
                "channel `{name}` has {} samples, abscissa has {}",
                values.len(),
                self.len()
            )));
        }
        if self.channel(&name).is_some() {
            return Err(Error::Input(format!("duplicate channel `{name}`")));
        }
        self.channels.push(Column::new(name, unit, values));
        Ok(())
    }

    pub fn with_channel(
        mut self,
        name: impl Into<String>,
        unit: impl Into<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        self.push_channel(name, unit, values)?;
        Ok(self)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn channel_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.channels
            .iter_mut()
            .find(|c| c.name == name)
            .map(|c| &mut c.values)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    /// Re-checks every structural invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_ascending(&self.abscissa.values)?;
        for c in &self.channels {
            if c.values.len() != self.len() {
                return Err(Error::Input(format!(
                    "channel `{}` has {} samples, abscissa has {}",
                    c.name,
                    c.values.len(),
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

fn check_ascending(grid: &[f64]) -> Result<()> {
    if let Some(i) = grid.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("abscissa value {i} is not finite")));
    }
    if let Some(w) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Input(format!(
            "abscissa is not strictly ascending at index {}",
            w + 1
        )));
    }
    Ok(())
}

/// `n` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}
