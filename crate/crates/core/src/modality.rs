//! Sensing/communication modalities and the batched model input.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, CoreError, Result};
use crate::scalar::Scalar;

/// Canonical modality order: vision, radar, lidar, position, rf_history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Vision,
    Radar,
    Lidar,
    Position,
    RfHistory,
}

impl Modality {
    pub const ALL: [Modality; 5] = [Modality::Vision, Modality::Radar, Modality::Lidar, Modality::Position, Modality::RfHistory];
    pub const SENSING: [Modality; 4] = [Modality::Vision, Modality::Radar, Modality::Lidar, Modality::Position];
    pub const COUNT: usize = 5;

    /// Feature width of one slot.
    pub const fn width(self) -> usize {
        match self {
            Modality::Vision => 16,
            Modality::Radar => 8,
            Modality::Lidar => 16,
            Modality::Position => 6,
            Modality::RfHistory => 8,
        }
    }

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Radar => "radar",
            Modality::Lidar => "lidar",
            Modality::Position => "position",
            Modality::RfHistory => "rf_history",
        }
    }

    /// Offset of this modality inside the concatenated 54-wide slot vector.
    pub fn offset(self) -> usize {
        Self::ALL[..self.index()].iter().map(|m| m.width()).sum()
    }

    pub fn total_width() -> usize {
        Self::ALL.iter().map(|m| m.width()).sum()
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::Parameter(format!("unknown modality `{s}`")))
    }
}

/// Which modalities a model consumes and at what width, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub groups: Vec<(Modality, usize)>,
}

impl InputLayout {
    /// `window` slots per modality stream.
    pub fn new(modalities: &[Modality], window: usize) -> Result<Self> {
        if modalities.is_empty() || window == 0 {
            return Err(CoreError::Parameter("layout needs at least one modality and a positive window".into()));
        }
        let mut sorted = modalities.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != modalities.len() {
            return Err(CoreError::Parameter(format!("duplicate modalities in {modalities:?}")));
        }
        Ok(Self { groups: sorted.into_iter().map(|m| (m, m.width() * window)).collect() })
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.groups.iter().map(|&(m, _)| m)
    }

    pub fn width_of(&self, m: Modality) -> Option<usize> {
        self.groups.iter().find(|&&(g, _)| g == m).map(|&(_, w)| w)
    }

    pub fn total_width(&self) -> usize {
        self.groups.iter().map(|&(_, w)| w).sum()
    }
}

/// Row-major `[batch, width]` features for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGroup<T> {
    pub modality: Modality,
    pub width: usize,
    pub values: Vec<T>,
}

/// A batch of assembled model inputs. Holds features only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    pub batch: usize,
    pub groups: Vec<InputGroup<T>>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn new(batch: usize, groups: Vec<InputGroup<T>>) -> Result<Self> {
        for g in &groups {
            if g.values.len() != batch * g.width {
                return Err(shape_err!("{} group has {} values for batch {batch} x width {}", g.modality, g.values.len(), g.width));
            }
        }
        Ok(Self { batch, groups })
    }

    pub fn cast<U: Scalar>(&self) -> ModelInput<U> {
        let groups = self
            .groups
            .iter()
            .map(|g| InputGroup {
                modality: g.modality,
                width: g.width,
                values: g.values.iter().map(|v| U::from_f64_lossy(v.to_f64_lossless())).collect(),
            })
            .collect();
        ModelInput { batch: self.batch, groups }
    }

    pub fn group(&self, m: Modality) -> Option<&InputGroup<T>> {
        self.groups.iter().find(|g| g.modality == m)
    }

    /// Check that every modality in `layout` is present at the right width.
    pub fn check_layout(&self, layout: &InputLayout) -> Result<()> {
        for &(m, w) in &layout.groups {
            let g = self.group(m).ok_or_else(|| shape_err!("input is missing modality {m}"))?;
            if g.width != w {
                return Err(shape_err!("{m} input width {} but model expects {w}", g.width));
            }
            if let Some(x) = g.values.iter().find(|x| !x.is_finite()) {
                return Err(CoreError::Numeric(format!("{m} features contain {x}")));
            }
        }
        Ok(())
    }

    /// Concatenate the layout's groups row by row.
    pub fn concat(&self, layout: &InputLayout) -> Vec<T> {
        let mut out = Vec::with_capacity(self.batch * layout.total_width());
        for r in 0..self.batch {
            for &(m, w) in &layout.groups {
                let g = self.group(m).expect("layout checked");
                out.extend_from_slice(&g.values[r * w..(r + 1) * w]);
            }
        }
        out
    }

    /// Rows `rows` of one modality.
    pub fn gather(&self, m: Modality, rows: &[usize]) -> Vec<T> {
        let g = self.group(m).expect("layout checked");
        let w = g.width;
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            out.extend_from_slice(&g.values[r * w..(r + 1) * w]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_widths_and_offsets() {
        assert_eq!(Modality::total_width(), 54);
        assert_eq!(Modality::Radar.offset(), 16);
        assert_eq!(Modality::RfHistory.offset(), 46);
        assert_eq!("rf_history".parse::<Modality>().unwrap(), Modality::RfHistory);
    }

    #[test]
    fn layout_is_canonicalized() {
        let l = InputLayout::new(&[Modality::Position, Modality::Vision], 5).unwrap();
        assert_eq!(l.groups, vec![(Modality::Vision, 80), (Modality::Position, 30)]);
        assert!(InputLayout::new(&[Modality::Vision, Modality::Vision], 1).is_err());
    }
}
