//! Binary and instance-labeled pixel grids.

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return shape_err(format!(
                "{}x{} mask needs {} values, got {}",
                width,
                height,
                width * height,
                bits.len()
            ));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        same_dims(self.width, self.height, other.width, other.height)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect(),
        })
    }
}

/// Integer label grid: 0 is background, each positive value one object.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return shape_err(format!(
                "{}x{} instance mask needs {} values, got {}",
                width,
                height,
                width * height,
                labels.len()
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn from_rows(rows: &[&[u32]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return shape_err("ragged rows");
        }
        Self::from_labels(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u32) {
        self.labels[y * self.width + x] = v;
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    /// Distinct positive labels in ascending order.
    pub fn ids(&self) -> Vec<u32> {
        self.areas().into_keys().collect()
    }

    pub fn num_objects(&self) -> usize {
        self.areas().len()
    }

    /// Pixel count of every positive label.
    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut areas = BTreeMap::new();
        for &l in &self.labels {
            if l != 0 {
                *areas.entry(l).or_insert(0) += 1;
            }
        }
        areas
    }

    /// Pixel coordinates `(y, x)` of one object in raster order.
    pub fn pixels_of(&self, id: u32) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == id)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// Checks that every positive label forms exactly one 4-connected
    /// component.
    pub fn validate(&self) -> Result<()> {
        let comps = crate::morphology::connected_components_by_label(self);
        let mut seen = BTreeMap::new();
        for (&l, &c) in self.labels.iter().zip(comps.labels()) {
            if l == 0 {
                continue;
            }
            let prev = *seen.entry(l).or_insert(c);
            if prev != c {
                return Err(Error::Input(format!("label {l} is split into several components")));
            }
        }
        Ok(())
    }
}

pub(crate) fn same_dims(w1: usize, h1: usize, w2: usize, h2: usize) -> Result<()> {
    if (w1, h1) != (w2, h2) {
        return shape_err(format!("dimension mismatch: {w1}x{h1} vs {w2}x{h2}"));
    }
    Ok(())
}
