use std::ops::Range;

use crate::error::{Error, Result};

/// A named contiguous region of a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub name: String,
    pub range: Range<usize>,
}

/// Flat parameter storage with an aligned gradient accumulator.
///
/// The layout is a list of disjoint named slices that cover `0..len` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    grads: Vec<f64>,
    layout: Vec<Slice>,
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    slices: Vec<Slice>,
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves `len` parameters under `name` and returns their offset.
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.len;
        self.slices.push(Slice {
            name: name.into(),
            range: offset..offset + len,
        });
        self.len += len;
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn build(self) -> ParameterVector {
        ParameterVector {
            values: vec![0.0; self.len],
            grads: vec![0.0; self.len],
            layout: self.slices,
        }
    }
}

impl ParameterVector {
    pub fn from_parts(values: Vec<f64>, layout: Vec<Slice>) -> Result<Self> {
        let mut next = 0;
        for slice in &layout {
            if slice.range.start != next || slice.range.end < slice.range.start {
                return Err(Error::config(format!(
                    "parameter slice `{}` does not continue the layout at {next}",
                    slice.name
                )));
            }
            next = slice.range.end;
        }
        if next != values.len() {
            return Err(Error::Dimension {
                context: "parameter layout",
                expected: next,
                actual: values.len(),
            });
        }
        let grads = vec![0.0; values.len()];
        Ok(Self { values, grads, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Borrows values immutably and grads mutably at the same time.
    pub fn split_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.values, &mut self.grads)
    }

    pub fn layout(&self) -> &[Slice] {
        &self.layout
    }

    pub fn slice(&self, name: &str) -> Option<Range<usize>> {
        self.layout.iter().find(|s| s.name == name).map(|s| s.range.clone())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds `delta` element-wise into the gradient accumulator.
    pub fn accumulate(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.grads.len() {
            return Err(Error::Dimension {
                context: "gradient accumulation",
                expected: self.grads.len(),
                actual: delta.len(),
            });
        }
        for (g, d) in self.grads.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// True when both vectors have the same named layout.
    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        self.layout == other.layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_layout_covers_vector() {
        let mut b = LayoutBuilder::new();
        assert_eq!(b.push("w", 6), 0);
        assert_eq!(b.push("b", 2), 6);
        let p = b.build();
        assert_eq!(p.len(), 8);
        assert_eq!(p.grads().len(), 8);
        assert_eq!(p.slice("b"), Some(6..8));
        let covered: usize = p.layout().iter().map(|s| s.range.len()).sum();
        assert_eq!(covered, p.len());
    }

    #[test]
    fn from_parts_rejects_gaps() {
        let layout = vec![
            Slice {
                name: "a".into(),
                range: 0..2,
            },
            Slice {
                name: "b".into(),
                range: 3..4,
            },
        ];
        assert!(ParameterVector::from_parts(vec![0.0; 4], layout).is_err());
        let layout = vec![Slice {
            name: "a".into(),
            range: 0..2,
        }];
        assert!(ParameterVector::from_parts(vec![0.0; 3], layout).is_err());
    }

    #[test]
    fn accumulate_adds() {
        let mut b = LayoutBuilder::new();
        b.push("x", 3);
        let mut p = b.build();
        p.accumulate(&[1.0, 2.0, 3.0]).unwrap();
        p.accumulate(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.grads(), &[2.0, 4.0, 6.0]);
        p.zero_grads();
        assert_eq!(p.grads(), &[0.0; 3]);
        assert!(p.accumulate(&[1.0]).is_err());
    }
}
