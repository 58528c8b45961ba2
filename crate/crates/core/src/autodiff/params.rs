use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, contiguous block of a [`ParameterVector`] holding a
/// `rows x cols` row-major matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat vector of trainable reals with a segment layout.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParameterVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// A single unnamed segment covering `values`.
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        ParameterVector {
            values,
            segments: vec![Segment {
                name: "theta".into(),
                offset: 0,
                rows: 1,
                cols: n,
            }],
        }
    }

    /// Rebuilds a vector from stored parts, checking the layout invariants.
    pub fn from_parts(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut expected = 0;
        for s in &segments {
            if s.offset != expected {
                return Err(Error::CorruptModel(format!(
                    "segment `{}` starts at {} but previous segments end at {expected}",
                    s.name, s.offset
                )));
            }
            expected += s.len();
        }
        if expected != values.len() {
            return Err(Error::CorruptModel(format!(
                "segments cover {expected} values but {} are stored",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::CorruptModel("non-finite parameter value".into()));
        }
        Ok(ParameterVector { values, segments })
    }

    /// Appends a segment and returns its descriptor.
    pub fn push_segment(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: &[f64]) -> Segment {
        assert_eq!(data.len(), rows * cols);
        let seg = Segment {
            name: name.into(),
            offset: self.values.len(),
            rows,
            cols,
        };
        self.values.extend_from_slice(data);
        self.segments.push(seg.clone());
        seg
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

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, seg: &Segment) -> &[f64] {
        &self.values[seg.range()]
    }

    pub fn slice_mut(&mut self, seg: &Segment) -> &mut [f64] {
        let r = seg.range();
        &mut self.values[r]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Value of a scalar program together with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}
