//! A collection of SPD matrices with optional per-point integer labels.

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;

/// An ordered set of SPD matrices of one common dimension, optionally labeled.
///
/// Labels are small non-negative class ids. When present there is exactly one
/// per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpdSet {
    points: Vec<SpdMatrix>,
    labels: Option<Vec<usize>>,
}

impl LabeledSpdSet {
    /// Builds a set, validating uniform dimension and label count.
    pub fn new(points: Vec<SpdMatrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(first) = points.first() {
            let d = first.dim();
            for p in &points {
                if p.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: p.dim(),
                    });
                }
            }
        }
        if let Some(ref l) = labels {
            if l.len() != points.len() {
                return Err(Error::DimensionMismatch {
                    expected: points.len(),
                    got: l.len(),
                });
            }
        }
        Ok(LabeledSpdSet { points, labels })
    }

    /// An unlabeled set.
    pub fn unlabeled(points: Vec<SpdMatrix>) -> Result<Self> {
        LabeledSpdSet::new(points, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Common matrix dimension; `None` for an empty set.
    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.dim())
    }

    pub fn points(&self) -> &[SpdMatrix] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn get(&self, index: usize) -> Option<&SpdMatrix> {
        self.points.get(index)
    }

    /// Label of point `index`, if the set is labeled.
    pub fn label(&self, index: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[index])
    }

    /// Distinct labels in ascending order; empty for unlabeled sets.
    pub fn distinct_labels(&self) -> Vec<usize> {
        match &self.labels {
            None => Vec::new(),
            Some(l) => {
                let mut out: Vec<usize> = l.clone();
                out.sort_unstable();
                out.dedup();
                out
            }
        }
    }

    /// Splits into (points, labels).
    pub fn into_parts(self) -> (Vec<SpdMatrix>, Option<Vec<usize>>) {
        (self.points, self.labels)
    }
}
