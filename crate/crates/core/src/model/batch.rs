use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Stable identity of a training sample across the bank, memories and batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a sample comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Source,
    /// Episodic memory of target domain `i` (1-based).
    Memory(usize),
    Target,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Source => write!(f, "source"),
            Origin::Memory(i) => write!(f, "memory{i}"),
            Origin::Target => write!(f, "target"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub input: Vec<f64>,
    pub label: Option<usize>,
    pub origin: Origin,
}

impl Sample {
    pub fn new(id: SampleId, input: Vec<f64>, label: Option<usize>, origin: Origin) -> Self {
        Self {
            id,
            input,
            label,
            origin,
        }
    }
}

/// A mini-batch. Source and memory samples carry labels, target samples do not.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            match (s.origin, s.label) {
                (Origin::Target, Some(_)) => {
                    return Err(Error::Contract(format!(
                        "target sample {} must not carry a label",
                        s.id
                    )))
                }
                (Origin::Source | Origin::Memory(_), None) => {
                    return Err(Error::Contract(format!(
                        "{} sample {} is missing its label",
                        s.origin, s.id
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sub-batch of the samples matching `keep`.
    pub fn filter(&self, keep: impl Fn(&Sample) -> bool) -> Batch {
        Batch {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_presence_enforced() {
        let ok = Batch::new(vec![
            Sample::new(SampleId(0), vec![0.0], Some(1), Origin::Source),
            Sample::new(SampleId(1), vec![0.0], Some(0), Origin::Memory(2)),
            Sample::new(SampleId(2), vec![0.0], None, Origin::Target),
        ])
        .unwrap();
        assert_eq!(ok.len(), 3);
        assert_eq!(ok.filter(|s| s.origin == Origin::Target).len(), 1);

        assert!(Batch::new(vec![Sample::new(SampleId(0), vec![0.0], Some(1), Origin::Target)]).is_err());
        assert!(Batch::new(vec![Sample::new(SampleId(0), vec![0.0], None, Origin::Memory(1))]).is_err());
        assert!(Batch::new(vec![Sample::new(SampleId(0), vec![0.0], None, Origin::Source)]).is_err());
    }
}
