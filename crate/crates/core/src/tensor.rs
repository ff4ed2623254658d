//! The `N × M × K` logit tensor every pipeline reads from.

use thiserror::Error;

use crate::scalar::Scalar;

/// Name of augmentation 0.
pub const IDENTITY: &str = "identity";

/// Violations of [`LogitTensor`] invariants, one variant per invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("tensor must have at least one example")]
    NoExamples,
    #[error("tensor must have at least one augmentation")]
    NoAugmentations,
    #[error("tensor must have at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("expected {expected} logits for the declared shape, got {actual}")]
    LogitCount { expected: usize, actual: usize },
    #[error("expected {expected} labels, got {actual}")]
    LabelCount { expected: usize, actual: usize },
    #[error("expected {expected} augmentation names, got {actual}")]
    AugNameCount { expected: usize, actual: usize },
    #[error("non-finite logit at example {example}, augmentation {aug}, class {class}")]
    NonFinite { example: usize, aug: usize, class: usize },
    #[error("label {label} at example {example} is out of range for {n_classes} classes")]
    LabelOutOfRange { example: usize, label: usize, n_classes: usize },
}

/// Raw classifier logits for `N` examples under `M` augmentations over `K` classes,
/// stored row-major in (example, augmentation, class) order, plus true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor<T> {
    n_examples: usize,
    n_augs: usize,
    n_classes: usize,
    logits: Vec<T>,
    labels: Vec<usize>,
    aug_names: Vec<String>,
}

impl<T: Scalar> LogitTensor<T> {
    /// Builds a tensor with default augmentation names (`identity`, `aug1`, ...).
    pub fn new(
        n_examples: usize,
        n_augs: usize,
        n_classes: usize,
        logits: Vec<T>,
        labels: Vec<usize>,
    ) -> Result<Self, TensorError> {
        Self::with_aug_names(n_examples, n_classes, logits, labels, default_aug_names(n_augs))
    }

    pub fn with_aug_names(
        n_examples: usize,
        n_classes: usize,
        logits: Vec<T>,
        labels: Vec<usize>,
        aug_names: Vec<String>,
    ) -> Result<Self, TensorError> {
        let tensor = Self {
            n_examples,
            n_augs: aug_names.len(),
            n_classes,
            logits,
            labels,
            aug_names,
        };
        tensor.validate()?;
        Ok(tensor)
    }

    fn validate(&self) -> Result<(), TensorError> {
        if self.n_examples == 0 {
            return Err(TensorError::NoExamples);
        }
        if self.n_augs == 0 {
            return Err(TensorError::NoAugmentations);
        }
        if self.n_classes < 2 {
            return Err(TensorError::TooFewClasses(self.n_classes));
        }
        let expected = self.n_examples * self.n_augs * self.n_classes;
        if self.logits.len() != expected {
            return Err(TensorError::LogitCount {
                expected,
                actual: self.logits.len(),
            });
        }
        if self.labels.len() != self.n_examples {
            return Err(TensorError::LabelCount {
                expected: self.n_examples,
                actual: self.labels.len(),
            });
        }
        if let Some(pos) = self.logits.iter().position(|z| !z.is_finite()) {
            let per_example = self.n_augs * self.n_classes;
            return Err(TensorError::NonFinite {
                example: pos / per_example,
                aug: (pos % per_example) / self.n_classes,
                class: pos % self.n_classes,
            });
        }
        if let Some((example, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.n_classes) {
            return Err(TensorError::LabelOutOfRange {
                example,
                label,
                n_classes: self.n_classes,
            });
        }
        Ok(())
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn n_augs(&self) -> usize {
        self.n_augs
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, example: usize) -> usize {
        self.labels[example]
    }

    pub fn aug_names(&self) -> &[String] {
        &self.aug_names
    }

    /// Flat logits in (example, augmentation, class) order.
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// The `M × K` block for one example, row-major.
    pub fn example(&self, example: usize) -> &[T] {
        let stride = self.n_augs * self.n_classes;
        &self.logits[example * stride..(example + 1) * stride]
    }

    /// Logits of augmentation `aug` for one example.
    pub fn row(&self, example: usize, aug: usize) -> &[T] {
        let start = (example * self.n_augs + aug) * self.n_classes;
        &self.logits[start..start + self.n_classes]
    }

    /// New tensor holding the listed examples in the listed order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut logits = Vec::with_capacity(indices.len() * self.n_augs * self.n_classes);
        for &i in indices {
            logits.extend_from_slice(self.example(i));
        }
        Self {
            n_examples: indices.len(),
            n_augs: self.n_augs,
            n_classes: self.n_classes,
            logits,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            aug_names: self.aug_names.clone(),
        }
    }

    /// Converts the logits to another scalar type.
    pub fn cast<U: Scalar>(&self) -> LogitTensor<U> {
        LogitTensor {
            n_examples: self.n_examples,
            n_augs: self.n_augs,
            n_classes: self.n_classes,
            logits: self.logits.iter().map(|z| U::of(z.as_f64())).collect(),
            labels: self.labels.clone(),
            aug_names: self.aug_names.clone(),
        }
    }
}

pub fn default_aug_names(n_augs: usize) -> Vec<String> {
    (0..n_augs)
        .map(|m| if m == 0 { IDENTITY.to_string() } else { format!("aug{m}") })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LogitTensor<f64> {
        // 2 examples, 2 augs, 3 classes
        let logits = (0..12).map(|x| x as f64).collect();
        LogitTensor::new(2, 2, 3, logits, vec![0, 2]).unwrap()
    }

    #[test]
    fn indexing_is_row_major() {
        let t = tiny();
        assert_eq!(t.row(0, 0), &[0.0, 1.0, 2.0]);
        assert_eq!(t.row(0, 1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.row(1, 1), &[9.0, 10.0, 11.0]);
        assert_eq!(t.example(1).len(), 6);
        assert_eq!(t.aug_names(), &["identity".to_string(), "aug1".to_string()]);
    }

    #[test]
    fn select_reorders() {
        let t = tiny().select(&[1, 0, 1]);
        assert_eq!(t.n_examples(), 3);
        assert_eq!(t.labels(), &[2, 0, 2]);
        assert_eq!(t.row(1, 0), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn each_invariant_has_its_own_error() {
        assert_eq!(LogitTensor::<f64>::new(0, 1, 2, vec![], vec![]), Err(TensorError::NoExamples));
        assert_eq!(LogitTensor::<f64>::new(1, 0, 2, vec![], vec![0]), Err(TensorError::NoAugmentations));
        assert_eq!(LogitTensor::new(1, 1, 1, vec![0.0], vec![0]), Err(TensorError::TooFewClasses(1)));
        assert_eq!(
            LogitTensor::new(1, 1, 2, vec![0.0], vec![0]),
            Err(TensorError::LogitCount { expected: 2, actual: 1 })
        );
        assert_eq!(
            LogitTensor::new(1, 1, 2, vec![0.0, 1.0], vec![]),
            Err(TensorError::LabelCount { expected: 1, actual: 0 })
        );
        assert_eq!(
            LogitTensor::new(2, 1, 2, vec![0.0, 1.0, f64::NAN, 0.0], vec![0, 0]),
            Err(TensorError::NonFinite { example: 1, aug: 0, class: 0 })
        );
        assert_eq!(
            LogitTensor::new(1, 1, 2, vec![0.0, 1.0], vec![2]),
            Err(TensorError::LabelOutOfRange { example: 0, label: 2, n_classes: 2 })
        );
    }
}
