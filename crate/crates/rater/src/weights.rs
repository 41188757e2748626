use crate::error::{Error, Result};

/// Inverse-frequency class weights: `w_i = (sum(c) / K) / c_i`, so every
/// class carries the same total weight and the weights of all examples sum
/// to the example count.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Config("no classes".into()));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(class_name(i)));
    }
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let share = total / counts.len() as f64;
    Ok(counts.iter().map(|&c| share / c as f64).collect())
}

pub(crate) fn class_name(i: usize) -> &'static str {
    arbor_core::rating::RatingClass::from_index(i).map_or("unknown", |c| c.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(class_weights(&[100, 100, 100]).unwrap(), vec![1.0, 1.0, 1.0]);
        let w = class_weights(&[1, 1, 2]).unwrap();
        assert!((w[0] - 4.0 / 3.0).abs() < 1e-15 && (w[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(class_weights(&[3, 0, 1]), Err(Error::MissingClass("multi"))));
    }
}
