//! Per-timestep attention traces and how well they line up with the
//! ground-truth salience mask.

use crate::data::{Dataset, Split};
use crate::error::{Result, TagmError};
use crate::exec::Execution;
use crate::model::Model;

/// `mean(a_t | mask) / mean(a_t | !mask)`.
///
/// `None` when either side of the mask is empty. A zero denominator gives
/// `+inf` (or NaN when the numerator is zero too).
pub fn localization_ratio(a: &[f64], mask: &[bool]) -> Option<f64> {
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in a.iter().zip(mask) {
        if m {
            inside += v;
            n_in += 1;
        } else {
            outside += v;
            n_out += 1;
        }
    }
    if n_in == 0 || n_out == 0 {
        return None;
    }
    Some((inside / n_in as f64) / (outside / n_out as f64))
}

/// Attention trace of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub sample_id: usize,
    pub a: Vec<f64>,
    pub mask: Option<Vec<bool>>,
    pub ratio: Option<f64>,
}

/// Traces for every sequence of `split`, in dataset order.
pub fn traces(model: &Model, ds: &Dataset, split: Split, exec: Execution) -> Result<Vec<Trace>> {
    if model.attention().is_none() {
        return Err(TagmError::InvalidArgument(format!(
            "a {} model has no attention module to trace",
            model.kind()
        )));
    }
    let ids = ds.indices(split);
    exec.map(&ids, |_, &id| {
        let s = &ds.sequences[id];
        let a = model.attention_scores(&s.x)?.expect("model has attention");
        let ratio = s.mask.as_ref().and_then(|m| localization_ratio(&a, m));
        Ok(Trace {
            sample_id: id,
            a,
            mask: s.mask.clone(),
            ratio,
        })
    })
    .into_iter()
    .collect()
}

/// Fraction of traces whose ratio is at least `threshold`, among those that
/// have a ratio at all.
pub fn fraction_localized(traces: &[Trace], threshold: f64) -> Option<f64> {
    let ratios: Vec<f64> = traces.iter().filter_map(|t| t.ratio).collect();
    if ratios.is_empty() {
        return None;
    }
    Some(ratios.iter().filter(|&&r| r >= threshold).count() as f64 / ratios.len() as f64)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_by_hand() {
        let a = [0.9, 0.8, 0.1, 0.3];
        let m = [true, true, false, false];
        assert!((localization_ratio(&a, &m).unwrap() - 4.25).abs() < 1e-12);
        assert_eq!(localization_ratio(&[0.5; 4], &m), Some(1.0));
        assert_eq!(localization_ratio(&a, &[true; 4]), None);
        assert_eq!(localization_ratio(&[1.0, 0.0], &[true, false]), Some(f64::INFINITY));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn fraction_ignores_missing_ratios() {
        let t = |ratio| Trace {
            sample_id: 0,
            a: vec![],
            mask: None,
            ratio,
        };
        let ts = [t(Some(3.0)), t(Some(1.0)), t(None)];
        assert_eq!(fraction_localized(&ts, 2.0), Some(0.5));
        assert_eq!(fraction_localized(&ts[2..], 2.0), None);
    }
}
