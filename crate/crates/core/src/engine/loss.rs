use crate::error::{Error, Result};

/// Output of [`masked_softmax_xent`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxXent {
    pub loss: f64,
    /// Zero on masked-out entries.
    pub probs: Vec<f64>,
}

impl SoftmaxXent {
    /// Gradient of the loss with respect to the utilities: `p - onehot`.
    pub fn grad(&self, chosen: usize) -> Vec<f64> {
        let mut g = self.probs.clone();
        g[chosen] -= 1.0;
        g
    }
}

/// Softmax over the unmasked utilities (max-subtracted) and the negative log
/// probability of `chosen`.
pub fn masked_softmax_xent(utilities: &[f64], mask: &[bool], chosen: usize) -> Result<SoftmaxXent> {
    if utilities.len() != mask.len() {
        return Err(Error::structural(format!(
            "{} utilities for a mask of {}",
            utilities.len(),
            mask.len()
        )));
    }
    if chosen >= mask.len() || !mask[chosen] {
        return Err(Error::structural(format!(
            "chosen alternative {chosen} is not an active row"
        )));
    }
    let max = utilities
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&u, _)| u)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = utilities
        .iter()
        .zip(mask)
        .map(|(&u, &m)| if m { (u - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    let loss = z.ln() - (utilities[chosen] - max);
    Ok(SoftmaxXent { loss, probs })
}

/// Log-sum-exp and chosen-alternative loss for a dense slice of utilities,
/// all of which are active.
pub fn dense_xent(utilities: &[f64], chosen: usize) -> (f64, Vec<f64>) {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = utilities.iter().map(|&u| (u - max).exp()).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    (z.ln() - (utilities[chosen] - max), probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_utilities_are_uniform() {
        let mut mask = vec![false; 30];
        mask[..4].iter_mut().for_each(|m| *m = true);
        let out = masked_softmax_xent(&[0.3; 30], &mask, 2).unwrap();
        for p in &out.probs[..4] {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
        assert!((out.loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn two_to_one_odds() {
        let out = masked_softmax_xent(&[2f64.ln(), 0.0], &[true, true], 0).unwrap();
        assert!((out.probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((out.probs[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn chosen_must_be_active() {
        let err = masked_softmax_xent(&[0.0, 1.0], &[true, false], 1).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn large_utilities_do_not_overflow() {
        let out = masked_softmax_xent(&[700.0, 699.0, 1e4, -5.0], &[true, true, false, true], 1).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.probs.iter().all(|p| p.is_finite()));
        assert_eq!(out.probs[2], 0.0);
    }

    #[test]
    fn gradient_is_p_minus_onehot() {
        let out = masked_softmax_xent(&[0.5, -0.25, 1.0], &[true, true, true], 2).unwrap();
        let g = out.grad(2);
        let h = 1e-6;
        for k in 0..3 {
            let mut up = vec![0.5, -0.25, 1.0];
            let mut dn = up.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (masked_softmax_xent(&up, &[true; 3], 2).unwrap().loss
                - masked_softmax_xent(&dn, &[true; 3], 2).unwrap().loss)
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(
            u in prop::collection::vec(-50.0f64..50.0, 30),
            n_active in 1usize..=30,
            shift in -100.0f64..100.0,
        ) {
            let mask: Vec<bool> = (0..30).map(|i| i < n_active).collect();
            let a = masked_softmax_xent(&u, &mask, 0).unwrap();
            let total: f64 = a.probs.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(a.probs[n_active..].iter().all(|&p| p == 0.0));
            let shifted: Vec<f64> = u.iter().map(|v| v + shift).collect();
            let b = masked_softmax_xent(&shifted, &mask, 0).unwrap();
            prop_assert!((a.loss - b.loss).abs() < 1e-9);
            for (p, q) in a.probs.iter().zip(&b.probs) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
