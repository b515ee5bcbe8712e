//! Stochastic weight averaging: an equal-weight running mean of late-epoch
//! parameter snapshots, used as the final model.

use super::tensor::RegressorParams;
use crate::{Error, Result};

/// Running sums of observed snapshots. Sums and a count (rather than an
/// incremental mean) keep the average independent of observation order up
/// to floating-point associativity of a single fixed reduction.
#[derive(Debug, Clone, Default)]
pub struct SwaState {
    sums: Option<RegressorParams>,
    count: u64,
}

impl SwaState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot_count(&self) -> u64 {
        self.count
    }

    /// Raw running sums, present once anything was observed. Exposed for
    /// checkpoint persistence.
    pub fn sums(&self) -> Option<&RegressorParams> {
        self.sums.as_ref()
    }

    /// Rebuilds state from persisted parts.
    pub fn from_parts(sums: Option<RegressorParams>, count: u64) -> Result<Self> {
        if sums.is_some() != (count > 0) {
            return Err(Error::InvalidInput(
                "averaging sums and snapshot count disagree".into(),
            ));
        }
        Ok(SwaState { sums, count })
    }

    /// Folds one parameter snapshot into the running sums.
    pub fn observe(&mut self, params: &RegressorParams) -> Result<()> {
        match &mut self.sums {
            None => {
                let mut sums = params.clone();
                for idx in 0..sums.len() {
                    // Drop gradient scratch; only values are averaged.
                    sums.tensor_mut(idx).clear_grad();
                }
                self.sums = Some(sums);
            }
            Some(sums) => {
                if !sums.same_layout(params) {
                    return Err(Error::InvalidInput(
                        "snapshot layout differs from earlier snapshots".into(),
                    ));
                }
                for idx in 0..sums.len() {
                    let dst = sums.tensor_mut(idx).data_mut();
                    for (d, s) in dst.iter_mut().zip(params.tensor(idx).data()) {
                        *d += s;
                    }
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// The equal-weight average of all observed snapshots, or a clone of
    /// `fallback` when nothing was observed (a run whose schedule never
    /// reached the averaging window keeps its final parameters).
    pub fn averaged(&self, fallback: &RegressorParams) -> RegressorParams {
        match &self.sums {
            None => fallback.clone(),
            Some(sums) => {
                let mut avg = sums.clone();
                let n = self.count as f64;
                for idx in 0..avg.len() {
                    for v in avg.tensor_mut(idx).data_mut() {
                        *v /= n;
                    }
                }
                avg
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tensor::Tensor;

    fn scalar(value: f64) -> RegressorParams {
        let mut p = RegressorParams::new();
        p.push("w", Tensor::from_data(&[1], vec![value]).unwrap()).unwrap();
        p
    }

    #[test]
    fn single_snapshot_round_trips() {
        let mut swa = SwaState::new();
        swa.observe(&scalar(0.25)).unwrap();
        let avg = swa.averaged(&scalar(99.0));
        assert_eq!(avg.tensor(0).data()[0], 0.25);
        assert_eq!(swa.snapshot_count(), 1);
    }

    #[test]
    fn three_snapshots_average_to_their_mean() {
        let mut swa = SwaState::new();
        for v in [1.0, 2.0, 3.0] {
            swa.observe(&scalar(v)).unwrap();
        }
        assert_eq!(swa.averaged(&scalar(0.0)).tensor(0).data()[0], 2.0);
    }

    #[test]
    fn order_does_not_change_the_sums() {
        let snaps = [0.125, 0.5, 0.25, 1.0];
        let mut fwd = SwaState::new();
        for v in snaps {
            fwd.observe(&scalar(v)).unwrap();
        }
        let mut rev = SwaState::new();
        for v in snaps.into_iter().rev() {
            rev.observe(&scalar(v)).unwrap();
        }
        // Dyadic values keep even the intermediate sums exact.
        assert_eq!(
            fwd.averaged(&scalar(0.0)).tensor(0).data()[0],
            rev.averaged(&scalar(0.0)).tensor(0).data()[0]
        );
    }

    #[test]
    fn average_stays_within_snapshot_range() {
        let mut swa = SwaState::new();
        for v in [-0.3, 0.9, 0.1, -0.7] {
            swa.observe(&scalar(v)).unwrap();
        }
        let avg = swa.averaged(&scalar(0.0)).tensor(0).data()[0];
        assert!((-0.7..=0.9).contains(&avg));
    }

    #[test]
    fn no_snapshots_falls_back_to_given_parameters() {
        let swa = SwaState::new();
        let avg = swa.averaged(&scalar(0.625));
        assert_eq!(avg.tensor(0).data()[0], 0.625);
    }

    #[test]
    fn layout_change_is_rejected() {
        let mut swa = SwaState::new();
        swa.observe(&scalar(1.0)).unwrap();
        let mut other = RegressorParams::new();
        other.push("w", Tensor::zeros(&[2])).unwrap();
        assert!(swa.observe(&other).is_err());
    }
}
