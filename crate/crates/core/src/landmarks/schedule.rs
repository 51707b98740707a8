use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::reference::segment_sizes;
use crate::tensor::{axpy, Matrix};

/// Query and key landmark matrices, oldest landmark first.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LandmarkPair {
    pub q: Matrix,
    pub k: Matrix,
}

impl LandmarkPair {
    pub fn new(q: Matrix, k: Matrix) -> Result<Self> {
        if q.shape() != k.shape() {
            return Err(Error::DimensionMismatch {
                op: "LandmarkPair",
                expected: q.shape(),
                found: k.shape(),
            });
        }
        if q.rows() == 0 || q.cols() == 0 {
            return Err(Error::InvalidArgument(
                "landmark matrices must be non-empty",
            ));
        }
        Ok(Self { q, k })
    }

    pub fn m(&self) -> usize {
        self.q.rows()
    }

    pub fn d(&self) -> usize {
        self.q.cols()
    }

    /// Shifts out the oldest landmark and appends the new one at the end.
    pub fn replace_oldest(&mut self, q_row: &[f64], k_row: &[f64]) {
        self.q.shift_rows_append(q_row);
        self.k.shift_rows_append(k_row);
    }
}

/// A freshly completed segment mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkUpdate {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    /// Schedule slot whose segment size this landmark inherits.
    pub slot: usize,
}

/// Continual segment-means replacement schedule.
///
/// Every landmark covers a contiguous run of stream tokens. Once as many new
/// tokens as the oldest landmark's segment have arrived, their mean becomes the
/// newest landmark and the oldest one is dropped, so segment sizes rotate with
/// the landmarks and always sum to `n`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LandmarkSchedule {
    n: usize,
    segment_sizes: Vec<usize>,
    phase: usize,
    acc_q: Vec<f64>,
    acc_k: Vec<f64>,
    next_slot: usize,
}

impl LandmarkSchedule {
    /// Schedule for a window of `n` tokens of dimension `d` and `m` landmarks,
    /// aligned with landmarks taken as the segment means of a full window.
    pub fn new(n: usize, m: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("token dimension must be at least 1"));
        }
        Ok(Self {
            n,
            segment_sizes: segment_sizes(n, m)?,
            phase: 0,
            acc_q: vec![0.0; d],
            acc_k: vec![0.0; d],
            next_slot: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.segment_sizes.len()
    }

    pub fn d(&self) -> usize {
        self.acc_q.len()
    }

    pub fn segment_sizes(&self) -> &[usize] {
        &self.segment_sizes
    }

    /// Tokens accumulated toward the next landmark.
    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn next_slot(&self) -> usize {
        self.next_slot
    }

    /// Pushes still needed before the next landmark is emitted.
    pub fn pushes_until_update(&self) -> usize {
        self.segment_sizes[self.next_slot] - self.phase
    }

    /// Accumulates one token; returns the new landmark when its segment completes.
    pub fn push(&mut self, q_row: &[f64], k_row: &[f64]) -> Option<LandmarkUpdate> {
        debug_assert_eq!(q_row.len(), self.d());
        debug_assert_eq!(k_row.len(), self.d());
        axpy(&mut self.acc_q, 1.0, q_row);
        axpy(&mut self.acc_k, 1.0, k_row);
        self.phase += 1;
        let size = self.segment_sizes[self.next_slot];
        if self.phase < size {
            return None;
        }
        let len = size as f64;
        let q = self.acc_q.iter().map(|x| x / len).collect();
        let k = self.acc_k.iter().map(|x| x / len).collect();
        self.acc_q.iter_mut().for_each(|x| *x = 0.0);
        self.acc_k.iter_mut().for_each(|x| *x = 0.0);
        self.phase = 0;
        let slot = self.next_slot;
        self.next_slot = (self.next_slot + 1) % self.m();
        Some(LandmarkUpdate { q, k, slot })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = self.segment_sizes.iter().sum::<usize>() == self.n
            && self.next_slot < self.segment_sizes.len()
            && self.phase < self.segment_sizes[self.next_slot]
            && self.acc_q.len() == self.acc_k.len();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("inconsistent landmark schedule"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update_steps(n: usize, m: usize, pushes: usize) -> Vec<usize> {
        let mut s = LandmarkSchedule::new(n, m, 1).unwrap();
        (1..=pushes)
            .filter(|_| s.push(&[1.0], &[1.0]).is_some())
            .collect()
    }

    #[test]
    fn every_fifth_push_for_twenty_by_four() {
        let steps = update_steps(20, 4, 40);
        assert_eq!(steps, (1..=8).map(|i| 5 * i).collect::<Vec<_>>());
    }

    #[test]
    fn uneven_sizes_cycle() {
        assert_eq!(update_steps(7, 3, 14), [3, 5, 7, 10, 12, 14]);
    }

    #[test]
    fn n_equals_m_emits_every_row() {
        let mut s = LandmarkSchedule::new(4, 4, 2).unwrap();
        for i in 0..9 {
            let row = [i as f64, -(i as f64)];
            let up = s.push(&row, &[0.5, 0.25]).expect("update every push");
            assert_eq!(up.q, row);
            assert_eq!(up.k, [0.5, 0.25]);
        }
    }

    #[test]
    fn emits_segment_mean() {
        let mut s = LandmarkSchedule::new(6, 2, 1).unwrap();
        assert!(s.push(&[1.0], &[10.0]).is_none());
        assert!(s.push(&[2.0], &[20.0]).is_none());
        assert_eq!(s.pushes_until_update(), 1);
        let up = s.push(&[6.0], &[30.0]).unwrap();
        assert_eq!((up.q, up.k, up.slot), (vec![3.0], vec![20.0], 0));
        assert_eq!(s.next_slot(), 1);
        assert_eq!(s.phase(), 0);
    }

    #[test]
    fn replace_oldest_shifts_rows() {
        let q = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let mut p = LandmarkPair::new(q.clone(), q).unwrap();
        p.replace_oldest(&[3.0], &[4.0]);
        assert_eq!(p.q.as_slice(), &[2.0, 3.0]);
        assert_eq!(p.k.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(LandmarkSchedule::new(3, 4, 2).is_err());
        assert!(LandmarkSchedule::new(3, 0, 2).is_err());
        assert!(LandmarkSchedule::new(3, 2, 0).is_err());
        assert!(LandmarkPair::new(Matrix::zeros(2, 2), Matrix::zeros(3, 2)).is_err());
    }
}
