//! Harrell's concordance index in O(n log n).

use serde::{Deserialize, Serialize};

use super::SurvivalRecord;
use crate::error::{Error, Result};

/// Pair counts behind a C-index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concordance {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl Concordance {
    /// `(concordant + tied / 2) / comparable`.
    pub fn index(&self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::UndefinedCindex);
        }
        Ok((2 * self.concordant + self.tied) as f64 / (2 * self.comparable) as f64)
    }
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    // count of inserted ranks < i
    fn below(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// A pair `(i, j)` with `t_i < t_j` is comparable when `i` had an event;
/// it is concordant when `score_i > score_j`. Equal times are never comparable.
pub fn concordance_counts(scores: &[f64], y: &[SurvivalRecord]) -> Result<Concordance> {
    if scores.len() != y.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} outcomes",
            scores.len(),
            y.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN risk score".into()));
    }
    let n = scores.len();
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank: Vec<usize> = scores
        .iter()
        .map(|s| sorted.partition_point(|v| v < s))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[b].time.total_cmp(&y[a].time));
    let mut tree = Fenwick(vec![0; sorted.len() + 1]);
    let mut later = 0u64;
    let mut out = Concordance::default();
    let mut k = 0;
    while k < n {
        let t = y[order[k]].time;
        let mut end = k;
        while end < n && y[order[end]].time == t {
            end += 1;
        }
        for &i in &order[k..end] {
            if y[i].event {
                let lower = tree.below(rank[i]);
                let upto = tree.below(rank[i] + 1);
                out.concordant += lower;
                out.tied += upto - lower;
                out.comparable += later;
            }
        }
        for &i in &order[k..end] {
            tree.add(rank[i]);
            later += 1;
        }
        k = end;
    }
    Ok(out)
}

pub fn concordance_index(scores: &[f64], y: &[SurvivalRecord]) -> Result<f64> {
    concordance_counts(scores, y)?.index()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(times: &[f64], events: &[bool]) -> Vec<SurvivalRecord> {
        times
            .iter()
            .zip(events)
            .enumerate()
            .map(|(i, (&t, &e))| SurvivalRecord::new(format!("p{i}"), t, e).unwrap())
            .collect()
    }

    #[test]
    fn perfect_and_random() {
        let y = recs(&[1.0, 2.0, 3.0, 4.0], &[true; 4]);
        assert_eq!(concordance_index(&[4.0, 3.0, 2.0, 1.0], &y).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0, 4.0], &y).unwrap(), 0.0);
        assert_eq!(concordance_index(&[7.0; 4], &y).unwrap(), 0.5);
    }

    #[test]
    fn hand_enumerated_example() {
        let y = recs(&[1.0, 2.0, 3.0], &[true, false, true]);
        let c = concordance_counts(&[3.0, 1.0, 2.0], &y).unwrap();
        assert_eq!(
            c,
            Concordance {
                concordant: 2,
                tied: 0,
                comparable: 2
            }
        );
        assert_eq!(c.index().unwrap(), 1.0);
    }

    #[test]
    fn tied_times_not_comparable() {
        let y = recs(&[2.0, 2.0], &[true, true]);
        assert!(matches!(
            concordance_index(&[1.0, 0.0], &y),
            Err(Error::UndefinedCindex)
        ));
        let y = recs(&[1.0, 2.0], &[false, true]);
        assert!(matches!(
            concordance_index(&[1.0, 0.0], &y),
            Err(Error::UndefinedCindex)
        ));
    }

    #[test]
    fn bad_input() {
        let y = recs(&[1.0, 2.0], &[true, true]);
        assert!(matches!(
            concordance_index(&[1.0], &y),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            concordance_index(&[f64::NAN, 1.0], &y),
            Err(Error::Argument(_))
        ));
    }
}
