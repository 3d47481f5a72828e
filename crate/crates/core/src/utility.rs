//! Utility of changing a station's fill level.
//!
//! Arrivals and departures are treated as deterministic and equal to the
//! expected net change per minute. A change `delta` applied now is worth the
//! number of additional customers served over the look-ahead horizon.
//!
//! Two evaluations are provided: [`utility_exact`] replays both trajectories
//! step by step, and [`utility_fast`] reads the answer off the station's
//! [`Plateau`], the fill interval where utility is maximal. Outside the
//! plateau utility changes with slope exactly one, so the plateau bounds are
//! all that needs to be stored per station and start time.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

/// Look-ahead used for repositioning utility, in minutes.
pub const UTILITY_HORIZON_MINUTES: usize = 24 * 60;

#[derive(Debug, Error, PartialEq)]
pub enum UtilityError {
    #[error("initial fill {fill} outside [0, {capacity}]")]
    FillOutOfRange { fill: String, capacity: String },
    #[error("fill change {delta} moves {fill} outside [0, {capacity}]")]
    ChangeOutOfRange {
        fill: String,
        delta: String,
        capacity: String,
    },
}

/// One step of the saturating fill dynamics.
#[inline]
pub fn saturate<T: Scalar>(fill: T, net_change: T, capacity: T) -> T {
    (fill + net_change).clamp_to(T::zero(), capacity)
}

/// Expected fill trajectory of one station.
#[derive(Debug, Clone, PartialEq)]
pub struct FillTrajectory<T> {
    pub station: usize,
    pub t0: i64,
    /// `fills[0]` is the start level; `fills.len() == horizon + 1`.
    pub fills: Vec<T>,
}

impl<T: Scalar> FillTrajectory<T> {
    pub fn propagate(station: usize, t0: i64, f0: T, capacity: T, net_change: &[T]) -> Self {
        FillTrajectory {
            station,
            t0,
            fills: propagate_fill(f0, capacity, net_change),
        }
    }

    pub fn at(&self, t: i64) -> Option<T> {
        usize::try_from(t - self.t0)
            .ok()
            .and_then(|i| self.fills.get(i).copied())
    }
}

/// Iterate the saturating dynamics over `net_change`. The result holds
/// `net_change.len() + 1` levels starting with `f0`.
pub fn propagate_fill<T: Scalar>(f0: T, capacity: T, net_change: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(net_change.len() + 1);
    let mut f = f0;
    out.push(f);
    for &eta in net_change {
        f = saturate(f, eta, capacity);
        out.push(f);
    }
    out
}

fn check_change<T: Scalar>(capacity: T, fill: T, delta: T) -> Result<(), UtilityError> {
    let zero = T::zero();
    if fill < zero || fill > capacity {
        return Err(UtilityError::FillOutOfRange {
            fill: format!("{fill:?}"),
            capacity: format!("{capacity:?}"),
        });
    }
    let target = fill + delta;
    if target < zero || target > capacity {
        return Err(UtilityError::ChangeOutOfRange {
            fill: format!("{fill:?}"),
            delta: format!("{delta:?}"),
            capacity: format!("{capacity:?}"),
        });
    }
    Ok(())
}

/// Additional customers served over the horizon when the fill is changed by
/// `delta` now. The horizon is `net_change.len()` steps.
///
/// Both trajectories are advanced together; each step contributes the
/// difference of absolute fill movements, and the replay stops as soon as
/// the two trajectories coincide.
pub fn utility_exact<T: Scalar>(
    capacity: T,
    net_change: &[T],
    fill: T,
    delta: T,
) -> Result<T, UtilityError> {
    check_change(capacity, fill, delta)?;
    let mut original = fill;
    let mut changed = fill + delta;
    let mut utility = T::zero();
    for &eta in net_change {
        if changed == original {
            break;
        }
        let original_next = saturate(original, eta, capacity);
        let changed_next = saturate(changed, eta, capacity);
        utility = utility + (changed - changed_next).abs() - (original - original_next).abs();
        original = original_next;
        changed = changed_next;
    }
    Ok(utility)
}

/// Fill interval of constant maximal utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau<T> {
    pub lower: T,
    pub upper: T,
    /// Set when the station is pressured from both sides within the horizon
    /// and the interval collapses to a single crossing level.
    pub degenerate: bool,
}

impl<T: Scalar> Plateau<T> {
    pub fn full_range(capacity: T) -> Self {
        Plateau {
            lower: T::zero(),
            upper: capacity,
            degenerate: false,
        }
    }

    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> T {
        (self.lower + self.upper) / T::two()
    }

    pub fn contains(&self, fill: T) -> bool {
        fill >= self.lower && fill <= self.upper
    }

    /// Concave potential with slope +1 below the plateau, 0 on it and -1
    /// above; differences of it are utilities.
    #[inline]
    fn potential(&self, level: T) -> T {
        -(self.lower - level).positive_part() - (level - self.upper).positive_part()
    }
}

/// Plateau bounds from the cumulative net-change envelope.
///
/// A start level `x` first runs empty at the earliest step with
/// `x + C_t < 0` and first runs full at the earliest step with
/// `x + C_t > capacity`, where `C_t` is the cumulative net change. The
/// plateau is the set of levels that do neither. When the envelopes cross
/// the plateau collapses to the level separating "empties first" from
/// "fills first", which is the bound that was not moved at the crossing.
pub fn compute_plateau<T: Scalar>(capacity: T, net_change: &[T]) -> Plateau<T> {
    let mut lower = T::zero();
    let mut upper = capacity;
    let mut cumulative = T::zero();
    for &eta in net_change {
        cumulative = cumulative + eta;
        let next_lower = lower.max_of(-cumulative);
        let next_upper = upper.min_of(capacity - cumulative);
        if next_lower > next_upper {
            let crossing = if next_lower > lower { upper } else { lower };
            return Plateau {
                lower: crossing,
                upper: crossing,
                degenerate: true,
            };
        }
        lower = next_lower;
        upper = next_upper;
    }
    Plateau {
        lower,
        upper,
        degenerate: false,
    }
}

/// Plateau reconstructed from three exact utility evaluations.
///
/// Relative to an empty start the utility is `min(x, lower)` on the rising
/// side and falls with slope one past `upper`. Evaluating at `x = 0`,
/// `x = capacity` and at the intersection of the two outer lines recovers
/// both bounds. Used as a cross-check for [`compute_plateau`]; the
/// degenerate flag is not reconstructed.
pub fn plateau_from_three_calls<T: Scalar>(
    capacity: T,
    net_change: &[T],
) -> Result<Plateau<T>, UtilityError> {
    let zero = T::zero();
    let at_zero = utility_exact(capacity, net_change, zero, zero)?;
    debug_assert!(at_zero == zero);
    let at_full = utility_exact(capacity, net_change, zero, capacity)?;
    let apex = (at_full + capacity) / T::two();
    let height = utility_exact(capacity, net_change, zero, apex)?;
    Ok(Plateau {
        lower: height,
        upper: at_full + capacity - height,
        degenerate: false,
    })
}

/// Utility of changing `fill` by `delta`, read off the plateau.
#[inline]
pub fn utility_fast<T: Scalar>(plateau: &Plateau<T>, fill: T, delta: T) -> T {
    plateau.potential(fill + delta) - plateau.potential(fill)
}

/// Plateau bounds per station and per start time on a regular grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauTable<T> {
    start_minute: i64,
    stride: usize,
    steps: usize,
    stations: usize,
    entries: Vec<Plateau<T>>,
}

impl<T: Scalar> PlateauTable<T> {
    /// Build the table for start times `start_minute + i * stride`,
    /// `i < steps`, each looking `horizon` minutes ahead.
    /// `net_change(station, minute)` gives the per-minute net change.
    pub fn build<F>(
        capacities: &[T],
        start_minute: i64,
        steps: usize,
        stride: usize,
        horizon: usize,
        net_change: F,
    ) -> Self
    where
        F: Fn(usize, i64) -> T + Sync,
    {
        assert!(stride >= 1 && steps >= 1);
        let span = (steps - 1) * stride + horizon;
        let per_station: Vec<Vec<Plateau<T>>> = capacities
            .par_iter()
            .enumerate()
            .map(|(s, &cap)| {
                let eta: Vec<T> = (0..span)
                    .map(|m| net_change(s, start_minute + m as i64))
                    .collect();
                (0..steps)
                    .map(|i| compute_plateau(cap, &eta[i * stride..i * stride + horizon]))
                    .collect()
            })
            .collect();
        PlateauTable {
            start_minute,
            stride,
            steps,
            stations: capacities.len(),
            entries: per_station.into_iter().flatten().collect(),
        }
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn start_minute(&self) -> i64 {
        self.start_minute
    }

    /// Entry covering `minute`; times outside the table clamp to its ends.
    pub fn get(&self, station: usize, minute: i64) -> &Plateau<T> {
        let offset = (minute - self.start_minute).max(0) as usize / self.stride;
        let step = offset.min(self.steps - 1);
        &self.entries[station * self.steps + step]
    }

    pub fn degenerate_count(&self) -> usize {
        self.entries.iter().filter(|p| p.degenerate).count()
    }

    /// CSV dump: `station,minute,lower,upper,degenerate`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "station,minute,lower,upper,degenerate")?;
        for s in 0..self.stations {
            for i in 0..self.steps {
                let p = &self.entries[s * self.steps + i];
                writeln!(
                    out,
                    "{},{},{:?},{:?},{}",
                    s,
                    self.start_minute + (i * self.stride) as i64,
                    p.lower,
                    p.upper,
                    p.degenerate
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn q(n: i64, d: i64) -> Q {
        Ratio::new(n, d)
    }

    #[test]
    fn propagate_constant_when_no_net_change() {
        assert_eq!(propagate_fill(3.0, 10.0, &[0.0; 4]), vec![3.0; 5]);
    }

    #[test]
    fn propagate_saturates_at_capacity() {
        let traj = propagate_fill(9.0, 10.0, &[0.5; 5]);
        assert_eq!(traj, vec![9.0, 9.5, 10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn propagate_saturates_at_zero() {
        assert_eq!(propagate_fill(0.0, 10.0, &[-1.0; 3]), vec![0.0; 4]);
    }

    #[test]
    fn trajectory_lookup_by_absolute_time() {
        let t = FillTrajectory::propagate(2, 100, 1.0, 5.0, &[1.0, 1.0]);
        assert_eq!(t.at(101), Some(2.0));
        assert_eq!(t.at(99), None);
        assert_eq!(t.at(103), None);
    }

    #[test]
    fn zero_change_has_zero_utility() {
        assert_eq!(utility_exact(10.0, &[1.0, -2.0], 4.0, 0.0), Ok(0.0));
    }

    #[test]
    fn removing_bikes_from_full_station_serves_returns() {
        let eta = [1.0, 1.0, 1.0, 0.0, 0.0];
        assert_eq!(utility_exact(10.0, &eta, 10.0, -3.0), Ok(3.0));
    }

    #[test]
    fn flat_profile_never_binds() {
        let eta = [0.0; 50];
        for d in -5..=5 {
            assert_eq!(utility_exact(10.0, &eta, 5.0, d as f64), Ok(0.0));
        }
        assert_eq!(compute_plateau(10.0, &eta), Plateau::full_range(10.0));
    }

    #[test]
    fn infeasible_change_is_rejected() {
        assert!(matches!(
            utility_exact(10.0, &[0.0], 8.0, 3.0),
            Err(UtilityError::ChangeOutOfRange { .. })
        ));
        assert!(matches!(
            utility_exact(10.0, &[0.0], 11.0, 0.0),
            Err(UtilityError::FillOutOfRange { .. })
        ));
    }

    /// Empty station, 4 departures in the first hour then 12 net arrivals
    /// later: the cumulative minimum is -4 and capacity minus the cumulative
    /// maximum is 8.
    fn plateau_scenario() -> (Q, Vec<Q>) {
        let mut eta = vec![q(-1, 1); 4];
        eta.extend(vec![q(1, 1); 12]);
        eta.extend(vec![q(0, 1); 8]);
        (q(16, 1), eta)
    }

    #[test]
    fn plateau_of_empty_station_example() {
        let (cap, eta) = plateau_scenario();
        let p = compute_plateau(cap, &eta);
        assert_eq!((p.lower, p.upper), (q(4, 1), q(8, 1)));
        assert!(!p.degenerate);
        for d in 0..=16 {
            let d = q(d, 1);
            assert_eq!(
                utility_exact(cap, &eta, q(0, 1), d).unwrap(),
                utility_fast(&p, q(0, 1), d)
            );
        }
        assert_eq!(plateau_from_three_calls(cap, &eta).unwrap(), p);
    }

    #[test]
    fn fast_utility_worked_values() {
        let p = Plateau {
            lower: 4.0,
            upper: 8.0,
            degenerate: false,
        };
        assert_eq!(utility_fast(&p, 0.0, 4.0), 4.0);
        assert_eq!(utility_fast(&p, 0.0, 6.0), 4.0);
        assert_eq!(utility_fast(&p, 0.0, 9.0), 3.0);
        assert_eq!(utility_fast(&p, 5.0, 2.0), 0.0);
        assert_eq!(utility_fast(&p, 5.0, 0.0), 0.0);
    }

    #[test]
    fn degenerate_plateau_is_crossing_level() {
        // fills by 6 in two steps, then drains by 15
        let eta = [3.0, 3.0, -15.0];
        let p = compute_plateau(10.0, &eta);
        assert!(p.degenerate);
        assert_eq!(p.lower, p.upper);
        for f in 0..=10 {
            for d in -f..=(10 - f) {
                let (f, d) = (f as f64, d as f64);
                assert_eq!(
                    utility_exact(10.0, &eta, f, d).unwrap(),
                    utility_fast(&p, f, d),
                    "f={f} d={d}"
                );
            }
        }
        let three = plateau_from_three_calls(10.0, &eta).unwrap();
        assert_eq!((three.lower, three.upper), (p.lower, p.upper));
    }

    #[test]
    fn table_lookup_and_dump() {
        let caps = [10.0, 4.0];
        let table = PlateauTable::build(&caps, 60, 3, 5, 20, |s, _| if s == 0 { 0.0 } else { -0.5 });
        assert_eq!(table.get(0, 0), &Plateau::full_range(10.0));
        let p = table.get(1, 1000);
        assert_eq!((p.lower, p.upper), (4.0, 4.0));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        assert!(text.starts_with("station,minute,lower,upper,degenerate\n0,60,"));
    }
}
