use crate::error::{invalid, Result};

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Maps observed times to 1-based intervals in `[1, k]`.
///
/// Interior edges are the `k`-quantiles of the uncensored times. A time
/// equal to an edge falls into the lower interval, so identical times all
/// land in interval 1 and anything past the last edge lands in `k`.
pub fn discretize_event_times(times: &[f64], censored: &[bool], k: usize) -> Result<Vec<usize>> {
    if times.len() != censored.len() {
        return invalid(format!(
            "{} times but {} censoring flags",
            times.len(),
            censored.len()
        ));
    }
    if k < 2 {
        return invalid(format!("need at least 2 intervals, got {k}"));
    }
    let mut events: Vec<f64> = times
        .iter()
        .zip(censored)
        .filter(|(_, &c)| !c)
        .map(|(&t, _)| t)
        .collect();
    if events.len() < k {
        return invalid(format!(
            "{} uncensored events cannot define {} intervals",
            events.len(),
            k
        ));
    }
    events.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..k).map(|i| quantile(&events, i as f64 / k as f64)).collect();
    Ok(times
        .iter()
        .map(|&t| 1 + edges.iter().filter(|&&e| t > e).count())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_split() {
        let y = discretize_event_times(&[1.0, 2.0, 3.0, 4.0], &[false; 4], 2).unwrap();
        assert_eq!(y, vec![1, 1, 2, 2]);
    }

    #[test]
    fn identical_times_collapse_to_first_interval() {
        let y = discretize_event_times(&[5.0; 6], &[false; 6], 4).unwrap();
        assert_eq!(y, vec![1; 6]);
    }

    #[test]
    fn late_censored_time_clamps_to_last_interval() {
        let times = [1.0, 2.0, 3.0, 4.0, 100.0];
        let cens = [false, false, false, false, true];
        let y = discretize_event_times(&times, &cens, 4).unwrap();
        assert_eq!(y[4], 4);
    }

    #[test]
    fn too_few_events() {
        let err = discretize_event_times(&[1.0, 2.0, 3.0], &[false, true, true], 2);
        assert!(err.is_err());
    }

    #[test]
    fn monotone_in_time() {
        let times: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 * 0.3).collect();
        let cens: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let y = discretize_event_times(&times, &cens, 4).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                if times[i] <= times[j] {
                    assert!(y[i] <= y[j]);
                }
            }
        }
    }
}
