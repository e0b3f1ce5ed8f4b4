//! Paired comparison statistics across seeds.

use statrs::distribution::{Binomial, DiscreteCDF};

/// One-sided sign-test p-value: probability of at least `wins` successes in
/// `trials` fair coin flips. Ties should be dropped before calling.
pub fn sign_test_p(wins: u64, trials: u64) -> f64 {
    assert!(wins <= trials, "wins {wins} exceed trials {trials}");
    if wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, trials).expect("p = 0.5 is valid");
    b.sf(wins - 1)
}

/// Wins and decided trials for paired scores, where `None` means the score is
/// undefined. An undefined baseline against a defined candidate is a win; an
/// undefined candidate is a loss; exact ties are dropped.
pub fn paired_wins(candidate: &[Option<f64>], baseline: &[Option<f64>]) -> (u64, u64) {
    assert_eq!(
        candidate.len(),
        baseline.len(),
        "paired series differ in length"
    );
    let mut wins = 0;
    let mut trials = 0;
    for (c, b) in candidate.iter().zip(baseline) {
        match (c, b) {
            (Some(c), Some(b)) if c == b => {}
            (Some(c), Some(b)) => {
                trials += 1;
                wins += u64::from(c > b);
            }
            (Some(_), None) => {
                trials += 1;
                wins += 1;
            }
            (None, Some(_)) => trials += 1,
            (None, None) => {}
        }
    }
    (wins, trials)
}
