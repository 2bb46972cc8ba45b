//! Multi-chain convergence diagnostics.

use crate::error::{arg, Result};

fn check_chains(chains: &[&[f64]], min_len: usize) -> Result<usize> {
    if chains.len() < 2 {
        return arg(format!("at least 2 chains required, got {}", chains.len()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return arg("chains must have equal length");
    }
    if n < min_len {
        return arg(format!("chains need at least {min_len} draws, got {n}"));
    }
    if chains.iter().flat_map(|c| c.iter()).any(|x| !x.is_finite()) {
        return arg("draws must be finite");
    }
    Ok(n)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `true` when every draw in every chain is identical.
pub fn is_constant(chains: &[&[f64]]) -> bool {
    let first = chains.iter().find_map(|c| c.first().copied());
    match first {
        Some(x0) => chains.iter().all(|c| c.iter().all(|x| *x == x0)),
        None => true,
    }
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// truncation. Constant input returns the total draw count. The result is
/// capped at the total draw count.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64> {
    let n = check_chains(chains, 4)?;
    let m = chains.len();
    let total = (m * n) as f64;
    if is_constant(chains) {
        return Ok(total);
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let centred: Vec<Vec<f64>> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| x - mu).collect())
        .collect();
    // biased autocovariance at `lag`, averaged over chains
    let mean_acov = |lag: usize| -> f64 {
        centred
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64
    };
    let acov0 = mean_acov(0);
    let within = acov0 * nf / (nf - 1.0);
    let between_over_n = sample_var(&means);
    let var_plus = within * (nf - 1.0) / nf + between_over_n;
    if var_plus <= 0.0 {
        return Ok(total);
    }
    let rho = |lag: usize, acov: f64| -> f64 {
        if lag == 0 {
            1.0
        } else {
            1.0 - (within - acov) / var_plus
        }
    };

    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let r0 = rho(lag, if lag == 0 { acov0 } else { mean_acov(lag) });
        let r1 = rho(lag + 1, mean_acov(lag + 1));
        let mut pair = r0 + r1;
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total.log10().max(1.0));
    Ok((total / tau).min(total))
}

/// Split-R̂. Each chain is cut in half (a trailing odd draw is dropped) and the
/// potential scale reduction is computed over the resulting sequences.
/// Zero within-sequence variance is reported as `1`.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    let n = check_chains(chains, 4)?;
    let half = n / 2;
    let seqs: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[half..2 * half]]).collect();
    let hf = half as f64;
    let within = seqs.iter().map(|s| sample_var(s)).sum::<f64>() / seqs.len() as f64;
    if within <= 0.0 {
        return Ok(1.0);
    }
    let seq_means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let between = hf * sample_var(&seq_means);
    let var_plus = (hf - 1.0) / hf * within + between / hf;
    Ok((var_plus / within).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|c| c.as_slice()).collect()
    }

    #[test]
    fn iid_ess_near_row_count() {
        let chains = normal_chains(4, 2500, 1);
        let ess = effective_sample_size(&slices(&chains)).unwrap();
        assert!((8000.0..=10000.0).contains(&ess), "{ess}");
    }

    #[test]
    fn ar1_ess_matches_analytic_value() {
        let rho = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..25_000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = rho * x + (1.0f64 - rho * rho).sqrt() * e;
                        x
                    })
                    .collect()
            })
            .collect();
        let rows = 100_000.0;
        let expected = rows * (1.0 - rho) / (1.0 + rho);
        let ess = effective_sample_size(&slices(&chains)).unwrap();
        assert!((ess - expected).abs() / expected < 0.3, "{ess} vs {expected}");
    }

    #[test]
    fn constant_column_convention() {
        let chains = vec![vec![2.5; 50], vec![2.5; 50]];
        assert_eq!(effective_sample_size(&slices(&chains)).unwrap(), 100.0);
        assert_eq!(split_rhat(&slices(&chains)).unwrap(), 1.0);
    }

    #[test]
    fn rhat_iid_and_non_mixing() {
        let chains = normal_chains(4, 2000, 9);
        let r = split_rhat(&slices(&chains)).unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");

        let mut shifted = normal_chains(2, 1000, 10);
        for x in shifted[1].iter_mut() {
            *x += 10.0;
        }
        assert!(split_rhat(&slices(&shifted)).unwrap() > 1.1);
    }

    #[test]
    fn single_chain_rejected() {
        let chains = normal_chains(1, 100, 2);
        assert!(split_rhat(&slices(&chains)).is_err());
        assert!(effective_sample_size(&slices(&chains)).is_err());
    }
}
