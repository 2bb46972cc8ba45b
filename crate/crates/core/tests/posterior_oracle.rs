//! Grid-integration oracle for the sampler on exponential data.

use bpgwsp_core::mcmc::{run_chains, McmcSettings};
use bpgwsp_core::pgw::{sample_pgw, PgwParams, TteDataset};
use bpgwsp_core::prior::{Param, PriorFamily, PriorSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn axis(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|j| lo.ln() + (hi.ln() - lo.ln()) * j as f64 / (k - 1) as f64)
        .collect()
}

/// Posterior means by quadrature over a uniform grid in log-parameter space.
/// Lognormal(mean 1, sd 10) priors on all three parameters.
fn grid_posterior_mean(times: &[f64], lo: [f64; 3], hi: [f64; 3], k: [usize; 3]) -> [f64; 3] {
    let s2 = 101f64.ln();
    let mu = -0.5 * s2;
    let log_t: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let sum_log_t: f64 = log_t.iter().sum();
    let n = times.len() as f64;
    let (a_ax, b_ax, c_ax) = (
        axis(lo[0], hi[0], k[0]),
        axis(lo[1], hi[1], k[1]),
        axis(lo[2], hi[2], k[2]),
    );

    let mut cells = Vec::new();
    for &a in &a_ax {
        for &b in &b_ax {
            for &c in &c_ax {
                let (nu, g) = (b.exp(), c.exp());
                let mut sum_l = 0.0;
                let mut sum_s = 0.0;
                for &lt in &log_t {
                    let z = nu * (lt - a);
                    let l = if z > 30.0 { z + (-z).exp() } else { z.exp().ln_1p() };
                    sum_l += l;
                    sum_s += 1.0 - (l / g).exp();
                }
                let ll = sum_s + n * (b - c - nu * a) + (nu - 1.0) * sum_log_t + (1.0 / g - 1.0) * sum_l;
                // prior density of the log-parameters is Normal(mu, s2) in each coordinate
                let lp = [a, b, c].iter().map(|x| -(x - mu).powi(2) / (2.0 * s2)).sum::<f64>();
                let w = ll + lp;
                cells.push((if w.is_finite() { w } else { f64::NEG_INFINITY }, [a, b, c]));
            }
        }
    }
    let mx = cells.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut m = [0.0; 3];
    for (lw, x) in &cells {
        let w = (lw - mx).exp();
        z += w;
        for i in 0..3 {
            m[i] += w * x[i].exp();
        }
    }
    m.map(|v| v / z)
}

#[test]
fn exponential_posterior_matches_grid_oracle() {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times = sample_pgw(n, &PgwParams::exponential(2.0).unwrap(), &mut rng).unwrap();
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let data = TteDataset::new(times.clone(), vec![true; n], horizon).unwrap();

    let oracle = grid_posterior_mean(&times, [0.05, 0.5, 0.001], [1e4, 2.0, 50.0], [90, 40, 90]);

    let spec = PriorSpec::null(PriorFamily::LogLogLog, 10.0).unwrap();
    let settings = McmcSettings {
        iters_per_chain: 5000,
        seed: 5,
        ..Default::default()
    };
    let draws = run_chains(&data, &spec, &settings).unwrap();
    for (i, which) in Param::ALL.into_iter().enumerate() {
        let m = draws.mean(which).unwrap();
        eprintln!("{which}: sampler {m:.4} oracle {:.4}", oracle[i]);
        assert!(
            (m - oracle[i]).abs() < 0.05 * oracle[i],
            "{which}: sampler {m} vs oracle {}",
            oracle[i]
        );
    }
}
