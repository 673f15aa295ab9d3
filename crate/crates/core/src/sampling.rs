//! Random draws used by the learning pipeline: Dirichlet mixtures, multinomial
//! opponent profiles and Beta-shaped parameter neighborhoods.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma};

use crate::game::{Mixture, OpponentProfile};

/// Draw from `Dir(alpha)` by normalizing independent Gamma variates.
///
/// For very small concentrations every Gamma draw can underflow to zero; the
/// draw then degenerates to a pure mixture on a categorical pick weighted by
/// `alpha`, which is the limiting distribution.
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Mixture {
    assert!(!alpha.is_empty() && alpha.iter().all(|a| *a > 0.0), "Dirichlet concentrations must be positive");
    let draws: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).expect("valid gamma").sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        return Mixture::from_weights(draws).expect("positive weights");
    }
    let total: f64 = alpha.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut pick = alpha.len() - 1;
    for (i, a) in alpha.iter().enumerate() {
        if u < *a {
            pick = i;
            break;
        }
        u -= a;
    }
    Mixture::pure(alpha.len(), pick)
}

/// Draw from the symmetric Dirichlet `Dir(alpha * 1)`.
pub fn symmetric_dirichlet<R: Rng + ?Sized>(num_strategies: usize, alpha: f64, rng: &mut R) -> Mixture {
    dirichlet(&vec![alpha; num_strategies], rng)
}

/// One multinomial draw of `trials` opponents over `mix`, via sequential
/// conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(trials: u32, mix: &Mixture, rng: &mut R) -> OpponentProfile {
    let probs = mix.probs();
    let mut counts = vec![0u32; probs.len()];
    let mut remaining = trials as u64;
    let mut mass_left = 1.0f64;
    for (j, &q) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j + 1 == probs.len() {
            counts[j] = remaining as u32;
            break;
        }
        let p = if mass_left > 0.0 { (q / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let k = if p >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining, p).expect("valid binomial").sample(rng)
        };
        counts[j] = k as u32;
        remaining -= k;
        mass_left -= q;
    }
    OpponentProfile::new(counts)
}

/// Draw from a Beta distribution with mean `mean` and concentration `omega`
/// (`a = mean * omega`, `b = (1 - mean) * omega`). The mean is clamped away
/// from 0 and 1 so both shape parameters stay positive.
pub fn beta_around<R: Rng + ?Sized>(mean: f64, omega: f64, rng: &mut R) -> f64 {
    let m = mean.clamp(1e-6, 1.0 - 1e-6);
    Beta::new(m * omega, (1.0 - m) * omega).expect("valid beta").sample(rng)
}
