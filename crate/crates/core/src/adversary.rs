//! Binary discriminator trained to separate preferred transitions from the
//! policy's own, with the logit corrected by the policy's log-density.
//!
//! The score network `f` sees a feature vector (a state, a state-action
//! pair, or a state-successor pair depending on the algorithm); the
//! classifier is `D = sigmoid(f(x) - log_pi)`, where `log_pi` is supplied by
//! the caller and treated as a constant, and plain GAN-style discrimination
//! is the `log_pi = 0` special case. All log-probabilities of the classifier
//! go through [`softplus`] so that `log D - log(1 - D)` reproduces
//! `f - log_pi` to machine precision instead of saturating.

use crate::error::{Error, Result};
use crate::nn::{Activation, InputNorm, Network, Optimizer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Numerically stable `log(1 + exp(z))`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable logistic function, exact at 0 and monotone saturating.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log sigmoid(z)`, stable for arbitrarily negative `z`.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// `log D - log(1 - D)` for `D = sigmoid(z)`, computed through the log
/// domain. Algebraically this is `z` itself; keeping the explicit two-term
/// route lets tests check that the reward used in training coincides with
/// the density-ratio form.
pub fn log_d_ratio(z: f64) -> f64 {
    log_sigmoid(z) - log_sigmoid(-z)
}

/// Reward used by the classifier-only baselines: `-log(1 - D)` of the raw
/// logit, which is `softplus(logit)`.
pub fn gan_reward(logit: f64) -> f64 {
    softplus(logit)
}

#[derive(Debug, Clone, Copy)]
pub struct DiscConfig {
    pub lr: f64,
    pub steps: usize,
    pub minibatch: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { lr: 3e-4, steps: 5, minibatch: 256 }
    }
}

/// Cross-entropy before the first step, after the last one, the per-step
/// minibatch losses in between, and the post-update mean classifications.
#[derive(Debug, Clone)]
pub struct DiscStats {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub step_losses: Vec<f64>,
    pub mean_positive_d: f64,
    pub mean_negative_d: f64,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Network,
    norm: InputNorm,
    opt: Optimizer,
    cfg: DiscConfig,
}

impl Discriminator {
    pub fn new(input_dim: usize, hidden_width: usize, cfg: DiscConfig, seed: u64) -> Result<Self> {
        let net = Network::xavier(
            &[input_dim, hidden_width, hidden_width, 1],
            Activation::Tanh,
            Activation::Identity,
            seed,
        )?;
        Ok(Self::with_net(net, cfg))
    }

    pub fn with_net(net: Network, cfg: DiscConfig) -> Self {
        let dim = net.input_dim();
        let n = net.n_params();
        Discriminator { net, norm: InputNorm::identity(dim), opt: Optimizer::adam(cfg.lr, n), cfg }
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn set_input_norm(&mut self, norm: InputNorm) -> Result<()> {
        if norm.dim() != self.net.input_dim() {
            return Err(Error::contract(format!(
                "norm has {} dims, discriminator input has {}",
                norm.dim(),
                self.net.input_dim()
            )));
        }
        self.norm = norm;
        Ok(())
    }

    /// Raw score of the network, before any log-density correction.
    pub fn f_value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.norm.apply(x)?)?[0])
    }

    pub fn d_value(&self, x: &[f64], log_pi: f64) -> Result<f64> {
        Ok(sigmoid(self.f_value(x)? - log_pi))
    }

    fn mean_d(&self, xs: &[Vec<f64>], log_pi: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for (x, lp) in xs.iter().zip(log_pi) {
            sum += self.d_value(x, *lp)?;
        }
        Ok(sum / xs.len() as f64)
    }

    /// Binary cross-entropy with positives labeled 1 and negatives 0, each
    /// side contributing its own mean.
    pub fn bce_loss(
        &self,
        pos_x: &[Vec<f64>],
        pos_log_pi: &[f64],
        neg_x: &[Vec<f64>],
        neg_log_pi: &[f64],
    ) -> Result<f64> {
        check_sides(pos_x, pos_log_pi, neg_x, neg_log_pi)?;
        let mut loss = 0.0;
        for (x, lp) in pos_x.iter().zip(pos_log_pi) {
            loss += softplus(-(self.f_value(x)? - lp)) / pos_x.len() as f64;
        }
        for (x, lp) in neg_x.iter().zip(neg_log_pi) {
            loss += softplus(self.f_value(x)? - lp) / neg_x.len() as f64;
        }
        Ok(loss)
    }

    /// Loss and its exact gradient on fixed batches. The log-density terms
    /// are constants here; gradient flows only through the score network.
    pub fn bce_loss_grads(
        &self,
        pos_x: &[Vec<f64>],
        pos_log_pi: &[f64],
        neg_x: &[Vec<f64>],
        neg_log_pi: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        check_sides(pos_x, pos_log_pi, neg_x, neg_log_pi)?;
        let mut grads = vec![0.0; self.net.n_params()];
        let mut loss = 0.0;
        let pw = 1.0 / pos_x.len() as f64;
        for (x, lp) in pos_x.iter().zip(pos_log_pi) {
            let trace = self.net.traced_forward(&self.norm.apply(x)?)?;
            let z = trace.output()[0] - lp;
            loss += softplus(-z) * pw;
            self.net.backward(&trace, &[(sigmoid(z) - 1.0) * pw], &mut grads);
        }
        let nw = 1.0 / neg_x.len() as f64;
        for (x, lp) in neg_x.iter().zip(neg_log_pi) {
            let trace = self.net.traced_forward(&self.norm.apply(x)?)?;
            let z = trace.output()[0] - lp;
            loss += softplus(z) * nw;
            self.net.backward(&trace, &[sigmoid(z) * nw], &mut grads);
        }
        Ok((loss, grads))
    }

    /// Runs the configured number of minibatch steps. Each step draws fresh
    /// minibatches without replacement from both sides; sides smaller than
    /// the minibatch are used whole.
    pub fn update(
        &mut self,
        pos_x: &[Vec<f64>],
        pos_log_pi: &[f64],
        neg_x: &[Vec<f64>],
        neg_log_pi: &[f64],
        seed: u64,
    ) -> Result<DiscStats> {
        check_sides(pos_x, pos_log_pi, neg_x, neg_log_pi)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial_loss = self.bce_loss(pos_x, pos_log_pi, neg_x, neg_log_pi)?;
        let mut step_losses = Vec::with_capacity(self.cfg.steps);

        let mut pos_idx: Vec<usize> = (0..pos_x.len()).collect();
        let mut neg_idx: Vec<usize> = (0..neg_x.len()).collect();
        for _ in 0..self.cfg.steps {
            pos_idx.shuffle(&mut rng);
            neg_idx.shuffle(&mut rng);
            let take = |idx: &[usize], xs: &[Vec<f64>], lps: &[f64], m: usize| {
                let m = m.min(idx.len());
                let bx: Vec<Vec<f64>> = idx[..m].iter().map(|&i| xs[i].clone()).collect();
                let blp: Vec<f64> = idx[..m].iter().map(|&i| lps[i]).collect();
                (bx, blp)
            };
            let (bpx, bplp) = take(&pos_idx, pos_x, pos_log_pi, self.cfg.minibatch);
            let (bnx, bnlp) = take(&neg_idx, neg_x, neg_log_pi, self.cfg.minibatch);
            let (loss, grads) = self.bce_loss_grads(&bpx, &bplp, &bnx, &bnlp)?;
            step_losses.push(loss);
            self.opt.step(self.net.params_mut(), &grads)?;
        }

        let final_loss = self.bce_loss(pos_x, pos_log_pi, neg_x, neg_log_pi)?;
        Ok(DiscStats {
            initial_loss,
            final_loss,
            step_losses,
            mean_positive_d: self.mean_d(pos_x, pos_log_pi)?,
            mean_negative_d: self.mean_d(neg_x, neg_log_pi)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("disc v1\n");
        out.push_str(&self.norm.to_text());
        out.push_str(&self.net.to_text());
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Restores scoring state; optimizer moments start fresh.
    pub fn load(path: &Path, cfg: DiscConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| Error::parse("empty discriminator checkpoint"))?;
        if magic.trim() != "disc v1" {
            return Err(Error::parse(format!("bad discriminator header `{magic}`")));
        }
        let norm = InputNorm::from_lines(&mut lines)?;
        let rest: Vec<&str> = lines.collect();
        let net = Network::from_text(&rest.join("\n"))?;
        let mut disc = Self::with_net(net, cfg);
        disc.set_input_norm(norm)?;
        Ok(disc)
    }
}

fn check_sides(pos_x: &[Vec<f64>], pos_log_pi: &[f64], neg_x: &[Vec<f64>], neg_log_pi: &[f64]) -> Result<()> {
    if pos_x.is_empty() || neg_x.is_empty() {
        return Err(Error::precondition("discriminator needs non-empty positive and negative batches"));
    }
    if pos_x.len() != pos_log_pi.len() || neg_x.len() != neg_log_pi.len() {
        return Err(Error::contract(format!(
            "batch sizes disagree: {} pos / {} log_pi, {} neg / {} log_pi",
            pos_x.len(),
            pos_log_pi.len(),
            neg_x.len(),
            neg_log_pi.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_column(n: usize, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![mean + std * rng.sample::<f64, _>(StandardNormal)]).collect()
    }

    #[test]
    fn sigmoid_hits_its_landmark_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(3.0_f64.ln()), 0.75);
        // Saturation: the complement is computed through the negative branch
        // and stays meaningful far past where 1 - sigmoid(z) rounds to zero.
        assert!(sigmoid(-40.0) < 1e-17);
        assert!(sigmoid(-40.0) > 0.0);
        assert!((sigmoid(5.0) + sigmoid(-5.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_at_both_extremes() {
        assert_eq!(softplus(0.0), 2.0_f64.ln());
        // Below exp's underflow threshold the result is exactly zero; just
        // above it the result is still a meaningful positive subnormal.
        assert_eq!(softplus(-760.0), 0.0);
        assert!(softplus(-700.0) > 0.0);
        assert_eq!(softplus(745.0), 745.0);
        assert!((softplus(1.5) - (1.0 + 1.5_f64.exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn log_ratio_of_the_classifier_recovers_its_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..1000 {
            let z = rng.gen_range(-35.0..35.0);
            assert!((log_d_ratio(z) - z).abs() <= 1e-9, "z = {z}");
        }
        assert_eq!(log_d_ratio(0.0), 0.0);
    }

    #[test]
    fn d_value_subtracts_the_log_density_from_a_known_score() {
        let mut net = Network::zeros(&[1, 1], Activation::Tanh, Activation::Identity).unwrap();
        net.set_params(&[1.0, 0.0]).unwrap();
        let disc = Discriminator::with_net(net, DiscConfig::default());
        assert_eq!(disc.d_value(&[0.0], 0.0).unwrap(), 0.5);
        assert_eq!(disc.d_value(&[3.0_f64.ln()], 0.0).unwrap(), 0.75);
        // Raising log_pi by ln 3 moves the same input back to even odds.
        assert_eq!(disc.d_value(&[3.0_f64.ln()], 3.0_f64.ln()).unwrap(), 0.5);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut disc = Discriminator::new(2, 6, DiscConfig::default(), 41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pos: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let neg: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let plp: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..0.0)).collect();
        let nlp: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..0.0)).collect();
        let (_, grads) = disc.bce_loss_grads(&pos, &plp, &neg, &nlp).unwrap();
        let eps = 1e-5;
        for i in (0..disc.net().n_params()).step_by(5) {
            let orig = disc.net().params()[i];
            disc.net_mut().params_mut()[i] = orig + eps;
            let up = disc.bce_loss(&pos, &plp, &neg, &nlp).unwrap();
            disc.net_mut().params_mut()[i] = orig - eps;
            let down = disc.bce_loss(&pos, &plp, &neg, &nlp).unwrap();
            disc.net_mut().params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(grads[i].abs()).max(1e-8);
            assert!((fd - grads[i]).abs() / denom < 1e-4, "param {i}: fd {fd} vs grad {}", grads[i]);
        }
    }

    #[test]
    fn two_hundred_steps_separate_disjoint_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let pos = gaussian_column(100, 2.0, 0.5, &mut rng);
        let neg = gaussian_column(100, -2.0, 0.5, &mut rng);
        let zeros = vec![0.0; 100];
        let cfg = DiscConfig { steps: 200, ..DiscConfig::default() };
        let mut disc = Discriminator::new(1, 64, cfg, 44).unwrap();
        let stats = disc.update(&pos, &zeros, &neg, &zeros, 45).unwrap();
        assert!(stats.mean_positive_d > 0.9, "mean D on positives {}", stats.mean_positive_d);
        assert!(stats.mean_negative_d < 0.1, "mean D on negatives {}", stats.mean_negative_d);
        assert!(stats.final_loss < stats.initial_loss);
    }

    #[test]
    fn full_batch_losses_do_not_increase_across_default_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let pos = gaussian_column(40, 1.0, 1.0, &mut rng);
        let neg = gaussian_column(40, -1.0, 1.0, &mut rng);
        let zeros = vec![0.0; 40];
        // Minibatch covers both sides, so each step sees the whole batch.
        let mut disc = Discriminator::new(1, 32, DiscConfig::default(), 47).unwrap();
        let stats = disc.update(&pos, &zeros, &neg, &zeros, 48).unwrap();
        assert_eq!(stats.step_losses.len(), 5);
        // Same full batch, potentially different summation order.
        assert!((stats.step_losses[0] - stats.initial_loss).abs() < 1e-12);
        for w in stats.step_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "step losses {:?}", stats.step_losses);
        }
        assert!(stats.final_loss <= stats.step_losses[4] + 1e-12);
    }

    #[test]
    fn update_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let pos = gaussian_column(300, 0.5, 1.0, &mut rng);
        let neg = gaussian_column(300, -0.5, 1.0, &mut rng);
        let zeros = vec![0.0; 300];
        let make = || Discriminator::new(1, 16, DiscConfig { minibatch: 64, ..DiscConfig::default() }, 50).unwrap();
        let mut d1 = make();
        let mut d2 = make();
        let s1 = d1.update(&pos, &zeros, &neg, &zeros, 51).unwrap();
        let s2 = d2.update(&pos, &zeros, &neg, &zeros, 51).unwrap();
        assert_eq!(s1.step_losses, s2.step_losses);
        assert_eq!(d1.net().params(), d2.net().params());
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let mut disc = Discriminator::new(3, 12, DiscConfig::default(), 52).unwrap();
        disc.set_input_norm(InputNorm::new(vec![0.5, -1.0, 2.0], vec![2.0, 1.0, 0.25]).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.ckpt");
        disc.save(&path).unwrap();
        let loaded = Discriminator::load(&path, DiscConfig::default()).unwrap();
        let x = vec![0.1, 0.2, -0.3];
        assert_eq!(disc.f_value(&x).unwrap(), loaded.f_value(&x).unwrap());
    }

    #[test]
    fn update_rejects_empty_or_mismatched_batches() {
        let mut disc = Discriminator::new(1, 4, DiscConfig::default(), 53).unwrap();
        let xs = vec![vec![1.0]];
        let lp = vec![0.0];
        assert!(matches!(disc.update(&[], &[], &xs, &lp, 0), Err(Error::Precondition(_))));
        assert!(matches!(disc.update(&xs, &[], &xs, &lp, 0), Err(Error::Contract(_))));
    }
}
