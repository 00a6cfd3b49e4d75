//! Training objectives: discriminator-feature reconstruction, KL prior,
//! summary-rate sparsity and the adversarial terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Variant;
use crate::tensor::{Graph, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// `‖φ(x) − φ(x̂)‖²`
pub fn reconstruction_loss(g: &mut Graph, phi_x: Var, phi_xhat: Var) -> Result<Var> {
    if g.shape(phi_x) != g.shape(phi_xhat) {
        return Err(Error::Contract(format!(
            "reconstruction features differ in shape: {:?} vs {:?}",
            g.shape(phi_x),
            g.shape(phi_xhat)
        )));
    }
    let diff = g.sub(phi_x, phi_xhat)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum(sq, None)?)
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, I)`:
/// `−½ Σ (1 + logvar − mu² − exp(logvar))`.
pub fn prior_loss(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::Contract("mu and logvar differ in shape".into()));
    }
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let t = g.sub(logvar, mu2)?;
    let t = g.sub(t, var)?;
    let s = g.sum(t, None)?;
    let n = g.value(mu).numel() as f64;
    // −½(n + Σ(logvar − mu² − var))
    let s = g.scale(s, -0.5)?;
    let c = g.constant(crate::tensor::Tensor::scalar(-0.5 * n));
    Ok(g.add(s, c)?)
}

/// `|mean(s) − σ|`
pub fn sparsity_loss(g: &mut Graph, scores: Var, sigma: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::Contract(format!("summary rate {sigma} outside [0, 1]")));
    }
    if g.value(scores).data().iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::Contract("scores outside [0, 1]".into()));
    }
    let m = g.mean(scores, None)?;
    let target = g.constant(crate::tensor::Tensor::scalar(sigma));
    let d = g.sub(m, target)?;
    Ok(g.abs(d)?)
}

/// The adversarial terms for one video.
#[derive(Clone, Copy, Debug)]
pub struct GanTerms {
    /// `log D(x) + log(1 − D(x̂)) + log(1 − D(x̂_p))`, maximized by the discriminator.
    pub objective: Var,
    /// `−objective`, minimized in the discriminator update.
    pub discriminator_loss: Var,
    /// Non-saturating generator loss `−log D(x̂) − log D(x̂_p)`.
    pub generator_loss: Var,
}

fn clamped_prob(g: &mut Graph, p: Var, what: &str) -> Result<Var> {
    let v = g.value(p);
    if v.numel() != 1 || !(0.0..=1.0).contains(&v.data()[0]) {
        return Err(Error::Contract(format!(
            "{what} must be a probability, got {:?}",
            v.data()
        )));
    }
    Ok(g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?)
}

fn log_one_minus(g: &mut Graph, p: Var) -> Result<Var> {
    let neg = g.neg(p)?;
    let one = g.constant(crate::tensor::Tensor::scalar(1.0));
    let q = g.add(one, neg)?;
    Ok(g.log(q)?)
}

pub fn gan_losses(g: &mut Graph, d_x: Var, d_xhat: Var, d_xhat_p: Var) -> Result<GanTerms> {
    let px = clamped_prob(g, d_x, "D(x)")?;
    let ph = clamped_prob(g, d_xhat, "D(x̂)")?;
    let pp = clamped_prob(g, d_xhat_p, "D(x̂_p)")?;
    let real = g.log(px)?;
    let fake = log_one_minus(g, ph)?;
    let fake_p = log_one_minus(g, pp)?;
    let objective = g.add(real, fake)?;
    let objective = g.add(objective, fake_p)?;
    let discriminator_loss = g.neg(objective)?;
    let lh = g.log(ph)?;
    let lp = g.log(pp)?;
    let s = g.add(lh, lp)?;
    let generator_loss = g.neg(s)?;
    Ok(GanTerms {
        objective,
        discriminator_loss,
        generator_loss,
    })
}

/// Generator-side adversarial loss restricted to the discriminator outputs it
/// is given; used when only a subset of fakes is available.
pub fn generator_loss(g: &mut Graph, fakes: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in fakes {
        let p = clamped_prob(g, p, "D(fake)")?;
        let l = g.log(p)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("no fake probabilities".into()))?;
    Ok(g.neg(total)?)
}

/// Scalar values of every loss term for one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub reconst: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prior: Option<f64>,
    pub sparsity: f64,
    pub gan_d: f64,
    pub gan_g: f64,
    pub sigma_target: f64,
}

/// Loss values before variant-specific composition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub reconst: f64,
    pub prior: Option<f64>,
    pub sparsity: f64,
    pub gan_d: f64,
    pub gan_g: f64,
}

/// Packs the parts, keeping the prior term exactly when the variant has a VAE.
pub fn compose(variant: Variant, parts: LossParts, sigma_target: f64) -> Result<LossBundle> {
    let prior = match (variant.has_vae(), parts.prior) {
        (true, Some(p)) => Some(p),
        (false, None) => None,
        (true, None) => {
            return Err(Error::Contract(format!("{} requires a prior loss", variant.name())))
        }
        (false, Some(_)) => {
            return Err(Error::Contract(format!("{} has no VAE prior", variant.name())))
        }
    };
    let bundle = LossBundle {
        reconst: parts.reconst,
        prior,
        sparsity: parts.sparsity,
        gan_d: parts.gan_d,
        gan_g: parts.gan_g,
        sigma_target,
    };
    let values = [bundle.reconst, bundle.sparsity, bundle.gan_d, bundle.gan_g, prior.unwrap_or(0.0)];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite loss in bundle".into()));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn vec_var(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::vector(v.to_vec()).unwrap())
    }

    fn scalar(g: &mut Graph, v: f64) -> Var {
        g.constant(Tensor::scalar(v))
    }

    #[test]
    fn reconstruction_cases() {
        let mut g = Graph::new();
        let a = vec_var(&mut g, &[1.0, 0.0]);
        let b = vec_var(&mut g, &[0.0, 1.0]);
        let same = reconstruction_loss(&mut g, a, a).unwrap();
        let l = reconstruction_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        assert_eq!(g.value(l).item(), 2.0);
        let c = vec_var(&mut g, &[2.0, -1.0]);
        let zero = vec_var(&mut g, &[0.0, 0.0]);
        let l1 = reconstruction_loss(&mut g, a, zero).unwrap();
        let l2 = reconstruction_loss(&mut g, c, zero).unwrap();
        let l4 = {
            let c2 = vec_var(&mut g, &[4.0, -2.0]);
            reconstruction_loss(&mut g, c2, zero).unwrap()
        };
        assert_eq!(g.value(l1).item(), 1.0);
        assert_eq!(4.0 * g.value(l2).item(), g.value(l4).item());
    }

    #[test]
    fn prior_cases() {
        let mut g = Graph::new();
        let cases = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.0, 1.0, (std::f64::consts::E - 2.0) / 2.0)];
        for (mu, lv, want) in cases {
            let (m, l) = (vec_var(&mut g, &[mu]), vec_var(&mut g, &[lv]));
            let kl = prior_loss(&mut g, m, l).unwrap();
            assert!((g.value(kl).item() - want).abs() < 1e-12, "mu={mu} logvar={lv}");
        }
    }

    #[test]
    fn sparsity_cases() {
        let mut g = Graph::new();
        for (s, want) in [(vec![0.3; 4], 0.0), (vec![1.0; 3], 0.7), (vec![0.2, 0.8], 0.2)] {
            let v = vec_var(&mut g, &s);
            let l = sparsity_loss(&mut g, v, 0.3).unwrap();
            assert!((g.value(l).item() - want).abs() < 1e-12);
        }
        let v = vec_var(&mut g, &[0.5]);
        assert!(sparsity_loss(&mut g, v, 1.5).is_err());
    }

    #[test]
    fn gan_cases() {
        let mut g = Graph::new();
        let h = scalar(&mut g, 0.5);
        let t = gan_losses(&mut g, h, h, h).unwrap();
        assert!((g.value(t.objective).item() - 3.0 * 0.5f64.ln()).abs() < 1e-12);

        let (hi, lo) = (scalar(&mut g, 1.0 - 1e-12), scalar(&mut g, 1e-12));
        let t = gan_losses(&mut g, hi, lo, lo).unwrap();
        assert!(g.value(t.objective).item().is_finite());
        let t = gan_losses(&mut g, lo, hi, hi).unwrap();
        assert!(g.value(t.generator_loss).item().abs() < 1e-11);

        let bad = scalar(&mut g, 1.5);
        assert!(matches!(gan_losses(&mut g, bad, h, h), Err(Error::Contract(_))));
    }

    #[test]
    fn compose_follows_vae_presence() {
        let parts = LossParts {
            reconst: 1.0,
            prior: Some(0.5),
            sparsity: 0.1,
            gan_d: 2.0,
            gan_g: 1.5,
        };
        let no_prior = LossParts { prior: None, ..parts };
        assert!(compose(Variant::St, no_prior, 0.3).unwrap().prior.is_none());
        assert!(compose(Variant::Sat, no_prior, 0.3).unwrap().prior.is_none());
        assert_eq!(compose(Variant::Aed, parts, 0.3).unwrap().prior, Some(0.5));
        assert!(compose(Variant::St, parts, 0.3).is_err());
        assert!(compose(Variant::Aed, no_prior, 0.3).is_err());
    }
}
