use super::{LossWeights, PerceptualReduction};
use crate::error::{Error, Result};
use crate::nn::{image_input, DiscriminatorNet, FeatureTaps, Graph, Var};
use crate::tomo::Image;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

fn check_batches(a: usize, b: usize, ctx: &'static str) -> Result<()> {
    if a == 0 {
        return Err(Error::invalid(format!("{ctx}: empty batch")));
    }
    if a != b {
        return Err(Error::dims(ctx, a, b));
    }
    Ok(())
}

fn total(g: &mut Graph, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::invalid("empty sum"))?;
    for t in it {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// `sum_i -(log d(real_i) + log(1 - d(fake_i)))` over `[1, 1]` probabilities.
pub fn discriminator_objective(g: &mut Graph, real: &[Var], fake: &[Var]) -> Result<Var> {
    check_batches(real.len(), fake.len(), "discriminator loss")?;
    let mut terms = Vec::with_capacity(2 * real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let lr = g.log_clamp(r, PROB_EPS)?;
        let lf = g.log1m_clamp(f, PROB_EPS)?;
        let s = g.add(lr, lf)?;
        let s = g.sum(s)?;
        terms.push(g.scale(s, -1.0)?);
    }
    total(g, terms)
}

/// Non-saturating `sum_i -log d(fake_i)`.
pub fn adversarial_objective(g: &mut Graph, fake: &[Var]) -> Result<Var> {
    if fake.is_empty() {
        return Err(Error::invalid("adversarial loss: empty batch"));
    }
    let mut terms = Vec::with_capacity(fake.len());
    for &f in fake {
        let l = g.log_clamp(f, PROB_EPS)?;
        let l = g.sum(l)?;
        terms.push(g.scale(l, -1.0)?);
    }
    total(g, terms)
}

/// Mean squared error over every pixel of the batch.
pub fn pixel_objective(g: &mut Graph, generated: &[Var], target: &[Var]) -> Result<Var> {
    check_batches(generated.len(), target.len(), "pixel loss")?;
    let mut terms = Vec::with_capacity(generated.len());
    for (&x, &y) in generated.iter().zip(target) {
        let d = g.sub(x, y)?;
        let d = g.square(d)?;
        terms.push(g.mean(d)?);
    }
    let n = terms.len() as f64;
    let s = total(g, terms)?;
    g.scale(s, 1.0 / n)
}

/// L1 distance between feature taps, summed over taps, elements and batch.
pub fn perceptual_objective<D: FeatureTaps>(d: &D, g: &mut Graph, p: &[Var], real: &[Var], fake: &[Var]) -> Result<Var> {
    check_batches(real.len(), fake.len(), "perceptual loss")?;
    let mut terms = Vec::new();
    for (&r, &f) in real.iter().zip(fake) {
        let tr = d.taps(g, p, r)?;
        let tf = d.taps(g, p, f)?;
        for (a, b) in tr.into_iter().zip(tf) {
            let diff = g.sub(a, b)?;
            let l = g.abs(diff)?;
            terms.push(g.sum(l)?);
        }
    }
    total(g, terms)
}

/// Components of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLoss<T> {
    pub total: T,
    pub pixel: T,
    pub adv: T,
    pub percept: T,
}

impl GeneratorLoss<Var> {
    pub fn values(&self, g: &Graph) -> GeneratorLoss<f64> {
        GeneratorLoss {
            total: g.scalar(self.total),
            pixel: g.scalar(self.pixel),
            adv: g.scalar(self.adv),
            percept: g.scalar(self.percept),
        }
    }
}

/// Loss-side conventions of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveScale {
    pub perceptual: PerceptualReduction,
    /// The pixel loss is the MSE of `intensity * x`.
    pub intensity: f64,
}

impl Default for ObjectiveScale {
    fn default() -> Self {
        ObjectiveScale {
            perceptual: PerceptualReduction::Sum,
            intensity: 1.0,
        }
    }
}

/// `lambda_pix L_pixel + lambda_adv L_adv + lambda_per L_percept`, with the
/// discriminator parameters `p` bound on `g`.
pub fn generator_objective(
    d: &DiscriminatorNet,
    g: &mut Graph,
    p: &[Var],
    generated: &[Var],
    target: &[Var],
    w: &LossWeights,
    scale: ObjectiveScale,
) -> Result<GeneratorLoss<Var>> {
    check_batches(generated.len(), target.len(), "generator loss")?;
    let pixel = pixel_objective(g, generated, target)?;
    let pixel = g.scale(pixel, scale.intensity * scale.intensity)?;
    let mut probs = Vec::with_capacity(generated.len());
    let mut percept_terms = Vec::new();
    for (&x, &y) in generated.iter().zip(target) {
        let fake = d.forward(g, p, x)?;
        let real = d.forward(g, p, y)?;
        probs.push(fake.prob);
        for (a, b) in real.taps.into_iter().zip(fake.taps) {
            let diff = g.sub(a, b)?;
            let l = g.abs(diff)?;
            percept_terms.push(match scale.perceptual {
                PerceptualReduction::Sum => g.sum(l)?,
                PerceptualReduction::TapMean => g.mean(l)?,
            });
        }
    }
    let adv = adversarial_objective(g, &probs)?;
    let percept = total(g, percept_terms)?;
    let a = g.scale(pixel, w.lambda_pix)?;
    let b = g.scale(adv, w.lambda_adv)?;
    let c = g.scale(percept, w.lambda_per)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(GeneratorLoss {
        total,
        pixel,
        adv,
        percept,
    })
}

fn inputs(g: &mut Graph, images: &[Image]) -> Result<Vec<Var>> {
    images.iter().map(|x| image_input(g, x)).collect()
}

/// Discriminator objective on image batches.
pub fn loss_discriminator(d: &DiscriminatorNet, real: &[Image], fake: &[Image]) -> Result<f64> {
    check_batches(real.len(), fake.len(), "discriminator loss")?;
    let mut g = Graph::new();
    let p = d.params.bind(&mut g, false)?;
    let r = inputs(&mut g, real)?;
    let f = inputs(&mut g, fake)?;
    let pr = r.into_iter().map(|x| Ok(d.forward(&mut g, &p, x)?.prob)).collect::<Result<Vec<_>>>()?;
    let pf = f.into_iter().map(|x| Ok(d.forward(&mut g, &p, x)?.prob)).collect::<Result<Vec<_>>>()?;
    let l = discriminator_objective(&mut g, &pr, &pf)?;
    Ok(g.scalar(l))
}

/// Generator objective and its components on image batches.
pub fn loss_generator(
    d: &DiscriminatorNet,
    generated: &[Image],
    target: &[Image],
    w: &LossWeights,
    scale: ObjectiveScale,
) -> Result<GeneratorLoss<f64>> {
    let mut g = Graph::new();
    let p = d.params.bind(&mut g, false)?;
    let x = inputs(&mut g, generated)?;
    let y = inputs(&mut g, target)?;
    Ok(generator_objective(d, &mut g, &p, &x, &y, w, scale)?.values(&g))
}

/// Perceptual distance between image batches under any tap provider.
pub fn loss_perceptual<D: FeatureTaps>(d: &D, real: &[Image], fake: &[Image]) -> Result<f64> {
    let mut g = Graph::new();
    let p = d.params().bind(&mut g, false)?;
    let r = inputs(&mut g, real)?;
    let f = inputs(&mut g, fake)?;
    let l = perceptual_objective(d, &mut g, &p, &r, &f)?;
    Ok(g.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_loss_is_batch_mean() {
        let mut g = Graph::new();
        let a = g.constant(vec![1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        let b = g.constant(vec![1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let c = g.constant(vec![1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        let l = pixel_objective(&mut g, &[a, c], &[b, c]).unwrap();
        assert!((g.scalar(l) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_discriminator_is_near_zero() {
        let mut g = Graph::new();
        let r = g.constant(vec![1, 1], vec![1.0]).unwrap();
        let f = g.constant(vec![1, 1], vec![0.0]).unwrap();
        let l = discriminator_objective(&mut g, &[r], &[f]).unwrap();
        let expected = -2.0 * (1.0 - PROB_EPS).ln();
        assert!((g.scalar(l) - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_or_ragged_batches_rejected() {
        let mut g = Graph::new();
        let r = g.constant(vec![1, 1], vec![0.5]).unwrap();
        assert!(discriminator_objective(&mut g, &[], &[]).is_err());
        assert!(discriminator_objective(&mut g, &[r, r], &[r]).is_err());
        assert!(adversarial_objective(&mut g, &[]).is_err());
    }
}
