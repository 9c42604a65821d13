use std::collections::BTreeMap;

use super::noise::Sampling;
use super::{ModelError, ModelKind, TopicModel};
use crate::autodiff::nn::PendingStats;
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::BowVector;
use crate::distributions::sampling::beta_from_gammas;
use crate::distributions::special::{digamma_raw, log_beta_raw, trigamma_raw};
use crate::distributions::{
    kl::{beta_kl_grad, gamma_kl_grad, kumaraswamy_beta_kl_grad},
    sampling::kumaraswamy_transform,
    MIN_PARAM, UNIT_CLAMP,
};

/// A minibatch of documents.
#[derive(Debug, Clone)]
pub struct Batch {
    pub docs: Vec<BowVector>,
    /// 0-based time slice of each document (dynamic models only).
    pub slices: Option<Vec<usize>>,
    /// Size of the training corpus; global KL terms are scaled by B/D.
    pub corpus_size: usize,
}

impl Batch {
    pub fn new(docs: Vec<BowVector>, corpus_size: usize) -> Self {
        Self {
            docs,
            slices: None,
            corpus_size,
        }
    }

    pub fn with_slices(mut self, slices: Vec<usize>) -> Self {
        self.slices = Some(slices);
        self
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn token_count(&self) -> u64 {
        self.docs.iter().map(|d| d.length as u64).sum()
    }
}

/// ELBO pieces, summed over the batch. `kl` holds per-document terms and
/// `global_kl` the corpus-level ones already scaled by B/D. Every entry is a
/// quantity subtracted from the reconstruction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ElboBreakdown {
    pub reconstruction: f64,
    pub kl: BTreeMap<String, f64>,
    pub global_kl: BTreeMap<String, f64>,
    pub total: f64,
    pub annealed_total: f64,
}

impl ElboBreakdown {
    pub fn kl_sum(&self) -> f64 {
        self.kl.values().sum::<f64>() + self.global_kl.values().sum::<f64>()
    }

    /// Reconstruction minus the per-document terms only.
    pub fn local_total(&self) -> f64 {
        self.reconstruction - self.kl.values().sum::<f64>()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.kl.iter().chain(self.global_kl.iter())
    }
}

#[derive(Debug)]
pub struct ForwardOutput {
    pub graph: Graph,
    /// −annealed ELBO / B; minimize this.
    pub loss: Var,
    /// Annealed ELBO as a graph node.
    pub objective: Var,
    pub breakdown: ElboBreakdown,
    /// Per-document topic proportions (B × K), averaged over samples.
    pub mixture: Tensor,
    pub posterior: Posterior,
    pub pending: PendingStats,
}

/// Variational parameters produced by the encoders for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// Gaussian mean, or the first positive Beta/Kumaraswamy parameter.
    pub first: Tensor,
    /// Gaussian log-variance, or the second positive parameter.
    pub second: Tensor,
    /// Mean and log-variance of η per slice (dynamic models).
    pub eta: Option<(Tensor, Tensor)>,
}

/// Term names must be stable: they key metrics logs and NaN reports.
struct Terms {
    local: Vec<(&'static str, Var)>,
    global: Vec<(&'static str, Var)>,
}

struct Sparse {
    /// Flat row-major (row, word) positions of the nonzero counts.
    index: Vec<usize>,
    counts: Vec<f64>,
}

fn sparse_counts(docs: &[&BowVector], vocab: usize) -> Sparse {
    let mut index = Vec::new();
    let mut counts = Vec::new();
    for (r, doc) in docs.iter().enumerate() {
        for &(w, c) in &doc.entries {
            index.push(r * vocab + w);
            counts.push(c as f64);
        }
    }
    Sparse { index, counts }
}

fn positive(g: &mut Graph, x: Var) -> Var {
    let s = g.softplus(x);
    g.add_scalar(s, MIN_PARAM)
}

/// Σ KL(N(μ, e^lv) ‖ N(m, var)), with m = 0 when `prior_mean` is absent.
fn gaussian_kl(g: &mut Graph, mu: Var, lv: Var, prior_mean: Option<Var>, var: f64) -> Result<Var, ModelError> {
    let e = g.exp(lv);
    let diff = match prior_mean {
        Some(m) => g.sub(mu, m)?,
        None => mu,
    };
    let sq = g.mul(diff, diff)?;
    let num = g.add(sq, e)?;
    let ratio = g.scale(num, 1.0 / var);
    let t = g.sub(ratio, lv)?;
    let t = g.add_scalar(t, var.ln() - 1.0);
    let s = g.sum(t);
    Ok(g.scale(s, 0.5))
}

fn gaussian_sample(g: &mut Graph, mu: Var, lv: Var, sampling: &mut Sampling) -> Result<Var, ModelError> {
    match sampling {
        Sampling::Mean => Ok(mu),
        Sampling::Stochastic(noise) => {
            let shape = g.value(mu).shape().to_vec();
            let eps = noise.normals(g.value(mu).len());
            let eps = g.constant(Tensor::new(shape, eps)?);
            let half = g.scale(lv, 0.5);
            let sd = g.exp(half);
            let scaled = g.mul(sd, eps)?;
            Ok(g.add(mu, scaled)?)
        }
    }
}

fn kumaraswamy_sticks(g: &mut Graph, a: Var, b: Var, sampling: &mut Sampling) -> Result<Var, ModelError> {
    let at = g.value(a).clone();
    let bt = g.value(b).clone();
    let shape = at.shape().to_vec();
    match sampling {
        Sampling::Mean => {
            let mean = at
                .data()
                .iter()
                .zip(bt.data())
                .map(|(&a, &b)| (b.ln() + log_beta_raw(1.0 + 1.0 / a, b)).exp().clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP))
                .collect();
            Ok(g.constant(Tensor::new(shape, mean)?))
        }
        Sampling::Stochastic(noise) => {
            let u = noise.uniforms(at.len());
            let n = at.len();
            let (mut v, mut da, mut db) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                let (x, dxa, dxb) = kumaraswamy_transform(at.data()[i], bt.data()[i], u[i]);
                v.push(x);
                da.push(dxa);
                db.push(dxb);
            }
            Ok(g.elementwise(&[a, b], Tensor::new(shape, v)?, vec![da, db])?)
        }
    }
}

fn beta_sticks(g: &mut Graph, a: Var, b: Var, sampling: &mut Sampling) -> Result<Var, ModelError> {
    match sampling {
        Sampling::Mean => {
            let s = g.add(a, b)?;
            let m = g.div(a, s)?;
            Ok(g.clamp(m, UNIT_CLAMP, 1.0 - UNIT_CLAMP))
        }
        Sampling::Stochastic(noise) => {
            let at = g.value(a).clone();
            let bt = g.value(b).clone();
            let n = at.len();
            let (mut v, mut da, mut db) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for (&a, &b) in at.data().iter().zip(bt.data()) {
                let g1 = noise.unit_gamma(a)?;
                let g2 = noise.unit_gamma(b)?;
                let (mut x, mut dxa, mut dxb) = beta_from_gammas(a, b, g1, g2);
                if !x.is_finite() {
                    // both draws underflowed; fall back to the mean
                    (x, dxa, dxb) = ((a / (a + b)).clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP), 0.0, 0.0);
                }
                v.push(x);
                da.push(dxa);
                db.push(dxb);
            }
            Ok(g.elementwise(&[a, b], Tensor::new(at.shape().to_vec(), v)?, vec![da, db])?)
        }
    }
}

/// Σ KL(Beta(a, b) ‖ Beta(1, β)) with β either fixed or a graph node
/// broadcast to the shape of `a`.
fn beta_kl(g: &mut Graph, a: Var, b: Var, beta: Result<f64, Var>) -> Result<Var, ModelError> {
    let at = g.value(a).clone();
    let bt = g.value(b).clone();
    let betas: Vec<f64> = match beta {
        Ok(c) => vec![c; at.len()],
        Err(v) => g.value(v).data().to_vec(),
    };
    let n = at.len();
    let (mut val, mut da, mut db, mut dd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        (val[i], da[i], db[i], dd[i]) = beta_kl_grad(at.data()[i], bt.data()[i], 1.0, betas[i]);
    }
    let value = Tensor::new(at.shape().to_vec(), val)?;
    let node = match beta {
        Ok(_) => g.elementwise(&[a, b], value, vec![da, db])?,
        Err(v) => g.elementwise(&[a, b, v], value, vec![da, db, dd])?,
    };
    Ok(g.sum(node))
}

impl TopicModel {
    /// One forward pass over `batch`. `kl_weight` anneals every KL term in
    /// the objective; the breakdown reports both the raw and annealed ELBO.
    pub fn forward(
        &self,
        batch: &Batch,
        sampling: &mut Sampling,
        train: bool,
        kl_weight: f64,
    ) -> Result<ForwardOutput, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let v = self.vocab_size;
        if let Some(doc) = batch.docs.iter().find(|d| d.entries.iter().any(|&(w, _)| w >= v)) {
            return Err(ModelError::Config(format!(
                "word index {} outside vocabulary of {v}",
                doc.entries.iter().map(|e| e.0).max().unwrap_or(0)
            )));
        }
        let mut g = Graph::new();
        let mut pending = PendingStats::default();
        let b = batch.len();
        let mut input = Vec::with_capacity(b * v);
        for doc in &batch.docs {
            let mut row = vec![0.0; v];
            let len = doc.length.max(1) as f64;
            for &(w, c) in &doc.entries {
                row[w] = c as f64 / len;
            }
            input.extend(row);
        }
        let x = g.constant(Tensor::matrix(b, v, input)?);
        let (recon, terms, mixture, posterior) = if self.config.kind.is_dynamic() {
            self.dynamic_forward(&mut g, x, batch, sampling, train, &mut pending)?
        } else {
            self.static_forward(&mut g, x, batch, sampling, train, &mut pending)?
        };

        let mut kl_total: Option<Var> = None;
        for &(_, t) in terms.local.iter().chain(&terms.global) {
            kl_total = Some(match kl_total {
                Some(acc) => g.add(acc, t)?,
                None => t,
            });
        }
        let objective = match kl_total {
            Some(k) => {
                let w = g.scale(k, kl_weight);
                g.sub(recon, w)?
            }
            None => recon,
        };
        let loss = g.scale(objective, -1.0 / b as f64);

        let value = |g: &Graph, v: Var| g.value(v).item();
        let mut breakdown = ElboBreakdown {
            reconstruction: value(&g, recon),
            ..Default::default()
        };
        for &(name, t) in &terms.local {
            breakdown.kl.insert(name.to_string(), value(&g, t));
        }
        for &(name, t) in &terms.global {
            breakdown.global_kl.insert(name.to_string(), value(&g, t));
        }
        let kl_sum = breakdown.kl_sum();
        breakdown.total = breakdown.reconstruction - kl_sum;
        breakdown.annealed_total = value(&g, objective);
        Ok(ForwardOutput {
            graph: g,
            loss,
            objective,
            breakdown,
            mixture,
            posterior,
            pending,
        })
    }

    fn encode(
        &self,
        g: &mut Graph,
        input: Var,
        sampling: &mut Sampling,
        train: bool,
        pending: &mut PendingStats,
    ) -> Result<(Var, Var), ModelError> {
        let store = &self.store;
        let mut h = self.layout.encoder.forward(g, store, input, train, pending)?;
        if let Sampling::Stochastic(noise) = sampling {
            if train && self.config.dropout > 0.0 {
                let u = noise.uniforms(g.value(h).len());
                h = g.dropout(h, self.config.dropout, true, &u)?;
            }
        }
        let first = self.layout.heads.first.forward(g, store, h)?;
        let second = self.layout.heads.second.forward(g, store, h)?;
        Ok((first, second))
    }

    /// softmax(α ρ) for a K × L block of topic embeddings.
    pub(crate) fn topic_words_node(&self, g: &mut Graph, alpha: Var) -> Result<Var, ModelError> {
        let rho = g.param(&self.store, self.layout.rho.expect("embedding model"));
        let logits = g.matmul(alpha, rho)?;
        Ok(g.softmax(logits))
    }

    /// Σ counts · log p over the nonzero entries. `words` holds probabilities
    /// unless `is_log` is set.
    fn log_likelihood(&self, g: &mut Graph, words: Var, sparse: &Sparse, is_log: bool) -> Result<Var, ModelError> {
        let total = g.value(words).len();
        let flat = g.reshape(words, &[total, 1])?;
        let picked = g.gather_rows(flat, &sparse.index)?;
        let logp = if is_log { picked } else { g.log(picked) };
        let counts = g.constant(Tensor::matrix(sparse.counts.len(), 1, sparse.counts.clone())?);
        let weighted = g.mul(logp, counts)?;
        Ok(g.sum(weighted))
    }

    /// Log-likelihood of the documents in `sparse` under mixture weights
    /// `weights` (n × K) and topics `topics` (K × V).
    fn mixture_likelihood(&self, g: &mut Graph, weights: Var, topics: Var, sparse: &Sparse) -> Result<Var, ModelError> {
        let mix = g.matmul(weights, topics)?;
        if self.config.double_softmax {
            let lp = g.log_softmax(mix);
            self.log_likelihood(g, lp, sparse, true)
        } else {
            self.log_likelihood(g, mix, sparse, false)
        }
    }

    fn static_forward(
        &self,
        g: &mut Graph,
        x: Var,
        batch: &Batch,
        sampling: &mut Sampling,
        train: bool,
        pending: &mut PendingStats,
    ) -> Result<(Var, Terms, Tensor, Posterior), ModelError> {
        let kind = self.config.kind;
        let b = batch.len();
        let k = self.config.num_topics;
        let docs: Vec<&BowVector> = batch.docs.iter().collect();
        let sparse = sparse_counts(&docs, self.vocab_size);
        let (h1, h2) = self.encode(g, x, sampling, train, pending)?;
        let mut terms = Terms {
            local: Vec::new(),
            global: Vec::new(),
        };
        let samples = if sampling.is_mean() { 1 } else { self.config.samples };

        let topics = match kind {
            ModelKind::SbVae => None,
            _ => {
                let alpha = g.param(&self.store, self.layout.alpha.expect("static embeddings"));
                Some(self.topic_words_node(g, alpha)?)
            }
        };

        let (a, bb) = if kind == ModelKind::Etm {
            terms.local.push(("kl_theta", gaussian_kl(g, h1, h2, None, 1.0)?));
            (h1, h2)
        } else {
            let a = positive(g, h1);
            let bb = positive(g, h2);
            match kind {
                ModelKind::SbVae => {
                    let (vals, da, db): (Vec<f64>, Vec<f64>, Vec<f64>) = {
                        let at = g.value(a).data().to_vec();
                        let bt = g.value(bb).data().to_vec();
                        let mut out = (Vec::new(), Vec::new(), Vec::new());
                        for (&ai, &bi) in at.iter().zip(&bt) {
                            let (val, dai, dbi) =
                                kumaraswamy_beta_kl_grad(ai, bi, self.config.prior_beta, self.config.taylor_terms);
                            out.0.push(val);
                            out.1.push(dai);
                            out.2.push(dbi);
                        }
                        out
                    };
                    let shape = g.value(a).shape().to_vec();
                    let node = g.elementwise(&[a, bb], Tensor::new(shape, vals)?, vec![da, db])?;
                    terms.local.push(("kl_sticks", g.sum(node)));
                }
                ModelKind::Edp => {
                    terms.local.push(("kl_sticks", beta_kl(g, a, bb, Ok(self.config.prior_beta))?));
                }
                ModelKind::Ehdp => self.ehdp_terms(g, a, bb, batch, &mut terms)?,
                _ => unreachable!(),
            }
            (a, bb)
        };

        let mut recon: Option<Var> = None;
        let mut mixture = Tensor::zeros(&[b, k]);
        for _ in 0..samples {
            let weights = match kind {
                ModelKind::Etm => {
                    let z = gaussian_sample(g, a, bb, sampling)?;
                    g.softmax(z)
                }
                ModelKind::SbVae => {
                    let v = kumaraswamy_sticks(g, a, bb, sampling)?;
                    g.stick_break(v)
                }
                _ => {
                    let v = beta_sticks(g, a, bb, sampling)?;
                    g.stick_break(v)
                }
            };
            mixture.add_assign(g.value(weights));
            let ll = match (kind, topics) {
                (ModelKind::SbVae, _) => {
                    let dec = self.layout.decoder.as_ref().expect("dense decoder");
                    let logits = dec.forward(g, &self.store, weights)?;
                    let lp = g.log_softmax(logits);
                    self.log_likelihood(g, lp, &sparse, true)?
                }
                (_, Some(t)) => self.mixture_likelihood(g, weights, t, &sparse)?,
                _ => unreachable!(),
            };
            recon = Some(match recon {
                Some(r) => g.add(r, ll)?,
                None => ll,
            });
        }
        let recon = g.scale(recon.expect("at least one sample"), 1.0 / samples as f64);
        let posterior = Posterior {
            first: g.value(a).clone(),
            second: g.value(bb).clone(),
            eta: None,
        };
        Ok((recon, terms, mixture.map(|m| m / samples as f64), posterior))
    }

    fn ehdp_terms(&self, g: &mut Graph, a: Var, b: Var, batch: &Batch, terms: &mut Terms) -> Result<(), ModelError> {
        let (rs, rr) = self.layout.gamma_raw.expect("gamma variational");
        let rs = g.param(&self.store, rs);
        let rr = g.param(&self.store, rr);
        let g1 = positive(g, rs);
        let g2 = positive(g, rr);
        let beta = g.div(g1, g2)?;
        let shape = g.value(a).shape().to_vec();
        let beta_wide = g.expand(beta, &shape)?;
        terms.local.push(("kl_sticks", beta_kl(g, a, b, Err(beta_wide))?));

        let docs = batch.len() as f64;
        let sticks = (self.config.num_topics - 1) as f64;
        let g1v = g.value(g1).item();
        let psi = g.elementwise(&[g1], Tensor::scalar(digamma_raw(g1v)), vec![vec![trigamma_raw(g1v)]])?;
        if self.config.ehdp_printed_terms {
            // (K−1)(Ψ(g₁) − log g₂) per document, entered with a minus sign
            let log_g2 = g.log(g2);
            let e_log = g.sub(psi, log_g2)?;
            terms.local.push(("expected_log_concentration", g.scale(e_log, -sticks * docs)));
            // log B(1, β) = −log β per document
            let log_beta = g.log(beta);
            terms.local.push(("log_beta_prior", g.scale(log_beta, docs)));
            // 2 Σ log(ab), entered with a minus sign
            let ab = g.mul(a, b)?;
            let log_ab = g.log(ab);
            let s = g.sum(log_ab);
            terms.local.push(("log_ab", g.scale(s, -2.0)));
        } else {
            // E_q[log p(v | β)] differs from log p(v | E_q β) only through
            // (K−1)(E log β − log E β) = (K−1)(Ψ(g₁) − log g₁) ≤ 0
            let log_g1 = g.log(g1);
            let gap = g.sub(psi, log_g1)?;
            terms.local.push(("concentration_gap", g.scale(gap, -sticks * docs)));
        }

        let (s1, s2) = (g1v, g.value(g2).item());
        let (val, ds, dr) = gamma_kl_grad(s1, s2, self.config.gamma_shape, self.config.gamma_rate);
        let kl = g.elementwise(&[g1, g2], Tensor::scalar(val), vec![vec![ds], vec![dr]])?;
        let scale = docs / batch.corpus_size.max(1) as f64;
        terms.global.push(("kl_gamma", g.scale(kl, scale)));
        Ok(())
    }

    fn dynamic_forward(
        &self,
        g: &mut Graph,
        x: Var,
        batch: &Batch,
        sampling: &mut Sampling,
        train: bool,
        pending: &mut PendingStats,
    ) -> Result<(Var, Terms, Tensor, Posterior), ModelError> {
        let dl = self.layout.dynamic.as_ref().expect("dynamic layout");
        let store = &self.store;
        let b = batch.len();
        let k = self.config.num_topics;
        let t_count = self.num_slices;
        let latent = self.config.latent_dim();
        let slices = batch
            .slices
            .as_ref()
            .ok_or_else(|| ModelError::Config("dynamic models need document time slices".into()))?;
        if slices.len() != b {
            return Err(ModelError::Config(format!("{} slice labels for {b} documents", slices.len())));
        }
        if let Some((doc, &slice)) = slices.iter().enumerate().find(|(_, &s)| s >= t_count) {
            return Err(ModelError::SliceOutOfRange {
                doc,
                slice: slice + 1,
                slices: t_count,
            });
        }
        let global_scale = b as f64 / batch.corpus_size.max(1) as f64;
        let mut terms = Terms {
            local: Vec::new(),
            global: Vec::new(),
        };

        // η chain driven by the LSTM over slice frequencies
        let freq = g.param(store, dl.slice_bow);
        let proj = dl.projection.forward(g, store, freq)?;
        let mut steps = Vec::with_capacity(t_count);
        for t in 0..t_count {
            steps.push(g.gather_rows(proj, &[t])?);
        }
        let outputs = dl.lstm.forward(g, store, &steps)?;
        let mut prev = g.constant(Tensor::zeros(&[1, latent]));
        let mut etas = Vec::with_capacity(t_count);
        let mut eta_mu = Vec::with_capacity(t_count * latent);
        let mut eta_lv = Vec::with_capacity(t_count * latent);
        let mut kl_eta: Option<Var> = None;
        for (t, &o) in outputs.iter().enumerate() {
            let inp = g.concat(&[o, prev])?;
            let mu = dl.eta_heads.first.forward(g, store, inp)?;
            let lv = dl.eta_heads.second.forward(g, store, inp)?;
            eta_mu.extend_from_slice(g.value(mu).data());
            eta_lv.extend_from_slice(g.value(lv).data());
            let kl = if t == 0 {
                gaussian_kl(g, mu, lv, None, 1.0)?
            } else {
                gaussian_kl(g, mu, lv, Some(prev), self.config.delta_sq)?
            };
            kl_eta = Some(match kl_eta {
                Some(acc) => g.add(acc, kl)?,
                None => kl,
            });
            prev = gaussian_sample(g, mu, lv, sampling)?;
            etas.push(prev);
        }
        let kl_eta = kl_eta.expect("at least one slice");
        terms.global.push(("kl_eta", g.scale(kl_eta, global_scale)));

        // topic embeddings α_k^(t), one random walk per topic
        let a_mu = g.param(store, dl.alpha_mu);
        let a_lv = g.param(store, dl.alpha_logvar);
        let alpha = gaussian_sample(g, a_mu, a_lv, sampling)?;
        let first: Vec<usize> = (0..k).collect();
        let mu0 = g.gather_rows(a_mu, &first)?;
        let lv0 = g.gather_rows(a_lv, &first)?;
        let mut kl_alpha = gaussian_kl(g, mu0, lv0, None, 1.0)?;
        if t_count > 1 {
            let later: Vec<usize> = (k..t_count * k).collect();
            let earlier: Vec<usize> = (0..(t_count - 1) * k).collect();
            let mu = g.gather_rows(a_mu, &later)?;
            let lv = g.gather_rows(a_lv, &later)?;
            let prior = g.gather_rows(alpha, &earlier)?;
            let rest = gaussian_kl(g, mu, lv, Some(prior), self.config.gamma_sq)?;
            kl_alpha = g.add(kl_alpha, rest)?;
        }
        terms.global.push(("kl_alpha", g.scale(kl_alpha, global_scale)));

        // per-document latent, centred on η of its slice
        let eta_all = g.concat_rows(&etas)?;
        let eta_all = g.reshape(eta_all, &[t_count, latent])?;
        let eta_docs = g.gather_rows(eta_all, slices)?;
        let enc_in = g.concat(&[x, eta_docs])?;
        let (mu, lv) = self.encode(g, enc_in, sampling, train, pending)?;
        let kl_theta = gaussian_kl(g, mu, lv, Some(eta_docs), self.config.theta_var)?;
        terms.local.push(("kl_theta", kl_theta));

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (d, &s) in slices.iter().enumerate() {
            groups.entry(s).or_default().push(d);
        }
        let mut topic_cache: BTreeMap<usize, Var> = BTreeMap::new();
        for &t in groups.keys() {
            let rows: Vec<usize> = (t * k..(t + 1) * k).collect();
            let a_t = g.gather_rows(alpha, &rows)?;
            topic_cache.insert(t, self.topic_words_node(g, a_t)?);
        }

        let samples = if sampling.is_mean() { 1 } else { self.config.samples };
        let mut recon: Option<Var> = None;
        let mut mixture = Tensor::zeros(&[b, k]);
        for _ in 0..samples {
            let z = gaussian_sample(g, mu, lv, sampling)?;
            let weights = match self.config.kind {
                ModelKind::Detm => g.softmax(z),
                _ => {
                    let v = g.logistic(z);
                    let v = g.clamp(v, UNIT_CLAMP, 1.0 - UNIT_CLAMP);
                    g.stick_break(v)
                }
            };
            mixture.add_assign(g.value(weights));
            for (&t, idx) in &groups {
                let docs: Vec<&BowVector> = idx.iter().map(|&d| &batch.docs[d]).collect();
                let sparse = sparse_counts(&docs, self.vocab_size);
                let w = g.gather_rows(weights, idx)?;
                let ll = self.mixture_likelihood(g, w, topic_cache[&t], &sparse)?;
                recon = Some(match recon {
                    Some(r) => g.add(r, ll)?,
                    None => ll,
                });
            }
        }
        let recon = g.scale(recon.expect("non-empty batch"), 1.0 / samples as f64);
        let posterior = Posterior {
            first: g.value(mu).clone(),
            second: g.value(lv).clone(),
            eta: Some((
                Tensor::matrix(t_count, latent, eta_mu)?,
                Tensor::matrix(t_count, latent, eta_lv)?,
            )),
        };
        Ok((recon, terms, mixture.map(|m| m / samples as f64), posterior))
    }
}
