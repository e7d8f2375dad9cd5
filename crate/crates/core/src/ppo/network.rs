//! Dense tanh networks with hand-written backpropagation, and the actor-critic
//! pair built from them.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::Real;

/// Fully connected layer computing `x W + b` for row-batched `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// Shape `(inputs, outputs)`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: Array2::zeros((inputs, outputs)), b: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Random matrix with orthonormal rows or columns, scaled by `gain`.
fn orthogonal<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<T> {
    let (n, m) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q = Array2::<f64>::from_shape_fn((n, m), |_| rng.sample(StandardNormal));
    // modified Gram-Schmidt on the columns
    for j in 0..m {
        for k in 0..j {
            let proj = q.column(j).dot(&q.column(k));
            let ck = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &ck);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt().max(1e-12);
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    let q = if rows >= cols { q } else { q.reversed_axes() };
    q.mapv(|v| T::lit(v * gain))
}

/// Multi-layer perceptron: tanh after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Mlp<T> {
    /// `sizes` lists input width, hidden widths and output width.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { hidden_gain };
                Dense { w: orthogonal(sizes[i], sizes[i + 1], gain, rng), b: Array1::zeros(sizes[i + 1]) }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.inputs(), l.outputs())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(T::tanh);
            }
        }
        h
    }

    /// Forward pass keeping the input of every layer for [`Mlp::backward`].
    pub fn forward_cached(&self, x: ArrayView2<T>) -> (Array2<T>, Vec<Array2<T>>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            acts.push(h);
            h = if i < last { z.mapv(T::tanh) } else { z };
        }
        (h, acts)
    }

    /// Parameter gradients given the loss gradient with respect to the output.
    pub fn backward(&self, acts: &[Array2<T>], dout: Array2<T>) -> Mlp<T> {
        let mut grads: Vec<Dense<T>> = Vec::with_capacity(self.layers.len());
        let mut d = dout;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let gw = acts[i].t().dot(&d);
            let gb = d.sum_axis(Axis(0));
            grads.push(Dense { w: gw, b: gb });
            if i > 0 {
                let mut dh = d.dot(&l.w.t());
                dh.zip_mut_with(&acts[i], |g, &a| *g *= T::one() - a * a);
                d = dh;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Log-softmax of each head's slice of a logit row.
pub fn head_log_probs<T: Real>(logits: ArrayView1<T>, heads: &[usize; 3]) -> [Vec<T>; 3] {
    let mut start = 0;
    std::array::from_fn(|h| {
        let z = logits.slice(s![start..start + heads[h]]);
        start += heads[h];
        let m = z.fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        z.iter().map(|&v| v - lse).collect()
    })
}

/// Separate actor and critic networks. The actor emits the concatenated logits
/// of three categorical heads; the critic a scalar state value. Observations are
/// multiplied element-wise by a fixed `input_scale` before either network.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub heads: [usize; 3],
    pub input_scale: Array1<T>,
}

/// Sampled or greedy decision of the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput<T> {
    pub indices: [usize; 3],
    pub log_prob: T,
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Minibatch view for the loss functions.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a, T> {
    /// Raw observations, one per row.
    pub obs: ArrayView2<'a, T>,
    pub actions: &'a [[usize; 3]],
    pub old_log_probs: &'a [T],
    pub advantages: &'a [T],
    pub returns: &'a [T],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorStats<T> {
    /// Mean clipped surrogate.
    pub surrogate: T,
    /// Mean summed head entropy.
    pub entropy: T,
    pub mean_ratio: T,
    pub clip_fraction: T,
}

impl<T: Real> ActorCritic<T> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], heads: [usize; 3], rng: &mut R) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        let mut critic_sizes = actor_sizes.clone();
        actor_sizes.push(heads.iter().sum());
        critic_sizes.push(1);
        let g = 2f64.sqrt();
        Self {
            actor: Mlp::new(&actor_sizes, g, 0.01, rng),
            critic: Mlp::new(&critic_sizes, g, 1.0, rng),
            heads,
            input_scale: Array1::ones(obs_dim),
        }
    }

    pub fn with_input_scale(mut self, scale: Array1<T>) -> Self {
        assert_eq!(scale.len(), self.obs_dim(), "input scale length");
        self.input_scale = scale;
        self
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite()
    }

    fn scaled(&self, obs: ArrayView2<T>) -> Array2<T> {
        &obs * &self.input_scale
    }

    pub fn logits(&self, obs: ArrayView2<T>) -> Array2<T> {
        self.actor.forward(self.scaled(obs).view())
    }

    pub fn values(&self, obs: ArrayView2<T>) -> Array1<T> {
        self.critic.forward(self.scaled(obs).view()).column(0).to_owned()
    }

    /// Per-head probabilities for one observation.
    pub fn probabilities(&self, obs: &[T]) -> [Vec<T>; 3] {
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row vector");
        let z = self.logits(x);
        head_log_probs(z.row(0), &self.heads).map(|lp| lp.into_iter().map(T::exp).collect())
    }

    /// Joint log-probability of `indices` for each observation row.
    pub fn log_probs(&self, obs: ArrayView2<T>, actions: &[[usize; 3]]) -> Vec<T> {
        let z = self.logits(obs);
        actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let lp = head_log_probs(z.row(i), &self.heads);
                (0..3).map(|h| lp[h][a[h]]).sum()
            })
            .collect()
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[T], mode: ActMode, rng: &mut R) -> ActOutput<T> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row vector");
        let xs = self.scaled(x);
        let z = self.actor.forward(xs.view());
        let value = self.critic.forward(xs.view())[[0, 0]];
        let lp = head_log_probs(z.row(0), &self.heads);
        let mut log_prob = T::zero();
        let indices = std::array::from_fn(|h| {
            let k = match mode {
                ActMode::Greedy => crate::bandit::argmax(&lp[h]),
                ActMode::Sample => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = lp[h].len() - 1;
                    for (k, l) in lp[h].iter().enumerate() {
                        acc += l.as_f64().exp();
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    pick
                }
            };
            log_prob += lp[h][k];
            k
        });
        ActOutput { indices, log_prob, value }
    }

    /// Negative clipped surrogate minus the entropy bonus, its statistics, and
    /// the actor gradient.
    pub fn actor_loss_grad(&self, batch: &LossBatch<T>, clip: T, entropy_coef: T) -> (T, ActorStats<T>, Mlp<T>) {
        let n = batch.actions.len();
        let nt = T::lit(n as f64);
        let xs = self.scaled(batch.obs);
        let (z, acts) = self.actor.forward_cached(xs.view());
        let mut dz = Array2::<T>::zeros(z.raw_dim());
        let (lo, hi) = (T::one() - clip, T::one() + clip);
        let mut stats = ActorStats::default();
        for i in 0..n {
            let lp = head_log_probs(z.row(i), &self.heads);
            let a = batch.actions[i];
            let logp: T = (0..3).map(|h| lp[h][a[h]]).sum();
            let ratio = (logp - batch.old_log_probs[i]).exp();
            let adv = batch.advantages[i];
            let unclipped = ratio * adv;
            let clipped = ratio.max(lo).min(hi) * adv;
            let surr = unclipped.min(clipped);
            stats.surrogate += surr;
            stats.mean_ratio += ratio;
            if ratio < lo || ratio > hi {
                stats.clip_fraction += T::one();
            }
            // d surr / d logp is ratio * adv on the unclipped branch, zero otherwise
            let g_logp = if unclipped <= clipped { unclipped } else { T::zero() };
            let mut start = 0;
            for h in 0..3 {
                let p: Vec<T> = lp[h].iter().map(|&l| l.exp()).collect();
                let ent: T = -lp[h].iter().zip(&p).map(|(&l, &pk)| pk * l).sum::<T>();
                stats.entropy += ent;
                for k in 0..self.heads[h] {
                    let onehot = if k == a[h] { T::one() } else { T::zero() };
                    let d_surr = g_logp * (onehot - p[k]);
                    let d_ent = -p[k] * (lp[h][k] + ent);
                    dz[[i, start + k]] = -(d_surr + entropy_coef * d_ent) / nt;
                }
                start += self.heads[h];
            }
        }
        stats.surrogate /= nt;
        stats.entropy /= nt;
        stats.mean_ratio /= nt;
        stats.clip_fraction /= nt;
        let loss = -(stats.surrogate + entropy_coef * stats.entropy);
        (loss, stats, self.actor.backward(&acts, dz))
    }

    /// Half mean squared value error and the critic gradient.
    pub fn critic_loss_grad(&self, obs: ArrayView2<T>, returns: &[T]) -> (T, Mlp<T>) {
        let n = returns.len();
        let nt = T::lit(n as f64);
        let xs = self.scaled(obs);
        let (v, acts) = self.critic.forward_cached(xs.view());
        let mut dv = Array2::<T>::zeros((n, 1));
        let mut loss = T::zero();
        for i in 0..n {
            let e = v[[i, 0]] - returns[i];
            loss += e * e;
            dv[[i, 0]] = e / nt;
        }
        (loss / (nt + nt), self.critic.backward(&acts, dv))
    }
}
