//! Drift networks: a three-block MLP with sinusoidal time features,
//! hand-derived backpropagation, and Adam.
//!
//! Layout for input dimension `d`, with `h = max(256, 2d)` and
//! `q = max(128, d)`:
//!
//! * state block: `d -> 128 -> h`
//! * time block: `32 -> 128 -> h`, fed by [`pos_encode`]
//! * head: `concat(2h) -> h -> q -> d`, final layer zero-initialized
//!
//! The zero final layer makes a fresh network output exactly zero, so the
//! induced transition mean is the identity and sampling through it is plain
//! Brownian motion. All evaluations share one time value per call, which
//! keeps the time block a single vector pass.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::schedule::TimeSchedule;

pub const TIME_FEATURES: usize = 32;
const HIDDEN: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("non-finite value in network evaluation")]
    NonFinite,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("step index {step} out of range (N = {n})")]
    StepOutOfRange { step: usize, n: usize },
    #[error("batch must not be empty")]
    EmptyBatch,
}

/// Smooth activations keep finite-difference gradient checks clean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "silu" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Sinusoidal features of a scalar time at 16 geometrically spaced
/// frequencies: `[sin(w_i t), cos(w_i t)]` with `w_i = 10000^(i/15)`.
pub fn pos_encode(t: f64) -> Array1<f64> {
    let pairs = TIME_FEATURES / 2;
    let mut out = Array1::zeros(TIME_FEATURES);
    for i in 0..pairs {
        let omega = 10_000f64.powf(i as f64 / (pairs - 1) as f64);
        out[2 * i] = (omega * t).sin();
        out[2 * i + 1] = (omega * t).cos();
    }
    out
}

/// One affine layer, `in x out` weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }
}

/// Parameters of one directed-edge drift network.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftNetParams {
    pub dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    /// State block `d -> 128 -> h`.
    pub state_block: [Dense; 2],
    /// Time block `32 -> 128 -> h`.
    pub time_block: [Dense; 2],
    /// Head `2h -> h -> q -> d`; the first layer's rows split into the state
    /// half and the time half of the concatenated input.
    pub head: [Dense; 3],
    pub activation: Activation,
}

impl DriftNetParams {
    /// Fan-in scaled uniform initialization everywhere except the final
    /// layer, which starts at exactly zero.
    pub fn init(dim: usize, activation: Activation, seed: u64) -> Self {
        let h = 256.max(2 * dim);
        let q = HIDDEN.max(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DriftNetParams {
            dim,
            hidden: h,
            head_hidden: q,
            state_block: [
                Dense::uniform(dim, HIDDEN, &mut rng),
                Dense::uniform(HIDDEN, h, &mut rng),
            ],
            time_block: [
                Dense::uniform(TIME_FEATURES, HIDDEN, &mut rng),
                Dense::uniform(HIDDEN, h, &mut rng),
            ],
            head: [
                Dense::uniform(2 * h, h, &mut rng),
                Dense::uniform(h, q, &mut rng),
                Dense::zeros(q, dim),
            ],
            activation,
        }
    }

    pub fn layers(&self) -> [&Dense; 7] {
        [
            &self.state_block[0],
            &self.state_block[1],
            &self.time_block[0],
            &self.time_block[1],
            &self.head[0],
            &self.head[1],
            &self.head[2],
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 7] {
        let [sa, sb] = &mut self.state_block;
        let [ta, tb] = &mut self.time_block;
        let [h0, h1, h2] = &mut self.head;
        [sa, sb, ta, tb, h0, h1, h2]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn act(&self, z: &Array2<f64>) -> Array2<f64> {
        z.mapv(|v| self.activation.apply(v))
    }

    fn act1(&self, z: &Array1<f64>) -> Array1<f64> {
        z.mapv(|v| self.activation.apply(v))
    }

    /// Drift values for every row of `x` at shared time `t`.
    pub fn forward_batch(&self, t: f64, x: &ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(t, x).out
    }

    /// Single-sample drift evaluation.
    pub fn forward(&self, t: f64, x: &ArrayView1<f64>) -> Result<Array1<f64>, NetError> {
        if x.len() != self.dim {
            return Err(NetError::ShapeMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let row = x.to_owned().insert_axis(Axis(0));
        let out = self.forward_batch(t, &row.view());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite);
        }
        Ok(out.index_axis(Axis(0), 0).to_owned())
    }

    fn forward_cached(&self, t: f64, x: &ArrayView2<f64>) -> ForwardCache {
        let h = self.hidden;
        let e = pos_encode(t);

        let u1p = e.dot(&self.time_block[0].w) + &self.time_block[0].b;
        let u1 = self.act1(&u1p);
        let u2p = u1.dot(&self.time_block[1].w) + &self.time_block[1].b;
        let u2 = self.act1(&u2p);

        let mut a1p = x.dot(&self.state_block[0].w);
        a1p += &self.state_block[0].b;
        let a1 = self.act(&a1p);
        let mut a2p = a1.dot(&self.state_block[1].w);
        a2p += &self.state_block[1].b;
        let a2 = self.act(&a2p);

        let w_state = self.head[0].w.slice(s![..h, ..]);
        let w_time = self.head[0].w.slice(s![h.., ..]);
        let time_row = u2.dot(&w_time) + &self.head[0].b;
        let mut z5p = a2.dot(&w_state);
        z5p += &time_row;
        let z5 = self.act(&z5p);
        let mut z6p = z5.dot(&self.head[1].w);
        z6p += &self.head[1].b;
        let z6 = self.act(&z6p);
        let mut out = z6.dot(&self.head[2].w);
        out += &self.head[2].b;

        ForwardCache {
            x: x.to_owned(),
            e,
            u1p,
            u1,
            u2p,
            u2,
            a1p,
            a1,
            a2p,
            a2,
            z5p,
            z5,
            z6p,
            z6,
            out,
        }
    }

    /// Gradients of a scalar loss given `d loss / d out`, reusing the
    /// forward cache. Exact reverse-mode differentiation of
    /// [`Self::forward_batch`].
    fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> NetGrads {
        let h = self.hidden;
        let act = self.activation;
        let dpre = |pre: &Array2<f64>, grad: &Array2<f64>| -> Array2<f64> {
            let mut out = pre.mapv(|z| act.derivative(z));
            out *= grad;
            out
        };

        let d_w7 = cache.z6.t().dot(d_out);
        let d_b7 = d_out.sum_axis(Axis(0));
        let d_z6 = dpre(&cache.z6p, &d_out.dot(&self.head[2].w.t()));

        let d_w6 = cache.z5.t().dot(&d_z6);
        let d_b6 = d_z6.sum_axis(Axis(0));
        let d_z5 = dpre(&cache.z5p, &d_z6.dot(&self.head[1].w.t()));

        let w_state = self.head[0].w.slice(s![..h, ..]);
        let w_time = self.head[0].w.slice(s![h.., ..]);
        let d_z5_sum = d_z5.sum_axis(Axis(0));
        let mut d_w5 = Array2::zeros(self.head[0].w.raw_dim());
        d_w5.slice_mut(s![..h, ..]).assign(&cache.a2.t().dot(&d_z5));
        // Time rows are shared across the batch, so their gradient is rank one.
        for (i, &u) in cache.u2.iter().enumerate() {
            for (j, &g) in d_z5_sum.iter().enumerate() {
                d_w5[[h + i, j]] = u * g;
            }
        }
        let d_b5 = d_z5_sum.clone();

        let d_a2 = {
            let mut g = cache.a2p.mapv(|z| act.derivative(z));
            g *= &d_z5.dot(&w_state.t());
            g
        };
        let d_u2 = {
            let mut g = cache.u2p.mapv(|z| act.derivative(z));
            g *= &d_z5_sum.dot(&w_time.t());
            g
        };

        let d_w2 = cache.a1.t().dot(&d_a2);
        let d_b2 = d_a2.sum_axis(Axis(0));
        let d_a1 = dpre(&cache.a1p, &d_a2.dot(&self.state_block[1].w.t()));
        let d_w1 = cache.x.t().dot(&d_a1);
        let d_b1 = d_a1.sum_axis(Axis(0));

        let d_w4 = outer(&cache.u1, &d_u2);
        let d_b4 = d_u2.clone();
        let d_u1 = {
            let mut g = cache.u1p.mapv(|z| act.derivative(z));
            g *= &d_u2.dot(&self.time_block[1].w.t());
            g
        };
        let d_w3 = outer(&cache.e, &d_u1);
        let d_b3 = d_u1.clone();

        NetGrads {
            state_block: [Dense { w: d_w1, b: d_b1 }, Dense { w: d_w2, b: d_b2 }],
            time_block: [Dense { w: d_w3, b: d_b3 }, Dense { w: d_w4, b: d_b4 }],
            head: [
                Dense { w: d_w5, b: d_b5 },
                Dense { w: d_w6, b: d_b6 },
                Dense { w: d_w7, b: d_b7 },
            ],
        }
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[[i, j]] = av * bv;
        }
    }
    out
}

struct ForwardCache {
    x: Array2<f64>,
    e: Array1<f64>,
    u1p: Array1<f64>,
    u1: Array1<f64>,
    u2p: Array1<f64>,
    u2: Array1<f64>,
    a1p: Array2<f64>,
    a1: Array2<f64>,
    a2p: Array2<f64>,
    a2: Array2<f64>,
    z5p: Array2<f64>,
    z5: Array2<f64>,
    z6p: Array2<f64>,
    z6: Array2<f64>,
    out: Array2<f64>,
}

/// Parameter-shaped gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub state_block: [Dense; 2],
    pub time_block: [Dense; 2],
    pub head: [Dense; 3],
}

impl NetGrads {
    pub fn layers(&self) -> [&Dense; 7] {
        [
            &self.state_block[0],
            &self.state_block[1],
            &self.time_block[0],
            &self.time_block[1],
            &self.head[0],
            &self.head[1],
            &self.head[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }
}

/// Transition mean induced by the network at step `m` of `schedule`:
/// `x + gamma_{m+1} * f(t_m, x)`.
pub fn mean_fn(
    params: &DriftNetParams,
    schedule: &TimeSchedule,
    m: usize,
    x: &ArrayView1<f64>,
) -> Result<Array1<f64>, NetError> {
    let n = schedule.n_steps();
    if m >= n {
        return Err(NetError::StepOutOfRange { step: m, n });
    }
    let f = params.forward(schedule.time(m), x)?;
    Ok(x.to_owned() + f * schedule.step(m + 1))
}

/// Batched [`mean_fn`].
pub fn mean_fn_batch(
    params: &DriftNetParams,
    schedule: &TimeSchedule,
    m: usize,
    x: &ArrayView2<f64>,
) -> Result<Array2<f64>, NetError> {
    let n = schedule.n_steps();
    if m >= n {
        return Err(NetError::StepOutOfRange { step: m, n });
    }
    let f = params.forward_batch(schedule.time(m), x);
    Ok(x.to_owned() + f * schedule.step(m + 1))
}

/// Transition-mean function of the model co-directed with a trajectory
/// batch. The identity mean stands in for an untrained (zero-drift) model.
pub trait MeanFunction {
    fn mean(&self, m: usize, x: &ArrayView2<f64>) -> Array2<f64>;
}

/// Mean of the zero-drift model: `x` itself.
pub struct IdentityMean;

impl MeanFunction for IdentityMean {
    fn mean(&self, _m: usize, x: &ArrayView2<f64>) -> Array2<f64> {
        x.to_owned()
    }
}

/// A network plus its schedule, viewed as a transition-mean function.
pub struct NetMean<'a> {
    pub params: &'a DriftNetParams,
    pub schedule: &'a TimeSchedule,
}

impl MeanFunction for NetMean<'_> {
    fn mean(&self, m: usize, x: &ArrayView2<f64>) -> Array2<f64> {
        mean_fn_batch(self.params, self.schedule, m, x).expect("step in range")
    }
}

/// Consecutive states `(X_m, X_{m+1})` from forward trajectories at one step
/// index, the unit of reverse-model training.
pub struct MeanMatchBatch<'a> {
    pub x_m: Array2<f64>,
    pub x_next: Array2<f64>,
    pub m: usize,
    pub schedule: &'a TimeSchedule,
}

impl<'a> MeanMatchBatch<'a> {
    pub fn new(
        x_m: Array2<f64>,
        x_next: Array2<f64>,
        m: usize,
        schedule: &'a TimeSchedule,
    ) -> Result<Self, NetError> {
        if x_m.nrows() == 0 {
            return Err(NetError::EmptyBatch);
        }
        if x_m.raw_dim() != x_next.raw_dim() {
            return Err(NetError::ShapeMismatch {
                expected: x_m.nrows(),
                got: x_next.nrows(),
            });
        }
        if m >= schedule.n_steps() {
            return Err(NetError::StepOutOfRange {
                step: m,
                n: schedule.n_steps(),
            });
        }
        Ok(Self {
            x_m,
            x_next,
            m,
            schedule,
        })
    }

    /// Regression target for the reverse model:
    /// `X_{m+1} + prev_mean(X_m) - prev_mean(X_{m+1})`.
    pub fn target<P: MeanFunction + ?Sized>(&self, prev_mean: &P) -> Array2<f64> {
        let at_m = prev_mean.mean(self.m, &self.x_m.view());
        let at_next = prev_mean.mean(self.m, &self.x_next.view());
        &self.x_next + &at_m - at_next
    }

    /// Step index of the reverse direction paired with forward step `m`.
    pub fn reverse_step(&self) -> usize {
        self.schedule.n_steps() - self.m - 1
    }
}

/// Core regression objective: mean squared residual of the reverse-model
/// transition mean at reverse step `m_rev`, evaluated at `x`, against
/// `target`. Returns the loss and its exact parameter gradients.
pub fn loss_and_grads_on_target(
    params: &DriftNetParams,
    schedule: &TimeSchedule,
    m_rev: usize,
    x: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
) -> Result<(f64, NetGrads), NetError> {
    let n = schedule.n_steps();
    if m_rev >= n {
        return Err(NetError::StepOutOfRange { step: m_rev, n });
    }
    let b = x.nrows();
    if b == 0 {
        return Err(NetError::EmptyBatch);
    }
    let gamma = schedule.step(m_rev + 1);
    let cache = params.forward_cached(schedule.time(m_rev), x);
    // residual = x + gamma f(t, x) - target
    let mut resid = &cache.out * gamma;
    resid += x;
    resid -= target;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / b as f64;
    if !loss.is_finite() {
        return Err(NetError::NonFinite);
    }
    let d_out = resid * (2.0 * gamma / b as f64);
    let grads = params.backward(&cache, &d_out);
    Ok((loss, grads))
}

/// Mean-matching loss: regress the reverse model's transition mean at
/// `X_{m+1}` onto `X_{m+1} + prev_mean(X_m) - prev_mean(X_{m+1})`, with the
/// step index mapped `m -> N - m - 1` between directions.
pub fn mean_match_loss<P: MeanFunction + ?Sized>(
    params_new: &DriftNetParams,
    prev_mean: &P,
    batch: &MeanMatchBatch<'_>,
) -> Result<f64, NetError> {
    let target = batch.target(prev_mean);
    let (loss, _) = loss_and_grads_on_target(
        params_new,
        batch.schedule,
        batch.reverse_step(),
        &batch.x_next.view(),
        &target.view(),
    )?;
    Ok(loss)
}

/// Exact gradients of [`mean_match_loss`] with respect to every parameter.
pub fn backprop_grads<P: MeanFunction + ?Sized>(
    params_new: &DriftNetParams,
    prev_mean: &P,
    batch: &MeanMatchBatch<'_>,
) -> Result<NetGrads, NetError> {
    let target = batch.target(prev_mean);
    let (_, grads) = loss_and_grads_on_target(
        params_new,
        batch.schedule,
        batch.reverse_step(),
        &batch.x_next.view(),
        &target.view(),
    )?;
    if !grads.is_finite() {
        return Err(NetError::NonFinite);
    }
    Ok(grads)
}

/// Adam accumulator state, shaped like the parameters it optimizes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: Vec<(Array2<f64>, Array1<f64>)>,
    second_moment: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(params: &DriftNetParams, lr: f64) -> Self {
        let zeros: Vec<_> = params
            .layers()
            .iter()
            .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut DriftNetParams, grads: &NetGrads) -> Result<(), NetError> {
        let g_layers = grads.layers();
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (idx, layer) in params.layers_mut().into_iter().enumerate() {
            let g = g_layers[idx];
            if g.w.raw_dim() != layer.w.raw_dim() || g.b.raw_dim() != layer.b.raw_dim() {
                return Err(NetError::ShapeMismatch {
                    expected: layer.w.len(),
                    got: g.w.len(),
                });
            }
            let (mw, mb) = &mut self.first_moment[idx];
            let (vw, vb) = &mut self.second_moment[idx];
            update(&mut layer.w, &g.w, mw, vw, self.lr, self.beta1, self.beta2, self.eps, bc1, bc2);
            update_1d(&mut layer.b, &g.b, mb, vb, self.lr, self.beta1, self.beta2, self.eps, bc1, bc2);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|pv, &gv, mv, vv| {
        *mv = b1 * *mv + (1.0 - b1) * gv;
        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
        *pv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
    });
}

#[allow(clippy::too_many_arguments)]
fn update_1d(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|pv, &gv, mv, vv| {
        *mv = b1 * *mv + (1.0 - b1) * gv;
        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
        *pv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
    });
}
