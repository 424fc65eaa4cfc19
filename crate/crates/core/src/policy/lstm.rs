//! Two stacked LSTM layers with a categorical policy head and a scalar
//! value head, forward and backward by hand in f64.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
}

/// Named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wp: usize,
    bp: usize,
    wv: usize,
    bv: usize,
    len: usize,
}

impl Dims {
    fn layout(&self) -> Layout {
        let (i, h, a) = (self.input, self.hidden, self.actions);
        let w1 = 0;
        let b1 = w1 + 4 * h * (i + h);
        let w2 = b1 + 4 * h;
        let b2 = w2 + 4 * h * 2 * h;
        let wp = b2 + 4 * h;
        let bp = wp + a * h;
        let wv = bp + a;
        let bv = wv + h;
        Layout { w1, b1, w2, b2, wp, bp, wv, bv, len: bv + 1 }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        let l = self.layout();
        let (i, h, a) = (self.input, self.hidden, self.actions);
        let t = |name: &str, shape: Vec<usize>, offset| TensorSpec {
            name: name.to_owned(),
            shape,
            offset,
        };
        vec![
            t("lstm1.weight", vec![4 * h, i + h], l.w1),
            t("lstm1.bias", vec![4 * h], l.b1),
            t("lstm2.weight", vec![4 * h, 2 * h], l.w2),
            t("lstm2.bias", vec![4 * h], l.b2),
            t("policy.weight", vec![a, h], l.wp),
            t("policy.bias", vec![a], l.bp),
            t("value.weight", vec![h], l.wv),
            t("value.bias", vec![1], l.bv),
        ]
    }
}

/// θ: all weights in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dims: Dims) -> Self {
        PolicyParams {
            dims,
            data: vec![0.0; dims.param_count()],
        }
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) recurrent weights, forget-gate bias 1,
    /// small policy head, zero value head.
    pub fn init(dims: Dims, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims);
        let l = dims.layout();
        let h = dims.hidden;
        let k = 1.0 / (h as f64).sqrt();
        for x in &mut p.data[l.w1..l.b1] {
            *x = rng.random_range(-k..k);
        }
        for x in &mut p.data[l.w2..l.b2] {
            *x = rng.random_range(-k..k);
        }
        for b in [l.b1, l.b2] {
            for x in &mut p.data[b + h..b + 2 * h] {
                *x = 1.0;
            }
        }
        for x in &mut p.data[l.wp..l.bp] {
            *x = rng.random_range(-0.01..0.01);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: [Vec<f64>; 2],
    pub c: [Vec<f64>; 2],
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        RecurrentState {
            h: [vec![0.0; hidden], vec![0.0; hidden]],
            c: [vec![0.0; hidden], vec![0.0; hidden]],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
struct CellCache {
    x: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn cell_forward(w: &[f64], b: &[f64], x: Vec<f64>, h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, CellCache) {
    let hd = h_prev.len();
    let mut z = x;
    z.extend_from_slice(h_prev);
    let n = z.len();
    let mut a = b.to_vec();
    for (r, ar) in a.iter_mut().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        *ar += row.iter().zip(&z).map(|(p, q)| p * q).sum::<f64>();
    }
    let i: Vec<f64> = a[..hd].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = a[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = a[2 * hd..3 * hd].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = a[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
    let cache = CellCache {
        x: z,
        i,
        f,
        g,
        o,
        c_prev: c_prev.to_vec(),
        tanh_c,
    };
    (h, c, cache)
}

/// Backprop through one cell. Accumulates weight/bias gradients and returns
/// (d input-part of x, d h_prev, d c_prev).
fn cell_backward(
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    cache: &CellCache,
    dh: &[f64],
    dc_next: &[f64],
    input_len: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = dh.len();
    let n = cache.x.len();
    let mut da = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let d_o = dh[k] * tc;
        let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
        da[k] = dc * g * i * (1.0 - i);
        da[hd + k] = dc * cache.c_prev[k] * f * (1.0 - f);
        da[2 * hd + k] = dc * i * (1.0 - g * g);
        da[3 * hd + k] = d_o * o * (1.0 - o);
        dc_prev[k] = dc * f;
    }
    let mut dx = vec![0.0; n];
    for (r, &d) in da.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        gb[r] += d;
        let row = &w[r * n..(r + 1) * n];
        let grow = &mut gw[r * n..(r + 1) * n];
        for j in 0..n {
            grow[j] += d * cache.x[j];
            dx[j] += d * row[j];
        }
    }
    let dh_prev = dx.split_off(input_len);
    (dx, dh_prev, dc_prev)
}

/// Everything one time step needs for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    cells: [CellCache; 2],
    h2: Vec<f64>,
    pub logits: Vec<f64>,
    pub value: f64,
}

/// One recurrent step. Returns the cache (logits and value inside) and
/// advances `state`.
pub fn forward_step(params: &PolicyParams, state: &mut RecurrentState, input: &[f64]) -> StepCache {
    let d = params.dims;
    let l = d.layout();
    let p = &params.data;
    assert_eq!(input.len(), d.input, "encoding width does not match the policy");
    let (h1, c1, cache1) = cell_forward(&p[l.w1..l.b1], &p[l.b1..l.w2], input.to_vec(), &state.h[0], &state.c[0]);
    let (h2, c2, cache2) = cell_forward(&p[l.w2..l.b2], &p[l.b2..l.wp], h1.clone(), &state.h[1], &state.c[1]);
    let logits: Vec<f64> = (0..d.actions)
        .map(|a| {
            p[l.bp + a]
                + p[l.wp + a * d.hidden..l.wp + (a + 1) * d.hidden]
                    .iter()
                    .zip(&h2)
                    .map(|(w, h)| w * h)
                    .sum::<f64>()
        })
        .collect();
    let value = p[l.bv] + p[l.wv..l.bv].iter().zip(&h2).map(|(w, h)| w * h).sum::<f64>();
    state.h = [h1, h2.clone()];
    state.c = [c1, c2];
    StepCache {
        cells: [cache1, cache2],
        h2,
        logits,
        value,
    }
}

/// Softmax restricted to `valid`; every other action gets exactly 0.
pub fn masked_softmax(logits: &[f64], valid: &[u32]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    if valid.is_empty() {
        return out;
    }
    let m = valid
        .iter()
        .map(|&a| logits[a as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &a in valid {
        let e = (logits[a as usize] - m).exp();
        out[a as usize] = e;
        z += e;
    }
    for &a in valid {
        out[a as usize] /= z;
    }
    out
}

/// Per-step training target. The policy term is `-weight * log pi(action)`,
/// where the caller folds advantage and importance weight into `weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTarget {
    pub valid: Vec<u32>,
    pub action: u32,
    pub weight: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub value: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Loss of one episode scaled by `scale`, with gradients accumulated into
/// `grad` when given:
/// sum_t scale * (-w_t log pi(a_t) + c_v (V_t - R_t)^2 - c_e H_t).
pub fn episode_loss(
    params: &PolicyParams,
    inputs: &[Vec<f64>],
    targets: &[StepTarget],
    coefs: LossCoefs,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> LossParts {
    let d = params.dims;
    let l = d.layout();
    let mut state = RecurrentState::zeros(d.hidden);
    let caches: Vec<StepCache> = inputs.iter().map(|x| forward_step(params, &mut state, x)).collect();

    let mut parts = LossParts::default();
    let mut dlogits_all = Vec::with_capacity(caches.len());
    let mut dvalue_all = Vec::with_capacity(caches.len());
    for (cache, t) in caches.iter().zip(targets) {
        let probs = masked_softmax(&cache.logits, &t.valid);
        let pa = probs[t.action as usize];
        let entropy: f64 = t
            .valid
            .iter()
            .map(|&a| probs[a as usize])
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        let verr = cache.value - t.ret;
        parts.policy += scale * -t.weight * pa.ln();
        parts.value += scale * coefs.value * verr * verr;
        parts.entropy += scale * entropy;
        let mut dl = vec![0.0; d.actions];
        for &a in &t.valid {
            let p = probs[a as usize];
            let mut g = t.weight * p;
            if p > 0.0 {
                g += coefs.entropy * p * (p.ln() + entropy);
            }
            dl[a as usize] = scale * g;
        }
        dl[t.action as usize] -= scale * t.weight;
        dlogits_all.push(dl);
        dvalue_all.push(scale * 2.0 * coefs.value * verr);
    }
    parts.total = parts.policy + parts.value - coefs.entropy * parts.entropy;

    let Some(grad) = grad else {
        return parts;
    };
    assert_eq!(grad.len(), l.len);
    let p = &params.data;
    let hd = d.hidden;
    let mut dh_next = [vec![0.0; hd], vec![0.0; hd]];
    let mut dc_next = [vec![0.0; hd], vec![0.0; hd]];
    for t in (0..caches.len()).rev() {
        let cache = &caches[t];
        let dl = &dlogits_all[t];
        let dv = dvalue_all[t];
        let mut dh2 = dh_next[1].clone();
        for (a, &g) in dl.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[l.bp + a] += g;
            let row = l.wp + a * hd;
            for k in 0..hd {
                grad[row + k] += g * cache.h2[k];
                dh2[k] += g * p[row + k];
            }
        }
        grad[l.bv] += dv;
        for k in 0..hd {
            grad[l.wv + k] += dv * cache.h2[k];
            dh2[k] += dv * p[l.wv + k];
        }
        let (gw2, rest) = grad[l.w2..l.wp].split_at_mut(l.b2 - l.w2);
        let (dh1_in, dh2_prev, dc2_prev) =
            cell_backward(&p[l.w2..l.b2], gw2, rest, &cache.cells[1], &dh2, &dc_next[1], hd);
        let mut dh1 = dh_next[0].clone();
        for k in 0..hd {
            dh1[k] += dh1_in[k];
        }
        let (gw1, rest) = grad[l.w1..l.w2].split_at_mut(l.b1 - l.w1);
        let (_, dh1_prev, dc1_prev) =
            cell_backward(&p[l.w1..l.b1], gw1, rest, &cache.cells[0], &dh1, &dc_next[0], d.input);
        dh_next = [dh1_prev, dh2_prev];
        dc_next = [dc1_prev, dc2_prev];
    }
    parts
}
