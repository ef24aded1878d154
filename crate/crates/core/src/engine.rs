//! Batched forward and backward passes over a set of time samples.
//!
//! Activations are stored sample-major (`n × width`) so the dense layers are
//! plain matrix products.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use crate::model::{Activation, InrModel, TwoLayerWeights};
use crate::trig::sin_cos;

/// Time samples fed to the first layer. A uniform grid lets the first-layer
/// phases advance by rotation instead of one `sin_cos` per entry.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Times<'a> {
    Uniform(&'a [f64]),
    Scattered(&'a [f64]),
}

impl<'a> Times<'a> {
    fn slice(&self) -> &'a [f64] {
        match self {
            Times::Uniform(t) | Times::Scattered(t) => t,
        }
    }
}

/// Rows between exact re-evaluations of the rotated phases.
const ANCHOR_STRIDE: usize = 32;

/// Scratch buffers reused across loss evaluations so the training loop does
/// not allocate (and page-fault) large arrays every epoch.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    z: Array2<f64>,
    dz: Array2<f64>,
    y: Array2<f64>,
    dy: Array2<f64>,
    out: Array2<f64>,
    gv: Array2<f64>,
    gu: Array2<f64>,
}

fn sized(a: &mut Array2<f64>, rows: usize, cols: usize) -> &mut Array2<f64> {
    if a.dim() != (rows, cols) {
        *a = Array2::zeros((rows, cols));
    }
    a
}

/// Writes `sin` and `cos` of `freq_i · t_k + phase_i` for every sample `k`
/// and neuron `i` into `s` and `c` (both `n × h`).
fn fill_sinusoids(times: Times<'_>, freq: &[f64], phase: &[f64], s: &mut Array2<f64>, c: &mut Array2<f64>) {
    let t = times.slice();
    let h = freq.len();
    if h == 0 {
        return;
    }
    let s = s.as_slice_mut().expect("standard layout");
    let c = c.as_slice_mut().expect("standard layout");
    let exact = |k: usize, s_row: &mut [f64], c_row: &mut [f64]| {
        for i in 0..h {
            (s_row[i], c_row[i]) = sin_cos(freq[i] * t[k] + phase[i]);
        }
    };
    match times {
        Times::Uniform(_) if t.len() >= 2 => {
            let mut rotor = RowRotor::new(t, freq.to_vec(), phase);
            for (k, (s_row, c_row)) in s.chunks_mut(h).zip(c.chunks_mut(h)).enumerate() {
                rotor.advance_to(k);
                s_row.copy_from_slice(&rotor.s);
                c_row.copy_from_slice(&rotor.c);
            }
        }
        _ => {
            for (k, (s_row, c_row)) in s.chunks_mut(h).zip(c.chunks_mut(h)).enumerate() {
                exact(k, s_row, c_row);
            }
        }
    }
}

/// First-layer activations `z` and slopes `dz`, both `n × h1`.
fn first_layer(
    times: Times<'_>,
    omega0: f64,
    a1: &[f64],
    b1: &[f64],
    act: Activation,
    z: &mut Array2<f64>,
    dz: &mut Array2<f64>,
) {
    let freq: Vec<f64> = a1.iter().map(|a| omega0 * a).collect();
    match act {
        Activation::Sine => fill_sinusoids(times, &freq, b1, z, dz),
        Activation::Relu => {
            let t = times.slice();
            Zip::indexed(z).and(dz).for_each(|(k, i), z, dz| {
                (*z, *dz) = act.apply_with_slope(freq[i] * t[k] + b1[i]);
            });
        }
    }
}

/// Mean squared error over all samples and channels, plus its gradient in
/// the model's flat parameter order when `grad` is given. `targets` is
/// `n × C`.
pub(crate) fn loss_and_grad(
    model: &InrModel,
    times: Times<'_>,
    targets: ArrayView2<'_, f64>,
    grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) -> f64 {
    match model {
        InrModel::Single(m) if matches!(times, Times::Uniform(t) if t.len() >= 2) => {
            single_uniform(m, times.slice(), targets.column(0), grad)
        }
        InrModel::Single(m) => {
            let n = times.slice().len();
            let h = m.a1.len();
            let (z, dz) = (sized(&mut ws.z, n, h), sized(&mut ws.dz, n, h));
            first_layer(times, m.omega0, &m.a1, &m.b1, Activation::Sine, z, dz);
            let a2 = ndarray::aview1(&m.a2);
            let out = z.dot(&a2) + m.b2;
            let resid = &out - &targets.column(0);
            let loss = resid.dot(&resid) / n as f64;
            if let Some(g) = grad {
                let g_out = resid * (2.0 / n as f64);
                let (ga1, rest) = g.split_at_mut(h);
                let (gb1, rest) = rest.split_at_mut(h);
                let (ga2, gb2) = rest.split_at_mut(h);
                ga2.copy_from_slice(z.t().dot(&g_out).as_slice().unwrap());
                gb2[0] = g_out.sum();
                // d/du_i = g_out_k · a2_i · cos(u_ki)
                Zip::from(dz.rows_mut()).and(&g_out).for_each(|mut row, &go| {
                    Zip::from(&mut row).and(&a2).for_each(|x, &a| *x *= go * a);
                });
                first_layer_grads(dz, times, m.omega0, ga1, gb1);
            }
            loss
        }
        InrModel::Double(m) => two_layer(&m.weights, m.omega0, m.activation, times, targets, grad, ws),
        InrModel::Multi(m) => two_layer(&m.weights, m.omega0, m.activation, times, targets, grad, ws),
    }
}

/// Rotation state for `sin`/`cos` of `freq_i · t_k + phase_i`, advanced one
/// uniform grid step at a time and re-anchored every `ANCHOR_STRIDE` rows.
/// Produces exactly the rows of [`sinusoid_table`] without storing them.
struct RowRotor<'a> {
    t: &'a [f64],
    freq: Vec<f64>,
    phase: &'a [f64],
    rot_s: Vec<f64>,
    rot_c: Vec<f64>,
    s: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> RowRotor<'a> {
    fn new(t: &'a [f64], freq: Vec<f64>, phase: &'a [f64]) -> Self {
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        let (rot_s, rot_c) = freq.iter().map(|w| (w * dt).sin_cos()).unzip();
        let h = freq.len();
        Self { t, freq, phase, rot_s, rot_c, s: vec![0.0; h], c: vec![0.0; h] }
    }

    fn advance_to(&mut self, k: usize) {
        if k % ANCHOR_STRIDE == 0 {
            for i in 0..self.freq.len() {
                (self.s[i], self.c[i]) = sin_cos(self.freq[i] * self.t[k] + self.phase[i]);
            }
        } else {
            for (((s, c), &rs), &rc) in self.s.iter_mut().zip(&mut self.c).zip(&self.rot_s).zip(&self.rot_c) {
                let (sp, cp) = (*s, *c);
                *s = sp * rc + cp * rs;
                *c = cp * rc - sp * rs;
            }
        }
    }
}

/// Single-layer loss and gradient on a uniform grid in two streaming passes,
/// so memory stays `O(h)` however long the capture is.
fn single_uniform(
    m: &crate::model::SingleLayerModel,
    t: &[f64],
    target: ndarray::ArrayView1<'_, f64>,
    grad: Option<&mut [f64]>,
) -> f64 {
    let (n, h) = (t.len(), m.a1.len());
    let freq: Vec<f64> = m.a1.iter().map(|a| m.omega0 * a).collect();
    let mut rotor = RowRotor::new(t, freq.clone(), &m.b1);
    let mut resid = Vec::with_capacity(n);
    for k in 0..n {
        rotor.advance_to(k);
        let out: f64 = rotor.s.iter().zip(&m.a2).map(|(s, a)| s * a).sum::<f64>() + m.b2;
        resid.push(out - target[k]);
    }
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
    if let Some(g) = grad {
        let (ga1, rest) = g.split_at_mut(h);
        let (gb1, rest) = rest.split_at_mut(h);
        let (ga2, gb2) = rest.split_at_mut(h);
        ga1.fill(0.0);
        gb1.fill(0.0);
        ga2.fill(0.0);
        let scale = 2.0 / n as f64;
        let mut rotor = RowRotor::new(t, freq, &m.b1);
        let mut g_out_sum = 0.0;
        for k in 0..n {
            rotor.advance_to(k);
            let go = resid[k] * scale;
            g_out_sum += go;
            let tk = t[k];
            for i in 0..h {
                ga2[i] += go * rotor.s[i];
                let gu = go * m.a2[i] * rotor.c[i];
                gb1[i] += gu;
                ga1[i] += gu * tk;
            }
        }
        for x in ga1.iter_mut() {
            *x *= m.omega0;
        }
        gb2[0] = g_out_sum;
    }
    loss
}

fn first_layer_grads(gu: &Array2<f64>, times: Times<'_>, omega0: f64, ga1: &mut [f64], gb1: &mut [f64]) {
    let t = Array1::from(times.slice().to_vec());
    let ga = gu.t().dot(&t) * omega0;
    ga1.copy_from_slice(ga.as_slice().unwrap());
    let gb = gu.sum_axis(Axis(0));
    gb1.copy_from_slice(gb.as_slice().unwrap());
}

fn two_layer(
    w: &TwoLayerWeights,
    omega0: f64,
    act: Activation,
    times: Times<'_>,
    targets: ArrayView2<'_, f64>,
    grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) -> f64 {
    let (h1, h2, c) = (w.h1, w.h2, w.c);
    let n = times.slice().len();
    let a2 = ArrayView2::from_shape((h1, h2), &w.a2).unwrap();
    let a3 = ArrayView2::from_shape((h2, c), &w.a3).unwrap();

    let Workspace { z, dz, y, dy, out, gv, gu } = ws;
    let (z, dz) = (sized(z, n, h1), sized(dz, n, h1));
    let (y, dy, out) = (sized(y, n, h2), sized(dy, n, h2), sized(out, n, c));
    first_layer(times, omega0, &w.a1, &w.b1, act, z, dz);
    general_mat_mul(1.0, &*z, &a2, 0.0, y);
    for (y_row, dy_row) in y.rows_mut().into_iter().zip(dy.rows_mut()) {
        Zip::from(y_row).and(dy_row).and(&w.b2[..]).for_each(|y, dy, &b| {
            (*y, *dy) = act.apply_with_slope(*y + b);
        });
    }
    general_mat_mul(1.0, &*y, &a3, 0.0, out);
    // `out` becomes the residual.
    for (o_row, t_row) in out.rows_mut().into_iter().zip(targets.rows()) {
        Zip::from(o_row).and(t_row).and(&w.b3[..]).for_each(|o, &t, &b| *o += b - t);
    }
    let count = (n * c) as f64;
    let loss = out.iter().map(|r| r * r).sum::<f64>() / count;

    if let Some(g) = grad {
        let g_out = out;
        *g_out *= 2.0 / count;
        let (ga1, rest) = g.split_at_mut(h1);
        let (gb1, rest) = rest.split_at_mut(h1);
        let (ga2, rest) = rest.split_at_mut(h1 * h2);
        let (gb2, rest) = rest.split_at_mut(h2);
        let (ga3, gb3) = rest.split_at_mut(h2 * c);

        let mut ga3 = ArrayViewMut2::from_shape((h2, c), ga3).unwrap();
        general_mat_mul(1.0, &y.t(), &*g_out, 0.0, &mut ga3);
        sum_rows_into(g_out, gb3);

        let gv = sized(gv, n, h2);
        general_mat_mul(1.0, &*g_out, &a3.t(), 0.0, gv);
        *gv *= &*dy;
        let mut ga2 = ArrayViewMut2::from_shape((h1, h2), ga2).unwrap();
        general_mat_mul(1.0, &z.t(), &*gv, 0.0, &mut ga2);
        sum_rows_into(gv, gb2);

        let gu = sized(gu, n, h1);
        general_mat_mul(1.0, &*gv, &a2.t(), 0.0, gu);
        *gu *= &*dz;
        first_layer_grads(gu, times, omega0, ga1, gb1);
    }
    loss
}

fn sum_rows_into(a: &Array2<f64>, dst: &mut [f64]) {
    dst.fill(0.0);
    for row in a.rows() {
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_table_tracks_direct_evaluation() {
        let n = 7936;
        let t: Vec<f64> = (0..n)
            .map(|k| (2.0 * k as f64 - (n - 1) as f64) / (n - 1) as f64)
            .collect();
        let freq = [0.0, 17.3, -950.0, 3000.0];
        let phase = [0.3, -1.0, 2.0, 0.0];
        let table = |times| {
            let (mut s, mut c) = (Array2::zeros((n, 4)), Array2::zeros((n, 4)));
            fill_sinusoids(times, &freq, &phase, &mut s, &mut c);
            (s, c)
        };
        let (s, c) = table(Times::Uniform(&t));
        let (s2, c2) = table(Times::Scattered(&t));
        let worst = s
            .iter()
            .zip(&s2)
            .chain(c.iter().zip(&c2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "rotation drift {worst}");
    }

    #[test]
    fn streaming_single_matches_table_path() {
        use crate::model::SingleLayerModel;
        let n = 301;
        let t: Vec<f64> = (0..n)
            .map(|k| (2.0 * k as f64 - (n - 1) as f64) / (n - 1) as f64)
            .collect();
        let h = 7;
        let f = |k: usize, s: f64| ((k as f64 * s).sin() * 1.3).to_owned();
        let m = SingleLayerModel::new(
            40.0,
            (0..h).map(|i| f(i, 1.1)).collect(),
            (0..h).map(|i| f(i, 2.3)).collect(),
            (0..h).map(|i| f(i, 0.7)).collect(),
            0.2,
        )
        .unwrap();
        let model = InrModel::Single(m);
        let y = Array2::from_shape_fn((n, 1), |(k, _)| (9.0 * t[k]).sin());
        let mut g1 = vec![0.0; 3 * h + 1];
        let mut g2 = g1.clone();
        let ws = &mut Workspace::default();
        let l1 = loss_and_grad(&model, Times::Uniform(&t), y.view(), Some(&mut g1), ws);
        let l2 = loss_and_grad(&model, Times::Scattered(&t), y.view(), Some(&mut g2), ws);
        assert!((l1 - l2).abs() < 1e-12 * l2.max(1.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}
