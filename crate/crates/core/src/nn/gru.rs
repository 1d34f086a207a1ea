use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::impl_params;
use crate::nn::sigmoid;

/// Gated recurrent unit with gate blocks laid out as `[reset | update | candidate]`.
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    /// `(input, 3 * hidden)`
    pub w_ih: Array2<f64>,
    /// `(hidden, 3 * hidden)`
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

impl_params!(Gru { w_ih, w_hh, b_ih, b_hh });

/// Intermediates of one cell update, enough to run the step backwards.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    ghn: Array2<f64>,
}

/// Intermediates of a full sequence, time-major.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Array3<f64>,
    /// `(T + 1, B, H)`; slot 0 is the initial state.
    h: Array3<f64>,
    r: Array3<f64>,
    z: Array3<f64>,
    n: Array3<f64>,
    ghn: Array3<f64>,
}

struct Gates {
    h: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    ghn: Array2<f64>,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("finite bounds");
        let mut draw = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || dist.sample(rng));
        let w_ih = draw((input, 3 * hidden));
        let w_hh = draw((hidden, 3 * hidden));
        let b_ih = draw((1, 3 * hidden)).remove_axis(Axis(0));
        let b_hh = draw((1, 3 * hidden)).remove_axis(Axis(0));
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((input, 3 * hidden)),
            w_hh: Array2::zeros((hidden, 3 * hidden)),
            b_ih: Array1::zeros(3 * hidden),
            b_hh: Array1::zeros(3 * hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.nrows()
    }

    fn gates(&self, gi: ArrayView2<f64>, h_prev: ArrayView2<f64>) -> Gates {
        let hid = self.hidden_size();
        let gh = h_prev.dot(&self.w_hh) + &self.b_hh;
        let batch = h_prev.nrows();
        let mut out = Gates {
            h: Array2::zeros((batch, hid)),
            r: Array2::zeros((batch, hid)),
            z: Array2::zeros((batch, hid)),
            n: Array2::zeros((batch, hid)),
            ghn: gh.slice(s![.., 2 * hid..]).to_owned(),
        };
        for b in 0..batch {
            for j in 0..hid {
                let r = sigmoid(gi[[b, j]] + gh[[b, j]]);
                let z = sigmoid(gi[[b, hid + j]] + gh[[b, hid + j]]);
                let n = (gi[[b, 2 * hid + j]] + r * gh[[b, 2 * hid + j]]).tanh();
                out.r[[b, j]] = r;
                out.z[[b, j]] = z;
                out.n[[b, j]] = n;
                out.h[[b, j]] = (1.0 - z) * n + z * h_prev[[b, j]];
            }
        }
        out
    }

    /// Gradients of the gate pre-activations for one step. Returns
    /// `(d gi, d gh, partial dL/dh_prev through the update gate)`.
    fn gates_backward(
        h_prev: ArrayView2<f64>,
        r: ArrayView2<f64>,
        z: ArrayView2<f64>,
        n: ArrayView2<f64>,
        ghn: ArrayView2<f64>,
        dh: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (batch, hid) = dh.dim();
        let mut dgi = Array2::zeros((batch, 3 * hid));
        let mut dgh = Array2::zeros((batch, 3 * hid));
        let mut dh_prev = Array2::zeros((batch, hid));
        for b in 0..batch {
            for j in 0..hid {
                let (rv, zv, nv) = (r[[b, j]], z[[b, j]], n[[b, j]]);
                let g = dh[[b, j]];
                let dn_pre = g * (1.0 - zv) * (1.0 - nv * nv);
                let dz_pre = g * (h_prev[[b, j]] - nv) * zv * (1.0 - zv);
                let dr_pre = dn_pre * ghn[[b, j]] * rv * (1.0 - rv);
                dgi[[b, j]] = dr_pre;
                dgi[[b, hid + j]] = dz_pre;
                dgi[[b, 2 * hid + j]] = dn_pre;
                dgh[[b, j]] = dr_pre;
                dgh[[b, hid + j]] = dz_pre;
                dgh[[b, 2 * hid + j]] = dn_pre * rv;
                dh_prev[[b, j]] = g * zv;
            }
        }
        (dgi, dgh, dh_prev)
    }

    fn check_input(&self, op: &'static str, d: usize, h0: (usize, usize), batch: usize) -> Result<()> {
        if d != self.input_size() {
            return Err(Error::shape(op, format!("input dim {}", self.input_size()), format!("input dim {d}")));
        }
        if h0 != (batch, self.hidden_size()) {
            return Err(Error::shape(
                op,
                format!("initial state ({batch}, {})", self.hidden_size()),
                format!("{h0:?}"),
            ));
        }
        Ok(())
    }

    /// One cell update on a batch of inputs `(B, D)` and states `(B, H)`.
    pub fn step(&self, x: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<(Array2<f64>, GruStepCache)> {
        self.check_input("gru_step", x.ncols(), h.dim(), x.nrows())?;
        let gi = x.dot(&self.w_ih) + &self.b_ih;
        let g = self.gates(gi.view(), h);
        let cache = GruStepCache {
            x: x.to_owned(),
            h_prev: h.to_owned(),
            r: g.r,
            z: g.z,
            n: g.n,
            ghn: g.ghn,
        };
        Ok((g.h, cache))
    }

    /// Backward through [`Gru::step`]; returns `(dL/dx, dL/dh_prev)`.
    pub fn step_backward(&self, cache: &GruStepCache, dh: ArrayView2<f64>, grads: &mut Gru) -> (Array2<f64>, Array2<f64>) {
        let (dgi, dgh, mut dh_prev) = Self::gates_backward(
            cache.h_prev.view(),
            cache.r.view(),
            cache.z.view(),
            cache.n.view(),
            cache.ghn.view(),
            dh,
        );
        grads.w_hh += &cache.h_prev.t().dot(&dgh);
        grads.b_hh += &dgh.sum_axis(Axis(0));
        grads.w_ih += &cache.x.t().dot(&dgi);
        grads.b_ih += &dgi.sum_axis(Axis(0));
        dh_prev += &dgh.dot(&self.w_hh.t());
        (dgi.dot(&self.w_ih.t()), dh_prev)
    }

    /// Run over a time-major sequence `(T, B, D)` from `h0 (B, H)`; returns all
    /// hidden states `(T, B, H)`.
    pub fn forward(&self, x: ArrayView3<f64>, h0: ArrayView2<f64>) -> Result<(Array3<f64>, GruCache)> {
        let (t_len, batch, d) = x.dim();
        if t_len == 0 {
            return Err(Error::invalid("gru_forward", "empty sequence"));
        }
        self.check_input("gru_forward", d, h0.dim(), batch)?;
        let hid = self.hidden_size();
        let x_flat = x.as_standard_layout().into_owned().into_shape_with_order((t_len * batch, d)).expect("contiguous");
        let gi_all = (x_flat.dot(&self.w_ih) + &self.b_ih)
            .into_shape_with_order((t_len, batch, 3 * hid))
            .expect("contiguous");
        let mut cache = GruCache {
            x: x_flat.into_shape_with_order((t_len, batch, d)).expect("contiguous"),
            h: Array3::zeros((t_len + 1, batch, hid)),
            r: Array3::zeros((t_len, batch, hid)),
            z: Array3::zeros((t_len, batch, hid)),
            n: Array3::zeros((t_len, batch, hid)),
            ghn: Array3::zeros((t_len, batch, hid)),
        };
        cache.h.index_axis_mut(Axis(0), 0).assign(&h0);
        for t in 0..t_len {
            let g = self.gates(gi_all.index_axis(Axis(0), t), cache.h.index_axis(Axis(0), t));
            cache.h.index_axis_mut(Axis(0), t + 1).assign(&g.h);
            cache.r.index_axis_mut(Axis(0), t).assign(&g.r);
            cache.z.index_axis_mut(Axis(0), t).assign(&g.z);
            cache.n.index_axis_mut(Axis(0), t).assign(&g.n);
            cache.ghn.index_axis_mut(Axis(0), t).assign(&g.ghn);
        }
        let out = cache.h.slice(s![1.., .., ..]).to_owned();
        Ok((out, cache))
    }

    /// Backpropagate `d_out = dL/dh_t` for every step. Returns `dL/dx` when
    /// requested and `dL/dh0`.
    pub fn backward(
        &self,
        cache: &GruCache,
        d_out: ArrayView3<f64>,
        grads: &mut Gru,
        want_dx: bool,
    ) -> (Option<Array3<f64>>, Array2<f64>) {
        let (t_len, batch, d) = cache.x.dim();
        let hid = self.hidden_size();
        debug_assert_eq!(d_out.dim(), (t_len, batch, hid));
        let mut dgi_all = Array3::<f64>::zeros((t_len, batch, 3 * hid));
        let mut dgh_all = Array3::<f64>::zeros((t_len, batch, 3 * hid));
        let mut carry = Array2::<f64>::zeros((batch, hid));
        for t in (0..t_len).rev() {
            let dh = &carry + &d_out.index_axis(Axis(0), t);
            let (dgi, dgh, dh_prev) = Self::gates_backward(
                cache.h.index_axis(Axis(0), t),
                cache.r.index_axis(Axis(0), t),
                cache.z.index_axis(Axis(0), t),
                cache.n.index_axis(Axis(0), t),
                cache.ghn.index_axis(Axis(0), t),
                dh.view(),
            );
            carry = dh_prev + dgh.dot(&self.w_hh.t());
            dgi_all.index_axis_mut(Axis(0), t).assign(&dgi);
            dgh_all.index_axis_mut(Axis(0), t).assign(&dgh);
        }
        let dgi_flat = dgi_all.into_shape_with_order((t_len * batch, 3 * hid)).expect("contiguous");
        let dgh_flat = dgh_all.into_shape_with_order((t_len * batch, 3 * hid)).expect("contiguous");
        let x_flat = cache.x.view().into_shape_with_order((t_len * batch, d)).expect("contiguous");
        let h_prev = cache.h.slice(s![..t_len, .., ..]);
        let h_prev_flat = h_prev.to_shape((t_len * batch, hid)).expect("contiguous");
        grads.w_ih += &x_flat.t().dot(&dgi_flat);
        grads.b_ih += &dgi_flat.sum_axis(Axis(0));
        grads.w_hh += &h_prev_flat.t().dot(&dgh_flat);
        grads.b_hh += &dgh_flat.sum_axis(Axis(0));
        let dx = want_dx.then(|| {
            dgi_flat
                .dot(&self.w_ih.t())
                .into_shape_with_order((t_len, batch, d))
                .expect("contiguous")
        });
        (dx, carry)
    }

    /// Single unbatched sequence `(T, D)` from `h0 (H)`; returns `(T, H)`.
    pub fn run(&self, inputs: ArrayView2<f64>, h0: ArrayView1<f64>) -> Result<Array2<f64>> {
        let (t_len, d) = inputs.dim();
        let x = inputs.to_shape((t_len, 1, d)).expect("reshape");
        let h = h0.to_shape((1, h0.len())).expect("reshape");
        let (out, _) = self.forward(x.view(), h.view())?;
        Ok(out.into_shape_with_order((t_len, self.hidden_size())).expect("contiguous"))
    }
}

/// Forward and backward GRUs read over the same sequence from zero states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl_params!(BiGru { fwd, bwd });

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
    t_len: usize,
}

fn reverse_time(a: ArrayView3<f64>) -> Array3<f64> {
    a.slice(s![..;-1, .., ..]).as_standard_layout().into_owned()
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Gru::new(input, hidden, rng),
            bwd: Gru::new(input, hidden, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            fwd: Gru::zeros(input, hidden),
            bwd: Gru::zeros(input, hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.fwd.input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.fwd.hidden_size()
    }

    /// Returns forward states and backward states, both `(T, B, H)` in the
    /// original time order.
    pub fn forward(&self, x: ArrayView3<f64>) -> Result<(Array3<f64>, Array3<f64>, BiGruCache)> {
        let (t_len, batch, _) = x.dim();
        let h0 = Array2::zeros((batch, self.hidden_size()));
        let (hf, fwd) = self.fwd.forward(x, h0.view())?;
        let xr = reverse_time(x);
        let (hb_rev, bwd) = self.bwd.forward(xr.view(), h0.view())?;
        Ok((hf, reverse_time(hb_rev.view()), BiGruCache { fwd, bwd, t_len }))
    }

    pub fn backward(
        &self,
        cache: &BiGruCache,
        dhf: ArrayView3<f64>,
        dhb: ArrayView3<f64>,
        grads: &mut BiGru,
        want_dx: bool,
    ) -> Option<Array3<f64>> {
        let (dx_f, _) = self.fwd.backward(&cache.fwd, dhf, &mut grads.fwd, want_dx);
        let dhb_rev = reverse_time(dhb);
        let (dx_b, _) = self.bwd.backward(&cache.bwd, dhb_rev.view(), &mut grads.bwd, want_dx);
        match (dx_f, dx_b) {
            (Some(f), Some(b)) => Some(f + reverse_time(b.view())),
            _ => None,
        }
    }

    /// Final forward state concatenated with the final backward state
    /// (which sits at time 0), `(B, 2H)`.
    pub fn encode_final(&self, x: ArrayView3<f64>) -> Result<(Array2<f64>, BiGruCache)> {
        let (hf, hb, cache) = self.forward(x)?;
        let last = hf.index_axis(Axis(0), cache.t_len - 1);
        let first = hb.index_axis(Axis(0), 0);
        Ok((concatenate(Axis(1), &[last, first]).expect("same batch"), cache))
    }

    pub fn backward_final(
        &self,
        cache: &BiGruCache,
        d_final: ArrayView2<f64>,
        grads: &mut BiGru,
        want_dx: bool,
    ) -> Option<Array3<f64>> {
        let hid = self.hidden_size();
        let batch = d_final.nrows();
        let mut dhf = Array3::zeros((cache.t_len, batch, hid));
        let mut dhb = Array3::zeros((cache.t_len, batch, hid));
        dhf.index_axis_mut(Axis(0), cache.t_len - 1)
            .assign(&d_final.slice(s![.., ..hid]));
        dhb.index_axis_mut(Axis(0), 0).assign(&d_final.slice(s![.., hid..]));
        self.backward(cache, dhf.view(), dhb.view(), grads, want_dx)
    }
}
