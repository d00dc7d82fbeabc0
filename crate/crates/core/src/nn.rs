//! Fully connected ELU networks over a flat parameter vector.
//!
//! Parameter layout is layer-major. Within a layer the weight matrix comes
//! first, stored row-major with shape `(out, in)`, followed by the `out`
//! biases. Hidden layers apply ELU; the output layer is linear.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{elu_value, BlockVjp, ParamRange, Tape, Var};
use crate::rng::Rng;

/// Layer widths from input to output, e.g. `[1, 16, 16, 9]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output width");
        assert!(sizes.iter().all(|&s| s > 0), "layer widths must be positive");
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of the weight matrix and bias vector of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    /// Weights `U(−√(1/fan_in), √(1/fan_in))`, biases zero.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        for l in 0..self.num_layers() {
            let (w_off, b_off) = self.layer_offsets(l);
            let bound = (1.0 / self.sizes[l] as f64).sqrt();
            for w in &mut params[w_off..b_off] {
                *w = rng.random_range(-bound..bound);
            }
        }
        params
    }

    fn weights<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let (w_off, b_off) = self.layer_offsets(l);
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((fan_out, fan_in), &params[w_off..b_off]).unwrap();
        (w, &params[b_off..b_off + fan_out])
    }

    /// Affine map of layer `l` applied to `input` (rows are points).
    fn affine(&self, params: &[f64], l: usize, input: &Array2<f64>) -> Array2<f64> {
        let (w, b) = self.weights(params, l);
        let mut z = Array2::from_shape_vec((input.nrows(), b.len()), b.repeat(input.nrows())).unwrap();
        general_mat_mul(1.0, input, &w.t(), 1.0, &mut z);
        z
    }

    /// Evaluate on `n` points stored row-major in `inputs`. Returns `n × output_dim` values.
    pub fn forward(&self, params: &[f64], inputs: &[f64]) -> Vec<f64> {
        assert_eq!(params.len(), self.param_count());
        let n = inputs.len() / self.input_dim();
        let mut a = Array2::from_shape_vec((n, self.input_dim()), inputs.to_vec())
            .expect("input length must be a multiple of the input width");
        for l in 0..self.num_layers() {
            let mut z = self.affine(params, l, &a);
            if l + 1 < self.num_layers() {
                z.mapv_inplace(elu_value);
            }
            a = z;
        }
        a.into_raw_vec_and_offset().0
    }

    /// Evaluate on a batch and record the result as a tape block whose
    /// gradient flows into `vars`. Returns the first of `n × output_dim`
    /// consecutive output nodes (row-major by point).
    pub fn record(&self, tape: &mut Tape, vars: ParamRange, params: &[f64], inputs: &[f64]) -> Var {
        assert_eq!(vars.len, self.param_count());
        assert_eq!(params.len(), self.param_count());
        let n = inputs.len() / self.input_dim();
        let x = Array2::from_shape_vec((n, self.input_dim()), inputs.to_vec())
            .expect("input length must be a multiple of the input width");
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post = Vec::with_capacity(self.num_layers());
        post.push(x);
        for l in 0..self.num_layers() {
            let z = self.affine(params, l, post.last().unwrap());
            if l + 1 < self.num_layers() {
                post.push(z.mapv(elu_value));
            }
            pre.push(z);
        }
        let out = pre.last().unwrap().as_slice().expect("standard layout").to_vec();
        tape.block(
            &out,
            Box::new(MlpBlock {
                net: self.clone(),
                params: params.to_vec(),
                param_start: vars.start.index(),
                pre,
                post,
            }),
        )
    }

    /// Scalar-node evaluation of a single point. Slow; an independent route
    /// to the same function and gradient as [`Mlp::record`].
    pub fn record_scalar(&self, tape: &mut Tape, vars: ParamRange, input: &[f64]) -> Vec<Var> {
        assert_eq!(input.len(), self.input_dim());
        let mut a: Vec<Var> = input.iter().map(|&x| tape.lift(x)).collect();
        for l in 0..self.num_layers() {
            let (w_off, b_off) = self.layer_offsets(l);
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut next = Vec::with_capacity(fan_out);
            for j in 0..fan_out {
                let row: Vec<Var> = (0..fan_in).map(|k| vars.get(w_off + j * fan_in + k)).collect();
                let d = tape.dot(&row, &a);
                let z = tape.add(d, vars.get(b_off + j));
                next.push(if l + 1 < self.num_layers() { tape.elu(z) } else { z });
            }
            a = next;
        }
        a
    }
}

struct MlpBlock {
    net: Mlp,
    params: Vec<f64>,
    param_start: usize,
    /// Pre-activations of every layer.
    pre: Vec<Array2<f64>>,
    /// Layer inputs: the network input followed by each hidden activation.
    post: Vec<Array2<f64>>,
}

impl BlockVjp for MlpBlock {
    fn backward(&self, out_adjoint: &[f64], adjoint: &mut [f64]) {
        let n = self.post[0].nrows();
        let layers = self.net.num_layers();
        let mut dz = Array2::from_shape_vec((n, self.net.output_dim()), out_adjoint.to_vec()).unwrap();
        for l in (0..layers).rev() {
            let (w_off, b_off) = self.net.layer_offsets(l);
            let input = &self.post[l];
            let fan_out = self.net.sizes[l + 1];

            let dw = dz.t().dot(input);
            for (g, d) in adjoint[self.param_start + w_off..self.param_start + b_off]
                .iter_mut()
                .zip(dw.iter())
            {
                *g += d;
            }
            let db = dz.sum_axis(Axis(0));
            for (g, d) in adjoint[self.param_start + b_off..self.param_start + b_off + fan_out]
                .iter_mut()
                .zip(db.iter())
            {
                *g += d;
            }

            if l > 0 {
                let (w, _) = self.net.weights(&self.params, l);
                let mut da = dz.dot(&w);
                // elu'(z) = elu(z) + 1 for z < 0
                let pre = self.pre[l - 1].as_slice().expect("standard layout");
                let post = self.post[l].as_slice().expect("standard layout");
                for ((g, &z), &a) in da.as_slice_mut().expect("standard layout").iter_mut().zip(pre).zip(post) {
                    if z < 0.0 {
                        *g *= a + 1.0;
                    }
                }
                dz = da;
            }
        }
    }
}
